#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace drrkit {

/// One (loss, gradient-slot, instance) finite-difference comparison.
/// A pixel passes when |analytic - fd| <= 1e-10, or the relative error
/// |analytic - fd| / max(|analytic|, |fd|) is <= 1e-4; the entry passes
/// when every pixel does.
struct GradCheckEntry {
    std::string loss;
    std::string slot;
    int instance = 0;
    int pixels = 0;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;  // worst relative error among non-escaped pixels
    bool pass = false;
};

struct GradCheckReport {
    std::uint64_t seed = 0;
    int instances = 0;
    double step = 1e-4;
    std::vector<GradCheckEntry> entries;

    bool all_pass() const;
};

/// Runs central finite-difference checks (step h=1e-4, unit-scale random
/// inputs) against the analytic gradients of every differentiable loss:
/// gc, the reconstruction and chained structure losses, the intensity-sum
/// and aligned-bone losses for all three stack kinds, the adversarial and
/// round-trip losses, and the full composite. `instances` seeded random
/// instances per loss.
GradCheckReport run_gradient_checks(std::uint64_t seed, int instances = 20);

/// {seed, instances, step, all_pass, checks:[{loss, slot, instance,
/// pixels, max_abs_err, max_rel_err, pass}...]}
std::string gradcheck_report_json(const GradCheckReport& report);

}  // namespace drrkit
