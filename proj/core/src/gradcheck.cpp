#include "drrkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <json.hpp>

#include "drrkit/losses.hpp"
#include "drrkit/rng.hpp"

namespace drrkit {

namespace {

constexpr double kStep = 1e-4;
constexpr double kAbsEscape = 1e-10;
constexpr double kRelTol = 1e-4;

Image random_image(Rng& rng, int rows, int cols, double lo, double hi) {
    Image img(rows, cols, 0.0);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform(lo, hi);
    return img;
}

/// Adds a per-pixel offset whose magnitude stays well clear of the FD
/// step, so L1-style kinks cannot sit inside the [x-h, x+h] stencil.
Image offset_away_from_kink(Rng& rng, const Image& base, double lo, double hi) {
    Image out = base;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double mag = rng.uniform(lo, hi);
        out[i] += (rng.uniform() < 0.5 ? -mag : mag);
    }
    return out;
}

DrrStack random_stack(Rng& rng, DrrKind kind, int n, int rows, int cols, double ph, double pw) {
    DrrStack s;
    s.kind = kind;
    s.pixel_h_mm = ph;
    s.pixel_w_mm = pw;
    for (int i = 0; i < n; ++i) s.channels.push_back(random_image(rng, rows, cols, -1.0, 1.0));
    return s;
}

PredictionBundle random_bundle(Rng& rng, int n, int rows, int cols) {
    PredictionBundle b;
    b.wv = random_stack(rng, DrrKind::wv, n, rows, cols, 1.3, 0.7);
    b.v = random_stack(rng, DrrKind::v, n, rows, cols, 1.3, 0.7);
    b.m = random_stack(rng, DrrKind::m, n, rows, cols, 1.3, 0.7);
    b.xray = random_image(rng, rows, cols, -1.0, 1.0);
    return b;
}

/// Targets offset from the current sums by at least 0.3 in either
/// direction, keeping |S - T| far from the subgradient kink at zero.
std::vector<double> offset_sums(Rng& rng, const DrrStack& stack) {
    std::vector<double> t;
    for (int i = 0; i < stack.size(); ++i) {
        const double off = rng.uniform(0.3, 1.0);
        t.push_back(intensity_sum(stack, i) + (rng.uniform() < 0.5 ? -off : off));
    }
    return t;
}

struct Harness {
    GradCheckReport& report;
    int instance = 0;

    /// Perturbs every pixel of every image in `inputs` by +-h, re-evaluates
    /// `eval`, and compares the central difference with `analytic`.
    void check(const std::string& loss, const std::string& slot, std::vector<Image*> inputs,
               const std::vector<Image>& analytic, const std::function<double()>& eval,
               double abs_escape = kAbsEscape) {
        GradCheckEntry e;
        e.loss = loss;
        e.slot = slot;
        e.instance = instance;
        e.pass = true;
        for (std::size_t ci = 0; ci < inputs.size(); ++ci) {
            Image& img = *inputs[ci];
            for (std::size_t p = 0; p < img.size(); ++p) {
                const double orig = img[p];
                img[p] = orig + kStep;
                const double f_plus = eval();
                img[p] = orig - kStep;
                const double f_minus = eval();
                img[p] = orig;
                const double fd = (f_plus - f_minus) / (2.0 * kStep);
                const double ga = analytic[ci][p];
                const double abs_err = std::abs(ga - fd);
                e.max_abs_err = std::max(e.max_abs_err, abs_err);
                ++e.pixels;
                if (abs_err <= abs_escape) continue;
                const double rel = abs_err / std::max(std::abs(ga), std::abs(fd));
                e.max_rel_err = std::max(e.max_rel_err, rel);
                if (rel > kRelTol) e.pass = false;
            }
        }
        report.entries.push_back(std::move(e));
    }

    std::vector<Image*> channel_ptrs(DrrStack& s) {
        std::vector<Image*> out;
        for (auto& img : s.channels) out.push_back(&img);
        return out;
    }
};

}  // namespace

bool GradCheckReport::all_pass() const {
    return std::all_of(entries.begin(), entries.end(),
                       [](const GradCheckEntry& e) { return e.pass; });
}

GradCheckReport run_gradient_checks(std::uint64_t seed, int instances) {
    GradCheckReport report;
    report.seed = seed;
    report.instances = instances;
    report.step = kStep;
    Rng rng(seed);
    Harness h{report};

    const int rows = 8, cols = 9, n_obj = 2;

    for (int inst = 0; inst < instances; ++inst) {
        h.instance = inst;

        {  // gc: both sides differentiated
            Image a = random_image(rng, rows, cols, -1.0, 1.0);
            Image b = random_image(rng, rows, cols, -1.0, 1.0);
            LossResult r = gc(a, b);
            h.check("gc", "a", {&a}, r.gradients.at("a"), [&] { return gc(a, b).value; });
            h.check("gc", "b", {&b}, r.gradients.at("b"), [&] { return gc(a, b).value; });
        }
        {  // reconstruction structure loss
            PredictionBundle b = random_bundle(rng, n_obj, rows, cols);
            LossResult r = loss_gc_recon(b);
            h.check("gc_recon", "wv", h.channel_ptrs(b.wv), r.gradients.at("wv"),
                    [&] { return loss_gc_recon(b).value; });
        }
        {  // chained structure loss (wv is stopped; v and m flow)
            PredictionBundle b = random_bundle(rng, n_obj, rows, cols);
            LossResult r = loss_gc_chain(b);
            h.check("gc_chain", "v", h.channel_ptrs(b.v), r.gradients.at("v"),
                    [&] { return loss_gc_chain(b).value; });
            h.check("gc_chain", "m", h.channel_ptrs(b.m), r.gradients.at("m"),
                    [&] { return loss_gc_chain(b).value; });
        }
        {  // intensity-sum loss, each kind
            PredictionBundle b = random_bundle(rng, n_obj, rows, cols);
            SupervisionBundle sup;
            sup.sums_wv = offset_sums(rng, b.wv);
            sup.sums_v = offset_sums(rng, b.v);
            sup.sums_m = offset_sums(rng, b.m);
            for (DrrKind kind : {DrrKind::wv, DrrKind::v, DrrKind::m}) {
                const std::string tag = to_string(kind);
                DrrStack& stack = b.stack(kind);
                LossResult r = loss_owis(b, sup, kind);
                h.check("owis_" + tag, tag, h.channel_ptrs(stack), r.gradients.at(tag),
                        [&] { return loss_owis(b, sup, kind).value; });
            }
        }
        {  // aligned-bone loss, each kind
            PredictionBundle b = random_bundle(rng, n_obj, rows, cols);
            SupervisionBundle sup;
            sup.bone_indices = {0};
            LossWeights w;
            for (DrrKind kind : {DrrKind::wv, DrrKind::v, DrrKind::m}) {
                const std::string tag = to_string(kind);
                DrrStack& stack = b.stack(kind);
                // Keep every pixel difference far from the L1 kink.
                Image target = offset_away_from_kink(rng, stack.channels[0], 0.05, 0.5);
                sup.bones_wv = sup.bones_v = sup.bones_m = {target};
                LossResult r = loss_bone(b, sup, kind, w);
                h.check("bone_" + tag, tag, h.channel_ptrs(stack), r.gradients.at(tag),
                        [&] { return loss_bone(b, sup, kind, w).value; });
            }
        }
        {  // adversarial score loss
            Image d_real = random_image(rng, 5, 6, 0.1, 0.9);
            Image d_fake = random_image(rng, 5, 6, 0.1, 0.9);
            LossResult r = loss_gan(d_real, d_fake);
            h.check("gan", "d_real", {&d_real}, r.gradients.at("d_real"),
                    [&] { return loss_gan(d_real, d_fake).value; });
            h.check("gan", "d_fake", {&d_fake}, r.gradients.at("d_fake"),
                    [&] { return loss_gan(d_real, d_fake).value; });
        }
        {  // round-trip consistency loss
            Image x = random_image(rng, rows, cols, -1.0, 1.0);
            Image y = random_image(rng, rows, cols, -1.0, 1.0);
            Image x_rt = offset_away_from_kink(rng, x, 0.05, 0.5);
            Image y_rt = offset_away_from_kink(rng, y, 0.05, 0.5);
            LossResult r = loss_cycle(x, x_rt, y, y_rt);
            h.check("cycle", "x_rt", {&x_rt}, r.gradients.at("x_rt"),
                    [&] { return loss_cycle(x, x_rt, y, y_rt).value; });
            h.check("cycle", "y_rt", {&y_rt}, r.gradients.at("y_rt"),
                    [&] { return loss_cycle(x, x_rt, y, y_rt).value; });
        }
        {  // full composite
            PredictionBundle b = random_bundle(rng, n_obj, rows, cols);
            SupervisionBundle sup;
            sup.sums_wv = offset_sums(rng, b.wv);
            sup.sums_v = offset_sums(rng, b.v);
            sup.sums_m = offset_sums(rng, b.m);
            sup.bone_indices = {1};
            sup.bones_wv = {offset_away_from_kink(rng, b.wv.channels[1], 0.05, 0.5)};
            sup.bones_v = {offset_away_from_kink(rng, b.v.channels[1], 0.05, 0.5)};
            sup.bones_m = {offset_away_from_kink(rng, b.m.channels[1], 0.05, 0.5)};
            LossWeights w;
            const double gan_total = rng.uniform(-2.0, 0.0);
            FullLossResult r = loss_full(b, sup, gan_total, w);
            // The composite value is orders of magnitude larger than the
            // individual losses (lambda-weighted pixel sums), so the floor
            // under which finite differences are pure round-off scales with it.
            const double escape = kAbsEscape * std::max(1.0, std::abs(r.result.value));
            auto eval = [&] { return loss_full(b, sup, gan_total, w).result.value; };
            // The chain term treats the WV stack as a detached constant: its
            // value moves when WV moves, but that path is excluded from the
            // analytic gradient by contract.  Hold the chain contribution at
            // its base value while probing WV so the difference quotient
            // matches the function actually being differentiated.
            const double chain_base = r.breakdown.gc_chain;
            auto eval_detached_chain = [&] {
                FullLossResult rr = loss_full(b, sup, gan_total, w);
                return rr.result.value - rr.breakdown.gc_chain + chain_base;
            };
            h.check("full", "wv", h.channel_ptrs(b.wv), r.result.gradients.at("wv"),
                    eval_detached_chain, escape);
            h.check("full", "v", h.channel_ptrs(b.v), r.result.gradients.at("v"), eval, escape);
            h.check("full", "m", h.channel_ptrs(b.m), r.result.gradients.at("m"), eval, escape);
        }
    }
    return report;
}

std::string gradcheck_report_json(const GradCheckReport& report) {
    nlohmann::json j;
    j["seed"] = report.seed;
    j["instances"] = report.instances;
    j["step"] = report.step;
    j["all_pass"] = report.all_pass();
    j["checks"] = nlohmann::json::array();
    for (const auto& e : report.entries)
        j["checks"].push_back({{"loss", e.loss},
                               {"slot", e.slot},
                               {"instance", e.instance},
                               {"pixels", e.pixels},
                               {"max_abs_err", e.max_abs_err},
                               {"max_rel_err", e.max_rel_err},
                               {"pass", e.pass}});
    return j.dump(2);
}

}  // namespace drrkit
