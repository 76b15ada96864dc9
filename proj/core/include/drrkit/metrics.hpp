#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "drrkit/image.hpp"

namespace drrkit {

/// Two measurement series over the same targets (e.g. predicted vs truth).
struct PairedSamples {
    std::vector<double> predicted;
    std::vector<double> truth;

    std::size_t n() const { return predicted.size(); }
    void validate(std::size_t min_n = 2) const;  // equal lengths, finite
};

/// Sample Pearson correlation. Throws DegenerateError when either series
/// has (numerically) zero variance.
double pcc(const PairedSamples& s);

/// Intraclass correlation ICC(2,1): two-way random effects, absolute
/// agreement, single measurement, with predicted/truth as the two raters.
/// Throws DegenerateError when the variance decomposition degenerates.
double icc(const PairedSamples& s);

/// Mean absolute error.
double mae(const PairedSamples& s);

/// Peak signal-to-noise ratio in dB: 10*log10(peak^2 / MSE), capped at
/// 99 dB when MSE < peak^2 * 1e-10.
double psnr(const Image& a, const Image& b, double peak);

/// Mean structural similarity over the valid-window map: 11x11 Gaussian
/// window (sigma 1.5), K1=0.01, K2=0.03, stabilizers scaled by `range`.
double ssim(const Image& a, const Image& b, double range);

struct ObjectMetrics {
    std::string object;
    int n = 0;
    double pcc = 0.0;
    double icc = 0.0;
    double mae = 0.0;
};

/// Evaluation summary: scalar agreement per object, image quality means
/// when image pairs were scored.
struct MetricReport {
    std::string icc_variant = "ICC(2,1)";
    std::vector<ObjectMetrics> per_object;
    std::optional<double> psnr_mean;
    std::optional<double> ssim_mean;
    int image_pairs = 0;
};

/// Groups (predicted, truth) rows by object name. CSV columns:
/// case_id, object, predicted, truth (header required).
std::map<std::string, PairedSamples> paired_from_csv(const std::filesystem::path& path);

/// Per-object pcc/icc/mae over the grouped samples (objects in name order).
MetricReport compute_metrics(const std::map<std::string, PairedSamples>& by_object);

std::string metric_report_json(const MetricReport& report);
std::string metric_report_csv(const MetricReport& report);

}  // namespace drrkit
