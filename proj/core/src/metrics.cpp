#include "drrkit/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "drrkit/common.hpp"
#include "drrkit/errors.hpp"

namespace drrkit {

void PairedSamples::validate(std::size_t min_n) const {
    if (predicted.size() != truth.size())
        throw DataError("paired samples: series lengths differ");
    if (predicted.size() < min_n)
        throw DataError("paired samples: need at least " + std::to_string(min_n) + " pairs");
    for (const auto* v : {&predicted, &truth})
        for (double x : *v)
            if (!std::isfinite(x)) throw DataError("paired samples: non-finite value");
}

namespace {

double kahan_mean(const std::vector<double>& v) {
    KahanSum s;
    for (double x : v) s.add(x);
    return s.value() / static_cast<double>(v.size());
}

}  // namespace

double pcc(const PairedSamples& s) {
    s.validate(2);
    const double mx = kahan_mean(s.predicted), my = kahan_mean(s.truth);
    KahanSum sxy, sxx, syy, raw_xx, raw_yy;
    for (std::size_t i = 0; i < s.n(); ++i) {
        const double xc = s.predicted[i] - mx, yc = s.truth[i] - my;
        sxy.add(xc * yc);
        sxx.add(xc * xc);
        syy.add(yc * yc);
        raw_xx.add(s.predicted[i] * s.predicted[i]);
        raw_yy.add(s.truth[i] * s.truth[i]);
    }
    // A series whose centered spread is at rounding level of its magnitude
    // is constant for all practical purposes; the correlation is undefined.
    const double tiny = 1e-24;
    if (sxx.value() <= tiny * std::max(1.0, raw_xx.value()) ||
        syy.value() <= tiny * std::max(1.0, raw_yy.value()))
        throw DegenerateError("pcc: a series has zero variance");
    return std::clamp(sxy.value() / std::sqrt(sxx.value() * syy.value()), -1.0, 1.0);
}

double icc(const PairedSamples& s) {
    s.validate(2);
    const double n = static_cast<double>(s.n());
    const double k = 2.0;  // two raters: predicted and truth
    KahanSum grand;
    for (std::size_t i = 0; i < s.n(); ++i) grand.add(s.predicted[i] + s.truth[i]);
    const double m = grand.value() / (n * k);

    KahanSum ss_rows, sst;
    double col_p = 0.0, col_t = 0.0;
    {
        KahanSum cp, ct;
        for (std::size_t i = 0; i < s.n(); ++i) {
            const double p = s.predicted[i] - m, t = s.truth[i] - m;
            const double row_mean = 0.5 * (p + t);
            ss_rows.add(row_mean * row_mean);
            sst.add(p * p);
            sst.add(t * t);
            cp.add(p);
            ct.add(t);
        }
        col_p = cp.value() / n;
        col_t = ct.value() / n;
    }
    const double ss_between_rows = k * ss_rows.value();
    const double ss_between_cols = n * (col_p * col_p + col_t * col_t);
    const double ss_error = sst.value() - ss_between_rows - ss_between_cols;

    const double msr = ss_between_rows / (n - 1.0);
    const double msc = ss_between_cols / (k - 1.0);
    const double mse = std::max(0.0, ss_error) / ((n - 1.0) * (k - 1.0));

    const double denom = msr + (k - 1.0) * mse + (k / n) * (msc - mse);
    const double scale = msr + mse + msc + 1e-300;
    if (denom <= 1e-12 * scale)
        throw DegenerateError("icc: degenerate variance decomposition");
    return std::clamp((msr - mse) / denom, -1.0, 1.0);
}

double mae(const PairedSamples& s) {
    s.validate(1);
    KahanSum acc;
    for (std::size_t i = 0; i < s.n(); ++i) acc.add(std::abs(s.predicted[i] - s.truth[i]));
    return acc.value() / static_cast<double>(s.n());
}

double psnr(const Image& a, const Image& b, double peak) {
    if (!a.same_shape(b)) throw UsageError("psnr: images must share one shape");
    if (!(peak > 0.0) || !std::isfinite(peak)) throw UsageError("psnr: peak must be positive");
    KahanSum acc;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc.add(d * d);
    }
    const double mse = acc.value() / static_cast<double>(a.size());
    if (mse < peak * peak * 1e-10) return 99.0;
    return 10.0 * std::log10(peak * peak / mse);
}

namespace {

/// Normalized 11-tap Gaussian (sigma 1.5) used by the SSIM window.
std::array<double, 11> ssim_window() {
    std::array<double, 11> w{};
    double total = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5.0;
        w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        total += w[static_cast<std::size_t>(i)];
    }
    for (double& x : w) x /= total;
    return w;
}

/// Separable valid-region filtering: horizontal pass then vertical pass.
Image filter_valid(const Image& img, const std::array<double, 11>& w) {
    const int h = img.rows(), wd = img.cols();
    Image tmp(h, wd - 10, 0.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c + 10 < wd; ++c) {
            double acc = 0.0;
            for (int t = 0; t < 11; ++t) acc += w[static_cast<std::size_t>(t)] * img.at(r, c + t);
            tmp.at(r, c) = acc;
        }
    Image out(h - 10, wd - 10, 0.0);
    for (int r = 0; r + 10 < h; ++r)
        for (int c = 0; c < wd - 10; ++c) {
            double acc = 0.0;
            for (int t = 0; t < 11; ++t) acc += w[static_cast<std::size_t>(t)] * tmp.at(r + t, c);
            out.at(r, c) = acc;
        }
    return out;
}

Image pointwise_product(const Image& a, const Image& b) {
    Image out(a.rows(), a.cols(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

}  // namespace

double ssim(const Image& a, const Image& b, double range) {
    if (!a.same_shape(b)) throw UsageError("ssim: images must share one shape");
    if (!(range > 0.0) || !std::isfinite(range)) throw UsageError("ssim: range must be positive");
    if (a.rows() < 11 || a.cols() < 11)
        throw UsageError("ssim: images must be at least 11x11");

    const auto w = ssim_window();
    const Image mu_a = filter_valid(a, w);
    const Image mu_b = filter_valid(b, w);
    const Image m_aa = filter_valid(pointwise_product(a, a), w);
    const Image m_bb = filter_valid(pointwise_product(b, b), w);
    const Image m_ab = filter_valid(pointwise_product(a, b), w);

    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);
    KahanSum acc;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = m_aa[i] - ma * ma;
        const double vb = m_bb[i] - mb * mb;
        const double cov = m_ab[i] - ma * mb;
        const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        acc.add(num / den);
    }
    return acc.value() / static_cast<double>(mu_a.size());
}

std::map<std::string, PairedSamples> paired_from_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("CSV '" + path.string() + "' is empty");
    auto strip = [](std::string s) {
        while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
        std::size_t b = s.find_first_not_of(' ');
        return b == std::string::npos ? std::string{} : s.substr(b);
    };
    {
        std::istringstream hdr(strip(line));
        std::string col;
        const std::vector<std::string> expect{"case_id", "object", "predicted", "truth"};
        for (const auto& want : expect) {
            if (!std::getline(hdr, col, ',') || strip(col) != want)
                throw DataError("CSV '" + path.string() +
                                "': header must be 'case_id,object,predicted,truth'");
        }
    }
    std::map<std::string, PairedSamples> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string row = strip(line);
        if (row.empty()) continue;
        std::istringstream ss(row);
        std::string case_id, object, pred_s, truth_s;
        if (!std::getline(ss, case_id, ',') || !std::getline(ss, object, ',') ||
            !std::getline(ss, pred_s, ',') || !std::getline(ss, truth_s))
            throw DataError("CSV '" + path.string() + "' line " + std::to_string(line_no) +
                            ": expected 4 columns");
        try {
            std::size_t used = 0;
            const double p = std::stod(strip(pred_s), &used);
            const double t = std::stod(strip(truth_s), &used);
            auto& pair = out[strip(object)];
            pair.predicted.push_back(p);
            pair.truth.push_back(t);
        } catch (const std::exception&) {
            throw DataError("CSV '" + path.string() + "' line " + std::to_string(line_no) +
                            ": cannot parse numbers");
        }
    }
    if (out.empty()) throw DataError("CSV '" + path.string() + "' has no data rows");
    return out;
}

MetricReport compute_metrics(const std::map<std::string, PairedSamples>& by_object) {
    MetricReport report;
    for (const auto& [name, samples] : by_object) {
        ObjectMetrics om;
        om.object = name;
        om.n = static_cast<int>(samples.n());
        om.pcc = pcc(samples);
        om.icc = icc(samples);
        om.mae = mae(samples);
        report.per_object.push_back(std::move(om));
    }
    return report;
}

std::string metric_report_json(const MetricReport& report) {
    nlohmann::json j;
    j["icc_variant"] = report.icc_variant;
    j["per_object"] = nlohmann::json::array();
    for (const auto& om : report.per_object)
        j["per_object"].push_back({{"object", om.object},
                                   {"n", om.n},
                                   {"pcc", om.pcc},
                                   {"icc", om.icc},
                                   {"mae", om.mae}});
    if (report.psnr_mean) j["psnr_mean"] = *report.psnr_mean;
    if (report.ssim_mean) j["ssim_mean"] = *report.ssim_mean;
    if (report.image_pairs > 0) j["image_pairs"] = report.image_pairs;
    return j.dump(2);
}

std::string metric_report_csv(const MetricReport& report) {
    std::ostringstream out;
    out << "object,n,pcc,icc,mae\n";
    out.precision(15);
    for (const auto& om : report.per_object)
        out << om.object << ',' << om.n << ',' << om.pcc << ',' << om.icc << ',' << om.mae << '\n';
    return out.str();
}

}  // namespace drrkit
