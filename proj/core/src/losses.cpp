#include "drrkit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <json.hpp>

#include "drrkit/common.hpp"
#include "drrkit/errors.hpp"

namespace drrkit {

using nlohmann::json;

void LossWeights::validate() const {
    for (double w : {lambda_cyc, lambda_gca, lambda_l1, lambda_is})
        if (!std::isfinite(w) || w < 0.0)
            throw DataError("loss weights must be finite and >= 0");
}

const DrrStack& PredictionBundle::stack(DrrKind kind) const {
    switch (kind) {
        case DrrKind::wv: return wv;
        case DrrKind::v: return v;
        case DrrKind::m: return m;
    }
    throw UsageError("unknown stack kind");
}

DrrStack& PredictionBundle::stack(DrrKind kind) {
    return const_cast<DrrStack&>(std::as_const(*this).stack(kind));
}

void PredictionBundle::validate() const {
    if (wv.kind != DrrKind::wv || v.kind != DrrKind::v || m.kind != DrrKind::m)
        throw DataError("prediction bundle: stack kind tags do not match their slots");
    const int n = wv.size();
    if (n < 1) throw DataError("prediction bundle: empty stacks");
    if (v.size() != n || m.size() != n)
        throw DataError("prediction bundle: stacks disagree on channel count");
    const Image& ref = wv.channels.front();
    for (const DrrStack* s : {&wv, &v, &m}) {
        if (s->pixel_h_mm != wv.pixel_h_mm || s->pixel_w_mm != wv.pixel_w_mm)
            throw DataError("prediction bundle: stacks disagree on pixel spacing");
        for (const Image& img : s->channels)
            if (!img.same_shape(ref))
                throw DataError("prediction bundle: channel shapes differ");
    }
    if (!xray.same_shape(ref))
        throw DataError("prediction bundle: radiograph shape does not match stacks");
}

const std::vector<double>& SupervisionBundle::sums(DrrKind kind) const {
    switch (kind) {
        case DrrKind::wv: return sums_wv;
        case DrrKind::v: return sums_v;
        case DrrKind::m: return sums_m;
    }
    throw UsageError("unknown stack kind");
}

const std::vector<Image>& SupervisionBundle::bones(DrrKind kind) const {
    switch (kind) {
        case DrrKind::wv: return bones_wv;
        case DrrKind::v: return bones_v;
        case DrrKind::m: return bones_m;
    }
    throw UsageError("unknown stack kind");
}

std::vector<double>& SupervisionBundle::sums(DrrKind kind) {
    return const_cast<std::vector<double>&>(std::as_const(*this).sums(kind));
}

std::vector<Image>& SupervisionBundle::bones(DrrKind kind) {
    return const_cast<std::vector<Image>&>(std::as_const(*this).bones(kind));
}

namespace {

constexpr double kDegenerateDenom = 1e-12;

const int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
const int kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

/// Valid-region 3x3 Sobel correlation: response is (H-2) x (W-2).
Image sobel_response(const Image& img, const int k[3][3]) {
    const int hr = img.rows() - 2, wr = img.cols() - 2;
    Image out(hr, wr, 0.0);
    for (int r = 0; r < hr; ++r)
        for (int c = 0; c < wr; ++c) {
            double acc = 0.0;
            for (int dr = 0; dr < 3; ++dr)
                for (int dc = 0; dc < 3; ++dc)
                    acc += k[dr][dc] * img.at(r + dr, c + dc);
            out.at(r, c) = acc;
        }
    return out;
}

/// Adjoint of the valid Sobel correlation: scatter a response-sized
/// gradient back onto the image grid.
void sobel_scatter(const Image& gresp, const int k[3][3], double scale, Image& gimg) {
    const int hr = gresp.rows(), wr = gresp.cols();
    for (int r = 0; r < hr; ++r)
        for (int c = 0; c < wr; ++c) {
            const double g = gresp.at(r, c) * scale;
            if (g == 0.0) continue;
            for (int dr = 0; dr < 3; ++dr)
                for (int dc = 0; dc < 3; ++dc)
                    gimg.at(r + dr, c + dc) += g * k[dr][dc];
        }
}

struct NccAxis {
    bool degenerate = true;
    double value = 0.0;
    double sp = 0.0, sq = 0.0;  // centered-response norms
    Image pc, qc;               // centered responses (kept for gradients)
};

NccAxis ncc_axis(const Image& a, const Image& b, const int k[3][3], bool keep) {
    NccAxis out;
    Image p = sobel_response(a, k);
    Image q = sobel_response(b, k);
    const std::size_t n = p.size();
    KahanSum mp, mq;
    for (std::size_t i = 0; i < n; ++i) { mp.add(p[i]); mq.add(q[i]); }
    const double mean_p = mp.value() / static_cast<double>(n);
    const double mean_q = mq.value() / static_cast<double>(n);
    KahanSum s, sp2, sq2;
    for (std::size_t i = 0; i < n; ++i) {
        const double pc = p[i] - mean_p, qc = q[i] - mean_q;
        s.add(pc * qc);
        sp2.add(pc * pc);
        sq2.add(qc * qc);
    }
    out.sp = std::sqrt(std::max(0.0, sp2.value()));
    out.sq = std::sqrt(std::max(0.0, sq2.value()));
    if (out.sp * out.sq < kDegenerateDenom) return out;
    out.degenerate = false;
    out.value = s.value() / (out.sp * out.sq);
    if (keep) {
        for (std::size_t i = 0; i < n; ++i) { p[i] -= mean_p; q[i] -= mean_q; }
        out.pc = std::move(p);
        out.qc = std::move(q);
    }
    return out;
}

struct GcEval {
    bool degenerate = false;
    double value = 0.0;
    Image grad_a, grad_b;
};

/// Shared gc engine: value plus (optionally) analytic gradients w.r.t.
/// either image, obtained by the NCC chain rule pushed through the
/// Sobel adjoint.
GcEval gc_eval(const Image& a, const Image& b, bool need_ga, bool need_gb) {
    if (!a.same_shape(b)) throw DataError("gc: images must share one shape");
    if (a.rows() < 3 || a.cols() < 3) throw DataError("gc: images must be at least 3x3");

    const bool keep = need_ga || need_gb;
    const NccAxis nx = ncc_axis(a, b, kSobelX, keep);
    const NccAxis ny = ncc_axis(a, b, kSobelY, keep);
    GcEval out;
    if (nx.degenerate || ny.degenerate) {
        out.degenerate = true;
        return out;
    }
    out.value = std::clamp(0.5 * (nx.value + ny.value), -1.0, 1.0);
    if (!keep) return out;

    // d(NCC)/d(p_i) = q~_i/(sp*sq) - NCC * p~_i/sp^2, then the Sobel adjoint.
    auto response_grad = [](const NccAxis& ax, bool wrt_p) {
        const Image& self = wrt_p ? ax.pc : ax.qc;
        const Image& other = wrt_p ? ax.qc : ax.pc;
        const double s_self = wrt_p ? ax.sp : ax.sq;
        Image g(self.rows(), self.cols(), 0.0);
        const double inv_denom = 1.0 / (ax.sp * ax.sq);
        const double self_coef = ax.value / (s_self * s_self);
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = other[i] * inv_denom - self_coef * self[i];
        return g;
    };
    if (need_ga) {
        out.grad_a = Image(a.rows(), a.cols(), 0.0);
        sobel_scatter(response_grad(nx, true), kSobelX, 0.5, out.grad_a);
        sobel_scatter(response_grad(ny, true), kSobelY, 0.5, out.grad_a);
    }
    if (need_gb) {
        out.grad_b = Image(a.rows(), a.cols(), 0.0);
        sobel_scatter(response_grad(nx, false), kSobelX, 0.5, out.grad_b);
        sobel_scatter(response_grad(ny, false), kSobelY, 0.5, out.grad_b);
    }
    return out;
}

[[noreturn]] void throw_degenerate(const std::string& where) {
    throw DegenerateError(where + ": constant gradient response leaves the correlation undefined");
}

Image signs_of_difference(const Image& pred, const Image& target, double scale) {
    Image g(pred.rows(), pred.cols(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = pred[i] - target[i];
        g[i] = (d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0));
    }
    return g;
}

double sum_abs_difference(const Image& x, const Image& y) {
    KahanSum acc;
    for (std::size_t i = 0; i < x.size(); ++i) acc.add(std::abs(x[i] - y[i]));
    return acc.value();
}

void add_scaled(std::vector<Image>& dst, const std::vector<Image>& src, double scale) {
    if (src.empty() || scale == 0.0) return;
    for (std::size_t i = 0; i < dst.size(); ++i)
        for (std::size_t px = 0; px < dst[i].size(); ++px) dst[i][px] += scale * src[i][px];
}

}  // namespace

LossResult gc(const Image& a, const Image& b) {
    GcEval e = gc_eval(a, b, true, true);
    if (e.degenerate) throw_degenerate("gc");
    LossResult r;
    r.value = e.value;
    r.gradients["a"] = {std::move(e.grad_a)};
    r.gradients["b"] = {std::move(e.grad_b)};
    return r;
}

std::optional<double> gc_value(const Image& a, const Image& b) {
    GcEval e = gc_eval(a, b, false, false);
    if (e.degenerate) return std::nullopt;
    return e.value;
}

LossResult loss_gc_recon(const PredictionBundle& bundle) {
    bundle.validate();
    const Image vx = virtual_xray(bundle.wv);
    GcEval e = gc_eval(bundle.xray, vx, false, true);
    if (e.degenerate) throw_degenerate("gc_recon");
    LossResult r;
    r.value = -e.value;
    std::vector<Image> grads;
    grads.reserve(static_cast<std::size_t>(bundle.objects()));
    Image g = std::move(e.grad_b);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = -g[i];
    for (int i = 0; i < bundle.objects(); ++i) grads.push_back(g);
    r.gradients["wv"] = std::move(grads);
    return r;
}

LossResult loss_gc_chain(const PredictionBundle& bundle) {
    bundle.validate();
    const int n = bundle.objects();
    const Image& ref = bundle.wv.channels.front();
    LossResult r;
    std::vector<Image> gv, gm;
    KahanSum acc;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (int i = 0; i < n; ++i) {
        const std::size_t ui = static_cast<std::size_t>(i);
        for (auto [other, grads, tag] :
             {std::tuple{&bundle.v, &gv, "v"}, std::tuple{&bundle.m, &gm, "m"}}) {
            GcEval e = gc_eval(bundle.wv.channels[ui], other->channels[ui], false, true);
            if (e.degenerate) {
                grads->emplace_back(ref.rows(), ref.cols(), 0.0);
                r.flags.push_back("gc_chain: object " + std::to_string(i) + " " + tag +
                                  " term skipped (degenerate gradient response)");
                continue;
            }
            acc.add(e.value);
            Image g = std::move(e.grad_b);
            for (std::size_t px = 0; px < g.size(); ++px) g[px] *= -inv_n;
            grads->push_back(std::move(g));
        }
    }
    r.value = -acc.value() * inv_n;
    r.gradients["v"] = std::move(gv);
    r.gradients["m"] = std::move(gm);
    return r;
}

LossResult loss_owis(const PredictionBundle& bundle, const SupervisionBundle& sup, DrrKind kind) {
    bundle.validate();
    const DrrStack& stack = bundle.stack(kind);
    const std::vector<double>& targets = sup.sums(kind);
    const int n = stack.size();
    if (static_cast<int>(targets.size()) != n)
        throw UsageError("owis: target sums for kind '" + to_string(kind) +
                         "' missing or wrong count (" + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " objects)");
    const Image& ref = stack.channels.front();
    const double denom = static_cast<double>(n) * ref.size();
    const double area = stack.pixel_area_cm2();

    LossResult r;
    std::vector<Image> grads;
    KahanSum acc;
    for (int i = 0; i < n; ++i) {
        if (!std::isfinite(targets[static_cast<std::size_t>(i)]))
            throw DataError("owis: non-finite target sum for object " + std::to_string(i));
        const double d = intensity_sum(stack, i) - targets[static_cast<std::size_t>(i)];
        acc.add(std::abs(d));
        const double sign = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        grads.emplace_back(ref.rows(), ref.cols(), sign * area / denom);
    }
    r.value = acc.value() / denom;
    r.gradients[to_string(kind)] = std::move(grads);
    return r;
}

LossResult loss_bone(const PredictionBundle& bundle, const SupervisionBundle& sup, DrrKind kind,
                     const LossWeights& w) {
    bundle.validate();
    w.validate();
    const std::vector<int>& k_set = sup.bone_indices;
    LossResult r;
    if (k_set.empty()) return r;  // partially-aligned training disabled

    const DrrStack& stack = bundle.stack(kind);
    const std::vector<Image>& targets = sup.bones(kind);
    const int n = stack.size();
    if (targets.size() != k_set.size())
        throw UsageError("bone loss: kind '" + to_string(kind) + "' has " +
                         std::to_string(targets.size()) + " aligned targets for " +
                         std::to_string(k_set.size()) + " bone indices");
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (int idx : k_set) {
        if (idx < 0 || idx >= n)
            throw UsageError("bone loss: index " + std::to_string(idx) + " out of range");
        if (seen[static_cast<std::size_t>(idx)])
            throw UsageError("bone loss: index " + std::to_string(idx) + " repeated");
        seen[static_cast<std::size_t>(idx)] = true;
    }

    const Image& ref = stack.channels.front();
    const double inv_nb = 1.0 / static_cast<double>(k_set.size());
    std::vector<Image> grads(static_cast<std::size_t>(n), Image(ref.rows(), ref.cols(), 0.0));
    KahanSum acc;
    for (std::size_t k = 0; k < k_set.size(); ++k) {
        const std::size_t i = static_cast<std::size_t>(k_set[k]);
        const Image& pred = stack.channels[i];
        const Image& tgt = targets[k];
        if (!pred.same_shape(tgt))
            throw DataError("bone loss: aligned target shape does not match predictions");
        GcEval e = gc_eval(pred, tgt, true, false);
        if (e.degenerate) throw_degenerate("bone loss (object " + std::to_string(k_set[k]) + ")");
        acc.add(w.lambda_l1 * sum_abs_difference(pred, tgt) - e.value);
        Image g = signs_of_difference(pred, tgt, w.lambda_l1 * inv_nb);
        for (std::size_t px = 0; px < g.size(); ++px) g[px] -= inv_nb * e.grad_a[px];
        grads[i] = std::move(g);
    }
    r.value = acc.value() * inv_nb;
    r.gradients[to_string(kind)] = std::move(grads);
    return r;
}

LossResult loss_gan(const Image& d_real, const Image& d_fake) {
    constexpr double kEps = 1e-7;
    LossResult r;
    int clamped = 0;
    auto half = [&](const Image& scores, bool real) {
        Image grad(scores.rows(), scores.cols(), 0.0);
        KahanSum acc;
        const double inv_n = 1.0 / static_cast<double>(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const double raw = scores[i];
            if (!(raw >= 0.0 && raw <= 1.0))
                throw DataError("gan: scores must lie in [0, 1]");
            const double s = std::clamp(raw, kEps, 1.0 - kEps);
            if (s != raw) ++clamped;
            if (real) {
                acc.add(std::log(s));
                grad[i] = inv_n / s;
            } else {
                acc.add(std::log(1.0 - s));
                grad[i] = -inv_n / (1.0 - s);
            }
        }
        return std::pair{acc.value() * inv_n, std::move(grad)};
    };
    auto [v_real, g_real] = half(d_real, true);
    auto [v_fake, g_fake] = half(d_fake, false);
    r.value = v_real + v_fake;
    r.gradients["d_real"] = {std::move(g_real)};
    r.gradients["d_fake"] = {std::move(g_fake)};
    if (clamped > 0)
        r.flags.push_back("gan: " + std::to_string(clamped) + " score(s) clamped away from {0,1}");
    return r;
}

LossResult loss_cycle(const Image& x, const Image& x_rt, const Image& y, const Image& y_rt) {
    if (!x.same_shape(x_rt)) throw DataError("cycle: x round-trip shape mismatch");
    if (!y.same_shape(y_rt)) throw DataError("cycle: y round-trip shape mismatch");
    LossResult r;
    const double inv_nx = 1.0 / static_cast<double>(x.size());
    const double inv_ny = 1.0 / static_cast<double>(y.size());
    KahanSum acc;
    for (std::size_t i = 0; i < x.size(); ++i) acc.add(std::abs(x_rt[i] - x[i]) * inv_nx);
    for (std::size_t i = 0; i < y.size(); ++i) acc.add(std::abs(y_rt[i] - y[i]) * inv_ny);
    r.value = acc.value();
    r.gradients["x_rt"] = {signs_of_difference(x_rt, x, inv_nx)};
    r.gradients["y_rt"] = {signs_of_difference(y_rt, y, inv_ny)};
    return r;
}

FullLossResult loss_full(const PredictionBundle& bundle, const SupervisionBundle& sup,
                         double gan_total, const LossWeights& w) {
    bundle.validate();
    w.validate();
    if (!std::isfinite(gan_total)) throw DataError("loss_full: non-finite adversarial total");

    LossResult recon = loss_gc_recon(bundle);
    LossResult chain = loss_gc_chain(bundle);
    LossResult owis_wv = loss_owis(bundle, sup, DrrKind::wv);
    LossResult owis_v = loss_owis(bundle, sup, DrrKind::v);
    LossResult owis_m = loss_owis(bundle, sup, DrrKind::m);
    LossResult bone_wv = loss_bone(bundle, sup, DrrKind::wv, w);
    LossResult bone_v = loss_bone(bundle, sup, DrrKind::v, w);
    LossResult bone_m = loss_bone(bundle, sup, DrrKind::m, w);

    FullLossResult out;
    LossBreakdown& b = out.breakdown;
    b.gan = gan_total;
    b.gc_recon = recon.value;
    b.gc_chain = chain.value;
    b.owis_wv = owis_wv.value;
    b.owis_v = owis_v.value;
    b.owis_m = owis_m.value;
    b.bone_wv = bone_wv.value;
    b.bone_v = bone_v.value;
    b.bone_m = bone_m.value;
    b.weights = w;
    b.flags = chain.flags;
    b.total = gan_total + w.lambda_gca * b.gc_recon + b.gc_chain +
              w.lambda_is * (b.owis_wv + b.owis_v + b.owis_m) +
              (b.bone_wv + b.bone_v + b.bone_m);

    const int n = bundle.objects();
    const Image& ref = bundle.wv.channels.front();
    std::map<std::string, std::vector<Image>> grads;
    for (const char* slot : {"wv", "v", "m"})
        grads[slot] = std::vector<Image>(static_cast<std::size_t>(n),
                                         Image(ref.rows(), ref.cols(), 0.0));
    add_scaled(grads["wv"], recon.gradients["wv"], w.lambda_gca);
    add_scaled(grads["v"], chain.gradients["v"], 1.0);
    add_scaled(grads["m"], chain.gradients["m"], 1.0);
    add_scaled(grads["wv"], owis_wv.gradients["wv"], w.lambda_is);
    add_scaled(grads["v"], owis_v.gradients["v"], w.lambda_is);
    add_scaled(grads["m"], owis_m.gradients["m"], w.lambda_is);
    if (bone_wv.has_gradient("wv")) add_scaled(grads["wv"], bone_wv.gradients["wv"], 1.0);
    if (bone_v.has_gradient("v")) add_scaled(grads["v"], bone_v.gradients["v"], 1.0);
    if (bone_m.has_gradient("m")) add_scaled(grads["m"], bone_m.gradients["m"], 1.0);

    out.result.value = b.total;
    out.result.gradients = std::move(grads);
    out.result.flags = b.flags;
    return out;
}

std::string loss_report_json(const LossBreakdown& b) {
    json j;
    j["total"] = b.total;
    j["terms"] = {
        {"gan", b.gan},
        {"gc_recon", b.gc_recon},
        {"gc_chain", b.gc_chain},
        {"owis", {{"wv", b.owis_wv}, {"v", b.owis_v}, {"m", b.owis_m}}},
        {"bone", {{"wv", b.bone_wv}, {"v", b.bone_v}, {"m", b.bone_m}}},
    };
    j["weights"] = {
        {"lambda_cyc", b.weights.lambda_cyc},
        {"lambda_gca", b.weights.lambda_gca},
        {"lambda_l1", b.weights.lambda_l1},
        {"lambda_is", b.weights.lambda_is},
    };
    j["flags"] = b.flags;
    return j.dump(2);
}

}  // namespace drrkit
