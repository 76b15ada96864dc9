#include "drrkit/registration.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "drrkit/errors.hpp"
#include "drrkit/rng.hpp"

namespace drrkit {

using nlohmann::json;

void RegistrationConfig::validate() const {
    if (pyramid_levels < 1) throw DataError("registration: pyramid_levels must be >= 1");
    if (restarts < 1) throw DataError("registration: restarts must be >= 1");
    if (max_evals_per_level < 10) throw DataError("registration: max_evals_per_level too small");
    if (!(converge_deg > 0.0) || !(converge_mm > 0.0))
        throw DataError("registration: convergence thresholds must be positive");
    if (!(bound_deg > 0.0) || !(bound_mm > 0.0))
        throw DataError("registration: bounds must be positive");
}

double registration_objective(const ScalarVolume& bone, const Image& target,
                              const RigidPose& pose, const ProjectionGeometry& geom,
                              bool* degenerate) {
    if (target.rows() != geom.det_rows || target.cols() != geom.det_cols)
        throw DataError("registration: target shape does not match geometry");
    if (degenerate) *degenerate = false;
    const Image proj = project_one(bone, geom, pose);
    const std::optional<double> similarity = gc_value(proj, target);
    if (!similarity) {
        if (degenerate) *degenerate = true;
        return 1.0;  // worst-case sentinel keeps the optimizer total
    }
    return -*similarity;
}

Image resample_detector(const Image& fine, double fine_ph, double fine_pw, int coarse_rows,
                        int coarse_cols, double coarse_ph, double coarse_pw) {
    // Both grids are centered on the same point; pixel r spans
    // [(r - (n-1)/2 - 0.5), (r - (n-1)/2 + 0.5)] * spacing around it.
    auto overlaps = [](int n_fine, double sp_fine, int n_coarse, double sp_coarse) {
        // For each coarse index: list of (fine index, overlap length).
        std::vector<std::vector<std::pair<int, double>>> out(
            static_cast<std::size_t>(n_coarse));
        for (int ci = 0; ci < n_coarse; ++ci) {
            const double c0 = (ci - (n_coarse - 1) / 2.0 - 0.5) * sp_coarse;
            const double c1 = c0 + sp_coarse;
            const int f_lo = std::max(
                0, static_cast<int>(std::floor(c0 / sp_fine + (n_fine - 1) / 2.0 + 0.5)) - 1);
            const int f_hi = std::min(
                n_fine - 1,
                static_cast<int>(std::ceil(c1 / sp_fine + (n_fine - 1) / 2.0 + 0.5)) + 1);
            for (int fi = f_lo; fi <= f_hi; ++fi) {
                const double f0 = (fi - (n_fine - 1) / 2.0 - 0.5) * sp_fine;
                const double f1 = f0 + sp_fine;
                const double ov = std::min(c1, f1) - std::max(c0, f0);
                if (ov > 0.0) out[static_cast<std::size_t>(ci)].push_back({fi, ov});
            }
        }
        return out;
    };
    const auto row_ov = overlaps(fine.rows(), fine_ph, coarse_rows, coarse_ph);
    const auto col_ov = overlaps(fine.cols(), fine_pw, coarse_cols, coarse_pw);
    Image out(coarse_rows, coarse_cols, 0.0);
    const double inv_area = 1.0 / (coarse_ph * coarse_pw);
    for (int r = 0; r < coarse_rows; ++r)
        for (int c = 0; c < coarse_cols; ++c) {
            double acc = 0.0;
            for (const auto& [fr, wr] : row_ov[static_cast<std::size_t>(r)])
                for (const auto& [fc, wc] : col_ov[static_cast<std::size_t>(c)])
                    acc += wr * wc * fine.at(fr, fc);
            out.at(r, c) = acc * inv_area;
        }
    return out;
}

namespace {

using Params = std::array<double, 6>;  // rx, ry, rz, tx, ty, tz

RigidPose to_pose(const Params& p) { return {p[0], p[1], p[2], p[3], p[4], p[5]}; }
Params from_pose(const RigidPose& p) { return {p.rx, p.ry, p.rz, p.tx, p.ty, p.tz}; }

struct NmOutcome {
    Params best{};
    double objective = 0.0;
    int evals = 0;
    bool converged = false;
};

/// Standard Nelder-Mead (reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5) with a componentwise simplex-diameter stop. tz (index 5)
/// is ignored by the stop test: depth is unobservable.
template <typename F>
NmOutcome nelder_mead(F&& f, const Params& start, const Params& init_step, int max_evals,
                      double tol_deg, double tol_mm) {
    constexpr int dim = 6;
    std::array<Params, dim + 1> xs;
    std::array<double, dim + 1> fs;
    NmOutcome out;

    xs[0] = start;
    for (int i = 0; i < dim; ++i) {
        xs[static_cast<std::size_t>(i + 1)] = start;
        xs[static_cast<std::size_t>(i + 1)][static_cast<std::size_t>(i)] +=
            init_step[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i <= dim; ++i) {
        fs[static_cast<std::size_t>(i)] = f(xs[static_cast<std::size_t>(i)]);
        ++out.evals;
    }

    std::array<int, dim + 1> order;
    auto sort_order = [&] {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return fs[static_cast<std::size_t>(a)] < fs[static_cast<std::size_t>(b)];
        });
    };
    auto diameter_ok = [&] {
        for (int comp = 0; comp < dim - 1; ++comp) {  // tz excluded
            double lo = xs[0][static_cast<std::size_t>(comp)];
            double hi = lo;
            for (int i = 1; i <= dim; ++i) {
                lo = std::min(lo, xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(comp)]);
                hi = std::max(hi, xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(comp)]);
            }
            if (hi - lo >= (comp < 3 ? tol_deg : tol_mm)) return false;
        }
        return true;
    };

    while (out.evals < max_evals) {
        sort_order();
        if (diameter_ok()) {
            out.converged = true;
            break;
        }
        const std::size_t ib = static_cast<std::size_t>(order[0]);
        const std::size_t iw = static_cast<std::size_t>(order[dim]);
        const std::size_t is = static_cast<std::size_t>(order[dim - 1]);  // second worst

        Params centroid{};
        for (int i = 0; i < dim; ++i) {
            const std::size_t idx = static_cast<std::size_t>(order[i]);
            for (int c = 0; c < dim; ++c)
                centroid[static_cast<std::size_t>(c)] +=
                    xs[idx][static_cast<std::size_t>(c)] / dim;
        }
        auto blend = [&](double coef) {
            Params p;
            for (int c = 0; c < dim; ++c)
                p[static_cast<std::size_t>(c)] =
                    centroid[static_cast<std::size_t>(c)] +
                    coef * (centroid[static_cast<std::size_t>(c)] -
                            xs[iw][static_cast<std::size_t>(c)]);
            return p;
        };

        const Params xr = blend(1.0);
        const double fr = f(xr);
        ++out.evals;
        if (fr < fs[ib]) {
            const Params xe = blend(2.0);
            const double fe = f(xe);
            ++out.evals;
            if (fe < fr) {
                xs[iw] = xe;
                fs[iw] = fe;
            } else {
                xs[iw] = xr;
                fs[iw] = fr;
            }
            continue;
        }
        if (fr < fs[is]) {
            xs[iw] = xr;
            fs[iw] = fr;
            continue;
        }
        const bool outside = fr < fs[iw];
        Params xc;
        if (outside) {
            for (int c = 0; c < dim; ++c)
                xc[static_cast<std::size_t>(c)] =
                    centroid[static_cast<std::size_t>(c)] +
                    0.5 * (xr[static_cast<std::size_t>(c)] - centroid[static_cast<std::size_t>(c)]);
        } else {
            for (int c = 0; c < dim; ++c)
                xc[static_cast<std::size_t>(c)] =
                    centroid[static_cast<std::size_t>(c)] -
                    0.5 * (centroid[static_cast<std::size_t>(c)] -
                           xs[iw][static_cast<std::size_t>(c)]);
        }
        const double fc = f(xc);
        ++out.evals;
        if ((outside && fc <= fr) || (!outside && fc < fs[iw])) {
            xs[iw] = xc;
            fs[iw] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        for (int i = 1; i <= dim; ++i) {
            const std::size_t idx = static_cast<std::size_t>(order[i]);
            for (int c = 0; c < dim; ++c)
                xs[idx][static_cast<std::size_t>(c)] =
                    xs[ib][static_cast<std::size_t>(c)] +
                    0.5 * (xs[idx][static_cast<std::size_t>(c)] -
                           xs[ib][static_cast<std::size_t>(c)]);
            fs[idx] = f(xs[idx]);
            ++out.evals;
            if (out.evals >= max_evals) break;
        }
    }

    sort_order();
    out.best = xs[static_cast<std::size_t>(order[0])];
    out.objective = fs[static_cast<std::size_t>(order[0])];
    return out;
}

struct Level {
    ProjectionGeometry geom;
    Image target;
};

/// Level 0 is the input; level L halves the resolution L times (detector
/// dims rounded up, spacing and step doubled), re-rendering happens at
/// the coarse geometry while the target is area-resampled.
std::vector<Level> build_pyramid(const Image& target, const ProjectionGeometry& geom,
                                 int levels) {
    std::vector<Level> out;
    out.push_back({geom, target});
    for (int l = 1; l < levels; ++l) {
        const Level& prev = out.back();
        Level next;
        next.geom = prev.geom;
        next.geom.det_rows = (prev.geom.det_rows + 1) / 2;
        next.geom.det_cols = (prev.geom.det_cols + 1) / 2;
        next.geom.pixel_h_mm = prev.geom.pixel_h_mm * 2.0;
        next.geom.pixel_w_mm = prev.geom.pixel_w_mm * 2.0;
        next.geom.step_mm = prev.geom.step_mm * 2.0;
        if (next.geom.det_rows < 3 || next.geom.det_cols < 3) break;
        next.target = resample_detector(prev.target, prev.geom.pixel_h_mm, prev.geom.pixel_w_mm,
                                        next.geom.det_rows, next.geom.det_cols,
                                        next.geom.pixel_h_mm, next.geom.pixel_w_mm);
        out.push_back(std::move(next));
    }
    return out;
}

}  // namespace

RegistrationResult register_pose(const ScalarVolume& bone, const Image& target,
                                 const RigidPose& init, const RegistrationConfig& cfg,
                                 const ProjectionGeometry& geom) {
    cfg.validate();
    geom.validate();
    if (target.rows() != geom.det_rows || target.cols() != geom.det_cols)
        throw DataError("registration: target shape does not match geometry");
    for (double v : {init.rx, init.ry, init.rz, init.tx, init.ty, init.tz})
        if (!std::isfinite(v)) throw DataError("registration: non-finite initialization");

    const std::vector<Level> pyramid = build_pyramid(target, geom, cfg.pyramid_levels);
    const Params init_p = from_pose(init);

    // Restart starting points are drawn up-front so the optimizer itself
    // stays purely deterministic.
    Rng rng(cfg.seed);
    std::vector<Params> starts{init_p};
    for (int r = 1; r < cfg.restarts; ++r) {
        Params p = init_p;
        for (int c = 0; c < 3; ++c)
            p[static_cast<std::size_t>(c)] += rng.uniform(-0.25, 0.25) * cfg.bound_deg;
        for (int c = 3; c < 6; ++c)
            p[static_cast<std::size_t>(c)] += rng.uniform(-0.25, 0.25) * cfg.bound_mm;
        starts.push_back(p);
    }

    RegistrationResult best;
    best.objective = std::numeric_limits<double>::infinity();
    long total_evals = 0;

    for (std::size_t r = 0; r < starts.size(); ++r) {
        Params x = starts[r];
        std::vector<LevelReport> levels;
        double obj = std::numeric_limits<double>::infinity();
        bool conv = false;
        for (std::size_t li = pyramid.size(); li-- > 0;) {
            const Level& lvl = pyramid[li];
            auto f = [&](const Params& p) {
                double viol = 0.0;
                for (int c = 0; c < 3; ++c)
                    viol += std::max(0.0, std::abs(p[static_cast<std::size_t>(c)] -
                                                   init_p[static_cast<std::size_t>(c)]) -
                                              cfg.bound_deg);
                for (int c = 3; c < 6; ++c)
                    viol += std::max(0.0, std::abs(p[static_cast<std::size_t>(c)] -
                                                   init_p[static_cast<std::size_t>(c)]) -
                                              cfg.bound_mm);
                if (viol > 0.0) return 2.0 + viol;
                return registration_objective(bone, lvl.target, to_pose(p), lvl.geom);
            };
            const double scale = static_cast<double>(std::size_t{1} << li);
            const Params step{0.5 * scale, 0.5 * scale, 0.5 * scale,
                              0.75 * scale, 0.75 * scale, 0.75 * scale};
            NmOutcome nm = nelder_mead(f, x, step, cfg.max_evals_per_level, cfg.converge_deg,
                                       cfg.converge_mm);
            x = nm.best;
            obj = nm.objective;
            conv = nm.converged;
            total_evals += nm.evals;
            levels.push_back({static_cast<int>(li), nm.objective, nm.evals, nm.converged});
        }
        if (obj < best.objective) {
            best.pose = normalized(to_pose(x));
            best.objective = obj;
            best.converged = conv;
            best.per_level = std::move(levels);
        }
        if (best.objective <= cfg.early_stop_objective) break;  // good enough; skip restarts
    }
    best.evals = total_evals;
    best.tz_observable = false;
    return best;
}

std::string registration_report_json(const RegistrationResult& r) {
    json j;
    j["pose"] = {{"rx", r.pose.rx}, {"ry", r.pose.ry}, {"rz", r.pose.rz},
                 {"tx", r.pose.tx}, {"ty", r.pose.ty}, {"tz", r.pose.tz}};
    j["objective"] = r.objective;
    j["converged"] = r.converged;
    j["evals"] = r.evals;
    j["per_level"] = json::array();
    for (const auto& l : r.per_level)
        j["per_level"].push_back({{"level", l.level},
                                  {"objective", l.objective},
                                  {"evals", l.evals},
                                  {"converged", l.converged}});
    j["tz_observable"] = r.tz_observable;
    return j.dump(2);
}

SupervisionBundle make_aligned_targets(const ScalarVolume& hu, const LabelMap& labels,
                                       const ObjectSet& objects,
                                       const std::map<std::string, RigidPose>& poses,
                                       const ProjectionGeometry& geom,
                                       const ConversionTables& tables) {
    geom.validate();
    tables.validate();
    for (const auto& [name, pose] : poses) {
        const std::optional<int> idx = objects.index_of_name(name);
        if (!idx) throw UsageError("aligned targets: unknown object '" + name + "'");
        if (objects[*idx].cls != ObjectClass::bone)
            throw UsageError("aligned targets: '" + name + "' is not a bone");
        (void)pose;
    }

    SupervisionBundle sup;
    for (int i = 0; i < objects.size(); ++i)
        if (objects[i].cls == ObjectClass::bone) {
            if (poses.find(objects[i].name) == poses.end())
                throw UsageError("aligned targets: no pose for bone '" + objects[i].name + "'");
            sup.bone_indices.push_back(i);
        }

    const double vox_cm3 = hu.grid().voxel_volume_cm3();
    for (DrrKind kind : {DrrKind::wv, DrrKind::v, DrrKind::m}) {
        const std::vector<ScalarVolume> converted = convert_volume(hu, labels, objects, kind,
                                                                   tables);
        std::vector<double>& sums = sup.sums(kind);
        for (const ScalarVolume& vol : converted) {
            KahanSum acc;
            for (float v : vol.values()) acc.add(static_cast<double>(v));
            sums.push_back(acc.value() * vox_cm3);
        }
        std::vector<Image>& bones = sup.bones(kind);
        for (int i : sup.bone_indices) {
            const RigidPose& pose = poses.at(objects[i].name);
            bones.push_back(project_one(converted[static_cast<std::size_t>(i)], geom, pose));
        }
    }
    return sup;
}

}  // namespace drrkit
