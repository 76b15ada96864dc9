#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "drrkit/convert.hpp"
#include "drrkit/losses.hpp"
#include "drrkit/project.hpp"

namespace drrkit {

/// Pose-recovery settings: coarse-to-fine pyramid, Nelder-Mead simplex,
/// seeded multi-restart. Bounds are centered on the initialization.
struct RegistrationConfig {
    int pyramid_levels = 3;        ///< x2 downsampling per level
    int restarts = 4;              ///< >= 1; restart 0 starts exactly at init
    int max_evals_per_level = 500;
    double converge_deg = 0.05;    ///< simplex diameter threshold, rotations
    double converge_mm = 0.05;     ///< simplex diameter threshold, tx/ty
    double bound_deg = 20.0;       ///< search bound about init, per angle
    double bound_mm = 30.0;        ///< search bound about init, per translation
    double early_stop_objective = -0.999;  ///< skip remaining restarts below this
    std::uint64_t seed = 0;        ///< restart perturbations

    void validate() const;  // throws DataError
};

/// Similarity objective: -gc(projection of the bone at pose, target);
/// lower is better, -1 is a perfect structural match. A degenerate
/// (constant) projection — e.g. the bone left the field of view — scores
/// the +1.0 worst-case sentinel and sets *degenerate when provided.
double registration_objective(const ScalarVolume& bone, const Image& target,
                              const RigidPose& pose, const ProjectionGeometry& geom,
                              bool* degenerate = nullptr);

struct LevelReport {
    int level = 0;       ///< 0 = finest
    double objective = 0.0;
    int evals = 0;
    bool converged = false;
};

struct RegistrationResult {
    RigidPose pose;
    double objective = 0.0;
    bool converged = false;       ///< finest level of the winning restart
    long evals = 0;               ///< objective evaluations across all restarts
    std::vector<LevelReport> per_level;  ///< winning restart, coarse to fine
    bool tz_observable = false;   ///< parallel-beam: depth is unobservable
};

/// Recovers the rigid pose that renders `bone` onto `target`: multi-restart
/// Nelder-Mead over (rx,ry,rz,tx,ty,tz), coarse-to-fine over an image
/// pyramid (the target is area-resampled, the projector re-renders at the
/// coarser geometry). Deterministic for a fixed cfg.seed. tz is excluded
/// from convergence checks (unobservable under parallel projection).
RegistrationResult register_pose(const ScalarVolume& bone, const Image& target,
                                 const RigidPose& init, const RegistrationConfig& cfg,
                                 const ProjectionGeometry& geom);

/// {pose:{rx,ry,rz,tx,ty,tz}, objective, converged, evals,
///  per_level:[...], tz_observable}
std::string registration_report_json(const RegistrationResult& r);

/// Area-weighted resampling of a detector image onto a coarser centered
/// detector grid (used for the registration pyramid; exposed for tests).
Image resample_detector(const Image& fine, double fine_ph, double fine_pw, int coarse_rows,
                        int coarse_cols, double coarse_ph, double coarse_pw);

/// Builds supervision for one case from the labeled CT: per-object target
/// intensity sums for every kind (exact voxel integrals), plus per-kind
/// aligned DRR targets for every bone, rendered at the supplied poses.
/// Every bone in `objects` needs a pose; posing a non-bone is an error.
SupervisionBundle make_aligned_targets(const ScalarVolume& hu, const LabelMap& labels,
                                       const ObjectSet& objects,
                                       const std::map<std::string, RigidPose>& poses,
                                       const ProjectionGeometry& geom,
                                       const ConversionTables& tables);

}  // namespace drrkit
