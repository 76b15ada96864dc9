#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "drrkit/convert.hpp"
#include "drrkit/volume.hpp"

namespace drrkit {

/// Uniform tissue: one HU value everywhere inside the object.
struct UniformTissue {
    double hu = 0.0;
};

/// Linear HU ramp along one local (object-frame) axis, hu_start at the
/// negative tip of that semi-axis, hu_end at the positive tip. Riding in
/// the object frame keeps the tissue field rigid under pose_perturb.
struct FattyGradient {
    double hu_start = 0.0;
    double hu_end = 0.0;
    int axis = 0;  // 0=x, 1=y, 2=z in the object frame
};

using Tissue = std::variant<UniformTissue, FattyGradient>;

struct Ellipsoid {
    Vec3 center_mm{};
    Vec3 semi_axes_mm{};  // (a, b, c), all > 0
    Vec3 euler_deg{};     // orientation, Rz*Ry*Rx

    double volume_cm3() const;  // 4/3 * pi * a*b*c / 1000
};

struct PhantomObject {
    std::string name;
    ObjectClass cls = ObjectClass::muscle;
    Ellipsoid shape;
    Tissue tissue = UniformTissue{};
};

/// Synthetic labeled-CT description. Objects are voxelized in list order;
/// where ellipsoids overlap, the later object wins the voxel.
struct PhantomSpec {
    Grid3 grid;
    std::vector<PhantomObject> objects;
    std::uint64_t seed = 0;
    double noise_sigma_hu = 0.0;  // Gaussian HU noise inside objects only

    void validate() const;  // throws DataError (out-of-grid shape, bad fields)
};

struct ObjectTruth {
    std::string name;
    double volume_cm3_analytic = 0.0;  // closed form, voxelization-free
    double volume_cm3_voxel = 0.0;     // claimed voxels * voxel volume
    double lean_mass_g = 0.0;          // per-voxel tissue-model oracle
};

struct GroundTruth {
    std::vector<ObjectTruth> per_object;
    double overlap_fraction = 0.0;  // multiply-claimed voxels / claimed voxels
};

struct PhantomVolumes {
    ScalarVolume hu;
    LabelMap labels;
    ObjectSet objects;
    GroundTruth truth;
};

/// Voxelizes the spec: center-of-voxel membership, later object wins,
/// background air at -1000 HU, seeded Gaussian noise inside objects.
/// Ground truth is accumulated in double precision from the stored voxel
/// values using the same HU->density model as the conversion tables.
PhantomVolumes generate(const PhantomSpec& spec,
                        const ConversionTables& tables = ConversionTables::defaults());

/// Returns a spec with one object rigidly moved: rotated about its own
/// center by the pose rotation, then translated. Analytic ground truth is
/// unchanged by construction.
PhantomSpec pose_perturb(const PhantomSpec& spec, const std::string& object_name,
                         const RigidPose& pose);

/// Hip-like default scene: two bones and six muscles with mixed uniform
/// and gradient tissue, 160 mm cube at 1 mm spacing.
PhantomSpec default_phantom_spec();

/// Small single-bone scene with a strongly asymmetric density ramp,
/// sized for fast pose-recovery studies.
PhantomSpec registration_bone_spec();

/// CSV: object, volume_cm3_analytic, volume_cm3_voxel, lean_mass_g.
std::string ground_truth_csv(const GroundTruth& truth);

PhantomSpec load_phantom_spec(const std::filesystem::path& path);
void save_phantom_spec(const PhantomSpec& spec, const std::filesystem::path& path);

}  // namespace drrkit
