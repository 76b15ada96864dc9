#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "drrkit/image.hpp"
#include "drrkit/volume.hpp"

namespace drrkit {

/// Parallel-beam projection geometry. The volume is rotated by
/// rotation_deg (Rz*Ry*Rx about the volume center), then integrated along
/// the grid z axis. The detector lies in the x-y plane, centered on the
/// volume center: pixel (r, c) has its center at
///   x = cx + (c - (W-1)/2) * pixel_w_mm,
///   y = cy + (r - (H-1)/2) * pixel_h_mm.
struct ProjectionGeometry {
    Vec3 rotation_deg{0.0, 0.0, 0.0};
    int det_rows = 0;  // H
    int det_cols = 0;  // W
    double pixel_h_mm = 1.0;
    double pixel_w_mm = 1.0;
    double step_mm = 0.5;  // ray sampling step for the general path

    double pixel_area_cm2() const { return pixel_h_mm * pixel_w_mm / 100.0; }
    void validate() const;  // throws DataError
};

/// Detector auto-sizing: covers the rotated volume bounding box padded by
/// pad_px pixels on each side, centered on the volume center, with the pad
/// chosen so that at zero rotation and matching pixel spacing the pixel
/// grid lands exactly on the voxel columns.
ProjectionGeometry auto_geometry(const Grid3& grid, const Vec3& rotation_deg, double pixel_h_mm,
                                 double pixel_w_mm, double step_mm, int pad_px = 1);

/// Object-wise DRR stack: one channel per ObjectSet entry, pixel values are
/// line integrals in value*cm.
struct DrrStack {
    DrrKind kind = DrrKind::v;
    double pixel_h_mm = 1.0;
    double pixel_w_mm = 1.0;
    std::vector<Image> channels;

    int size() const { return static_cast<int>(channels.size()); }
    double pixel_area_cm2() const { return pixel_h_mm * pixel_w_mm / 100.0; }
};

/// Renders the object-wise DRR stack. All volumes must share one grid.
///
/// General path: fixed-step sampling along each pixel's ray with trilinear
/// interpolation of the rotated volume; samples outside the volume
/// contribute zero. Zero rotation with pixel grid aligned to the voxel
/// grid takes an exact path: plain column sums, no interpolation, so the
/// stack's intensity sums reproduce volume_of/mass_of up to summation
/// order.
DrrStack project(std::span<const ScalarVolume> objects, const ProjectionGeometry& geom,
                 DrrKind kind);

/// Same, with the volumes rigidly moved by pose before the view rotation.
DrrStack project(std::span<const ScalarVolume> objects, const ProjectionGeometry& geom,
                 DrrKind kind, const RigidPose& pose);

/// Single-volume projection (used by registration).
Image project_one(const ScalarVolume& vol, const ProjectionGeometry& geom,
                  const RigidPose& pose = {});

/// Intensity summation operator S: sum of a channel's pixels times the
/// pixel area. Units: cm3 for V stacks, g for M stacks, a.u. for WV.
double intensity_sum(const DrrStack& stack, int channel);

/// Channel-wise sum of the stack: the virtual X-ray image.
Image virtual_xray(const DrrStack& stack);

/// Per-channel line-integral units for a stack kind ("cm" for V,
/// "g/cm^2" for M, "au*cm" for WV).
std::string stack_units(DrrKind kind);

/// Writes one .mski per channel (named <object>_<kind>.mski) plus a JSON
/// manifest listing the channels in ObjectSet order. Returns the manifest
/// path.
std::filesystem::path save_stack(const DrrStack& stack, const ObjectSet& objects,
                                 const std::filesystem::path& dir);

/// Reads a stack back from its manifest. Object names are returned in
/// channel order.
std::pair<DrrStack, std::vector<std::string>> load_stack(const std::filesystem::path& manifest);

}  // namespace drrkit
