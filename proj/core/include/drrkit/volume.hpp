#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "drrkit/common.hpp"

namespace drrkit {

/// Voxel geometry: dims (nx, ny, nz), spacing in mm, origin in mm.
/// Voxel (i, j, k) occupies [origin + (i,j,k)*spacing, origin + (i+1,j+1,k+1)*spacing),
/// its center is origin + (i+0.5, j+0.5, k+0.5)*spacing.
struct Grid3 {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::array<double, 3> origin_mm{0.0, 0.0, 0.0};

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    double voxel_volume_cm3() const {
        return spacing_mm[0] * spacing_mm[1] * spacing_mm[2] / 1000.0;
    }
    Vec3 center_mm() const {
        return {origin_mm[0] + 0.5 * dims[0] * spacing_mm[0],
                origin_mm[1] + 0.5 * dims[1] * spacing_mm[1],
                origin_mm[2] + 0.5 * dims[2] * spacing_mm[2]};
    }
    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
    }

    void validate() const;  // throws DataError on non-positive dims/spacing
    bool operator==(const Grid3&) const = default;
};

/// Dense scalar field on a Grid3. Values are stored as 32-bit floats (the
/// on-disk precision); every accumulation over them happens in double.
class ScalarVolume {
public:
    ScalarVolume(Grid3 grid, VolumeKind kind, std::vector<float> values);

    const Grid3& grid() const { return grid_; }
    VolumeKind kind() const { return kind_; }
    std::span<const float> values() const { return values_; }
    float at(int i, int j, int k) const { return values_[grid_.index(i, j, k)]; }

    bool operator==(const ScalarVolume&) const = default;

private:
    Grid3 grid_;
    VolumeKind kind_ = VolumeKind::hu;
    std::vector<float> values_;
};

/// Integer label field aligned with a ScalarVolume; 0 is background.
class LabelMap {
public:
    LabelMap(Grid3 grid, std::vector<uint16_t> labels);

    const Grid3& grid() const { return grid_; }
    std::span<const uint16_t> labels() const { return labels_; }
    uint16_t at(int i, int j, int k) const { return labels_[grid_.index(i, j, k)]; }

    bool operator==(const LabelMap&) const = default;

private:
    Grid3 grid_;
    std::vector<uint16_t> labels_;
};

struct ObjectEntry {
    uint16_t label = 0;  // positive; 0 is reserved for background
    std::string name;
    ObjectClass cls = ObjectClass::muscle;

    bool operator==(const ObjectEntry&) const = default;
};

/// Ordered object list. The entry order fixes the channel order of every
/// DRR stack built from it.
class ObjectSet {
public:
    ObjectSet() = default;
    explicit ObjectSet(std::vector<ObjectEntry> entries);

    int size() const { return static_cast<int>(entries_.size()); }
    const ObjectEntry& operator[](int i) const { return entries_[static_cast<std::size_t>(i)]; }
    const std::vector<ObjectEntry>& entries() const { return entries_; }
    std::optional<int> index_of_label(uint16_t label) const;
    std::optional<int> index_of_name(const std::string& name) const;

    bool operator==(const ObjectSet&) const = default;

private:
    std::vector<ObjectEntry> entries_;
};

ObjectSet load_object_set(const std::filesystem::path& path);
void save_object_set(const ObjectSet& set, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// .mskv file format: one UTF-8 JSON header line terminated by '\n' with
// fields {magic:"MSKV1", dims:[nx,ny,nz], spacing_mm:[sx,sy,sz],
// origin_mm:[ox,oy,oz], kind:"hu"|"indicator"|"mass_density"|"labels",
// dtype:"f32"|"u16"}, immediately followed by the raw payload in x-fastest
// order, little-endian. Unknown extra header fields are ignored on read.

using AnyVolume = std::variant<ScalarVolume, LabelMap>;

AnyVolume read_volume(const std::filesystem::path& path);
ScalarVolume read_scalar_volume(const std::filesystem::path& path);
LabelMap read_label_map(const std::filesystem::path& path);
void write_volume(const ScalarVolume& v, const std::filesystem::path& path);
void write_volume(const LabelMap& m, const std::filesystem::path& path);

struct ExtractedObject {
    ScalarVolume volume;
    bool label_present = false;  // false: label absent, volume is all zeros
};

/// Masks v to the voxels carrying label_id; zero elsewhere. An absent label
/// is not an error (slab-cropped scans may miss objects) and is reported
/// through the label_present flag.
ExtractedObject extract_object(const ScalarVolume& v, const LabelMap& m, int label_id);

}  // namespace drrkit
