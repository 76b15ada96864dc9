#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "drrkit/volume.hpp"

namespace drrkit {

/// Calibration tables for the three HU conversions.
///
/// lean fraction: 0 below hu_low, 1 above hu_high, linear in between
/// (fat/lean mixing band). mass_density_lut: piecewise-linear HU -> g/cm3
/// map, strictly increasing in HU, clamped to the endpoint densities
/// outside the table. wv window: clamped linear rescale of the original
/// intensity to [0,1].
struct ConversionTables {
    double hu_low = -30.0;
    double hu_high = 30.0;
    std::vector<std::pair<double, double>> mass_density_lut;  // (hu, density g/cm3)
    double wv_hu_min = -150.0;
    double wv_hu_max = 1500.0;

    void validate() const;  // throws DataError

    /// Built-in calibration, version 1. Tissue anchors (air, lung, adipose,
    /// water, muscle, trabecular and cortical bone) from the standard
    /// CT-number/tissue-parameter tables, with water pinned to exactly
    /// (0 HU, 1.000 g/cm3). The same values ship as
    /// assets/conversion_tables_v1.json for drop-in replacement.
    static ConversionTables defaults();
};

ConversionTables load_conversion_tables(const std::filesystem::path& path);
void save_conversion_tables(const ConversionTables& t, const std::filesystem::path& path);

/// Lean (non-fat) fraction of a voxel: 0 for hu <= hu_low, 1 for
/// hu >= hu_high, linear in between.
double lean_fraction(double hu, const ConversionTables& t);

/// Total tissue mass density in g/cm3, piecewise-linear in HU.
double mass_density(double hu, const ConversionTables& t);

/// lean_fraction(hu) * mass_density(hu): lean mass per cm3.
double lean_mass_density(double hu, const ConversionTables& t);

/// Window-clamped original intensity rescaled to [0,1].
double wv_intensity(double hu, const ConversionTables& t);

/// Applies one of the three conversions object-wise. Returns one volume per
/// ObjectSet entry, in entry order, zero outside the object's label support:
///   v  -> indicator (1 inside the label),
///   m  -> lean_mass_density inside muscles, mass_density inside bones,
///   wv -> windowed original intensity.
std::vector<ScalarVolume> convert_volume(const ScalarVolume& hu, const LabelMap& labels,
                                         const ObjectSet& objects, DrrKind kind,
                                         const ConversionTables& t);

/// Sum of an indicator volume times the voxel volume: object volume in cm3.
double volume_of(const ScalarVolume& indicator);

/// Sum of a mass-density volume times the voxel volume: object mass in g.
double mass_of(const ScalarVolume& density);

}  // namespace drrkit
