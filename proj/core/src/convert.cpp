#include "drrkit/convert.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "drrkit/errors.hpp"

namespace drrkit {

using nlohmann::json;

void ConversionTables::validate() const {
    if (!(hu_low < hu_high)) throw DataError("conversion tables: hu_low must be < hu_high");
    if (mass_density_lut.empty()) throw DataError("conversion tables: mass_density_lut is empty");
    for (std::size_t i = 0; i < mass_density_lut.size(); ++i) {
        const auto& [hu, rho] = mass_density_lut[i];
        if (!std::isfinite(hu) || !std::isfinite(rho))
            throw DataError("conversion tables: non-finite LUT entry");
        if (rho < 0.0) throw DataError("conversion tables: negative density in LUT");
        if (i > 0 && !(mass_density_lut[i - 1].first < hu))
            throw DataError("conversion tables: LUT must be strictly increasing in HU");
    }
    if (!(wv_hu_min < wv_hu_max))
        throw DataError("conversion tables: wv window min must be < max");
}

ConversionTables ConversionTables::defaults() {
    ConversionTables t;
    t.mass_density_lut = {
        {-1000.0, 0.00121},  // air
        {-741.0, 0.26},      // lung
        {-98.0, 0.93},       // adipose
        {0.0, 1.000},        // water
        {40.0, 1.05},        // muscle
        {260.0, 1.18},       // trabecular bone
        {1524.0, 1.92},      // cortical bone
    };
    return t;
}

ConversionTables load_conversion_tables(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open conversion tables '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("conversion tables '" + path.string() + "': " + e.what());
    }
    ConversionTables t;
    try {
        t.hu_low = j.at("lean_fraction").at("hu_low").get<double>();
        t.hu_high = j.at("lean_fraction").at("hu_high").get<double>();
        t.mass_density_lut.clear();
        for (const auto& e : j.at("mass_density_lut")) {
            if (!e.is_array() || e.size() != 2)
                throw DataError("conversion tables '" + path.string() +
                                "': LUT entries must be [hu, density] pairs");
            t.mass_density_lut.emplace_back(e[0].get<double>(), e[1].get<double>());
        }
        t.wv_hu_min = j.at("wv_window").at(0).get<double>();
        t.wv_hu_max = j.at("wv_window").at(1).get<double>();
    } catch (const json::exception& e) {
        throw DataError("conversion tables '" + path.string() + "': " + e.what());
    }
    t.validate();
    return t;
}

void save_conversion_tables(const ConversionTables& t, const std::filesystem::path& path) {
    t.validate();
    json j;
    j["lean_fraction"] = {{"hu_low", t.hu_low}, {"hu_high", t.hu_high}};
    j["mass_density_lut"] = json::array();
    for (const auto& [hu, rho] : t.mass_density_lut)
        j["mass_density_lut"].push_back({hu, rho});
    j["wv_window"] = {t.wv_hu_min, t.wv_hu_max};
    j["version"] = 1;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write conversion tables '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

double lean_fraction(double hu, const ConversionTables& t) {
    if (hu <= t.hu_low) return 0.0;
    if (hu >= t.hu_high) return 1.0;
    return (hu - t.hu_low) / (t.hu_high - t.hu_low);
}

double mass_density(double hu, const ConversionTables& t) {
    const auto& lut = t.mass_density_lut;
    if (lut.empty()) throw DataError("mass_density: empty LUT");
    if (hu <= lut.front().first) return lut.front().second;
    if (hu >= lut.back().first) return lut.back().second;
    // Binary search for the bracketing segment.
    auto it = std::upper_bound(lut.begin(), lut.end(), hu,
                               [](double h, const auto& e) { return h < e.first; });
    const auto& [h1, d1] = *it;
    const auto& [h0, d0] = *(it - 1);
    return d0 + (d1 - d0) * (hu - h0) / (h1 - h0);
}

double lean_mass_density(double hu, const ConversionTables& t) {
    return lean_fraction(hu, t) * mass_density(hu, t);
}

double wv_intensity(double hu, const ConversionTables& t) {
    const double w = (hu - t.wv_hu_min) / (t.wv_hu_max - t.wv_hu_min);
    return std::clamp(w, 0.0, 1.0);
}

std::vector<ScalarVolume> convert_volume(const ScalarVolume& hu, const LabelMap& labels,
                                         const ObjectSet& objects, DrrKind kind,
                                         const ConversionTables& t) {
    if (hu.grid() != labels.grid())
        throw DataError("convert_volume: volume and label map grids differ");
    if (hu.kind() != VolumeKind::hu)
        throw UsageError("convert_volume: input volume must have kind 'hu'");
    t.validate();

    const auto values = hu.values();
    const auto lab = labels.labels();
    std::vector<ScalarVolume> out;
    out.reserve(static_cast<std::size_t>(objects.size()));

    for (const auto& obj : objects.entries()) {
        std::vector<float> conv(values.size(), 0.0f);
        switch (kind) {
            case DrrKind::v:
                for (std::size_t i = 0; i < values.size(); ++i)
                    if (lab[i] == obj.label) conv[i] = 1.0f;
                out.emplace_back(hu.grid(), VolumeKind::indicator, std::move(conv));
                break;
            case DrrKind::m:
                // Bones carry their total mass density; the fat/lean mixing
                // model applies to muscles only.
                if (obj.cls == ObjectClass::bone) {
                    for (std::size_t i = 0; i < values.size(); ++i)
                        if (lab[i] == obj.label)
                            conv[i] = static_cast<float>(mass_density(values[i], t));
                } else {
                    for (std::size_t i = 0; i < values.size(); ++i)
                        if (lab[i] == obj.label)
                            conv[i] = static_cast<float>(lean_mass_density(values[i], t));
                }
                out.emplace_back(hu.grid(), VolumeKind::mass_density, std::move(conv));
                break;
            case DrrKind::wv:
                for (std::size_t i = 0; i < values.size(); ++i)
                    if (lab[i] == obj.label)
                        conv[i] = static_cast<float>(wv_intensity(values[i], t));
                out.emplace_back(hu.grid(), VolumeKind::hu, std::move(conv));
                break;
        }
    }
    return out;
}

namespace {
double weighted_sum_cm3(const ScalarVolume& v) {
    KahanSum s;
    for (float x : v.values()) s.add(static_cast<double>(x));
    return s.value() * v.grid().voxel_volume_cm3();
}
}  // namespace

double volume_of(const ScalarVolume& indicator) {
    if (indicator.kind() != VolumeKind::indicator)
        throw UsageError("volume_of: volume kind must be 'indicator'");
    return weighted_sum_cm3(indicator);
}

double mass_of(const ScalarVolume& density) {
    if (density.kind() != VolumeKind::mass_density)
        throw UsageError("mass_of: volume kind must be 'mass_density'");
    return weighted_sum_cm3(density);
}

}  // namespace drrkit
