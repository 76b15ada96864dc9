#include "drrkit/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

#include "drrkit/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "the .mskv/.mski readers assume a little-endian host");

namespace drrkit {

using nlohmann::json;

void Grid3::validate() const {
    if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
        throw DataError("grid dims must be positive");
    for (double s : spacing_mm)
        if (!(s > 0.0) || !std::isfinite(s)) throw DataError("grid spacing must be finite and positive");
    for (double o : origin_mm)
        if (!std::isfinite(o)) throw DataError("grid origin must be finite");
}

ScalarVolume::ScalarVolume(Grid3 grid, VolumeKind kind, std::vector<float> values)
    : grid_(grid), kind_(kind), values_(std::move(values)) {
    grid_.validate();
    if (values_.size() != grid_.voxel_count())
        throw DataError("value count does not match grid dims");
    for (float v : values_) {
        if (!std::isfinite(v)) throw DataError("volume contains a non-finite value");
        if (kind_ == VolumeKind::indicator && v != 0.0f && v != 1.0f)
            throw DataError("indicator volume contains a value outside {0,1}");
        if (kind_ == VolumeKind::mass_density && v < 0.0f)
            throw DataError("mass-density volume contains a negative value");
    }
}

LabelMap::LabelMap(Grid3 grid, std::vector<uint16_t> labels)
    : grid_(grid), labels_(std::move(labels)) {
    grid_.validate();
    if (labels_.size() != grid_.voxel_count())
        throw DataError("label count does not match grid dims");
}

ObjectSet::ObjectSet(std::vector<ObjectEntry> entries) : entries_(std::move(entries)) {
    std::set<uint16_t> seen;
    std::set<std::string> seen_names;
    for (const auto& e : entries_) {
        if (e.label == 0) throw DataError("object label 0 is reserved for background");
        if (!seen.insert(e.label).second)
            throw DataError("duplicate object label " + std::to_string(e.label));
        if (e.name.empty()) throw DataError("object name must be non-empty");
        if (!seen_names.insert(e.name).second)
            throw DataError("duplicate object name '" + e.name + "'");
    }
}

std::optional<int> ObjectSet::index_of_label(uint16_t label) const {
    for (int i = 0; i < size(); ++i)
        if (entries_[static_cast<std::size_t>(i)].label == label) return i;
    return std::nullopt;
}

std::optional<int> ObjectSet::index_of_name(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
        if (entries_[static_cast<std::size_t>(i)].name == name) return i;
    return std::nullopt;
}

ObjectSet load_object_set(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open object set '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("object set '" + path.string() + "': " + e.what());
    }
    if (!j.contains("objects") || !j["objects"].is_array())
        throw DataError("object set '" + path.string() + "': missing 'objects' array");
    std::vector<ObjectEntry> entries;
    for (const auto& o : j["objects"]) {
        ObjectEntry e;
        try {
            e.label = static_cast<uint16_t>(o.at("label").get<int>());
            e.name = o.at("name").get<std::string>();
            e.cls = object_class_from_string(o.at("class").get<std::string>());
        } catch (const json::exception& ex) {
            throw DataError("object set '" + path.string() + "': " + ex.what());
        }
        entries.push_back(std::move(e));
    }
    return ObjectSet(std::move(entries));
}

void save_object_set(const ObjectSet& set, const std::filesystem::path& path) {
    json j;
    j["objects"] = json::array();
    for (const auto& e : set.entries()) {
        j["objects"].push_back(
            {{"label", e.label}, {"name", e.name}, {"class", to_string(e.cls)}});
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write object set '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// .mskv I/O

namespace {

constexpr const char* kMagic = "MSKV1";

json json_header_for(const Grid3& g, const std::string& kind, const std::string& dtype) {
    json h;
    h["magic"] = kMagic;
    h["dims"] = g.dims;
    h["spacing_mm"] = g.spacing_mm;
    h["origin_mm"] = g.origin_mm;
    h["kind"] = kind;
    h["dtype"] = dtype;
    return h;
}

void write_mskv(const std::filesystem::path& path, const json& header, const void* payload,
                std::size_t bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << header.dump() << '\n';
    out.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
    if (!out) throw DataError("I/O failure writing '" + path.string() + "'");
}

struct ParsedHeader {
    Grid3 grid;
    std::string kind;
    std::string dtype;
};

template <typename T, std::size_t N>
std::array<T, N> field_array(const json& h, const char* name, const std::string& path) {
    if (!h.contains(name))
        throw DataError("'" + path + "': header field '" + name + "' is missing");
    const auto& f = h[name];
    if (!f.is_array() || f.size() != N)
        throw DataError("'" + path + "': header field '" + name + "' must be an array of " +
                        std::to_string(N));
    std::array<T, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
        try {
            out[i] = f[i].get<T>();
        } catch (const json::exception&) {
            throw DataError("'" + path + "': header field '" + name + "' has a non-numeric entry");
        }
    }
    return out;
}

std::string field_string(const json& h, const char* name, const std::string& path) {
    if (!h.contains(name) || !h[name].is_string())
        throw DataError("'" + path + "': header field '" + name + "' is missing or not a string");
    return h[name].get<std::string>();
}

ParsedHeader parse_header(const std::string& line, const std::string& path) {
    json h;
    try {
        h = json::parse(line);
    } catch (const json::exception& e) {
        throw DataError("'" + path + "': header is not valid JSON: " + e.what());
    }
    if (field_string(h, "magic", path) != kMagic)
        throw DataError("'" + path + "': header field 'magic' is not \"MSKV1\"");
    ParsedHeader p;
    p.grid.dims = field_array<int, 3>(h, "dims", path);
    p.grid.spacing_mm = field_array<double, 3>(h, "spacing_mm", path);
    p.grid.origin_mm = field_array<double, 3>(h, "origin_mm", path);
    p.kind = field_string(h, "kind", path);
    p.dtype = field_string(h, "dtype", path);
    try {
        p.grid.validate();
    } catch (const DataError& e) {
        throw DataError("'" + path + "': " + e.what());
    }
    if (p.kind != "hu" && p.kind != "indicator" && p.kind != "mass_density" && p.kind != "labels")
        throw DataError("'" + path + "': header field 'kind' has unknown value '" + p.kind + "'");
    if (p.dtype != "f32" && p.dtype != "u16")
        throw DataError("'" + path + "': header field 'dtype' has unknown value '" + p.dtype + "'");
    if ((p.kind == "labels") != (p.dtype == "u16"))
        throw DataError("'" + path + "': header fields 'kind' and 'dtype' are inconsistent");
    return p;
}

}  // namespace

void write_volume(const ScalarVolume& v, const std::filesystem::path& path) {
    json h = json_header_for(v.grid(), to_string(v.kind()), "f32");
    write_mskv(path, h, v.values().data(), v.values().size() * sizeof(float));
}

void write_volume(const LabelMap& m, const std::filesystem::path& path) {
    json h = json_header_for(m.grid(), "labels", "u16");
    write_mskv(path, h, m.labels().data(), m.labels().size() * sizeof(uint16_t));
}

AnyVolume read_volume(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line))
        throw DataError("'" + path.string() + "': missing header line");
    ParsedHeader p = parse_header(line, path.string());

    const std::size_t n = p.grid.voxel_count();
    const std::size_t elem = p.dtype == "f32" ? sizeof(float) : sizeof(uint16_t);
    const std::size_t expected = n * elem;

    std::vector<char> payload(expected);
    in.read(payload.data(), static_cast<std::streamsize>(expected));
    const std::size_t got = static_cast<std::size_t>(in.gcount());
    if (got < expected)
        throw DataError("'" + path.string() + "': payload truncated (expected " +
                        std::to_string(expected) + " bytes, got " + std::to_string(got) + ")");
    char extra;
    if (in.read(&extra, 1))
        throw DataError("'" + path.string() + "': payload larger than header dims imply");

    if (p.dtype == "u16") {
        std::vector<uint16_t> labels(n);
        std::memcpy(labels.data(), payload.data(), expected);
        return LabelMap(p.grid, std::move(labels));
    }
    std::vector<float> values(n);
    std::memcpy(values.data(), payload.data(), expected);
    for (float f : values)
        if (!std::isfinite(f))
            throw DataError("'" + path.string() + "': payload contains a non-finite value");
    return ScalarVolume(p.grid, volume_kind_from_string(p.kind), std::move(values));
}

ScalarVolume read_scalar_volume(const std::filesystem::path& path) {
    AnyVolume v = read_volume(path);
    if (auto* s = std::get_if<ScalarVolume>(&v)) return std::move(*s);
    throw DataError("'" + path.string() + "' holds a label map, expected a scalar volume");
}

LabelMap read_label_map(const std::filesystem::path& path) {
    AnyVolume v = read_volume(path);
    if (auto* m = std::get_if<LabelMap>(&v)) return std::move(*m);
    throw DataError("'" + path.string() + "' holds a scalar volume, expected a label map");
}

ExtractedObject extract_object(const ScalarVolume& v, const LabelMap& m, int label_id) {
    if (v.grid() != m.grid())
        throw DataError("extract_object: volume and label map grids differ");
    if (label_id <= 0) throw UsageError("extract_object: label_id must be positive");

    const auto values = v.values();
    const auto labels = m.labels();
    std::vector<float> out(values.size(), 0.0f);
    bool present = false;
    const uint16_t id = static_cast<uint16_t>(label_id);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (labels[i] == id) {
            out[i] = values[i];
            present = true;
        }
    }
    return {ScalarVolume(v.grid(), v.kind(), std::move(out)), present};
}

}  // namespace drrkit
