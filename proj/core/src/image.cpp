#include "drrkit/image.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "drrkit/errors.hpp"

namespace drrkit {

using nlohmann::json;

double sum_pixels(const Image& img) {
    KahanSum s;
    for (double p : img.pixels()) s.add(p);
    return s.value();
}

void write_image(const Image& img, const ImageMeta& meta, const std::filesystem::path& path) {
    if (img.empty()) throw UsageError("write_image: empty image");
    json h;
    h["magic"] = "MSKI1";
    h["dims"] = {img.rows(), img.cols()};
    h["pixel_spacing_mm"] = {meta.pixel_h_mm, meta.pixel_w_mm};
    h["kind"] = meta.kind;
    h["object_name"] = meta.object_name;
    h["units"] = meta.units;
    h["dtype"] = "f64";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << h.dump() << '\n';
    out.write(reinterpret_cast<const char*>(img.pixels().data()),
              static_cast<std::streamsize>(img.size() * sizeof(double)));
    if (!out) throw DataError("I/O failure writing '" + path.string() + "'");
}

std::pair<Image, ImageMeta> read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("'" + path.string() + "': missing header line");
    json h;
    try {
        h = json::parse(line);
    } catch (const json::exception& e) {
        throw DataError("'" + path.string() + "': header is not valid JSON: " + e.what());
    }
    auto str_field = [&](const char* name) -> std::string {
        if (!h.contains(name) || !h[name].is_string())
            throw DataError("'" + path.string() + "': header field '" + name +
                            "' is missing or not a string");
        return h[name].get<std::string>();
    };
    if (str_field("magic") != "MSKI1")
        throw DataError("'" + path.string() + "': header field 'magic' is not \"MSKI1\"");
    if (!h.contains("dims") || !h["dims"].is_array() || h["dims"].size() != 2)
        throw DataError("'" + path.string() + "': header field 'dims' must be [H,W]");
    const int rows = h["dims"][0].get<int>();
    const int cols = h["dims"][1].get<int>();
    if (rows <= 0 || cols <= 0)
        throw DataError("'" + path.string() + "': header field 'dims' must be positive");
    ImageMeta meta;
    if (!h.contains("pixel_spacing_mm") || !h["pixel_spacing_mm"].is_array() ||
        h["pixel_spacing_mm"].size() != 2)
        throw DataError("'" + path.string() + "': header field 'pixel_spacing_mm' must be [ph,pw]");
    meta.pixel_h_mm = h["pixel_spacing_mm"][0].get<double>();
    meta.pixel_w_mm = h["pixel_spacing_mm"][1].get<double>();
    if (!(meta.pixel_h_mm > 0.0) || !(meta.pixel_w_mm > 0.0))
        throw DataError("'" + path.string() + "': header field 'pixel_spacing_mm' must be positive");
    meta.kind = str_field("kind");
    meta.object_name = str_field("object_name");
    meta.units = str_field("units");
    if (str_field("dtype") != "f64")
        throw DataError("'" + path.string() + "': header field 'dtype' must be \"f64\"");

    Image img(rows, cols);
    const std::size_t expected = img.size() * sizeof(double);
    in.read(reinterpret_cast<char*>(img.pixels().data()),
            static_cast<std::streamsize>(expected));
    const std::size_t got = static_cast<std::size_t>(in.gcount());
    if (got < expected)
        throw DataError("'" + path.string() + "': payload truncated (expected " +
                        std::to_string(expected) + " bytes, got " + std::to_string(got) + ")");
    char extra;
    if (in.read(&extra, 1))
        throw DataError("'" + path.string() + "': payload larger than header dims imply");
    for (double p : img.pixels())
        if (!std::isfinite(p))
            throw DataError("'" + path.string() + "': payload contains a non-finite value");
    return {std::move(img), std::move(meta)};
}

}  // namespace drrkit
