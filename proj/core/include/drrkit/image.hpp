#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "drrkit/common.hpp"

namespace drrkit {

/// Dense 2D image, row-major, double precision. Rows map to the detector
/// y axis, columns to x.
class Image {
public:
    Image() = default;
    Image(int rows, int cols, double fill = 0.0)
        : rows_(checked_dim(rows)), cols_(checked_dim(cols)),
          pix_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), fill) {}

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return pix_.size(); }
    bool empty() const { return pix_.empty(); }

    double& at(int r, int c) { return pix_[static_cast<std::size_t>(r) * cols_ + c]; }
    double at(int r, int c) const { return pix_[static_cast<std::size_t>(r) * cols_ + c]; }
    double& operator[](std::size_t i) { return pix_[i]; }
    double operator[](std::size_t i) const { return pix_[i]; }

    std::span<double> pixels() { return pix_; }
    std::span<const double> pixels() const { return pix_; }

    bool same_shape(const Image& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool operator==(const Image&) const = default;

private:
    // Rejects bad dims before the pixel vector tries to allocate them.
    static int checked_dim(int d) {
        if (d <= 0) throw UsageError("image dims must be positive");
        return d;
    }

    int rows_ = 0, cols_ = 0;
    std::vector<double> pix_;
};

/// Compensated sum over all pixels.
double sum_pixels(const Image& img);

/// Metadata carried by a .mski image file.
struct ImageMeta {
    double pixel_h_mm = 1.0;
    double pixel_w_mm = 1.0;
    std::string kind = "image";  // "wv" | "v" | "m" | "image"
    std::string object_name;
    std::string units;
};

// .mski file format: one JSON header line {magic:"MSKI1", dims:[H,W],
// pixel_spacing_mm:[ph,pw], kind, object_name, units, dtype:"f64"}
// terminated by '\n', followed by the raw row-major little-endian payload.
void write_image(const Image& img, const ImageMeta& meta, const std::filesystem::path& path);
std::pair<Image, ImageMeta> read_image(const std::filesystem::path& path);

}  // namespace drrkit
