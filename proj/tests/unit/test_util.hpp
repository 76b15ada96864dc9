#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "drrkit/image.hpp"
#include "drrkit/rng.hpp"
#include "drrkit/volume.hpp"

namespace drrkit::test {

/// Self-cleaning scratch directory for file-format and CLI tests.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("drrkit_test_" + std::to_string(rd()) + "_" + std::to_string(++counter));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    // Returns a std::string so CLI tests can splice paths into command lines.
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline ScalarVolume random_volume(Rng& rng, Grid3 grid,
                                  VolumeKind kind = VolumeKind::hu,
                                  double lo = -1000.0, double hi = 2000.0) {
    std::vector<float> vals(grid.voxel_count());
    for (auto& v : vals) v = static_cast<float>(rng.uniform(lo, hi));
    return ScalarVolume(grid, kind, std::move(vals));
}

inline LabelMap random_labels(Rng& rng, Grid3 grid, int max_label) {
    std::vector<std::uint16_t> vals(grid.voxel_count());
    for (auto& v : vals) v = static_cast<std::uint16_t>(rng.uniform_int(0, max_label));
    return LabelMap(grid, std::move(vals));
}

inline Image random_image(Rng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
    Image img(rows, cols);
    for (auto& p : img.pixels()) p = rng.uniform(lo, hi);
    return img;
}

inline void write_text(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p);
    out << content;
}

}  // namespace drrkit::test
