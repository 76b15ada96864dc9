#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "drrkit/convert.hpp"
#include "drrkit/errors.hpp"
#include "drrkit/project.hpp"
#include "drrkit/rng.hpp"
#include "drrkit/volume.hpp"
#include "test_util.hpp"

using namespace drrkit;
using drrkit::test::TempDir;

TEST_SUITE_BEGIN("project");

namespace {

ProjectionGeometry basic_geometry(int rows, int cols, double step = 0.5) {
    ProjectionGeometry g;
    g.det_rows = rows;
    g.det_cols = cols;
    g.pixel_h_mm = 1.0;
    g.pixel_w_mm = 1.0;
    g.step_mm = step;
    return g;
}

ScalarVolume ones_cube(int n) {
    Grid3 g{{n, n, n}, {1, 1, 1}, {0, 0, 0}};
    return ScalarVolume(g, VolumeKind::indicator,
                        std::vector<float>(g.voxel_count(), 1.0f));
}

ScalarVolume impulse_volume(int n, int i, int j, int k) {
    Grid3 g{{n, n, n}, {1, 1, 1}, {0, 0, 0}};
    std::vector<float> vals(g.voxel_count(), 0.0f);
    vals[g.index(i, j, k)] = 1.0f;
    return ScalarVolume(g, VolumeKind::indicator, std::move(vals));
}

double max_abs_diff(const Image& a, const Image& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("axis-aligned projection of a unit cube: frozen values") {
    const ScalarVolume cube = ones_cube(2);
    const std::vector<ScalarVolume> objs{cube};
    const DrrStack stack = project(objs, basic_geometry(2, 2), DrrKind::v);

    REQUIRE(stack.size() == 1);
    // Two 1 mm voxels of value 1 along each ray: 2 mm = 0.2 value*cm.
    for (double p : stack.channels[0].pixels())
        CHECK(p == doctest::Approx(0.2).epsilon(1e-14));
    // 4 pixels * 0.2 * 0.01 cm2 = 0.008 cm3 — exactly the cube's volume.
    CHECK(intensity_sum(stack, 0) == doctest::Approx(0.008).epsilon(1e-12));
    CHECK(intensity_sum(stack, 0) ==
          doctest::Approx(volume_of(cube)).epsilon(1e-12));
}

TEST_CASE("general path reproduces exact column sums under a whole-pixel shift") {
    Rng rng(808);
    Grid3 g{{8, 8, 8}, {1, 1, 1}, {0, 0, 0}};
    std::vector<float> vals(g.voxel_count());
    for (auto& v : vals) v = static_cast<float>(rng.uniform(0.0, 2.0));
    const ScalarVolume vol(g, VolumeKind::hu, vals);
    const std::vector<ScalarVolume> objs{vol};

    // 10-column detector leaves one pad column on each side.
    const ProjectionGeometry geom = basic_geometry(8, 10, 0.25);
    const Image exact = project(objs, geom, DrrKind::wv).channels[0];

    // A +1 mm (one pixel) x translation takes the interpolating path; the
    // voxel centers stay ray-aligned, so every column must reappear one
    // pixel to the right with only quadrature-roundoff error.
    const Image shifted =
        project(objs, geom, DrrKind::wv, RigidPose{0, 0, 0, 1.0, 0, 0}).channels[0];
    for (int r = 0; r < 8; ++r) {
        CHECK(std::abs(shifted.at(r, 0)) < 1e-9);
        for (int c = 1; c < 10; ++c)
            CHECK(shifted.at(r, c) == doctest::Approx(exact.at(r, c - 1)).epsilon(1e-9));
    }

    // A pure z shift does not change a parallel projection along z at all.
    const Image zshift =
        project(objs, geom, DrrKind::wv, RigidPose{0, 0, 0, 0, 0, 7.0}).channels[0];
    CHECK(max_abs_diff(zshift, exact) < 1e-9);
}

TEST_CASE("general path interpolates half-pixel offsets as column averages") {
    Rng rng(809);
    Grid3 g{{8, 8, 8}, {1, 1, 1}, {0, 0, 0}};
    std::vector<float> vals(g.voxel_count());
    for (auto& v : vals) v = static_cast<float>(rng.uniform(0.0, 2.0));
    const ScalarVolume vol(g, VolumeKind::hu, vals);
    const std::vector<ScalarVolume> objs{vol};

    const Image exact = project(objs, basic_geometry(8, 8, 0.25), DrrKind::wv).channels[0];

    // A 9-column detector puts every ray exactly halfway between two voxel
    // columns, so each pixel is the mean of the two exact neighbors (zero
    // outside the volume).
    const Image half = project(objs, basic_geometry(8, 9, 0.25), DrrKind::wv).channels[0];
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 9; ++c) {
            const double left = c - 1 >= 0 ? exact.at(r, c - 1) : 0.0;
            const double right = c < 8 ? exact.at(r, c) : 0.0;
            CHECK(half.at(r, c) == doctest::Approx(0.5 * (left + right)).epsilon(1e-9));
        }
}

TEST_CASE("translation moves the footprint by whole pixels") {
    const int n = 5;
    const std::vector<ScalarVolume> objs{impulse_volume(n, 2, 2, 2)};
    const ProjectionGeometry geom = basic_geometry(n, n, 0.25);

    const DrrStack base = project(objs, geom, DrrKind::v);
    CHECK(base.channels[0].at(2, 2) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(sum_pixels(base.channels[0]) == doctest::Approx(0.1).epsilon(1e-12));

    // +x translation lands one column to the right, +y one row down.
    const DrrStack tx = project(objs, geom, DrrKind::v, RigidPose{0, 0, 0, 1.0, 0, 0});
    CHECK(tx.channels[0].at(2, 3) == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(tx.channels[0].at(2, 2) == doctest::Approx(0.0).epsilon(1e-9));

    const DrrStack ty = project(objs, geom, DrrKind::v, RigidPose{0, 0, 0, 0, 2.0, 0});
    CHECK(ty.channels[0].at(4, 2) == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("a 90-degree view rotation about z maps +x offsets to +y") {
    const int n = 5;
    // Impulse one voxel to +x of center.
    const std::vector<ScalarVolume> objs{impulse_volume(n, 3, 2, 2)};
    ProjectionGeometry geom = basic_geometry(n, n, 0.25);

    const DrrStack base = project(objs, geom, DrrKind::v);
    CHECK(base.channels[0].at(2, 3) == doctest::Approx(0.1).epsilon(1e-12));

    geom.rotation_deg = {0.0, 0.0, 90.0};
    const DrrStack rot = project(objs, geom, DrrKind::v);
    CHECK(rot.channels[0].at(3, 2) == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(sum_pixels(rot.channels[0]) == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("rotation about y keeps intensity sums conserved") {
    Rng rng(4242);
    Grid3 g{{16, 16, 16}, {1.25, 1.25, 1.25}, {0, 0, 0}};
    std::vector<float> vals(g.voxel_count(), 0.0f);
    // A blob that does not touch the boundary.
    for (int k = 4; k < 12; ++k)
        for (int j = 4; j < 12; ++j)
            for (int i = 4; i < 12; ++i)
                vals[g.index(i, j, k)] = static_cast<float>(rng.uniform(0.5, 1.5));
    const ScalarVolume vol(g, VolumeKind::hu, vals);
    const std::vector<ScalarVolume> objs{vol};

    KahanSum ref;
    for (float v : vals) ref.add(v);
    const double voxel_integral = ref.value() * g.voxel_volume_cm3();

    for (const Vec3 rot : {Vec3{30, 0, 0}, Vec3{0, -50, 0}, Vec3{25, 40, -60}}) {
        const ProjectionGeometry geom = auto_geometry(g, rot, 1.25, 1.25, 0.3, 2);
        const DrrStack stack = project(objs, geom, DrrKind::wv);
        const double s = intensity_sum(stack, 0);
        CHECK(std::abs(s - voxel_integral) / voxel_integral < 5e-3);
    }
}

TEST_CASE("auto geometry covers the rotated volume") {
    Grid3 g{{160, 160, 160}, {1, 1, 1}, {0, 0, 0}};
    const ProjectionGeometry zero = auto_geometry(g, {0, 0, 0}, 1.0, 1.0, 0.5, 2);
    CHECK(zero.det_rows == 164);
    CHECK(zero.det_cols == 164);
    CHECK(zero.pixel_h_mm == 1.0);
    CHECK(zero.step_mm == 0.5);

    // 45 degrees about z stretches the x-y footprint by sqrt(2).
    const ProjectionGeometry rot = auto_geometry(g, {0, 0, 45}, 1.0, 1.0, 0.5, 2);
    CHECK(rot.det_cols >= 160 * std::numbers::sqrt2 - 1);
    CHECK(rot.det_cols <= 160 * std::numbers::sqrt2 + 6);

    // Non-integer extent/pixel ratios round up, never down.
    Grid3 g2{{64, 64, 64}, {1.5, 1.5, 1.5}, {0, 0, 0}};
    const ProjectionGeometry q = auto_geometry(g2, {0, 0, 0}, 1.0, 1.0, 0.5, 1);
    CHECK(q.det_cols == 98);  // ceil(96/1) + 2*1
}

TEST_CASE("virtual x-ray is the channel-wise sum") {
    const std::vector<ScalarVolume> objs{impulse_volume(4, 1, 1, 1), impulse_volume(4, 2, 2, 2),
                                         ones_cube(4)};
    const DrrStack stack = project(objs, basic_geometry(4, 4), DrrKind::wv);
    const Image vx = virtual_xray(stack);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            const double want = stack.channels[0].at(r, c) + stack.channels[1].at(r, c) +
                                stack.channels[2].at(r, c);
            CHECK(vx.at(r, c) == doctest::Approx(want).epsilon(1e-15));
        }
}

TEST_CASE("stack units and channel range checks") {
    CHECK(stack_units(DrrKind::v) == "cm");
    CHECK(stack_units(DrrKind::m) == "g/cm^2");
    CHECK(stack_units(DrrKind::wv) == "au*cm");

    const std::vector<ScalarVolume> objs{ones_cube(2)};
    const DrrStack stack = project(objs, basic_geometry(2, 2), DrrKind::v);
    CHECK_THROWS_AS(intensity_sum(stack, -1), UsageError);
    CHECK_THROWS_AS(intensity_sum(stack, 1), UsageError);
}

TEST_CASE("projection input validation") {
    CHECK_THROWS_AS(project(std::vector<ScalarVolume>{}, basic_geometry(2, 2), DrrKind::v),
                    UsageError);

    Grid3 g1{{2, 2, 2}, {1, 1, 1}, {0, 0, 0}};
    Grid3 g2{{3, 3, 3}, {1, 1, 1}, {0, 0, 0}};
    std::vector<ScalarVolume> mixed{
        ScalarVolume(g1, VolumeKind::hu, std::vector<float>(8, 0.f)),
        ScalarVolume(g2, VolumeKind::hu, std::vector<float>(27, 0.f))};
    CHECK_THROWS_AS(project(mixed, basic_geometry(2, 2), DrrKind::v), DataError);

    ProjectionGeometry bad = basic_geometry(2, 2);
    bad.step_mm = 0.0;
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = basic_geometry(0, 2);
    CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("stack save/load round-trip") {
    TempDir tmp;
    Rng rng(17);
    Grid3 g{{6, 5, 4}, {1, 1, 1}, {0, 0, 0}};
    std::vector<ScalarVolume> objs;
    for (int i = 0; i < 2; ++i) objs.push_back(drrkit::test::random_volume(rng, g, VolumeKind::hu, 0.0, 1.0));
    const ObjectSet set({{1, "femur", ObjectClass::bone}, {2, "psoas major", ObjectClass::muscle}});

    const ProjectionGeometry geom = auto_geometry(g, {0, 0, 0}, 1.0, 1.0, 0.5, 1);
    const DrrStack stack = project(objs, geom, DrrKind::wv);
    const auto manifest = save_stack(stack, set, tmp.path());

    const auto [loaded, names] = load_stack(manifest);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded.kind == DrrKind::wv);
    CHECK(loaded.pixel_h_mm == stack.pixel_h_mm);
    CHECK(loaded.pixel_w_mm == stack.pixel_w_mm);
    CHECK(names == std::vector<std::string>{"femur", "psoas major"});
    CHECK(loaded.channels[0] == stack.channels[0]);
    CHECK(loaded.channels[1] == stack.channels[1]);
}

TEST_CASE("single-volume projection matches the stack path") {
    Rng rng(55);
    Grid3 g{{7, 7, 7}, {1, 1, 1}, {0, 0, 0}};
    const ScalarVolume vol = drrkit::test::random_volume(rng, g, VolumeKind::hu, 0.0, 1.0);
    const RigidPose pose{5.0, -3.0, 10.0, 2.0, -1.0, 0.0};
    const ProjectionGeometry geom = auto_geometry(g, {0, 0, 0}, 1.0, 1.0, 0.25, 3);

    const std::vector<ScalarVolume> objs{vol};
    const DrrStack stack = project(objs, geom, DrrKind::wv, pose);
    const Image one = project_one(vol, geom, pose);
    CHECK(one == stack.channels[0]);
}

TEST_SUITE_END();
