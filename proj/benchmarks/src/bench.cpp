#include <benchmark/benchmark.h>

#include <vector>

#include "drrkit/convert.hpp"
#include "drrkit/losses.hpp"
#include "drrkit/phantom.hpp"
#include "drrkit/project.hpp"
#include "drrkit/registration.hpp"
#include "drrkit/rng.hpp"

namespace {

using namespace drrkit;

/// Shared scene state, built once: generating the phantom and converting it
/// dominates setup, not the measured loops.
struct Scene {
    PhantomVolumes ph;
    std::vector<ScalarVolume> v_channels;
    std::vector<ScalarVolume> m_channels;

    Scene()
        : ph(generate(default_phantom_spec())),
          v_channels(convert_volume(ph.hu, ph.labels, ph.objects, DrrKind::v,
                                    ConversionTables::defaults())),
          m_channels(convert_volume(ph.hu, ph.labels, ph.objects, DrrKind::m,
                                    ConversionTables::defaults())) {}
};

const Scene& scene() {
    static const Scene s;
    return s;
}

void bm_phantom_generate(benchmark::State& state) {
    const PhantomSpec spec = default_phantom_spec();
    for (auto _ : state) benchmark::DoNotOptimize(generate(spec));
}
BENCHMARK(bm_phantom_generate)->Unit(benchmark::kMillisecond);

void bm_convert_mass(benchmark::State& state) {
    const Scene& s = scene();
    const ConversionTables tables = ConversionTables::defaults();
    for (auto _ : state)
        benchmark::DoNotOptimize(
            convert_volume(s.ph.hu, s.ph.labels, s.ph.objects, DrrKind::m, tables));
}
BENCHMARK(bm_convert_mass)->Unit(benchmark::kMillisecond);

void bm_project_exact_path(benchmark::State& state) {
    const Scene& s = scene();
    const Grid3& g = s.ph.hu.grid();
    const ProjectionGeometry geom =
        auto_geometry(g, {0, 0, 0}, g.spacing_mm[1], g.spacing_mm[0], 0.5, 2);
    for (auto _ : state) benchmark::DoNotOptimize(project(s.v_channels, geom, DrrKind::v));
}
BENCHMARK(bm_project_exact_path)->Unit(benchmark::kMillisecond);

void bm_project_general_path(benchmark::State& state) {
    const Scene& s = scene();
    const ProjectionGeometry geom =
        auto_geometry(s.ph.hu.grid(), {10, 20, 5}, 1.0, 1.0, 0.5, 2);
    for (auto _ : state) benchmark::DoNotOptimize(project(s.m_channels, geom, DrrKind::m));
}
BENCHMARK(bm_project_general_path)->Unit(benchmark::kMillisecond);

void bm_gc_forward_and_gradient(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(5);
    Image a(n, n), b(n, n);
    for (auto& p : a.pixels()) p = rng.uniform(0.0, 1.0);
    for (auto& p : b.pixels()) p = rng.uniform(0.0, 1.0);
    for (auto _ : state) benchmark::DoNotOptimize(gc(a, b));
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(bm_gc_forward_and_gradient)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void bm_registration_objective(benchmark::State& state) {
    const PhantomVolumes ph = generate(registration_bone_spec());
    const ScalarVolume bone = std::move(convert_volume(
        ph.hu, ph.labels, ph.objects, DrrKind::m, ConversionTables::defaults())[0]);
    const Grid3& g = bone.grid();
    const ProjectionGeometry geom =
        auto_geometry(g, {0, 0, 0}, g.spacing_mm[1], g.spacing_mm[0], 1.5, 2);
    const Image target = project_one(bone, geom);
    const RigidPose probe{2.0, -1.0, 3.0, 4.0, -2.0, 0.0};
    for (auto _ : state)
        benchmark::DoNotOptimize(registration_objective(bone, target, probe, geom));
}
BENCHMARK(bm_registration_objective)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
