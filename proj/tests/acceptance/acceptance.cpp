// Acceptance gate: one self-contained check per release criterion. Each
// check prints exactly one [PASS]/[FAIL] line with the measured numbers and
// the pinned limit, and the process exits nonzero on failure so the ctest
// entries stay honest.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "drrkit/convert.hpp"
#include "drrkit/errors.hpp"
#include "drrkit/gradcheck.hpp"
#include "drrkit/losses.hpp"
#include "drrkit/metrics.hpp"
#include "drrkit/phantom.hpp"
#include "drrkit/project.hpp"
#include "drrkit/registration.hpp"
#include "drrkit/rng.hpp"
#include "drrkit/volume.hpp"

using namespace drrkit;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double s() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

// ------------------------------------------------------------------ fixtures

/// Randomized four-object scene (one bone, three muscles) on a 96 mm grid.
/// Placement is bounded so any orientation stays inside the grid.
PhantomSpec random_study_spec(std::uint64_t seed) {
    Rng rng(seed);
    PhantomSpec spec;
    spec.grid = Grid3{{64, 64, 64}, {1.5, 1.5, 1.5}, {0, 0, 0}};
    spec.seed = seed * 2 + 1;
    spec.noise_sigma_hu = 3.0;

    auto place = [&](const std::string& name, ObjectClass cls, const Tissue& tissue) {
        PhantomObject obj;
        obj.name = name;
        obj.cls = cls;
        obj.shape.center_mm = {rng.uniform(34, 62), rng.uniform(34, 62), rng.uniform(34, 62)};
        obj.shape.semi_axes_mm = {rng.uniform(8, 16), rng.uniform(8, 16), rng.uniform(8, 16)};
        obj.shape.euler_deg = {rng.uniform(-45, 45), rng.uniform(-45, 45), rng.uniform(-45, 45)};
        obj.tissue = tissue;
        spec.objects.push_back(obj);
    };
    place("bone_1", ObjectClass::bone,
          FattyGradient{rng.uniform(200, 500), rng.uniform(600, 1000),
                        static_cast<int>(rng.uniform_int(0, 2))});
    place("muscle_1", ObjectClass::muscle, UniformTissue{rng.uniform(25, 65)});
    place("muscle_2", ObjectClass::muscle,
          FattyGradient{rng.uniform(-60, 0), rng.uniform(10, 70),
                        static_cast<int>(rng.uniform_int(0, 2))});
    place("muscle_3", ObjectClass::muscle, UniformTissue{rng.uniform(25, 65)});
    return spec;
}

/// Zero-rotation detector with pixels exactly matching the in-plane voxel
/// spacing, so beam sums reduce to plain voxel-column sums.
ProjectionGeometry axis_geom(const Grid3& g, double step_mm) {
    return auto_geometry(g, {0, 0, 0}, g.spacing_mm[1], g.spacing_mm[0], step_mm, 2);
}

Image rand_img(Rng& rng, int rows, int cols, double lo = 0.2, double hi = 0.8) {
    Image img(rows, cols);
    for (auto& p : img.pixels()) p = rng.uniform(lo, hi);
    return img;
}

struct LossFixture {
    PredictionBundle b;
    SupervisionBundle sup;
    double gan_total = -1.25;
};

/// Three-object prediction bundle with every supervision term active
/// (object 1 is the bone); 10 mm pixels make one pixel exactly 1 cm2.
LossFixture make_loss_fixture(std::uint64_t seed) {
    Rng rng(seed);
    LossFixture f;
    for (DrrStack* s : {&f.b.wv, &f.b.v, &f.b.m}) {
        s->pixel_h_mm = 10.0;
        s->pixel_w_mm = 10.0;
        for (int i = 0; i < 3; ++i) s->channels.push_back(rand_img(rng, 8, 8));
    }
    f.b.wv.kind = DrrKind::wv;
    f.b.v.kind = DrrKind::v;
    f.b.m.kind = DrrKind::m;
    f.b.xray = rand_img(rng, 8, 8);
    for (int i = 0; i < 3; ++i) {
        f.sup.sums_wv.push_back(intensity_sum(f.b.wv, i) + rng.uniform(-1, 1));
        f.sup.sums_v.push_back(intensity_sum(f.b.v, i) + rng.uniform(-1, 1));
        f.sup.sums_m.push_back(intensity_sum(f.b.m, i) + rng.uniform(-1, 1));
    }
    f.sup.bone_indices = {1};
    f.sup.bones_wv = {rand_img(rng, 8, 8)};
    f.sup.bones_v = {rand_img(rng, 8, 8)};
    f.sup.bones_m = {rand_img(rng, 8, 8)};
    return f;
}

double rel_dev(double got, double want) { return std::abs(got - want) / std::abs(want); }

// -------------------------------------------------- 1. exact-path conservation

Outcome conservation_exact() {
    Timer t;
    const ConversionTables tables = ConversionTables::defaults();
    double max_rel = 0.0;
    int comparisons = 0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const PhantomVolumes ph = generate(random_study_spec(seed), tables);
        const ProjectionGeometry geom = axis_geom(ph.hu.grid(), 1.5);
        for (DrrKind kind : {DrrKind::v, DrrKind::m}) {
            const auto converted = convert_volume(ph.hu, ph.labels, ph.objects, kind, tables);
            const DrrStack stack = project(converted, geom, kind);
            for (int i = 0; i < stack.size(); ++i) {
                const double integral =
                    kind == DrrKind::v ? volume_of(converted[static_cast<std::size_t>(i)])
                                       : mass_of(converted[static_cast<std::size_t>(i)]);
                max_rel = std::max(max_rel, rel_dev(intensity_sum(stack, i), integral));
                ++comparisons;
            }
        }
    }
    const double sec = t.s();
    const bool pass = max_rel <= 1e-9 && sec <= 120.0;
    return {pass, fmt("50 phantoms, %d sums vs voxel integrals; max rel dev %.3g "
                      "(limit 1e-9); %.1fs (budget 120s)",
                      comparisons, max_rel, sec)};
}

// ------------------------------------------- 2. projection-direction invariance

Outcome projection_direction_invariance() {
    Timer t;
    const ConversionTables tables = ConversionTables::defaults();
    const PhantomVolumes ph = generate(default_phantom_spec(), tables);
    const Grid3& grid = ph.hu.grid();

    std::map<DrrKind, std::vector<ScalarVolume>> converted;
    std::map<DrrKind, std::vector<double>> baseline;
    for (DrrKind kind : {DrrKind::v, DrrKind::m}) {
        converted[kind] = convert_volume(ph.hu, ph.labels, ph.objects, kind, tables);
        const DrrStack stack = project(converted[kind], axis_geom(grid, 1.0), kind);
        for (int i = 0; i < stack.size(); ++i)
            baseline[kind].push_back(intensity_sum(stack, i));
    }

    Rng rng(20260101);
    double max_rel = 0.0;
    for (int view = 0; view < 20; ++view) {
        const Vec3 rot{rng.uniform(-90, 90), rng.uniform(-90, 90), rng.uniform(-90, 90)};
        const ProjectionGeometry geom = auto_geometry(grid, rot, 2.0, 2.0, 1.0, 2);
        for (DrrKind kind : {DrrKind::v, DrrKind::m}) {
            const DrrStack stack = project(converted[kind], geom, kind);
            for (int i = 0; i < stack.size(); ++i)
                max_rel = std::max(
                    rel_dev(intensity_sum(stack, i), baseline[kind][static_cast<std::size_t>(i)]),
                    max_rel);
        }
    }
    const double sec = t.s();
    const bool pass = max_rel <= 0.005 && sec <= 300.0;
    return {pass, fmt("20 random views up to +/-90 deg, 8 objects, v and m; max rel "
                      "deviation from axis-aligned sums %.3g%% (limit 0.5%%); %.1fs "
                      "(budget 300s)",
                      100.0 * max_rel, sec)};
}

// ------------------------------------------------- 3. rigid-motion invariance

Outcome rigid_motion_invariance() {
    Timer t;
    const ConversionTables tables = ConversionTables::defaults();
    const PhantomSpec spec = default_phantom_spec();
    const PhantomSpec moved_spec =
        pose_perturb(spec, "gluteus_maximus", RigidPose{0, 0, 15, 10, 0, 0});
    const PhantomVolumes base = generate(spec, tables);
    const PhantomVolumes moved = generate(moved_spec, tables);
    const ProjectionGeometry geom = axis_geom(base.hu.grid(), 1.0);
    const int idx = *base.objects.index_of_name("gluteus_maximus");

    double max_sum_rel = 0.0;
    double image_l1_change = 0.0;
    for (DrrKind kind : {DrrKind::v, DrrKind::m}) {
        const auto cb = convert_volume(base.hu, base.labels, base.objects, kind, tables);
        const auto cm = convert_volume(moved.hu, moved.labels, moved.objects, kind, tables);
        const DrrStack sb = project(cb, geom, kind);
        const DrrStack sm = project(cm, geom, kind);
        for (int i = 0; i < sb.size(); ++i)
            max_sum_rel = std::max(
                max_sum_rel, rel_dev(intensity_sum(sm, i), intensity_sum(sb, i)));
        if (kind == DrrKind::m) {
            const Image& a = sb.channels[static_cast<std::size_t>(idx)];
            const Image& b = sm.channels[static_cast<std::size_t>(idx)];
            double diff = 0.0, ref = 0.0;
            for (std::size_t p = 0; p < a.size(); ++p) {
                diff += std::abs(b[p] - a[p]);
                ref += std::abs(a[p]);
            }
            image_l1_change = diff / ref;
        }
    }
    const double sec = t.s();
    const bool pass = max_sum_rel <= 0.005 && image_l1_change >= 0.10;
    return {pass, fmt("15 deg + 10 mm muscle move: max per-object sum change %.3g%% "
                      "(limit 0.5%%), moved-channel image L1 change %.1f%% (needs >= "
                      "10%%); %.1fs",
                      100.0 * max_sum_rel, 100.0 * image_l1_change, sec)};
}

// ------------------------------------------------------------ 4. gradient suite

Outcome gradient_suite() {
    Timer t;
    const GradCheckReport rep = run_gradient_checks(20240817, 20);

    // The gate covers the supervised losses; the composite total is checked
    // on top of that and reported separately.
    int gated = 0, gated_pass = 0, composite = 0, composite_pass = 0;
    double max_rel = 0.0;
    std::map<std::string, int> instances_per_loss;
    for (const auto& e : rep.entries) {
        if (e.loss == "full") {
            ++composite;
            composite_pass += e.pass ? 1 : 0;
            continue;
        }
        ++gated;
        gated_pass += e.pass ? 1 : 0;
        if (e.pass) max_rel = std::max(max_rel, e.max_rel_err);
        instances_per_loss[e.loss] = std::max(instances_per_loss[e.loss], e.instance + 1);
    }
    bool enough = !instances_per_loss.empty();
    for (const auto& [loss, n] : instances_per_loss) enough = enough && n >= 20;

    const double sec = t.s();
    const bool pass = gated == gated_pass && gated > 0 && enough && sec <= 180.0;
    return {pass, fmt("%d/%d analytic-vs-central-difference checks within rel 1e-4 at "
                      "h=1e-4 (worst %.2g), 20 seeded instances per loss; composite "
                      "total %d/%d; %.1fs (budget 180s)",
                      gated_pass, gated, max_rel, composite_pass, composite, sec)};
}

// ------------------------------------------------------ 5. stop-gradient contract

Outcome stop_gradient_contract() {
    int ok = 0;
    const int total = 20;
    for (std::uint64_t seed = 1; seed <= total; ++seed) {
        const LossFixture f = make_loss_fixture(seed);
        const LossResult chain = loss_gc_chain(f.b);
        bool live = chain.has_gradient("v") && chain.has_gradient("m");
        if (live) {
            double mag = 0.0;
            for (const char* slot : {"v", "m"})
                for (const Image& g : chain.gradients.at(slot))
                    for (double p : g.pixels()) mag = std::max(mag, std::abs(p));
            live = mag > 0.0;
        }
        if (live && !chain.has_gradient("wv")) ++ok;
    }
    const bool pass = ok == total;
    return {pass, fmt("%d/%d chain-loss instances carry nonzero v/m gradients and no "
                      "gradient for the reconstruction input",
                      ok, total)};
}

// --------------------------------------------------------- 6. composite weighting

Outcome composite_weighting() {
    const LossWeights w;  // lambda_cyc 10, lambda_gca 0.5, lambda_l1 100, lambda_is 100
    double max_err = 0.0;
    bool doubling_exact = true;
    const int total = 20;
    for (std::uint64_t seed = 101; seed < 101 + total; ++seed) {
        const LossFixture f = make_loss_fixture(seed);
        const FullLossResult r = loss_full(f.b, f.sup, f.gan_total, w);
        const LossBreakdown& k = r.breakdown;
        const double recomposed = k.gan + w.lambda_gca * k.gc_recon + k.gc_chain +
                                  w.lambda_is * (k.owis_wv + k.owis_v + k.owis_m) +
                                  (k.bone_wv + k.bone_v + k.bone_m);
        max_err = std::max(max_err, std::abs(r.result.value - recomposed));

        LossWeights w2 = w;
        w2.lambda_is = 2.0 * w.lambda_is;
        const LossBreakdown& k2 = loss_full(f.b, f.sup, f.gan_total, w2).breakdown;
        const double item1 = w.lambda_is * (k.owis_wv + k.owis_v + k.owis_m);
        const double item2 = w2.lambda_is * (k2.owis_wv + k2.owis_v + k2.owis_m);
        doubling_exact = doubling_exact && item2 == 2.0 * item1 &&
                         k2.owis_wv == k.owis_wv && k2.owis_v == k.owis_v &&
                         k2.owis_m == k.owis_m;
    }
    const bool pass = max_err <= 1e-12 && doubling_exact;
    return {pass, fmt("defaults (10, 0.5, 100, 100): breakdown recomposes the total to "
                      "%.2g (limit 1e-12) on %d instances; doubling the intensity-sum "
                      "weight doubles that item exactly: %s",
                      max_err, total, doubling_exact ? "yes" : "no")};
}

// -------------------------------------------------- 7. registration capture range

Outcome registration_capture_range() {
    Timer t;
    const ConversionTables tables = ConversionTables::defaults();
    const PhantomVolumes ph = generate(registration_bone_spec(), tables);
    const ScalarVolume bone = std::move(
        convert_volume(ph.hu, ph.labels, ph.objects, DrrKind::m, tables)[0]);
    const ProjectionGeometry geom = axis_geom(bone.grid(), 1.5);
    const Image target = project_one(bone, geom);

    Rng rng(20260214);
    int successes = 0;
    double worst_case_s = 0.0, worst_deg = 0.0, worst_mm = 0.0;
    const int total = 25;
    for (int c = 0; c < total; ++c) {
        const RigidPose init{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10),
                             rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};
        RegistrationConfig cfg;
        cfg.seed = 900 + static_cast<std::uint64_t>(c);
        Timer tc;
        const RegistrationResult res = register_pose(bone, target, init, cfg, geom);
        const double cs = tc.s();
        worst_case_s = std::max(worst_case_s, cs);

        const double err_deg = std::max({std::abs(res.pose.rx), std::abs(res.pose.ry),
                                         std::abs(res.pose.rz)});
        const double err_mm = std::max(std::abs(res.pose.tx), std::abs(res.pose.ty));
        if (err_deg <= 0.5 && err_mm <= 0.5 && cs <= 60.0) {
            ++successes;
            worst_deg = std::max(worst_deg, err_deg);
            worst_mm = std::max(worst_mm, err_mm);
        }
    }
    const bool pass = successes >= 24;
    return {pass, fmt("%d/%d poses up to +/-10 deg, +/-10 mm recovered within 0.5 deg / "
                      "0.5 mm (needs >= 24); worst recovered error %.3f deg / %.3f mm; "
                      "slowest case %.1fs (limit 60s); total %.1fs",
                      successes, total, worst_deg, worst_mm, worst_case_s, t.s())};
}

// ------------------------------------------------------- 8. conversion anchors

Outcome conversion_anchors() {
    const ConversionTables tables = ConversionTables::defaults();
    const bool anchors = lean_fraction(-30.0, tables) == 0.0 &&
                         lean_fraction(30.0, tables) == 1.0 &&
                         lean_fraction(0.0, tables) == 0.5;
    const bool clamps =
        mass_density(-4000.0, tables) == mass_density(tables.mass_density_lut.front().first,
                                                      tables) &&
        mass_density(9000.0, tables) == mass_density(tables.mass_density_lut.back().first,
                                                     tables);

    PhantomSpec spec;
    spec.grid = Grid3{{64, 64, 64}, {1, 1, 1}, {0, 0, 0}};
    spec.seed = 2;
    spec.noise_sigma_hu = 0.0;
    PhantomObject obj;
    obj.name = "uniform50";
    obj.cls = ObjectClass::muscle;
    obj.shape = Ellipsoid{{32, 32, 32}, {20, 16, 13}, {0, 0, 0}};
    obj.tissue = UniformTissue{50.0};
    spec.objects.push_back(obj);
    const ObjectTruth truth = generate(spec, tables).truth.per_object[0];
    const double want = truth.volume_cm3_voxel * mass_density(50.0, tables);
    const double mass_rel = rel_dev(truth.lean_mass_g, want);

    const bool pass = anchors && clamps && mass_rel <= 1e-9;
    return {pass, fmt("lean fraction at -30/0/+30 HU = 0, 0.5, 1 exactly: %s; density "
                      "lookup clamps to its endpoints: %s; uniform +50 HU object lean "
                      "mass vs volume x density rel dev %.3g (limit 1e-9)",
                      anchors ? "yes" : "no", clamps ? "yes" : "no", mass_rel)};
}

// ---------------------------------------------------------- 9. metrics oracles

double ssim_reference(const Image& a, const Image& b, double range) {
    std::array<double, 11> g{};
    double gsum = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5.0;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        gsum += g[static_cast<std::size_t>(i)];
    }
    for (double& w : g) w /= gsum;
    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);
    double acc = 0.0;
    int count = 0;
    for (int r = 5; r < a.rows() - 5; ++r)
        for (int c = 5; c < a.cols() - 5; ++c) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dr = -5; dr <= 5; ++dr)
                for (int dc = -5; dc <= 5; ++dc) {
                    const double w = g[static_cast<std::size_t>(dr + 5)] *
                                     g[static_cast<std::size_t>(dc + 5)];
                    const double va = a.at(r + dr, c + dc);
                    const double vb = b.at(r + dr, c + dc);
                    ma += w * va;
                    mb += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            const double var_a = saa - ma * ma;
            const double var_b = sbb - mb * mb;
            const double cov = sab - ma * mb;
            acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            ++count;
        }
    return acc / count;
}

Outcome metrics_oracles() {
    const PairedSamples s{{1, 2, 3, 4}, {2, 4, 5, 4}};
    const double pcc_err = std::abs(pcc(s) - 3.5 / std::sqrt(5.0 * 4.75));
    const double icc_err = std::abs(icc(s) - 28.0 / 55.0);
    const double mae_err = std::abs(mae(s) - 1.25);

    Rng rng(909);
    Image truth = rand_img(rng, 16, 16, 0.0, 1.0);
    Image pred = truth;
    for (auto& p : pred.pixels()) p += 0.5;  // MSE exactly 0.25 at peak 1
    const double psnr_err = std::abs(psnr(pred, truth, 1.0) - 10.0 * std::log10(4.0));

    const Image a = rand_img(rng, 13, 14, 0.0, 1.0);
    Image b = a;
    for (auto& p : b.pixels()) p = std::clamp(p + rng.normal() * 0.05, 0.0, 1.0);
    const double ssim_err = std::abs(ssim(a, b, 1.0) - ssim_reference(a, b, 1.0));

    // A constant offset must hurt absolute agreement but not correlation.
    PairedSamples biased;
    for (int i = 0; i < 50; ++i) {
        const double v = rng.uniform(10, 100);
        biased.truth.push_back(v);
        biased.predicted.push_back(v + rng.normal() * 2.0);
    }
    PairedSamples shifted = biased;
    for (double& p : shifted.predicted) p += 15.0;
    const bool bias_ok = icc(shifted) < icc(biased) &&
                         std::abs(pcc(shifted) - pcc(biased)) <= 1e-12;

    const bool pass = pcc_err <= 1e-12 && icc_err <= 1e-10 && mae_err <= 1e-12 &&
                      psnr_err <= 1e-6 && ssim_err <= 1e-6 && bias_ok;
    return {pass, fmt("from-formula oracle errors: pcc %.2g (1e-12), icc %.2g (1e-10), "
                      "mae %.2g (1e-12), psnr %.2g (1e-6), ssim %.2g (1e-6); constant "
                      "offset lowers icc but not pcc: %s",
                      pcc_err, icc_err, mae_err, psnr_err, ssim_err, bias_ok ? "yes" : "no")};
}

// --------------------------------------------------------- 10. end-to-end study

Outcome end_to_end_study() {
    Timer t;
    const ConversionTables tables = ConversionTables::defaults();
    std::map<DrrKind, std::map<std::string, PairedSamples>> series;
    Rng noise(20260823);

    for (int c = 0; c < 100; ++c) {
        const PhantomVolumes ph = generate(random_study_spec(1000 + static_cast<std::uint64_t>(c)),
                                           tables);
        const ProjectionGeometry geom = axis_geom(ph.hu.grid(), 1.5);
        for (DrrKind kind : {DrrKind::v, DrrKind::m}) {
            const auto converted = convert_volume(ph.hu, ph.labels, ph.objects, kind, tables);
            const DrrStack stack = project(converted, geom, kind);
            for (int i = 0; i < stack.size(); ++i) {
                const double truth = intensity_sum(stack, i);
                PairedSamples& ps = series[kind][ph.objects[i].name];
                ps.truth.push_back(truth);
                ps.predicted.push_back(truth * (1.0 + 0.05 * noise.normal()));
            }
        }
    }

    double min_pcc = 1.0;
    int groups = 0;
    for (DrrKind kind : {DrrKind::v, DrrKind::m}) {
        const MetricReport rep = compute_metrics(series[kind]);
        for (const auto& m : rep.per_object) {
            min_pcc = std::min(min_pcc, m.pcc);
            ++groups;
        }
    }
    const double sec = t.s();
    const bool pass = min_pcc >= 0.97 && groups == 8 && sec <= 600.0;
    return {pass, fmt("100 simulated cases, 4 objects, volume and mass series with "
                      "seeded 5%% multiplicative prediction noise: min per-object pcc "
                      "%.4f (needs >= 0.97, %d series); %.1fs (budget 600s)",
                      min_pcc, groups, sec)};
}

// -------------------------------------------------------- 11. format round-trip

Outcome format_round_trip() {
    namespace fs = std::filesystem;
    std::random_device rd;
    const fs::path dir =
        fs::temp_directory_path() / ("drrkit_acceptance_" + std::to_string(rd()));
    fs::create_directories(dir);

    Rng rng(20240817);
    int vol_ok = 0, img_ok = 0;
    const int n_vol = 100, n_img = 100;

    for (int c = 0; c < n_vol; ++c) {
        Grid3 grid{{static_cast<int>(rng.uniform_int(2, 12)),
                    static_cast<int>(rng.uniform_int(2, 12)),
                    static_cast<int>(rng.uniform_int(2, 12))},
                   {rng.uniform(0.4, 3.0), rng.uniform(0.4, 3.0), rng.uniform(0.4, 3.0)},
                   {rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)}};
        const fs::path p = dir / ("vol_" + std::to_string(c) + ".mskv");
        if (c % 4 == 3) {
            std::vector<std::uint16_t> labels(grid.voxel_count());
            for (auto& v : labels) v = static_cast<std::uint16_t>(rng.uniform_int(0, 9));
            const LabelMap lm(grid, std::move(labels));
            write_volume(lm, p);
            const AnyVolume back = read_volume(p);
            if (const auto* got = std::get_if<LabelMap>(&back); got && *got == lm) ++vol_ok;
        } else {
            const VolumeKind kind = c % 4 == 0 ? VolumeKind::hu
                                  : c % 4 == 1 ? VolumeKind::indicator
                                               : VolumeKind::mass_density;
            std::vector<float> vals(grid.voxel_count());
            for (auto& v : vals)
                v = kind == VolumeKind::hu ? static_cast<float>(rng.uniform(-1000, 2000))
                    : kind == VolumeKind::indicator
                        ? static_cast<float>(rng.uniform_int(0, 1))
                        : static_cast<float>(rng.uniform(0, 3));
            const ScalarVolume sv(grid, kind, std::move(vals));
            write_volume(sv, p);
            const AnyVolume back = read_volume(p);
            if (const auto* got = std::get_if<ScalarVolume>(&back); got && *got == sv) ++vol_ok;
        }
    }

    for (int c = 0; c < n_img; ++c) {
        Image img(static_cast<int>(rng.uniform_int(1, 40)),
                  static_cast<int>(rng.uniform_int(1, 40)));
        for (auto& p : img.pixels()) p = rng.uniform(-1e6, 1e6);
        if (img.size() >= 4) {
            img[0] = 0.0;
            img[1] = -0.0;
            img[2] = 1e-300;
            img[3] = -1e300;
        }
        ImageMeta meta;
        meta.pixel_h_mm = rng.uniform(0.2, 5.0);
        meta.pixel_w_mm = rng.uniform(0.2, 5.0);
        meta.kind = "test";
        meta.units = "au";
        const fs::path p = dir / ("img_" + std::to_string(c) + ".mski");
        write_image(img, meta, p);
        if (read_image(p).first == img) ++img_ok;
    }

    std::error_code ec;
    fs::remove_all(dir, ec);
    const bool pass = vol_ok == n_vol && img_ok == n_img;
    return {pass, fmt("%d/%d volumes and %d/%d images re-read bit-exactly "
                      "(values, grids, labels, signed zeros, subnormals)",
                      vol_ok, n_vol, img_ok, n_img)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::map<std::string, std::function<Outcome()>> criteria{
        {"conservation_exact", conservation_exact},
        {"projection_direction_invariance", projection_direction_invariance},
        {"rigid_motion_invariance", rigid_motion_invariance},
        {"gradient_suite", gradient_suite},
        {"stop_gradient_contract", stop_gradient_contract},
        {"composite_weighting", composite_weighting},
        {"registration_capture_range", registration_capture_range},
        {"conversion_anchors", conversion_anchors},
        {"metrics_oracles", metrics_oracles},
        {"end_to_end_study", end_to_end_study},
        {"format_round_trip", format_round_trip},
    };

    if (argc < 2) {
        std::fprintf(stderr, "usage: %s <criterion>|all\n  criteria:\n", argv[0]);
        for (const auto& [name, fn] : criteria) std::fprintf(stderr, "    %s\n", name.c_str());
        return 2;
    }

    const std::string wanted = argv[1];
    int failures = 0;
    bool matched = false;
    for (const auto& [name, fn] : criteria) {
        if (wanted != "all" && wanted != name) continue;
        matched = true;
        Outcome out;
        try {
            out = fn();
        } catch (const std::exception& e) {
            out = {false, std::string("unexpected exception: ") + e.what()};
        }
        std::printf("[%s] %s: %s\n", out.pass ? "PASS" : "FAIL", name.c_str(),
                    out.detail.c_str());
        std::fflush(stdout);
        if (!out.pass) ++failures;
    }
    if (!matched) {
        std::fprintf(stderr, "unknown criterion '%s'\n", wanted.c_str());
        return 2;
    }
    return failures == 0 ? 0 : 1;
}
