// drrkit: command-line front end for the DRR decomposition toolkit.
//
// Subcommands cover the full file-based pipeline: synthetic phantom
// generation, HU conversion, object-wise DRR rendering, intensity
// summation, 2D-3D pose recovery, aligned-target preparation, the
// composite loss report, evaluation metrics, and the finite-difference
// gradient audit. Exit codes: 0 success, 1 usage error, 2 data/format
// error, 3 numerical degeneracy.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "drrkit/convert.hpp"
#include "drrkit/errors.hpp"
#include "drrkit/gradcheck.hpp"
#include "drrkit/image.hpp"
#include "drrkit/losses.hpp"
#include "drrkit/metrics.hpp"
#include "drrkit/phantom.hpp"
#include "drrkit/project.hpp"
#include "drrkit/registration.hpp"
#include "drrkit/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace drrkit;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text << '\n';
    } else {
        write_text(out_path, text);
    }
}

ConversionTables tables_from(const std::string& path) {
    return path.empty() ? ConversionTables::defaults() : load_conversion_tables(path);
}

RigidPose pose_from_six(const std::vector<double>& v, const std::string& what) {
    if (v.size() != 6)
        throw UsageError(what + ": expected rx,ry,rz,tx,ty,tz (6 numbers), got " +
                         std::to_string(v.size()));
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

Vec3 vec3_from(const std::vector<double>& v, const std::string& what) {
    if (v.size() != 3)
        throw UsageError(what + ": expected 3 numbers, got " + std::to_string(v.size()));
    return {v[0], v[1], v[2]};
}

/// Shared geometry flags for the rendering subcommands.
struct GeomFlags {
    std::vector<double> rot{0.0, 0.0, 0.0};
    std::vector<double> pixel;  // ph,pw; defaults to volume spacing (sy, sx)
    double step = 0.0;          // defaults to half the smallest spacing
    int rows = 0, cols = 0;     // 0 = auto-size from the rotated bounding box
    int pad = 2;

    void attach(CLI::App* cmd) {
        cmd->add_option("--rot", rot, "view rotation rx,ry,rz in degrees (default 0,0,0)")
            ->delimiter(',')
            ->expected(3);
        cmd->add_option("--pixel", pixel,
                        "detector pixel spacing ph,pw in mm (default: voxel spacing)")
            ->delimiter(',')
            ->expected(2);
        cmd->add_option("--step", step, "ray sampling step in mm (default: half min spacing)");
        cmd->add_option("--rows", rows, "detector rows (default: auto)");
        cmd->add_option("--cols", cols, "detector cols (default: auto)");
        cmd->add_option("--pad", pad, "auto-sizing pad in pixels (default 2)");
    }

    ProjectionGeometry resolve(const Grid3& grid) const {
        const double ph = pixel.empty() ? grid.spacing_mm[1] : pixel[0];
        const double pw = pixel.empty() ? grid.spacing_mm[0] : pixel[1];
        const double min_sp = std::min({grid.spacing_mm[0], grid.spacing_mm[1],
                                        grid.spacing_mm[2]});
        const double st = step > 0.0 ? step : 0.5 * min_sp;
        ProjectionGeometry g = auto_geometry(grid, vec3_from(rot, "--rot"), ph, pw, st, pad);
        if (rows > 0) g.det_rows = rows;
        if (cols > 0) g.det_cols = cols;
        g.validate();
        return g;
    }
};

// ---------------------------------------------------------------------- phantom

int run_phantom(const std::string& spec_path, const std::string& tables_path,
                const std::string& out_dir, std::optional<std::uint64_t> seed_override) {
    PhantomSpec spec = spec_path.empty() ? default_phantom_spec() : load_phantom_spec(spec_path);
    if (seed_override) spec.seed = *seed_override;
    const ConversionTables tables = tables_from(tables_path);
    const PhantomVolumes vols = generate(spec, tables);

    const fs::path dir(out_dir);
    fs::create_directories(dir);
    write_volume(vols.hu, dir / "volume.mskv");
    write_volume(vols.labels, dir / "labels.mskv");
    save_object_set(vols.objects, dir / "objects.json");
    write_text(dir / "ground_truth.csv", ground_truth_csv(vols.truth));
    save_phantom_spec(spec, dir / "spec.json");

    json j;
    j["objects"] = vols.objects.size();
    j["overlap_fraction"] = vols.truth.overlap_fraction;
    j["files"] = {{"volume", (dir / "volume.mskv").string()},
                  {"labels", (dir / "labels.mskv").string()},
                  {"objects", (dir / "objects.json").string()},
                  {"ground_truth", (dir / "ground_truth.csv").string()},
                  {"spec", (dir / "spec.json").string()}};
    std::cout << j.dump(2) << '\n';
    return 0;
}

// ---------------------------------------------------------------------- convert

int run_convert(const std::string& volume_path, const std::string& labels_path,
                const std::string& objects_path, const std::string& kind_str,
                const std::string& tables_path, const std::string& out_dir) {
    const ScalarVolume hu = read_scalar_volume(volume_path);
    const LabelMap labels = read_label_map(labels_path);
    const ObjectSet objects = load_object_set(objects_path);
    const DrrKind kind = drr_kind_from_string(kind_str);
    const ConversionTables tables = tables_from(tables_path);

    const std::vector<ScalarVolume> converted = convert_volume(hu, labels, objects, kind, tables);
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    json files = json::array();
    for (int i = 0; i < objects.size(); ++i) {
        const fs::path p = dir / (objects[i].name + "_" + kind_str + ".mskv");
        write_volume(converted[static_cast<std::size_t>(i)], p);
        files.push_back({{"object", objects[i].name}, {"file", p.string()}});
    }
    json j;
    j["kind"] = kind_str;
    j["files"] = files;
    std::cout << j.dump(2) << '\n';
    return 0;
}

// ---------------------------------------------------------------------- project

int run_project(const std::string& volume_dir, const std::string& objects_path,
                const std::string& kind_str, const GeomFlags& gf, const std::string& out_dir,
                const std::string& composite_path) {
    const ObjectSet objects = load_object_set(objects_path);
    const DrrKind kind = drr_kind_from_string(kind_str);
    std::vector<ScalarVolume> vols;
    for (int i = 0; i < objects.size(); ++i) {
        const fs::path p = fs::path(volume_dir) / (objects[i].name + "_" + kind_str + ".mskv");
        vols.push_back(read_scalar_volume(p));
    }
    if (vols.empty()) throw DataError("project: object set is empty");
    const ProjectionGeometry geom = gf.resolve(vols.front().grid());
    const DrrStack stack = project(vols, geom, kind);
    const fs::path manifest = save_stack(stack, objects, fs::path(out_dir));

    json j;
    j["manifest"] = manifest.string();
    j["detector"] = {{"rows", geom.det_rows}, {"cols", geom.det_cols}};
    j["pixel_spacing_mm"] = {geom.pixel_h_mm, geom.pixel_w_mm};
    j["step_mm"] = geom.step_mm;
    if (!composite_path.empty()) {
        ImageMeta meta;
        meta.pixel_h_mm = stack.pixel_h_mm;
        meta.pixel_w_mm = stack.pixel_w_mm;
        meta.kind = "composite_" + kind_str;
        meta.units = stack_units(kind);
        write_image(virtual_xray(stack), meta, composite_path);
        j["composite"] = composite_path;
    }
    std::cout << j.dump(2) << '\n';
    return 0;
}

// ---------------------------------------------------------------------- sum

int run_sum(const std::vector<std::string>& manifests, const std::string& out_path) {
    std::ostringstream csv;
    csv.precision(17);
    csv << "object,kind,sum,units\n";
    for (const auto& mpath : manifests) {
        const auto [stack, names] = load_stack(mpath);
        const std::string units = stack.kind == DrrKind::v
                                      ? "cm3"
                                      : (stack.kind == DrrKind::m ? "g" : "au*cm3");
        for (int i = 0; i < stack.size(); ++i)
            csv << names[static_cast<std::size_t>(i)] << ',' << to_string(stack.kind) << ','
                << intensity_sum(stack, i) << ',' << units << '\n';
    }
    emit(csv.str(), out_path);
    return 0;
}

// ---------------------------------------------------------------------- register

int run_register(const std::string& bone_path, const std::string& target_path,
                 const std::vector<double>& init_vec, const GeomFlags& gf,
                 const RegistrationConfig& cfg, const std::string& out_path) {
    const ScalarVolume bone = read_scalar_volume(bone_path);
    const auto [target, meta] = read_image(target_path);

    // The detector must match the target image; pixel spacing comes from
    // its header unless overridden.
    GeomFlags gf2 = gf;
    if (gf2.pixel.empty()) gf2.pixel = {meta.pixel_h_mm, meta.pixel_w_mm};
    if (gf2.rows == 0) gf2.rows = target.rows();
    if (gf2.cols == 0) gf2.cols = target.cols();
    const ProjectionGeometry geom = gf2.resolve(bone.grid());

    const RigidPose init =
        init_vec.empty() ? RigidPose{} : pose_from_six(init_vec, "--init");
    const RegistrationResult res = register_pose(bone, target, init, cfg, geom);
    emit(registration_report_json(res), out_path);
    return 0;
}

// ---------------------------------------------------------------------- aligned-targets

std::map<std::string, RigidPose> load_poses(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open poses '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("poses '" + path + "': " + e.what());
    }
    std::map<std::string, RigidPose> poses;
    try {
        for (const auto& [name, jp] : j.items())
            poses[name] = {jp.at("rx").get<double>(), jp.at("ry").get<double>(),
                           jp.at("rz").get<double>(), jp.at("tx").get<double>(),
                           jp.at("ty").get<double>(), jp.at("tz").get<double>()};
    } catch (const json::exception& e) {
        throw DataError("poses '" + path + "': " + e.what());
    }
    return poses;
}

int run_aligned_targets(const std::string& volume_path, const std::string& labels_path,
                        const std::string& objects_path, const std::string& tables_path,
                        const std::string& poses_path, bool identity_poses,
                        const GeomFlags& gf, const std::string& out_dir) {
    const ScalarVolume hu = read_scalar_volume(volume_path);
    const LabelMap labels = read_label_map(labels_path);
    const ObjectSet objects = load_object_set(objects_path);
    const ConversionTables tables = tables_from(tables_path);

    std::map<std::string, RigidPose> poses;
    if (identity_poses) {
        for (int i = 0; i < objects.size(); ++i)
            if (objects[i].cls == ObjectClass::bone) poses[objects[i].name] = RigidPose{};
    } else if (!poses_path.empty()) {
        poses = load_poses(poses_path);
    } else {
        throw UsageError("aligned-targets: provide --poses FILE or --identity");
    }

    const ProjectionGeometry geom = gf.resolve(hu.grid());
    const SupervisionBundle sup = make_aligned_targets(hu, labels, objects, poses, geom, tables);

    const fs::path dir(out_dir);
    fs::create_directories(dir);
    json j;
    j["sums"] = {{"wv", sup.sums_wv}, {"v", sup.sums_v}, {"m", sup.sums_m}};
    json names = json::array();
    for (int i = 0; i < objects.size(); ++i) names.push_back(objects[i].name);
    j["objects"] = names;
    j["pixel_spacing_mm"] = {geom.pixel_h_mm, geom.pixel_w_mm};
    j["bones"] = json::array();
    for (std::size_t k = 0; k < sup.bone_indices.size(); ++k) {
        const int idx = sup.bone_indices[k];
        const std::string& name = objects[idx].name;
        json jb;
        jb["object"] = name;
        jb["index"] = idx;
        for (DrrKind kind : {DrrKind::wv, DrrKind::v, DrrKind::m}) {
            const std::string file = name + "_" + to_string(kind) + "_aligned.mski";
            ImageMeta meta;
            meta.pixel_h_mm = geom.pixel_h_mm;
            meta.pixel_w_mm = geom.pixel_w_mm;
            meta.kind = to_string(kind);
            meta.object_name = name;
            meta.units = stack_units(kind);
            write_image(sup.bones(kind)[k], meta, dir / file);
            jb[to_string(kind)] = file;
        }
        j["bones"].push_back(std::move(jb));
    }
    const fs::path sup_path = dir / "supervision.json";
    write_text(sup_path, j.dump(2));
    std::cout << json{{"supervision", sup_path.string()},
                      {"bones", sup.bone_indices.size()}}
                     .dump(2)
              << '\n';
    return 0;
}

// ---------------------------------------------------------------------- loss

SupervisionBundle load_supervision(const fs::path& path,
                                   const std::vector<std::string>& expect_names) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open supervision '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("supervision '" + path.string() + "': " + e.what());
    }
    SupervisionBundle sup;
    try {
        sup.sums_wv = j.at("sums").at("wv").get<std::vector<double>>();
        sup.sums_v = j.at("sums").at("v").get<std::vector<double>>();
        sup.sums_m = j.at("sums").at("m").get<std::vector<double>>();
        if (j.contains("objects") && !expect_names.empty()) {
            const auto names = j.at("objects").get<std::vector<std::string>>();
            if (names != expect_names)
                throw DataError("supervision '" + path.string() +
                                "': object order does not match the prediction stacks");
        }
        for (const auto& jb : j.at("bones")) {
            sup.bone_indices.push_back(jb.at("index").get<int>());
            for (DrrKind kind : {DrrKind::wv, DrrKind::v, DrrKind::m}) {
                const fs::path img =
                    path.parent_path() / jb.at(to_string(kind)).get<std::string>();
                sup.bones(kind).push_back(read_image(img).first);
            }
        }
    } catch (const json::exception& e) {
        throw DataError("supervision '" + path.string() + "': " + e.what());
    }
    return sup;
}

int run_loss(const std::string& wv_manifest, const std::string& v_manifest,
             const std::string& m_manifest, const std::string& xray_path,
             const std::string& sup_path, double gan_total, const LossWeights& weights,
             const std::string& out_path) {
    PredictionBundle bundle;
    auto [wv, wv_names] = load_stack(wv_manifest);
    auto [v, v_names] = load_stack(v_manifest);
    auto [m, m_names] = load_stack(m_manifest);
    if (wv_names != v_names || wv_names != m_names)
        throw DataError("loss: the three stacks list different objects");
    bundle.wv = std::move(wv);
    bundle.v = std::move(v);
    bundle.m = std::move(m);
    bundle.xray = read_image(xray_path).first;

    const SupervisionBundle sup = load_supervision(sup_path, wv_names);
    const FullLossResult res = loss_full(bundle, sup, gan_total, weights);
    emit(loss_report_json(res.breakdown), out_path);
    return 0;
}

// ---------------------------------------------------------------------- metrics

int run_metrics(const std::string& csv_path, const std::vector<std::string>& pred_images,
                const std::vector<std::string>& truth_images, double peak, double range,
                const std::string& out_json, const std::string& out_csv) {
    if (csv_path.empty() && pred_images.empty())
        throw UsageError("metrics: provide --csv and/or image pairs");
    if (pred_images.size() != truth_images.size())
        throw UsageError("metrics: --pred-image and --truth-image counts differ");

    MetricReport report;
    if (!csv_path.empty()) report = compute_metrics(paired_from_csv(csv_path));

    if (!pred_images.empty()) {
        KahanSum psnr_acc, ssim_acc;
        for (std::size_t i = 0; i < pred_images.size(); ++i) {
            const Image pred = read_image(pred_images[i]).first;
            const Image truth = read_image(truth_images[i]).first;
            double pk = peak, rg = range;
            if (pk <= 0.0 || rg <= 0.0) {
                double mx = 0.0;
                for (std::size_t p = 0; p < truth.size(); ++p) mx = std::max(mx, truth[p]);
                if (mx <= 0.0)
                    throw UsageError("metrics: reference image max is not positive; "
                                     "pass --peak/--range explicitly");
                if (pk <= 0.0) pk = mx;
                if (rg <= 0.0) rg = mx;
            }
            psnr_acc.add(psnr(pred, truth, pk));
            ssim_acc.add(ssim(pred, truth, rg));
        }
        const double n = static_cast<double>(pred_images.size());
        report.psnr_mean = psnr_acc.value() / n;
        report.ssim_mean = ssim_acc.value() / n;
        report.image_pairs = static_cast<int>(pred_images.size());
    }

    emit(metric_report_json(report), out_json);
    if (!out_csv.empty()) write_text(out_csv, metric_report_csv(report));
    return 0;
}

// ---------------------------------------------------------------------- gradcheck

int run_gradcheck(std::uint64_t seed, int instances, const std::string& out_path) {
    const GradCheckReport report = run_gradient_checks(seed, instances);
    emit(gradcheck_report_json(report), out_path);
    if (!report.all_pass()) {
        std::cerr << "gradcheck: analytic gradients disagree with finite differences\n";
        return 3;
    }
    return 0;
}

// ---------------------------------------------------------------------- main

int dispatch(int argc, char** argv) {
    CLI::App app{"DRR decomposition toolkit: object-wise DRR rendering, HU conversion, "
                 "pose recovery, supervision losses, and evaluation metrics"};
    app.require_subcommand(1);
    bool json_errors = false;
    int threads = 0;
    app.add_flag("--json-errors", json_errors, "print errors as JSON on stderr");
    app.add_option("--threads", threads, "cap the worker thread pool (default: all cores)");

    // phantom
    auto* cmd_phantom = app.add_subcommand("phantom", "generate a synthetic labeled CT");
    std::string ph_spec, ph_tables, ph_out;
    std::optional<std::uint64_t> ph_seed;
    cmd_phantom->add_option("--spec", ph_spec, "phantom spec JSON (default: built-in scene)");
    cmd_phantom->add_option("--tables", ph_tables, "conversion tables JSON");
    cmd_phantom->add_option("--out", ph_out, "output directory")->required();
    cmd_phantom->add_option("--seed", ph_seed, "override the spec's noise seed");

    // convert
    auto* cmd_convert = app.add_subcommand("convert", "object-wise HU conversion");
    std::string cv_vol, cv_lab, cv_obj, cv_kind, cv_tables, cv_out;
    cmd_convert->add_option("--volume", cv_vol, "HU volume (.mskv)")->required();
    cmd_convert->add_option("--labels", cv_lab, "label map (.mskv)")->required();
    cmd_convert->add_option("--objects", cv_obj, "object set JSON")->required();
    cmd_convert->add_option("--kind", cv_kind, "wv | v | m")->required();
    cmd_convert->add_option("--tables", cv_tables, "conversion tables JSON");
    cmd_convert->add_option("--out", cv_out, "output directory")->required();

    // project
    auto* cmd_project = app.add_subcommand("project", "render an object-wise DRR stack");
    std::string pj_dir, pj_obj, pj_kind, pj_out;
    GeomFlags pj_geom;
    cmd_project->add_option("--volume-dir", pj_dir, "directory with <object>_<kind>.mskv")
        ->required();
    cmd_project->add_option("--objects", pj_obj, "object set JSON")->required();
    cmd_project->add_option("--kind", pj_kind, "wv | v | m")->required();
    cmd_project->add_option("--out", pj_out, "output directory")->required();
    std::string pj_composite;
    cmd_project->add_option("--composite", pj_composite,
                            "also write the channel-sum image to this .mski path");
    pj_geom.attach(cmd_project);

    // sum
    auto* cmd_sum = app.add_subcommand("sum", "per-object intensity sums of DRR stacks");
    std::vector<std::string> sm_manifests;
    std::string sm_out;
    cmd_sum->add_option("--stack", sm_manifests, "stack manifest JSON (repeatable)")
        ->required();
    cmd_sum->add_option("--out", sm_out, "output CSV (default: stdout)");

    // register
    auto* cmd_register = app.add_subcommand("register", "2D-3D rigid pose recovery");
    std::string rg_bone, rg_target, rg_out;
    std::vector<double> rg_init;
    GeomFlags rg_geom;
    RegistrationConfig rg_cfg;
    cmd_register->add_option("--bone", rg_bone, "bone volume (.mskv)")->required();
    cmd_register->add_option("--target", rg_target, "target image (.mski)")->required();
    cmd_register->add_option("--init", rg_init, "initial pose rx,ry,rz,tx,ty,tz")
        ->delimiter(',')
        ->expected(6);
    cmd_register->add_option("--levels", rg_cfg.pyramid_levels, "pyramid levels (default 3)");
    cmd_register->add_option("--restarts", rg_cfg.restarts, "optimizer restarts (default 4)");
    cmd_register->add_option("--max-evals", rg_cfg.max_evals_per_level,
                             "objective evaluations per level (default 500)");
    cmd_register->add_option("--bound-deg", rg_cfg.bound_deg, "rotation bound (default 20)");
    cmd_register->add_option("--bound-mm", rg_cfg.bound_mm, "translation bound (default 30)");
    cmd_register->add_option("--seed", rg_cfg.seed, "restart perturbation seed");
    cmd_register->add_option("--out", rg_out, "report JSON path (default: stdout)");
    rg_geom.attach(cmd_register);

    // aligned-targets
    auto* cmd_at = app.add_subcommand("aligned-targets",
                                      "render per-bone aligned supervision targets");
    std::string at_vol, at_lab, at_obj, at_tables, at_poses, at_out;
    bool at_identity = false;
    GeomFlags at_geom;
    cmd_at->add_option("--volume", at_vol, "HU volume (.mskv)")->required();
    cmd_at->add_option("--labels", at_lab, "label map (.mskv)")->required();
    cmd_at->add_option("--objects", at_obj, "object set JSON")->required();
    cmd_at->add_option("--tables", at_tables, "conversion tables JSON");
    cmd_at->add_option("--poses", at_poses, "per-bone pose JSON {name:{rx..tz}}");
    cmd_at->add_flag("--identity", at_identity, "use identity poses for all bones");
    cmd_at->add_option("--out", at_out, "output directory")->required();
    at_geom.attach(cmd_at);

    // loss
    auto* cmd_loss = app.add_subcommand("loss", "itemized composite loss report");
    std::string ls_wv, ls_v, ls_m, ls_xray, ls_sup, ls_out;
    double ls_gan = 0.0;
    LossWeights ls_weights;
    cmd_loss->add_option("--pred-wv", ls_wv, "predicted wv stack manifest")->required();
    cmd_loss->add_option("--pred-v", ls_v, "predicted v stack manifest")->required();
    cmd_loss->add_option("--pred-m", ls_m, "predicted m stack manifest")->required();
    cmd_loss->add_option("--xray", ls_xray, "input radiograph (.mski)")->required();
    cmd_loss->add_option("--supervision", ls_sup, "supervision JSON from aligned-targets")
        ->required();
    cmd_loss->add_option("--gan-total", ls_gan, "precomputed adversarial total (default 0)");
    cmd_loss->add_option("--lambda-cyc", ls_weights.lambda_cyc, "cycle weight (default 10)");
    cmd_loss->add_option("--lambda-gca", ls_weights.lambda_gca,
                         "reconstruction GC weight (default 0.5)");
    cmd_loss->add_option("--lambda-l1", ls_weights.lambda_l1, "bone L1 weight (default 100)");
    cmd_loss->add_option("--lambda-is", ls_weights.lambda_is,
                         "intensity-sum weight (default 100)");
    cmd_loss->add_option("--out", ls_out, "report JSON path (default: stdout)");

    // metrics
    auto* cmd_metrics = app.add_subcommand("metrics", "agreement and image-quality metrics");
    std::string mt_csv, mt_out_json, mt_out_csv;
    std::vector<std::string> mt_pred, mt_truth;
    double mt_peak = 0.0, mt_range = 0.0;
    cmd_metrics->add_option("--csv", mt_csv, "CSV with case_id,object,predicted,truth");
    cmd_metrics->add_option("--pred-image", mt_pred, "predicted image (.mski, repeatable)");
    cmd_metrics->add_option("--truth-image", mt_truth, "reference image (.mski, repeatable)");
    cmd_metrics->add_option("--peak", mt_peak, "PSNR peak (default: reference max)");
    cmd_metrics->add_option("--range", mt_range, "SSIM range (default: reference max)");
    cmd_metrics->add_option("--out", mt_out_json, "report JSON path (default: stdout)");
    cmd_metrics->add_option("--out-csv", mt_out_csv, "per-object CSV path");

    // gradcheck
    auto* cmd_gc = app.add_subcommand("gradcheck",
                                      "audit analytic loss gradients vs finite differences");
    std::uint64_t gc_seed = 20240817;
    int gc_instances = 20;
    std::string gc_out;
    cmd_gc->add_option("--seed", gc_seed, "random seed (default 20240817)");
    cmd_gc->add_option("--instances", gc_instances, "instances per loss (default 20)");
    cmd_gc->add_option("--out", gc_out, "report JSON path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    }

#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    try {
        if (*cmd_phantom) return run_phantom(ph_spec, ph_tables, ph_out, ph_seed);
        if (*cmd_convert)
            return run_convert(cv_vol, cv_lab, cv_obj, cv_kind, cv_tables, cv_out);
        if (*cmd_project)
            return run_project(pj_dir, pj_obj, pj_kind, pj_geom, pj_out, pj_composite);
        if (*cmd_sum) return run_sum(sm_manifests, sm_out);
        if (*cmd_register)
            return run_register(rg_bone, rg_target, rg_init, rg_geom, rg_cfg, rg_out);
        if (*cmd_at)
            return run_aligned_targets(at_vol, at_lab, at_obj, at_tables, at_poses, at_identity,
                                       at_geom, at_out);
        if (*cmd_loss)
            return run_loss(ls_wv, ls_v, ls_m, ls_xray, ls_sup, ls_gan, ls_weights, ls_out);
        if (*cmd_metrics)
            return run_metrics(mt_csv, mt_pred, mt_truth, mt_peak, mt_range, mt_out_json,
                               mt_out_csv);
        if (*cmd_gc) return run_gradcheck(gc_seed, gc_instances, gc_out);
        throw UsageError("no subcommand given");
    } catch (const Error& e) {
        if (json_errors) {
            const char* kind = e.kind() == ErrorKind::usage
                                   ? "usage"
                                   : (e.kind() == ErrorKind::data ? "data" : "degenerate");
            std::cerr << json{{"error", {{"kind", kind}, {"message", e.what()}}}}.dump() << '\n';
        } else {
            std::cerr << "error: " << e.what() << '\n';
        }
        return e.exit_code();
    } catch (const std::exception& e) {
        if (json_errors) {
            std::cerr << json{{"error", {{"kind", "data"}, {"message", e.what()}}}}.dump()
                      << '\n';
        } else {
            std::cerr << "error: " << e.what() << '\n';
        }
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) { return dispatch(argc, argv); }
