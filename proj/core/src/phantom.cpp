#include "drrkit/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "drrkit/errors.hpp"
#include "drrkit/rng.hpp"

namespace drrkit {

using nlohmann::json;

double Ellipsoid::volume_cm3() const {
    return (4.0 / 3.0) * kPi * semi_axes_mm.x * semi_axes_mm.y * semi_axes_mm.z / 1000.0;
}

namespace {

/// Half-extent of the rotated ellipsoid along each world axis:
/// e_i = sqrt(sum_j (R[i][j] * s_j)^2).
Vec3 world_extent(const Ellipsoid& e) {
    const Mat3 r = rotation_zyx_deg(e.euler_deg);
    Vec3 out;
    const double s[3] = {e.semi_axes_mm.x, e.semi_axes_mm.y, e.semi_axes_mm.z};
    double* comps[3] = {&out.x, &out.y, &out.z};
    for (int i = 0; i < 3; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 3; ++j) {
            const double v = r.m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * s[j];
            acc += v * v;
        }
        *comps[i] = std::sqrt(acc);
    }
    return out;
}

double tissue_hu(const Tissue& tissue, const Vec3& local, const Vec3& semi_axes) {
    if (const auto* u = std::get_if<UniformTissue>(&tissue)) return u->hu;
    const auto& g = std::get<FattyGradient>(tissue);
    const double q = (g.axis == 0 ? local.x : (g.axis == 1 ? local.y : local.z));
    const double s = (g.axis == 0 ? semi_axes.x : (g.axis == 1 ? semi_axes.y : semi_axes.z));
    const double frac = std::clamp(0.5 * (q / s + 1.0), 0.0, 1.0);
    return g.hu_start + (g.hu_end - g.hu_start) * frac;
}

void validate_tissue(const Tissue& tissue, const std::string& name) {
    if (const auto* u = std::get_if<UniformTissue>(&tissue)) {
        if (!std::isfinite(u->hu))
            throw DataError("phantom object '" + name + "': non-finite HU");
        return;
    }
    const auto& g = std::get<FattyGradient>(tissue);
    if (!std::isfinite(g.hu_start) || !std::isfinite(g.hu_end))
        throw DataError("phantom object '" + name + "': non-finite gradient HU");
    if (g.axis < 0 || g.axis > 2)
        throw DataError("phantom object '" + name + "': gradient axis must be 0, 1 or 2");
}

}  // namespace

void PhantomSpec::validate() const {
    grid.validate();
    if (!std::isfinite(noise_sigma_hu) || noise_sigma_hu < 0.0)
        throw DataError("phantom: noise_sigma_hu must be >= 0");
    std::vector<std::string> names;
    for (const auto& obj : objects) {
        if (obj.name.empty()) throw DataError("phantom: object with empty name");
        if (std::find(names.begin(), names.end(), obj.name) != names.end())
            throw DataError("phantom: duplicate object name '" + obj.name + "'");
        names.push_back(obj.name);
        const Vec3& s = obj.shape.semi_axes_mm;
        for (double a : {s.x, s.y, s.z})
            if (!(a > 0.0) || !std::isfinite(a))
                throw DataError("phantom object '" + obj.name + "': semi-axes must be positive");
        for (double v : {obj.shape.center_mm.x, obj.shape.center_mm.y, obj.shape.center_mm.z,
                         obj.shape.euler_deg.x, obj.shape.euler_deg.y, obj.shape.euler_deg.z})
            if (!std::isfinite(v))
                throw DataError("phantom object '" + obj.name + "': non-finite placement");
        validate_tissue(obj.tissue, obj.name);

        const Vec3 ext = world_extent(obj.shape);
        const Vec3 c = obj.shape.center_mm;
        for (int ax = 0; ax < 3; ++ax) {
            const double lo = grid.origin_mm[static_cast<std::size_t>(ax)];
            const double hi = lo + grid.dims[static_cast<std::size_t>(ax)] *
                                       grid.spacing_mm[static_cast<std::size_t>(ax)];
            const double cc = (ax == 0 ? c.x : (ax == 1 ? c.y : c.z));
            const double ee = (ax == 0 ? ext.x : (ax == 1 ? ext.y : ext.z));
            if (cc - ee < lo || cc + ee > hi)
                throw DataError("phantom object '" + obj.name + "' leaves the grid");
        }
    }
    if (objects.size() > 65535) throw DataError("phantom: too many objects for u16 labels");
}

PhantomVolumes generate(const PhantomSpec& spec, const ConversionTables& tables) {
    spec.validate();
    tables.validate();
    const Grid3& g = spec.grid;
    const std::size_t count = g.voxel_count();
    std::vector<float> hu(count, -1000.0f);
    std::vector<std::uint16_t> labels(count, 0);
    std::vector<std::uint8_t> claims(count, 0);

    for (std::size_t oi = 0; oi < spec.objects.size(); ++oi) {
        const PhantomObject& obj = spec.objects[oi];
        const Mat3 rt = rotation_zyx_deg(obj.shape.euler_deg).transposed();
        const Vec3 c = obj.shape.center_mm;
        const Vec3 s = obj.shape.semi_axes_mm;
        const Vec3 ext = world_extent(obj.shape);

        // Voxel index window covering the rotated ellipsoid.
        int lo[3], hi[3];
        const double cs[3] = {c.x, c.y, c.z}, es[3] = {ext.x, ext.y, ext.z};
        for (int ax = 0; ax < 3; ++ax) {
            const double sp = g.spacing_mm[static_cast<std::size_t>(ax)];
            const double org = g.origin_mm[static_cast<std::size_t>(ax)];
            lo[ax] = std::max(0, static_cast<int>(std::floor((cs[ax] - es[ax] - org) / sp - 0.5)));
            hi[ax] = std::min(g.dims[static_cast<std::size_t>(ax)] - 1,
                              static_cast<int>(std::ceil((cs[ax] + es[ax] - org) / sp - 0.5)));
        }
        const std::uint16_t label = static_cast<std::uint16_t>(oi + 1);
        for (int k = lo[2]; k <= hi[2]; ++k)
            for (int j = lo[1]; j <= hi[1]; ++j)
                for (int i = lo[0]; i <= hi[0]; ++i) {
                    const Vec3 p{g.origin_mm[0] + (i + 0.5) * g.spacing_mm[0],
                                 g.origin_mm[1] + (j + 0.5) * g.spacing_mm[1],
                                 g.origin_mm[2] + (k + 0.5) * g.spacing_mm[2]};
                    const Vec3 q = rt * (p - c);
                    const double qa = q.x / s.x, qb = q.y / s.y, qc = q.z / s.z;
                    if (qa * qa + qb * qb + qc * qc > 1.0) continue;
                    const std::size_t idx = g.index(i, j, k);
                    hu[idx] = static_cast<float>(tissue_hu(obj.tissue, q, s));
                    labels[idx] = label;
                    if (claims[idx] < 255) ++claims[idx];
                }
    }

    if (spec.noise_sigma_hu > 0.0) {
        Rng rng(spec.seed);
        for (std::size_t i = 0; i < count; ++i)
            if (labels[i] != 0)
                hu[i] = static_cast<float>(hu[i] + rng.normal() * spec.noise_sigma_hu);
    }

    std::size_t claimed = 0, multi = 0;
    for (std::size_t i = 0; i < count; ++i) {
        if (claims[i] > 0) ++claimed;
        if (claims[i] > 1) ++multi;
    }

    PhantomVolumes out{ScalarVolume(g, VolumeKind::hu, std::move(hu)),
                       LabelMap(g, std::move(labels)),
                       ObjectSet{},
                       GroundTruth{}};
    std::vector<ObjectEntry> entries;
    for (std::size_t oi = 0; oi < spec.objects.size(); ++oi)
        entries.push_back({static_cast<std::uint16_t>(oi + 1), spec.objects[oi].name,
                           spec.objects[oi].cls});
    out.objects = ObjectSet(std::move(entries));

    // Ground truth from the stored voxel values, all-double accumulation.
    const double vox_cm3 = g.voxel_volume_cm3();
    std::vector<std::size_t> vox_count(spec.objects.size(), 0);
    std::vector<KahanSum> mass(spec.objects.size());
    const auto hu_vals = out.hu.values();
    const auto lab_vals = out.labels.labels();
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint16_t lab = lab_vals[i];
        if (lab == 0) continue;
        const std::size_t oi = static_cast<std::size_t>(lab - 1);
        ++vox_count[oi];
        const double h = hu_vals[i];
        const double density = spec.objects[oi].cls == ObjectClass::bone
                                   ? mass_density(h, tables)
                                   : lean_mass_density(h, tables);
        mass[oi].add(density * vox_cm3);
    }
    for (std::size_t oi = 0; oi < spec.objects.size(); ++oi) {
        ObjectTruth t;
        t.name = spec.objects[oi].name;
        t.volume_cm3_analytic = spec.objects[oi].shape.volume_cm3();
        t.volume_cm3_voxel = static_cast<double>(vox_count[oi]) * vox_cm3;
        t.lean_mass_g = mass[oi].value();
        out.truth.per_object.push_back(std::move(t));
    }
    out.truth.overlap_fraction =
        claimed == 0 ? 0.0 : static_cast<double>(multi) / static_cast<double>(claimed);
    return out;
}

PhantomSpec pose_perturb(const PhantomSpec& spec, const std::string& object_name,
                         const RigidPose& pose) {
    PhantomSpec out = spec;
    auto it = std::find_if(out.objects.begin(), out.objects.end(),
                           [&](const PhantomObject& o) { return o.name == object_name; });
    if (it == out.objects.end())
        throw UsageError("pose_perturb: no object named '" + object_name + "'");
    const Mat3 r_new = rotation_zyx_deg(pose.rotation_deg()) * rotation_zyx_deg(it->shape.euler_deg);
    it->shape.euler_deg = euler_zyx_deg(r_new);
    it->shape.center_mm = it->shape.center_mm + pose.translation_mm();
    out.validate();  // the move must keep the ellipsoid inside the grid
    return out;
}

PhantomSpec default_phantom_spec() {
    PhantomSpec spec;
    spec.grid = Grid3{{160, 160, 160}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}};
    spec.seed = 20240817;
    spec.noise_sigma_hu = 4.0;
    spec.objects = {
        {"pelvis", ObjectClass::bone,
         {{80, 55, 95}, {48, 34, 28}, {0, 0, 25}},
         FattyGradient{350.0, 900.0, 0}},
        {"sacrum", ObjectClass::bone,
         {{80, 120, 95}, {22, 16, 26}, {8, 0, 0}},
         UniformTissue{400.0}},
        {"gluteus_maximus", ObjectClass::muscle,
         {{36, 116, 50}, {26, 24, 34}, {15, 0, 0}},
         FattyGradient{-60.0, 70.0, 2}},
        {"gluteus_medius", ObjectClass::muscle,
         {{124, 116, 50}, {22, 20, 28}, {0, 20, 0}},
         FattyGradient{-40.0, 60.0, 1}},
        {"gluteus_minimus", ObjectClass::muscle,
         {{124, 40, 38}, {16, 14, 20}, {0, 0, -30}},
         UniformTissue{45.0}},
        {"iliacus", ObjectClass::muscle,
         {{36, 40, 38}, {18, 15, 22}, {0, 10, 0}},
         FattyGradient{-50.0, 50.0, 0}},
        {"obturator_externus", ObjectClass::muscle,
         {{132, 28, 132}, {15, 13, 18}, {5, 5, 5}},
         UniformTissue{38.0}},
        {"pectineus", ObjectClass::muscle,
         {{26, 26, 126}, {13, 12, 17}, {0, -15, 0}},
         FattyGradient{-30.0, 40.0, 2}},
    };
    return spec;
}

PhantomSpec registration_bone_spec() {
    PhantomSpec spec;
    spec.grid = Grid3{{96, 96, 96}, {1.5, 1.5, 1.5}, {0.0, 0.0, 0.0}};
    spec.seed = 7;
    spec.noise_sigma_hu = 0.0;
    spec.objects = {
        {"reg_bone", ObjectClass::bone,
         {{72, 72, 72}, {45, 27, 18}, {0, 0, 0}},
         FattyGradient{200.0, 900.0, 0}},
    };
    return spec;
}

std::string ground_truth_csv(const GroundTruth& truth) {
    std::ostringstream out;
    out.precision(17);
    out << "object,volume_cm3_analytic,volume_cm3_voxel,lean_mass_g\n";
    for (const auto& t : truth.per_object)
        out << t.name << ',' << t.volume_cm3_analytic << ',' << t.volume_cm3_voxel << ','
            << t.lean_mass_g << '\n';
    return out.str();
}

namespace {

json tissue_to_json(const Tissue& t) {
    if (const auto* u = std::get_if<UniformTissue>(&t)) return json{{"uniform_hu", u->hu}};
    const auto& g = std::get<FattyGradient>(t);
    return json{{"fatty_gradient",
                 {{"hu_start", g.hu_start}, {"hu_end", g.hu_end}, {"axis", g.axis}}}};
}

Tissue tissue_from_json(const json& j) {
    if (j.contains("uniform_hu")) return UniformTissue{j.at("uniform_hu").get<double>()};
    if (j.contains("fatty_gradient")) {
        const json& g = j.at("fatty_gradient");
        return FattyGradient{g.at("hu_start").get<double>(), g.at("hu_end").get<double>(),
                             g.at("axis").get<int>()};
    }
    throw DataError("phantom spec: tissue needs 'uniform_hu' or 'fatty_gradient'");
}

std::array<double, 3> vec_to_array(const Vec3& v) { return {v.x, v.y, v.z}; }
Vec3 vec_from_json(const json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

void save_phantom_spec(const PhantomSpec& spec, const std::filesystem::path& path) {
    spec.validate();
    json j;
    j["grid"] = {{"dims", spec.grid.dims},
                 {"spacing_mm", spec.grid.spacing_mm},
                 {"origin_mm", spec.grid.origin_mm}};
    j["seed"] = spec.seed;
    j["noise_sigma_hu"] = spec.noise_sigma_hu;
    j["objects"] = json::array();
    for (const auto& obj : spec.objects) {
        json jo;
        jo["name"] = obj.name;
        jo["class"] = to_string(obj.cls);
        jo["ellipsoid"] = {{"center_mm", vec_to_array(obj.shape.center_mm)},
                           {"semi_axes_mm", vec_to_array(obj.shape.semi_axes_mm)},
                           {"euler_deg", vec_to_array(obj.shape.euler_deg)}};
        jo["tissue"] = tissue_to_json(obj.tissue);
        j["objects"].push_back(std::move(jo));
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write phantom spec '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

PhantomSpec load_phantom_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open phantom spec '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("phantom spec '" + path.string() + "': " + e.what());
    }
    PhantomSpec spec;
    try {
        const json& jg = j.at("grid");
        spec.grid.dims = jg.at("dims").get<std::array<int, 3>>();
        spec.grid.spacing_mm = jg.at("spacing_mm").get<std::array<double, 3>>();
        spec.grid.origin_mm = jg.at("origin_mm").get<std::array<double, 3>>();
        spec.seed = j.value("seed", std::uint64_t{0});
        spec.noise_sigma_hu = j.value("noise_sigma_hu", 0.0);
        for (const json& jo : j.at("objects")) {
            PhantomObject obj;
            obj.name = jo.at("name").get<std::string>();
            obj.cls = object_class_from_string(jo.at("class").get<std::string>());
            const json& je = jo.at("ellipsoid");
            obj.shape.center_mm = vec_from_json(je.at("center_mm"));
            obj.shape.semi_axes_mm = vec_from_json(je.at("semi_axes_mm"));
            obj.shape.euler_deg = vec_from_json(je.at("euler_deg"));
            obj.tissue = tissue_from_json(jo.at("tissue"));
            spec.objects.push_back(std::move(obj));
        }
    } catch (const json::exception& e) {
        throw DataError("phantom spec '" + path.string() + "': " + e.what());
    }
    spec.validate();
    return spec;
}

}  // namespace drrkit
