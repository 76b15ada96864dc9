#include "drrkit/project.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "drrkit/errors.hpp"

namespace drrkit {

using nlohmann::json;

void ProjectionGeometry::validate() const {
    if (det_rows < 1 || det_cols < 1) throw DataError("projection geometry: detector dims must be >= 1");
    if (!(pixel_h_mm > 0.0) || !(pixel_w_mm > 0.0))
        throw DataError("projection geometry: pixel spacing must be positive");
    if (!(step_mm > 0.0)) throw DataError("projection geometry: step_mm must be positive");
    for (double a : {rotation_deg.x, rotation_deg.y, rotation_deg.z})
        if (!std::isfinite(a)) throw DataError("projection geometry: non-finite rotation");
}

namespace {

struct Aabb {
    Vec3 lo, hi;
};

/// Volume-frame mm box whose corners bound the trilinear support of the
/// nonzero voxels (voxel centers expanded by one spacing).
struct Support {
    bool empty = true;
    int i0 = 0, i1 = -1, j0 = 0, j1 = -1, k0 = 0, k1 = -1;
};

Support find_support(const ScalarVolume& v) {
    const auto& g = v.grid();
    const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
    const auto vals = v.values();
    Support s;
    s.i0 = nx; s.j0 = ny; s.k0 = nz;
    std::size_t idx = 0;
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i, ++idx) {
                if (vals[idx] != 0.0f) {
                    s.empty = false;
                    s.i0 = std::min(s.i0, i); s.i1 = std::max(s.i1, i);
                    s.j0 = std::min(s.j0, j); s.j1 = std::max(s.j1, j);
                    s.k0 = std::min(s.k0, k); s.k1 = std::max(s.k1, k);
                }
            }
    return s;
}

Aabb support_box_mm(const Grid3& g, const Support& s) {
    // One extra spacing on each side covers the interpolation tails.
    return {{g.origin_mm[0] + (s.i0 - 0.5) * g.spacing_mm[0],
             g.origin_mm[1] + (s.j0 - 0.5) * g.spacing_mm[1],
             g.origin_mm[2] + (s.k0 - 0.5) * g.spacing_mm[2]},
            {g.origin_mm[0] + (s.i1 + 1.5) * g.spacing_mm[0],
             g.origin_mm[1] + (s.j1 + 1.5) * g.spacing_mm[1],
             g.origin_mm[2] + (s.k1 + 1.5) * g.spacing_mm[2]}};
}

/// Forward rigid map volume -> world: x_w = Rg*(Rp*(x - c) + t) + c.
struct ForwardMap {
    Mat3 rg, rp;
    Vec3 t, c;
    Vec3 operator()(const Vec3& x) const { return rg * (rp * (x - c) + t) + c; }
};

Aabb transform_box(const Aabb& box, const ForwardMap& fwd) {
    Aabb out{{1e300, 1e300, 1e300}, {-1e300, -1e300, -1e300}};
    for (int m = 0; m < 8; ++m) {
        Vec3 corner{(m & 1) ? box.hi.x : box.lo.x, (m & 2) ? box.hi.y : box.lo.y,
                    (m & 4) ? box.hi.z : box.lo.z};
        Vec3 w = fwd(corner);
        out.lo.x = std::min(out.lo.x, w.x); out.hi.x = std::max(out.hi.x, w.x);
        out.lo.y = std::min(out.lo.y, w.y); out.hi.y = std::max(out.hi.y, w.y);
        out.lo.z = std::min(out.lo.z, w.z); out.hi.z = std::max(out.hi.z, w.z);
    }
    return out;
}

struct TrilinearSampler {
    const float* v;
    int nx, ny, nz;
    std::size_t sj, sk;  // strides for j and k (i stride is 1)

    explicit TrilinearSampler(const ScalarVolume& vol)
        : v(vol.values().data()), nx(vol.grid().dims[0]), ny(vol.grid().dims[1]),
          nz(vol.grid().dims[2]), sj(static_cast<std::size_t>(nx)),
          sk(static_cast<std::size_t>(nx) * ny) {}

    double at(int i, int j, int k) const {
        if (i < 0 || j < 0 || k < 0 || i >= nx || j >= ny || k >= nz) return 0.0;
        return v[static_cast<std::size_t>(i) + sj * j + sk * k];
    }

    double sample(double u, double w, double q) const {
        const int iu = static_cast<int>(std::floor(u));
        const int iw = static_cast<int>(std::floor(w));
        const int iq = static_cast<int>(std::floor(q));
        const double fu = u - iu, fw = w - iw, fq = q - iq;
        if (iu >= 0 && iu + 1 < nx && iw >= 0 && iw + 1 < ny && iq >= 0 && iq + 1 < nz) {
            const float* p = v + static_cast<std::size_t>(iu) + sj * iw + sk * iq;
            // Promote before subtracting: float-precision differences would
            // put this path ~1e-8 off the boundary path's double math.
            const double c00 = p[0] + fu * (static_cast<double>(p[1]) - p[0]);
            const double c10 = p[sj] + fu * (static_cast<double>(p[sj + 1]) - p[sj]);
            const double c01 = p[sk] + fu * (static_cast<double>(p[sk + 1]) - p[sk]);
            const double c11 =
                p[sk + sj] + fu * (static_cast<double>(p[sk + sj + 1]) - p[sk + sj]);
            const double c0 = c00 + fw * (c10 - c00);
            const double c1 = c01 + fw * (c11 - c01);
            return c0 + fq * (c1 - c0);
        }
        if (iu < -1 || iw < -1 || iq < -1 || iu >= nx || iw >= ny || iq >= nz) return 0.0;
        const double c00 = at(iu, iw, iq) * (1 - fu) + at(iu + 1, iw, iq) * fu;
        const double c10 = at(iu, iw + 1, iq) * (1 - fu) + at(iu + 1, iw + 1, iq) * fu;
        const double c01 = at(iu, iw, iq + 1) * (1 - fu) + at(iu + 1, iw, iq + 1) * fu;
        const double c11 = at(iu, iw + 1, iq + 1) * (1 - fu) + at(iu + 1, iw + 1, iq + 1) * fu;
        const double c0 = c00 + fw * (c10 - c00);
        const double c1 = c01 + fw * (c11 - c01);
        return c0 + fq * (c1 - c0);
    }
};

bool is_zero_rotation(const Vec3& r) { return r.x == 0.0 && r.y == 0.0 && r.z == 0.0; }

/// Exact axis-aligned path applies when nothing moves the pixel grid off
/// the voxel columns: no rotation anywhere, no in-plane translation, pixel
/// spacing equal to the voxel spacing, and matching grid parity.
bool exact_path_applies(const Grid3& g, const ProjectionGeometry& geom, const RigidPose& pose) {
    return is_zero_rotation(geom.rotation_deg) && pose.rx == 0.0 && pose.ry == 0.0 &&
           pose.rz == 0.0 && pose.tx == 0.0 && pose.ty == 0.0 &&
           geom.pixel_w_mm == g.spacing_mm[0] && geom.pixel_h_mm == g.spacing_mm[1] &&
           (geom.det_cols - g.dims[0]) % 2 == 0 && (geom.det_rows - g.dims[1]) % 2 == 0;
}

void project_exact(const ScalarVolume& vol, const ProjectionGeometry& geom, Image& out) {
    const auto& g = vol.grid();
    const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
    const int di = (g.dims[0] - geom.det_cols) / 2;  // voxel i = col + di
    const int dj = (g.dims[1] - geom.det_rows) / 2;
    const double step_cm = g.spacing_mm[2] / 10.0;
    const float* v = vol.values().data();
    const std::size_t sk = static_cast<std::size_t>(nx) * ny;

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int r = 0; r < geom.det_rows; ++r) {
        const int j = r + dj;
        if (j < 0 || j >= ny) continue;
        for (int c = 0; c < geom.det_cols; ++c) {
            const int i = c + di;
            if (i < 0 || i >= nx) continue;
            const float* p = v + static_cast<std::size_t>(i) + static_cast<std::size_t>(nx) * j;
            double acc = 0.0;
            for (int k = 0; k < nz; ++k) acc += p[sk * k];
            out.at(r, c) = acc * step_cm;
        }
    }
}

void project_general(const ScalarVolume& vol, const Support& sup, const ProjectionGeometry& geom,
                     const RigidPose& pose, Image& out) {
    if (sup.empty) return;
    const auto& g = vol.grid();
    const Vec3 c = g.center_mm();
    const Mat3 rg = rotation_zyx_deg(geom.rotation_deg);
    const Mat3 rp = rotation_zyx_deg(pose.rotation_deg());
    const ForwardMap fwd{rg, rp, pose.translation_mm(), c};

    const Aabb world = transform_box(support_box_mm(g, sup), fwd);

    // Detector rect touched by this object's support.
    const double cx = c.x, cy = c.y;
    const double half_w = (geom.det_cols - 1) / 2.0, half_h = (geom.det_rows - 1) / 2.0;
    const int c_lo = std::max(0, static_cast<int>(std::floor((world.lo.x - cx) / geom.pixel_w_mm + half_w)) - 1);
    const int c_hi = std::min(geom.det_cols - 1,
                              static_cast<int>(std::ceil((world.hi.x - cx) / geom.pixel_w_mm + half_w)) + 1);
    const int r_lo = std::max(0, static_cast<int>(std::floor((world.lo.y - cy) / geom.pixel_h_mm + half_h)) - 1);
    const int r_hi = std::min(geom.det_rows - 1,
                              static_cast<int>(std::ceil((world.hi.y - cy) / geom.pixel_h_mm + half_h)) + 1);
    if (c_lo > c_hi || r_lo > r_hi) return;

    const double step = geom.step_mm;
    const double step_cm = step / 10.0;
    const int nsteps = std::max(1, static_cast<int>(std::ceil((world.hi.z - world.lo.z) / step)));

    // Inverse map, in continuous voxel coordinates:
    //   vox(x_w) = S * (Rp^T * (Rg^T * (x_w - c) - t) + c - o) - 0.5
    const Mat3 minv = rp.transposed() * rg.transposed();
    const Vec3 bias = (rp.transposed() * (pose.translation_mm() * -1.0)) + c;
    const Vec3 o{g.origin_mm[0], g.origin_mm[1], g.origin_mm[2]};
    const Vec3 inv_sp{1.0 / g.spacing_mm[0], 1.0 / g.spacing_mm[1], 1.0 / g.spacing_mm[2]};
    auto to_vox = [&](const Vec3& xw) -> Vec3 {
        const Vec3 p = (minv * (xw - c)) + bias;
        return {(p.x - o.x) * inv_sp.x - 0.5, (p.y - o.y) * inv_sp.y - 0.5,
                (p.z - o.z) * inv_sp.z - 0.5};
    };
    // Per-step increment along the ray, in voxel coordinates.
    const Vec3 mz = minv * Vec3{0.0, 0.0, step};
    const Vec3 dvox{mz.x * inv_sp.x, mz.y * inv_sp.y, mz.z * inv_sp.z};

    // Slab bounds in voxel coordinates (interpolation support of centers).
    const double lo[3] = {sup.i0 - 1.0, sup.j0 - 1.0, sup.k0 - 1.0};
    const double hi[3] = {sup.i1 + 1.0, sup.j1 + 1.0, sup.k1 + 1.0};

    const TrilinearSampler sampler(vol);
    const double z_first = world.lo.z + 0.5 * step;

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 4)
#endif
    for (int r = r_lo; r <= r_hi; ++r) {
        const double y = cy + (r - half_h) * geom.pixel_h_mm;
        for (int col = c_lo; col <= c_hi; ++col) {
            const double x = cx + (col - half_w) * geom.pixel_w_mm;
            const Vec3 p0 = to_vox({x, y, z_first});
            const double start[3] = {p0.x, p0.y, p0.z};
            const double d[3] = {dvox.x, dvox.y, dvox.z};

            // Clip the sample index range against the support slab.
            double k_lo = 0.0, k_hi = nsteps - 1.0;
            bool miss = false;
            for (int ax = 0; ax < 3 && !miss; ++ax) {
                if (std::abs(d[ax]) < 1e-14) {
                    if (start[ax] < lo[ax] || start[ax] > hi[ax]) miss = true;
                } else {
                    double t0 = (lo[ax] - start[ax]) / d[ax];
                    double t1 = (hi[ax] - start[ax]) / d[ax];
                    if (t0 > t1) std::swap(t0, t1);
                    k_lo = std::max(k_lo, t0);
                    k_hi = std::min(k_hi, t1);
                }
            }
            if (miss) continue;
            const int ka = std::max(0, static_cast<int>(std::ceil(k_lo - 1e-9)));
            const int kb = std::min(nsteps - 1, static_cast<int>(std::floor(k_hi + 1e-9)));
            if (ka > kb) continue;

            double u = start[0] + ka * d[0];
            double w = start[1] + ka * d[1];
            double q = start[2] + ka * d[2];
            double acc = 0.0;
            for (int k = ka; k <= kb; ++k) {
                acc += sampler.sample(u, w, q);
                u += d[0]; w += d[1]; q += d[2];
            }
            out.at(r, col) += acc * step_cm;
        }
    }
}

}  // namespace

ProjectionGeometry auto_geometry(const Grid3& grid, const Vec3& rotation_deg, double pixel_h_mm,
                                 double pixel_w_mm, double step_mm, int pad_px) {
    grid.validate();
    if (!(pixel_h_mm > 0.0) || !(pixel_w_mm > 0.0) || !(step_mm > 0.0))
        throw DataError("auto_geometry: spacing and step must be positive");
    if (pad_px < 0) throw UsageError("auto_geometry: pad_px must be >= 0");

    const Vec3 c = grid.center_mm();
    const Mat3 rg = rotation_zyx_deg(rotation_deg);
    const Aabb vol_box{
        {grid.origin_mm[0], grid.origin_mm[1], grid.origin_mm[2]},
        {grid.origin_mm[0] + grid.dims[0] * grid.spacing_mm[0],
         grid.origin_mm[1] + grid.dims[1] * grid.spacing_mm[1],
         grid.origin_mm[2] + grid.dims[2] * grid.spacing_mm[2]}};
    const Aabb w = transform_box(vol_box, ForwardMap{rg, Mat3::identity(), {}, c});

    // ceil with a small slack so an exact integer extent (the zero-rotation
    // case) does not round up and break the pixel/voxel parity alignment.
    auto cover = [](double extent, double px) {
        return static_cast<int>(std::ceil(extent / px - 1e-9));
    };
    ProjectionGeometry geom;
    geom.rotation_deg = rotation_deg;
    geom.pixel_h_mm = pixel_h_mm;
    geom.pixel_w_mm = pixel_w_mm;
    geom.step_mm = step_mm;
    geom.det_cols = cover(w.hi.x - w.lo.x, pixel_w_mm) + 2 * pad_px;
    geom.det_rows = cover(w.hi.y - w.lo.y, pixel_h_mm) + 2 * pad_px;
    geom.validate();
    return geom;
}

DrrStack project(std::span<const ScalarVolume> objects, const ProjectionGeometry& geom,
                 DrrKind kind) {
    return project(objects, geom, kind, RigidPose{});
}

DrrStack project(std::span<const ScalarVolume> objects, const ProjectionGeometry& geom,
                 DrrKind kind, const RigidPose& pose) {
    if (objects.empty()) throw UsageError("project: empty volume list");
    geom.validate();
    const Grid3& g = objects.front().grid();
    for (const auto& v : objects)
        if (v.grid() != g) throw DataError("project: volumes do not share one grid");

    DrrStack stack;
    stack.kind = kind;
    stack.pixel_h_mm = geom.pixel_h_mm;
    stack.pixel_w_mm = geom.pixel_w_mm;
    stack.channels.reserve(objects.size());
    for (const auto& v : objects) stack.channels.push_back(project_one(v, geom, pose));
    return stack;
}

Image project_one(const ScalarVolume& vol, const ProjectionGeometry& geom, const RigidPose& pose) {
    geom.validate();
    Image out(geom.det_rows, geom.det_cols, 0.0);
    if (exact_path_applies(vol.grid(), geom, pose)) {
        project_exact(vol, geom, out);
    } else {
        project_general(vol, find_support(vol), geom, pose, out);
    }
    return out;
}

double intensity_sum(const DrrStack& stack, int channel) {
    if (channel < 0 || channel >= stack.size())
        throw UsageError("intensity_sum: channel " + std::to_string(channel) + " out of range");
    return sum_pixels(stack.channels[static_cast<std::size_t>(channel)]) * stack.pixel_area_cm2();
}

Image virtual_xray(const DrrStack& stack) {
    if (stack.channels.empty()) throw UsageError("virtual_xray: empty stack");
    Image vx = stack.channels.front();
    for (std::size_t ch = 1; ch < stack.channels.size(); ++ch) {
        const auto& img = stack.channels[ch];
        if (!vx.same_shape(img)) throw DataError("virtual_xray: channel shapes differ");
        for (std::size_t i = 0; i < vx.size(); ++i) vx[i] += img[i];
    }
    return vx;
}

std::string stack_units(DrrKind kind) {
    switch (kind) {
        case DrrKind::v: return "cm";
        case DrrKind::m: return "g/cm^2";
        case DrrKind::wv: return "au*cm";
    }
    return "?";
}

namespace {
std::string safe_filename(const std::string& name) {
    std::string s = name;
    for (char& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
    return s;
}
}  // namespace

std::filesystem::path save_stack(const DrrStack& stack, const ObjectSet& objects,
                                 const std::filesystem::path& dir) {
    if (stack.size() != objects.size())
        throw DataError("save_stack: channel count does not match object set");
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["kind"] = to_string(stack.kind);
    manifest["pixel_spacing_mm"] = {stack.pixel_h_mm, stack.pixel_w_mm};
    manifest["units"] = stack_units(stack.kind);
    manifest["channels"] = json::array();
    for (int i = 0; i < stack.size(); ++i) {
        const auto& obj = objects[i];
        const std::string file = safe_filename(obj.name) + "_" + to_string(stack.kind) + ".mski";
        ImageMeta meta;
        meta.pixel_h_mm = stack.pixel_h_mm;
        meta.pixel_w_mm = stack.pixel_w_mm;
        meta.kind = to_string(stack.kind);
        meta.object_name = obj.name;
        meta.units = stack_units(stack.kind);
        write_image(stack.channels[static_cast<std::size_t>(i)], meta, dir / file);
        manifest["channels"].push_back({{"object", obj.name}, {"file", file}});
    }
    const std::filesystem::path mpath = dir / ("stack_" + to_string(stack.kind) + ".json");
    std::ofstream out(mpath);
    if (!out) throw DataError("cannot write manifest '" + mpath.string() + "'");
    out << manifest.dump(2) << '\n';
    return mpath;
}

std::pair<DrrStack, std::vector<std::string>> load_stack(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw DataError("cannot open manifest '" + manifest.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("manifest '" + manifest.string() + "': " + e.what());
    }
    DrrStack stack;
    std::vector<std::string> names;
    try {
        stack.kind = drr_kind_from_string(j.at("kind").get<std::string>());
        stack.pixel_h_mm = j.at("pixel_spacing_mm").at(0).get<double>();
        stack.pixel_w_mm = j.at("pixel_spacing_mm").at(1).get<double>();
        for (const auto& ch : j.at("channels")) {
            names.push_back(ch.at("object").get<std::string>());
            auto [img, meta] = read_image(manifest.parent_path() / ch.at("file").get<std::string>());
            if (!stack.channels.empty() && !stack.channels.front().same_shape(img))
                throw DataError("manifest '" + manifest.string() + "': channel shapes differ");
            stack.channels.push_back(std::move(img));
        }
    } catch (const json::exception& e) {
        throw DataError("manifest '" + manifest.string() + "': " + e.what());
    }
    if (stack.channels.empty())
        throw DataError("manifest '" + manifest.string() + "': no channels");
    return {std::move(stack), std::move(names)};
}

}  // namespace drrkit
