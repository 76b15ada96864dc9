#include "drrkit/common.hpp"

#include <cmath>

namespace drrkit {

Mat3 rotation_zyx_deg(const Vec3& angles_deg) {
    const double ax = deg_to_rad(angles_deg.x);
    const double ay = deg_to_rad(angles_deg.y);
    const double az = deg_to_rad(angles_deg.z);
    const double cx = std::cos(ax), sx = std::sin(ax);
    const double cy = std::cos(ay), sy = std::sin(ay);
    const double cz = std::cos(az), sz = std::sin(az);

    Mat3 rx = Mat3::identity();
    rx.m[1][1] = cx; rx.m[1][2] = -sx;
    rx.m[2][1] = sx; rx.m[2][2] = cx;

    Mat3 ry = Mat3::identity();
    ry.m[0][0] = cy; ry.m[0][2] = sy;
    ry.m[2][0] = -sy; ry.m[2][2] = cy;

    Mat3 rz = Mat3::identity();
    rz.m[0][0] = cz; rz.m[0][1] = -sz;
    rz.m[1][0] = sz; rz.m[1][1] = cz;

    return rz * ry * rx;
}

Vec3 euler_zyx_deg(const Mat3& r) {
    // R = Rz*Ry*Rx, so r20 = -sin(ry).
    double sy = -r.m[2][0];
    if (sy > 1.0) sy = 1.0;
    if (sy < -1.0) sy = -1.0;
    const double ry = std::asin(sy);
    double rx, rz;
    if (std::abs(sy) < 1.0 - 1e-12) {
        rx = std::atan2(r.m[2][1], r.m[2][2]);
        rz = std::atan2(r.m[1][0], r.m[0][0]);
    } else {
        // Gimbal lock: rx and rz are coupled, put everything into rx.
        rx = std::atan2(-r.m[1][2], r.m[1][1]);
        rz = 0.0;
    }
    return {rx * 180.0 / kPi, ry * 180.0 / kPi, rz * 180.0 / kPi};
}

namespace {
double wrap_angle_deg(double a) {
    double w = std::fmod(a, 360.0);
    if (w <= -180.0) w += 360.0;
    if (w > 180.0) w -= 360.0;
    return w;
}
}  // namespace

RigidPose normalized(const RigidPose& pose) {
    RigidPose p = pose;
    p.rx = wrap_angle_deg(p.rx);
    p.ry = wrap_angle_deg(p.ry);
    p.rz = wrap_angle_deg(p.rz);
    return p;
}

std::string to_string(VolumeKind k) {
    switch (k) {
        case VolumeKind::hu: return "hu";
        case VolumeKind::indicator: return "indicator";
        case VolumeKind::mass_density: return "mass_density";
    }
    return "?";
}

std::string to_string(DrrKind k) {
    switch (k) {
        case DrrKind::wv: return "wv";
        case DrrKind::v: return "v";
        case DrrKind::m: return "m";
    }
    return "?";
}

std::string to_string(ObjectClass c) {
    return c == ObjectClass::muscle ? "muscle" : "bone";
}

VolumeKind volume_kind_from_string(const std::string& s) {
    if (s == "hu") return VolumeKind::hu;
    if (s == "indicator") return VolumeKind::indicator;
    if (s == "mass_density") return VolumeKind::mass_density;
    throw UsageError("unknown volume kind '" + s + "'");
}

DrrKind drr_kind_from_string(const std::string& s) {
    if (s == "wv") return DrrKind::wv;
    if (s == "v") return DrrKind::v;
    if (s == "m") return DrrKind::m;
    throw UsageError("unknown DRR kind '" + s + "' (expected wv|v|m)");
}

ObjectClass object_class_from_string(const std::string& s) {
    if (s == "muscle") return ObjectClass::muscle;
    if (s == "bone") return ObjectClass::bone;
    throw UsageError("unknown object class '" + s + "' (expected muscle|bone)");
}

}  // namespace drrkit
