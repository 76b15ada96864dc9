#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "drrkit/errors.hpp"

namespace drrkit {

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    bool operator==(const Vec3&) const = default;
};

/// Row-major 3x3 matrix, just enough for rigid transforms.
struct Mat3 {
    std::array<std::array<double, 3>, 3> m{};

    static Mat3 identity() {
        Mat3 r;
        r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0;
        return r;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
                m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
                m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                r.m[i][j] = m[i][0] * o.m[0][j] + m[i][1] * o.m[1][j] + m[i][2] * o.m[2][j];
        return r;
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
        return r;
    }
};

/// Rotation from Euler angles in degrees, composed as Rz(rz)*Ry(ry)*Rx(rx).
Mat3 rotation_zyx_deg(const Vec3& angles_deg);

/// Inverse of rotation_zyx_deg: extracts (rx, ry, rz) in degrees.
Vec3 euler_zyx_deg(const Mat3& r);

/// 6-DOF rigid pose: rotations in degrees, translations in millimeters.
/// Rotation is about the volume center, composed as Rz*Ry*Rx; translation
/// follows the rotation.
struct RigidPose {
    double rx = 0.0, ry = 0.0, rz = 0.0;  // degrees
    double tx = 0.0, ty = 0.0, tz = 0.0;  // millimeters

    Vec3 rotation_deg() const { return {rx, ry, rz}; }
    Vec3 translation_mm() const { return {tx, ty, tz}; }
    bool is_identity() const {
        return rx == 0.0 && ry == 0.0 && rz == 0.0 && tx == 0.0 && ty == 0.0 && tz == 0.0;
    }
    bool operator==(const RigidPose&) const = default;
};

/// Angles wrapped into (-180, 180], translations untouched.
RigidPose normalized(const RigidPose& pose);

enum class VolumeKind { hu, indicator, mass_density };
enum class DrrKind { wv, v, m };
enum class ObjectClass { muscle, bone };

std::string to_string(VolumeKind k);
std::string to_string(DrrKind k);
std::string to_string(ObjectClass c);
VolumeKind volume_kind_from_string(const std::string& s);
DrrKind drr_kind_from_string(const std::string& s);
ObjectClass object_class_from_string(const std::string& s);

/// Compensated (Kahan) accumulator. All physical-unit reductions go through
/// this so that differently ordered sums of the same addends agree to well
/// below the 1e-9 conservation tolerance.
/// Neumaier-compensated accumulator: unlike textbook Kahan it keeps the
/// correction when an addend is larger than the running sum, so sequences
/// like {1, 1e16, 1, -1e16} still total exactly 2.
class KahanSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            c_ += (sum_ - t) + x;
        else
            c_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + c_; }

private:
    double sum_ = 0.0;
    double c_ = 0.0;
};

}  // namespace drrkit
