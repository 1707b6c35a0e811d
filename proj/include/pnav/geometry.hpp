#pragma once

// Rotation representations, pose arithmetic and pose error metrics.
//
// Euler convention used everywhere in pnav (generator, metrics, policies):
//   R = R_z(inplane) * R_x(elevation) * R_y(azimuth)
// i.e. azimuth is applied first about the object's up axis (y), then
// elevation about x, then in-plane rotation about the viewing axis z.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pnav {

inline constexpr double kPi = std::numbers::pi;

using Vec3 = std::array<double, 3>;

/// Wraps an angle to (-pi, pi]. Throws std::domain_error on non-finite input.
inline double wrap_angle(double x) {
    if (!std::isfinite(x)) throw std::domain_error("wrap_angle: non-finite angle");
    double r = std::remainder(x, 2.0 * kPi);  // [-pi, pi]
    if (r <= -kPi) r += 2.0 * kPi;
    return r;
}

struct EulerPose {
    double azimuth = 0.0;
    double elevation = 0.0;
    double inplane = 0.0;

    EulerPose() = default;
    EulerPose(double az, double el, double ip)
        : azimuth(wrap_angle(az)), elevation(wrap_angle(el)), inplane(wrap_angle(ip)) {}

    [[nodiscard]] std::array<double, 3> as_array() const { return {azimuth, elevation, inplane}; }
    friend bool operator==(const EulerPose&, const EulerPose&) = default;
};

/// Image-plane shift (fractions of width / height) and log-scale along the camera axis.
struct Translation {
    double tx = 0.0;
    double ty = 0.0;
    double scale = 0.0;

    Translation() = default;
    Translation(double x, double y, double s)
        : tx(std::clamp(x, -0.5, 0.5)), ty(std::clamp(y, -0.5, 0.5)), scale(std::clamp(s, -1.0, 1.0)) {}

    [[nodiscard]] std::array<double, 3> as_array() const { return {tx, ty, scale}; }
    friend bool operator==(const Translation&, const Translation&) = default;
};

struct Quaternion {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    [[nodiscard]] double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    /// Unit norm with w >= 0; when w == 0 the first nonzero of (x, y, z) is made positive.
    [[nodiscard]] Quaternion canonical() const {
        const double n = norm();
        Quaternion q{w / n, x / n, y / n, z / n};
        bool flip = q.w < 0.0;
        if (q.w == 0.0) {
            if (q.x != 0.0) flip = q.x < 0.0;
            else if (q.y != 0.0) flip = q.y < 0.0;
            else flip = q.z < 0.0;
        }
        if (flip) q = {-q.w, -q.x, -q.y, -q.z};
        return q;
    }

    Quaternion operator*(const Quaternion& o) const {
        return {w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w};
    }

    [[nodiscard]] std::array<double, 4> as_array() const { return {w, x, y, z}; }
};

/// Row-major 3x3 rotation.
struct RotationMatrix {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }
    double& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }

    RotationMatrix operator*(const RotationMatrix& o) const {
        RotationMatrix out;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += (*this)(r, k) * o(k, c);
                out(r, c) = s;
            }
        return out;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
                m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
                m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
    }

    [[nodiscard]] RotationMatrix transposed() const {
        RotationMatrix t;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
        return t;
    }

    [[nodiscard]] double trace() const { return m[0] + m[4] + m[8]; }
};

inline RotationMatrix rot_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {{1, 0, 0, 0, c, -s, 0, s, c}};
}
inline RotationMatrix rot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {{c, 0, s, 0, 1, 0, -s, 0, c}};
}
inline RotationMatrix rot_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {{c, -s, 0, s, c, 0, 0, 0, 1}};
}

/// Rotation by `angle` about the unit vector `axis` (Rodrigues).
inline RotationMatrix axis_angle_matrix(const Vec3& axis, double angle) {
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    const double x = axis[0], y = axis[1], z = axis[2];
    return {{t * x * x + c, t * x * y - s * z, t * x * z + s * y,
             t * x * y + s * z, t * y * y + c, t * y * z - s * x,
             t * x * z - s * y, t * y * z + s * x, t * z * z + c}};
}

inline RotationMatrix euler_to_matrix(const EulerPose& p) {
    return rot_z(p.inplane) * rot_x(p.elevation) * rot_y(p.azimuth);
}

inline Quaternion euler_to_quaternion(const EulerPose& p) {
    const double ha = 0.5 * p.azimuth, he = 0.5 * p.elevation, hi = 0.5 * p.inplane;
    const Quaternion qy{std::cos(ha), 0.0, std::sin(ha), 0.0};
    const Quaternion qx{std::cos(he), std::sin(he), 0.0, 0.0};
    const Quaternion qz{std::cos(hi), 0.0, 0.0, std::sin(hi)};
    return (qz * qx * qy).canonical();
}

inline RotationMatrix quaternion_to_matrix(const Quaternion& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    return {{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
             2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
             2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
}

/// Geodesic angle between two rotations, in [0, pi].
inline double rotation_error(const RotationMatrix& a, const RotationMatrix& b) {
    // Tr(a * b^T) written symmetrically so that swapping arguments is exact.
    double tr = 0.0;
    for (int i = 0; i < 9; ++i) tr += a.m[static_cast<std::size_t>(i)] * b.m[static_cast<std::size_t>(i)];
    return std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0));
}

inline double translation_error(const Translation& a, const Translation& b) {
    const double dx = a.tx - b.tx, dy = a.ty - b.ty, ds = a.scale - b.scale;
    return std::sqrt(dx * dx + dy * dy + ds * ds);
}

/// Angle between the transformed symmetry axes; spin about `axis` is not penalized.
inline double symmetric_rotation_error(const RotationMatrix& a, const RotationMatrix& b, const Vec3& axis) {
    const Vec3 ua = a * axis;
    const Vec3 ub = b * axis;
    const double d = ua[0] * ub[0] + ua[1] * ub[1] + ua[2] * ub[2];
    return std::acos(std::clamp(d, -1.0, 1.0));
}

/// Component-wise wrapped Euler difference goal - current.
inline EulerPose euler_difference(const EulerPose& goal, const EulerPose& current) {
    return {wrap_angle(goal.azimuth - current.azimuth), wrap_angle(goal.elevation - current.elevation),
            wrap_angle(goal.inplane - current.inplane)};
}

/// q(goal - current): quaternion of the wrapped component-wise Euler difference.
inline Quaternion quat_residual(const EulerPose& goal, const EulerPose& current) {
    return euler_to_quaternion(euler_difference(goal, current));
}

}  // namespace pnav
