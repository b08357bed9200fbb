#pragma once

#include <array>
#include <cmath>
#include <numbers>

namespace unicon {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr Vec3() = default;
    constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    static constexpr Vec3 zero() { return {}; }
    static constexpr Vec3 unit_x() { return {1.0, 0.0, 0.0}; }
    static constexpr Vec3 unit_y() { return {0.0, 1.0, 0.0}; }
    static constexpr Vec3 unit_z() { return {0.0, 0.0, 1.0}; }

    constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator-() const { return {-x, -y, -z}; }
    constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    constexpr Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    constexpr bool operator==(const Vec3&) const = default;

    constexpr double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    constexpr Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    constexpr double squared_norm() const { return dot(*this); }
    double norm() const { return std::sqrt(squared_norm()); }
    Vec3 normalized() const {
        const double n = norm();
        return n > 0.0 ? *this / n : Vec3{};
    }
    bool is_finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }

/// Rotation quaternion stored as (w, x, y, z). Every operation that produces a
/// rotation returns a normalized value.
struct Quat {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr Quat() = default;
    constexpr Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

    static constexpr Quat identity() { return {}; }

    static Quat from_axis_angle(const Vec3& axis, double angle) {
        const Vec3 a = axis.normalized();
        const double h = 0.5 * angle;
        const double s = std::sin(h);
        return Quat{std::cos(h), a.x * s, a.y * s, a.z * s}.normalized();
    }

    /// Exponential map of a rotation vector (axis scaled by angle).
    static Quat exp(const Vec3& rotvec) {
        const double angle = rotvec.norm();
        if (angle < 1e-12) {
            // second-order Taylor expansion keeps tiny rotations accurate
            const Vec3 h = rotvec * 0.5;
            return Quat{1.0 - 0.5 * h.squared_norm(), h.x, h.y, h.z}.normalized();
        }
        const double s = std::sin(0.5 * angle) / angle;
        return Quat{std::cos(0.5 * angle), rotvec.x * s, rotvec.y * s, rotvec.z * s}.normalized();
    }

    constexpr Vec3 vec() const { return {x, y, z}; }
    constexpr double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }

    Quat normalized() const {
        const double n = norm();
        if (!(n > 0.0)) return identity();
        return {w / n, x / n, y / n, z / n};
    }

    constexpr Quat conjugate() const { return {w, -x, -y, -z}; }
    /// Inverse of a unit quaternion.
    constexpr Quat inverse() const { return conjugate(); }
    constexpr Quat operator-() const { return {-w, -x, -y, -z}; }

    /// Raw Hamilton product (no renormalization).
    constexpr Quat operator*(const Quat& b) const {
        return {w * b.w - x * b.x - y * b.y - z * b.z,
                w * b.x + x * b.w + y * b.z - z * b.y,
                w * b.y - x * b.z + y * b.w + z * b.x,
                w * b.z + x * b.y - y * b.x + z * b.w};
    }

    constexpr bool operator==(const Quat&) const = default;

    Vec3 rotate(const Vec3& v) const {
        const Vec3 u = vec();
        const Vec3 t = u.cross(v) * 2.0;
        return v + t * w + u.cross(t);
    }
    Vec3 inverse_rotate(const Vec3& v) const { return conjugate().rotate(v); }

    /// Hemisphere representative with w >= 0.
    Quat canonical() const { return w < 0.0 ? -*this : *this; }

    /// Rotation vector of the shortest rotation represented by this quaternion.
    Vec3 log() const {
        const Quat q = canonical();
        const double s = q.vec().norm();
        if (s < 1e-12) return q.vec() * 2.0;
        const double angle = 2.0 * std::atan2(s, q.w);
        return q.vec() * (angle / s);
    }

    bool is_finite() const {
        return std::isfinite(w) && std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
    }
};

/// Composition: rotate by b first, then by a.
inline Quat quat_mul(const Quat& a, const Quat& b) { return (a * b).normalized(); }

/// Geodesic angle between two rotations, in [0, pi].
inline double quat_angle(const Quat& a, const Quat& b) {
    const Quat d = a.conjugate() * b;
    return 2.0 * std::atan2(d.vec().norm(), std::abs(d.w));
}

/// Shortest-path spherical interpolation. b is negated when dot(a, b) < 0;
/// at dot == 0 both arcs are equally long and b is kept as given.
inline Quat quat_slerp(const Quat& a, const Quat& b, double t) {
    if (t <= 0.0) return a.normalized();
    if (t >= 1.0) return b.normalized();
    const Quat bb = a.dot(b) < 0.0 ? -b : b;
    const Quat delta = a.conjugate() * bb;
    const double s = delta.vec().norm();
    if (s < 1e-15) return a.normalized();
    const double half = std::atan2(s, delta.w);
    const Vec3 rotvec = delta.vec() * (2.0 * half * t / s);
    return quat_mul(a, Quat::exp(rotvec));
}

struct RigidPose {
    Vec3 position;
    Quat orientation;

    static constexpr RigidPose identity() { return {}; }

    Vec3 transform_point(const Vec3& p) const { return orientation.rotate(p) + position; }
    Vec3 transform_vector(const Vec3& v) const { return orientation.rotate(v); }
    Vec3 inverse_transform_point(const Vec3& p) const { return orientation.inverse_rotate(p - position); }
    Vec3 inverse_transform_vector(const Vec3& v) const { return orientation.inverse_rotate(v); }

    RigidPose operator*(const RigidPose& o) const {
        return {transform_point(o.position), quat_mul(orientation, o.orientation)};
    }
    RigidPose inverse() const {
        const Quat inv = orientation.inverse();
        return {inv.rotate(-position), inv};
    }

    constexpr bool operator==(const RigidPose&) const = default;
};

struct SpatialVelocity {
    Vec3 linear;   ///< m/s
    Vec3 angular;  ///< rad/s, axis scaled by rate

    constexpr bool operator==(const SpatialVelocity&) const = default;
};

// Agent-centric encoding: express world quantities in the frame of `frame`.

inline Vec3 to_local_point(const RigidPose& frame, const Vec3& p) { return frame.inverse_transform_point(p); }
inline Vec3 to_local_vector(const RigidPose& frame, const Vec3& v) { return frame.inverse_transform_vector(v); }
inline Quat to_local_orientation(const RigidPose& frame, const Quat& q) {
    return quat_mul(frame.orientation.inverse(), q);
}
inline RigidPose to_local(const RigidPose& frame, const RigidPose& pose) {
    return {to_local_point(frame, pose.position), to_local_orientation(frame, pose.orientation)};
}
inline SpatialVelocity to_local(const RigidPose& frame, const SpatialVelocity& v) {
    return {to_local_vector(frame, v.linear), to_local_vector(frame, v.angular)};
}

inline Vec3 from_local_point(const RigidPose& frame, const Vec3& p) { return frame.transform_point(p); }
inline Vec3 from_local_vector(const RigidPose& frame, const Vec3& v) { return frame.transform_vector(v); }
inline Quat from_local_orientation(const RigidPose& frame, const Quat& q) { return quat_mul(frame.orientation, q); }
inline RigidPose from_local(const RigidPose& frame, const RigidPose& pose) {
    return {from_local_point(frame, pose.position), from_local_orientation(frame, pose.orientation)};
}
inline SpatialVelocity from_local(const RigidPose& frame, const SpatialVelocity& v) {
    return {from_local_vector(frame, v.linear), from_local_vector(frame, v.angular)};
}

/// Target root pose expressed in the current root frame.
inline RigidPose relative_root_offset(const RigidPose& current, const RigidPose& target) {
    return to_local(current, target);
}

/// Yaw-only frame (rotation about +z) sharing the position of `pose`.
inline RigidPose heading_frame(const RigidPose& pose) {
    const Vec3 fwd = pose.orientation.rotate(Vec3::unit_x());
    const double yaw = std::atan2(fwd.y, fwd.x);
    return {pose.position, Quat::from_axis_angle(Vec3::unit_z(), yaw)};
}

/// Rate taking `a` to `b` over `dt`, expressed in the frame the quaternions live in.
inline Vec3 angular_rate(const Quat& a, const Quat& b, double dt) { return (b * a.conjugate()).log() / dt; }

inline Vec3 lerp(const Vec3& a, const Vec3& b, double t) { return a + (b - a) * t; }

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace unicon
