#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>
#include <Eigen/Dense>

namespace gsstream {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Quaternion stored as (w, x, y, z), Hamilton convention.
struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quat identity() { return {}; }

  static Quat from_axis_angle(const Vec3& axis, double angle) {
    const Vec3 a = axis.normalized();
    const double s = std::sin(angle / 2.0);
    return {std::cos(angle / 2.0), a.x() * s, a.y() * s, a.z() * s};
  }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  bool finite() const {
    return std::isfinite(w) && std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }

  friend bool operator==(const Quat&, const Quat&) = default;
};

inline double dot(const Quat& a, const Quat& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

/// Normalizes q; quaternions with norm below 1e-9 map to identity.
inline Quat normalized(const Quat& q) {
  const double n = q.norm();
  if (!(n >= 1e-9)) return Quat::identity();
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

/// Hamilton product a * b (apply b first, then a, when used as rotations).
inline Quat multiply(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

/// Rotation matrix of a unit quaternion.
inline Mat3 rotation_matrix(const Quat& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

inline Vec3 rotate(const Quat& q, const Vec3& v) { return rotation_matrix(q) * v; }

/// Axis-aligned box. A default-constructed box is empty.
struct Box {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  bool empty() const { return (lo.array() > hi.array()).any(); }

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }

  void extend(const Box& b) {
    if (b.empty()) return;
    extend(b.lo);
    extend(b.hi);
  }

  bool contains(const Vec3& p, double tol = 0.0) const {
    return (p.array() >= lo.array() - tol).all() && (p.array() <= hi.array() + tol).all();
  }

  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 extent() const { return hi - lo; }
  double diagonal() const { return empty() ? 0.0 : extent().norm(); }

  /// Maps p into the unit cube of this box (degenerate axes map to 0.5).
  Vec3 to_unit(const Vec3& p) const {
    Vec3 u;
    for (int a = 0; a < 3; ++a) {
      const double span = hi[a] - lo[a];
      u[a] = span > 0.0 ? (p[a] - lo[a]) / span : 0.5;
    }
    return u;
  }
};

}  // namespace gsstream
