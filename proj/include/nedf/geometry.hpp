// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace nedf {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3() = default;
  constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }

  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  constexpr Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend constexpr Vec3 operator/(Vec3 a, double s) { return a *= (1.0 / s); }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
constexpr Vec3 hadamard(const Vec3& a, const Vec3& b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalize(const Vec3& v) { return v / norm(v); }
inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

/// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static constexpr Mat3 identity() { return {}; }
  static constexpr Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
    return Mat3{{r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z}};
  }
  static constexpr Mat3 from_columns(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
    return Mat3{{c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z}};
  }

  constexpr double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }
  constexpr double& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }

  constexpr Vec3 column(int c) const { return {(*this)(0, c), (*this)(1, c), (*this)(2, c)}; }
  constexpr Vec3 row(int r) const { return {(*this)(r, 0), (*this)(r, 1), (*this)(r, 2)}; }

  constexpr Mat3 transposed() const {
    Mat3 t;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
    return t;
  }
  constexpr double determinant() const {
    const auto& a = *this;
    return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
           a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
           a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
  }

  friend constexpr Vec3 operator*(const Mat3& a, const Vec3& v) {
    return {dot(a.row(0), v), dot(a.row(1), v), dot(a.row(2), v)};
  }
  friend constexpr Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out(r, c) = dot(a.row(r), b.column(c));
    return out;
  }
  friend constexpr bool operator==(const Mat3&, const Mat3&) = default;
};

/// True when RᵀR = I and det R = +1, each within `tol`.
bool is_rotation(const Mat3& r, double tol = 1e-9);

/// Unit quaternion (w, x, y, z) used for file storage and interpolation.
struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quat from_axis_angle(const Vec3& axis, double radians);
  static Quat from_matrix(const Mat3& r);
  Mat3 to_matrix() const;
  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quat normalized() const;
  friend constexpr bool operator==(const Quat&, const Quat&) = default;
};

/// Shortest-arc spherical interpolation.
Quat slerp(const Quat& a, const Quat& b, double t);

struct Ray {
  Vec3 origin;
  Vec3 direction;

  /// Builds a ray, normalizing `direction`. Throws on a zero or non-finite direction.
  static Ray make(const Vec3& origin, const Vec3& direction);
  Vec3 at(double t) const { return origin + direction * t; }
};

/// Similarity map q -> v = s R q + T from an object's local space to world space.
class RigidTransform {
 public:
  RigidTransform() = default;
  /// Throws std::invalid_argument unless R is a rotation and s > 0.
  RigidTransform(const Mat3& rotation, const Vec3& translation, double scale);

  static RigidTransform identity() { return {}; }
  static RigidTransform from_quat(const Quat& q, const Vec3& translation, double scale);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  double scale() const { return scale_; }

  Vec3 apply_point(const Vec3& q) const { return rotation_ * q * scale_ + translation_; }
  Vec3 apply_direction(const Vec3& d) const { return rotation_ * d; }
  Vec3 inverse_point(const Vec3& v) const { return rotation_.transposed() * (v - translation_) / scale_; }
  Vec3 inverse_direction(const Vec3& d) const { return rotation_.transposed() * d; }

  /// this ∘ inner: first apply `inner`, then this transform.
  RigidTransform compose(const RigidTransform& inner) const;

  friend bool operator==(const RigidTransform&, const RigidTransform&) = default;

 private:
  Mat3 rotation_{};
  Vec3 translation_{};
  double scale_ = 1.0;
};

/// Maps a world-space ray into the local canonical space of `g`. Direction is renormalized.
Ray transform_ray_to_local(const RigidTransform& g, const Ray& ray);
/// Forward map of `transform_ray_to_local`.
Ray transform_ray_to_world(const RigidTransform& g, const Ray& local_ray);

struct Aabb {
  Vec3 min;
  Vec3 max;

  static Aabb make(const Vec3& min, const Vec3& max);
  Vec3 center() const { return (min + max) * 0.5; }
  Vec3 half_extents() const { return (max - min) * 0.5; }
  bool contains(const Vec3& p, double tol = 0.0) const;
  Aabb merged(const Aabb& o) const;
  /// Largest distance from the local origin to any corner.
  double max_corner_distance() const;
  std::array<Vec3, 8> corners() const;
  friend bool operator==(const Aabb&, const Aabb&) = default;
};

/// Scales `box` about its center by `factor` (>= 1).
Aabb relax_aabb(const Aabb& box, double factor);

struct RayInterval {
  double t_enter = 0.0;
  double t_exit = 0.0;
};

/// Slab intersection restricted to t >= 0; empty when the ray misses.
std::optional<RayInterval> clip_ray_to_aabb(const Ray& ray, const Aabb& box);

/// Foot of the perpendicular from the local origin to the ray.
struct TangencyFrame {
  Vec3 p_perp;
  double dist_o_pperp = 0.0;
};

TangencyFrame tangency_frame(const Ray& ray);

inline constexpr std::size_t kSamplesPerRay = 16;
inline constexpr std::size_t kEncodingLevels = 10;
inline constexpr std::size_t kFeaturesPerCoordinate = 1 + 2 * kEncodingLevels;
inline constexpr std::size_t kFeaturesPerPoint = 3 * kFeaturesPerCoordinate;
inline constexpr std::size_t kEncodedRayWidth = kSamplesPerRay * kFeaturesPerPoint;
static_assert(kEncodedRayWidth == 1008);

struct RaySampleTuple {
  std::array<Vec3, kSamplesPerRay> points{};
  bool hit_box = false;
};

/// 16 endpoint-inclusive samples over the clipped segment, normalized to [-1,1]^3 by the box.
RaySampleTuple sample_ray_points(const Ray& ray, const Aabb& box);

using EncodedRay = std::vector<double>;

/// Per coordinate: [p, sin(2^0 πp), cos(2^0 πp), ..., sin(2^9 πp), cos(2^9 πp)].
/// Throws std::invalid_argument when `tuple.hit_box` is false.
EncodedRay positional_encode(const RaySampleTuple& tuple);
void positional_encode_into(const RaySampleTuple& tuple, std::span<double> out);
void positional_encode_into(const RaySampleTuple& tuple, std::span<float> out);

/// D = |o - p⊥| - μ
inline double depth_from_mu(const TangencyFrame& frame, double mu) { return frame.dist_o_pperp - mu; }
/// μ = |o - p⊥| - D
inline double mu_from_depth(const TangencyFrame& frame, double depth) { return frame.dist_o_pperp - depth; }

}  // namespace nedf
