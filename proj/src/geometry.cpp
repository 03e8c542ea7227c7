// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include "nedf/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace nedf {

bool is_rotation(const Mat3& r, double tol) {
  const Mat3 rtr = r.transposed() * r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double expected = i == j ? 1.0 : 0.0;
      if (!(std::abs(rtr(i, j) - expected) <= tol)) return false;
    }
  }
  return std::abs(r.determinant() - 1.0) <= tol;
}

Quat Quat::from_axis_angle(const Vec3& axis, double radians) {
  const Vec3 a = normalize(axis);
  const double s = std::sin(radians * 0.5);
  return Quat{std::cos(radians * 0.5), a.x * s, a.y * s, a.z * s};
}

Quat Quat::normalized() const {
  const double n = norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("quaternion has zero or non-finite norm");
  return Quat{w / n, x / n, y / n, z / n};
}

Mat3 Quat::to_matrix() const {
  const Quat q = normalized();
  const double xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
  const double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
  const double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
  return Mat3{{1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
               2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
               2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)}};
}

Quat Quat::from_matrix(const Mat3& r) {
  // Shepperd's method: pick the largest diagonal term for stability.
  const double trace = r(0, 0) + r(1, 1) + r(2, 2);
  Quat q;
  if (trace > 0.0) {
    const double s = std::sqrt(trace + 1.0) * 2.0;
    q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
    q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
  } else if (r(1, 1) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
    q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
  } else {
    const double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
    q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
  }
  if (q.w < 0.0) q = {-q.w, -q.x, -q.y, -q.z};
  return q.normalized();
}

Quat slerp(const Quat& a_in, const Quat& b_in, double t) {
  const Quat a = a_in.normalized();
  Quat b = b_in.normalized();
  double cos_theta = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
  if (cos_theta < 0.0) {
    b = {-b.w, -b.x, -b.y, -b.z};
    cos_theta = -cos_theta;
  }
  double wa = 1.0 - t;
  double wb = t;
  if (cos_theta < 1.0 - 1e-12) {
    const double theta = std::acos(std::min(cos_theta, 1.0));
    const double sin_theta = std::sin(theta);
    wa = std::sin((1.0 - t) * theta) / sin_theta;
    wb = std::sin(t * theta) / sin_theta;
  }
  return Quat{wa * a.w + wb * b.w, wa * a.x + wb * b.x, wa * a.y + wb * b.y, wa * a.z + wb * b.z}.normalized();
}

Ray Ray::make(const Vec3& origin, const Vec3& direction) {
  const double n = norm(direction);
  if (!(n > 0.0) || !std::isfinite(n) || !is_finite(origin)) {
    throw std::invalid_argument("ray needs a finite origin and a non-zero finite direction");
  }
  return Ray{origin, direction / n};
}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation, double scale)
    : rotation_(rotation), translation_(translation), scale_(scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw std::invalid_argument("transform scale must be positive and finite, got " + std::to_string(scale));
  }
  if (!is_rotation(rotation)) throw std::invalid_argument("transform rotation is not orthonormal with det +1");
  if (!is_finite(translation)) throw std::invalid_argument("transform translation is not finite");
}

RigidTransform RigidTransform::from_quat(const Quat& q, const Vec3& translation, double scale) {
  return RigidTransform(q.to_matrix(), translation, scale);
}

RigidTransform RigidTransform::compose(const RigidTransform& inner) const {
  // v = s R (s' R' q + T') + T
  return RigidTransform(rotation_ * inner.rotation_, apply_point(inner.translation_), scale_ * inner.scale_);
}

namespace {

// Rotations preserve length; only renormalize when rounding has visibly drifted.
Vec3 renormalized(const Vec3& d) {
  const double n = norm(d);
  return std::abs(n - 1.0) > 1e-12 ? d / n : d;
}

}  // namespace

Ray transform_ray_to_local(const RigidTransform& g, const Ray& ray) {
  return Ray{g.inverse_point(ray.origin), renormalized(g.inverse_direction(ray.direction))};
}

Ray transform_ray_to_world(const RigidTransform& g, const Ray& local_ray) {
  return Ray{g.apply_point(local_ray.origin), renormalized(g.apply_direction(local_ray.direction))};
}

Aabb Aabb::make(const Vec3& min, const Vec3& max) {
  if (!(min.x <= max.x && min.y <= max.y && min.z <= max.z)) {
    throw std::invalid_argument("bounding box min must be <= max componentwise");
  }
  return Aabb{min, max};
}

bool Aabb::contains(const Vec3& p, double tol) const {
  return p.x >= min.x - tol && p.x <= max.x + tol && p.y >= min.y - tol && p.y <= max.y + tol &&
         p.z >= min.z - tol && p.z <= max.z + tol;
}

Aabb Aabb::merged(const Aabb& o) const {
  return Aabb{{std::min(min.x, o.min.x), std::min(min.y, o.min.y), std::min(min.z, o.min.z)},
              {std::max(max.x, o.max.x), std::max(max.y, o.max.y), std::max(max.z, o.max.z)}};
}

std::array<Vec3, 8> Aabb::corners() const {
  std::array<Vec3, 8> out;
  for (std::size_t i = 0; i < 8; ++i) {
    out[i] = {(i & 1) ? max.x : min.x, (i & 2) ? max.y : min.y, (i & 4) ? max.z : min.z};
  }
  return out;
}

double Aabb::max_corner_distance() const {
  double best = 0.0;
  for (const Vec3& c : corners()) best = std::max(best, norm(c));
  return best;
}

Aabb relax_aabb(const Aabb& box, double factor) {
  if (!(factor >= 1.0) || !std::isfinite(factor)) {
    throw std::invalid_argument("relaxation factor must be >= 1, got " + std::to_string(factor));
  }
  const Vec3 c = box.center();
  const Vec3 h = box.half_extents() * factor;
  return Aabb{c - h, c + h};
}

std::optional<RayInterval> clip_ray_to_aabb(const Ray& ray, const Aabb& box) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const double o = ray.origin[axis];
    const double d = ray.direction[axis];
    const double lo = box.min[axis];
    const double hi = box.max[axis];
    if (d == 0.0) {
      if (o < lo || o > hi) return std::nullopt;
      continue;
    }
    const double inv = 1.0 / d;
    double ta = (lo - o) * inv;
    double tb = (hi - o) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return RayInterval{t0, t1};
}

TangencyFrame tangency_frame(const Ray& ray) {
  const Vec3 p_perp = ray.origin - ray.direction * dot(ray.origin, ray.direction);
  return TangencyFrame{p_perp, norm(ray.origin - p_perp)};
}

RaySampleTuple sample_ray_points(const Ray& ray, const Aabb& box) {
  RaySampleTuple out;
  const auto span = clip_ray_to_aabb(ray, box);
  if (!span) return out;
  out.hit_box = true;
  const Vec3 center = box.center();
  const Vec3 half = box.half_extents();
  const Vec3 inv_half{half.x > 0 ? 1.0 / half.x : 0.0, half.y > 0 ? 1.0 / half.y : 0.0,
                      half.z > 0 ? 1.0 / half.z : 0.0};
  const double step = (span->t_exit - span->t_enter) / static_cast<double>(kSamplesPerRay - 1);
  for (std::size_t i = 0; i < kSamplesPerRay; ++i) {
    const double t = span->t_enter + step * static_cast<double>(i);
    Vec3 p = hadamard(ray.at(t) - center, inv_half);
    // Slab boundaries can land a few ulps outside the box.
    p = {std::clamp(p.x, -1.0, 1.0), std::clamp(p.y, -1.0, 1.0), std::clamp(p.z, -1.0, 1.0)};
    out.points[i] = p;
  }
  return out;
}

namespace {

template <typename T>
void encode_impl(const RaySampleTuple& tuple, std::span<T> out) {
  if (!tuple.hit_box) throw std::invalid_argument("cannot encode a ray that misses its bounding box");
  if (out.size() != kEncodedRayWidth) throw std::invalid_argument("encoding buffer must hold 1008 values");
  std::size_t k = 0;
  for (const Vec3& p : tuple.points) {
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const double v = p[axis];
      out[k++] = static_cast<T>(v);
      // Double-angle recurrence from the base frequency; drift stays near 2^9 ulp.
      double s = std::sin(std::numbers::pi * v);
      double c = std::cos(std::numbers::pi * v);
      for (std::size_t level = 0; level < kEncodingLevels; ++level) {
        out[k++] = static_cast<T>(s);
        out[k++] = static_cast<T>(c);
        const double s2 = 2.0 * s * c;
        const double c2 = c * c - s * s;
        s = s2;
        c = c2;
      }
    }
  }
}

}  // namespace

void positional_encode_into(const RaySampleTuple& tuple, std::span<double> out) { encode_impl(tuple, out); }
void positional_encode_into(const RaySampleTuple& tuple, std::span<float> out) { encode_impl(tuple, out); }

EncodedRay positional_encode(const RaySampleTuple& tuple) {
  EncodedRay out(kEncodedRayWidth);
  positional_encode_into(tuple, std::span<double>(out));
  return out;
}

}  // namespace nedf
