// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

// Ground-truth geometry and appearance: analytic SDF primitives with sphere tracing,
// voxel density/color grids, and emission-absorption quadrature along rays.

#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include "nedf/geometry.hpp"

namespace nedf {

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;

  Rgb& operator+=(const Rgb& o) { r += o.r; g += o.g; b += o.b; return *this; }
  friend Rgb operator+(Rgb a, const Rgb& o) { return a += o; }
  friend Rgb operator*(const Rgb& a, double s) { return {a.r * s, a.g * s, a.b * s}; }
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

class FieldFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SdfPrimitive;

namespace sdf {

struct Sphere {
  Vec3 center;
  double radius = 1.0;
};
struct Box {
  Vec3 center;
  Vec3 half_extents{1, 1, 1};
};
/// Ring around the local y axis.
struct Torus {
  Vec3 center;
  double major_radius = 1.0;
  double minor_radius = 0.25;
};
/// Half-space n·p <= offset is inside.
struct Plane {
  Vec3 normal{0, 1, 0};
  double offset = 0.0;
};
struct Union {
  std::vector<SdfPrimitive> children;
};
struct Transformed {
  std::shared_ptr<const SdfPrimitive> child;
  RigidTransform transform;
};

}  // namespace sdf

struct SdfPrimitive {
  std::variant<sdf::Sphere, sdf::Box, sdf::Torus, sdf::Plane, sdf::Union, sdf::Transformed> shape;

  static SdfPrimitive sphere(const Vec3& center, double radius);
  static SdfPrimitive box(const Vec3& center, const Vec3& half_extents);
  static SdfPrimitive torus(const Vec3& center, double major_radius, double minor_radius);
  static SdfPrimitive plane(const Vec3& normal, double offset);
  static SdfPrimitive make_union(std::vector<SdfPrimitive> children);
  static SdfPrimitive transformed(SdfPrimitive child, const RigidTransform& g);
};

/// Signed distance, negative inside. Transformed children evaluate s·sdf(G⁻¹p).
double sdf_eval(const SdfPrimitive& prim, const Vec3& p);

/// Tight bounds; empty for primitives containing an unbounded plane.
std::optional<Aabb> sdf_bounds(const SdfPrimitive& prim);

struct HitRecord {
  double depth = 0.0;
  Vec3 point;
  bool hit = false;
};

inline constexpr double kSurfaceEpsilon = 1e-5;
inline constexpr int kMaxTraceSteps = 512;

HitRecord sphere_trace(const SdfPrimitive& prim, const Ray& ray, double t_max);

/// Closed-form first intersection for spheres, boxes, planes and their unions/transforms.
/// Empty when the tree holds a primitive without a closed form (torus).
std::optional<HitRecord> exact_intersect(const SdfPrimitive& prim, const Ray& ray, double t_max);

struct FieldSample {
  Rgb color;
  double sigma = 0.0;
};

/// Appearance function F_Θ: color and density at a local point seen along a direction.
class RadianceField {
 public:
  virtual ~RadianceField() = default;
  virtual FieldSample sample(const Vec3& p, const Vec3& d) const = 0;
  /// Region outside of which density is zero.
  virtual Aabb bounds() const = 0;
  /// Threshold below which a shading sample is treated as missing the surface.
  virtual double default_sigma_threshold() const = 0;
};

inline FieldSample radiance_at(const RadianceField& field, const Vec3& p, const Vec3& d) { return field.sample(p, d); }

class VoxelField final : public RadianceField {
 public:
  struct Resolution {
    int nx = 1;
    int ny = 1;
    int nz = 1;
    std::size_t count() const { return static_cast<std::size_t>(nx) * ny * nz; }
  };

  VoxelField(Resolution res, const Aabb& bounds, std::vector<float> density, std::vector<float> color);

  static VoxelField load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Trilinear between voxel centers, clamped at the outer half-voxel, zero outside bounds.
  FieldSample sample(const Vec3& p, const Vec3& d) const override;
  Aabb bounds() const override { return bounds_; }
  double default_sigma_threshold() const override { return 1.0; }

  const Resolution& resolution() const { return res_; }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * res_.ny + static_cast<std::size_t>(j)) * res_.nx + static_cast<std::size_t>(i);
  }
  Vec3 voxel_center(int i, int j, int k) const;
  std::span<const float> density() const { return density_; }
  std::span<const float> color() const { return color_; }

 private:
  Resolution res_;
  Aabb bounds_;
  std::vector<float> density_;
  std::vector<float> color_;  // rgb triples
};

struct AnalyticShading {
  double interior_density_slope = 1000.0;  // σ grows by this per unit of penetration
  double surface_density = 50.0;           // added inside the |sdf| < band shell
  double band = 0.02;
  double color_scale = 1.0;                // c(p) = clamp((p / color_scale + 1) / 2)
};

/// Density derived from an SDF with a procedural position-based color map.
class AnalyticRadiance final : public RadianceField {
 public:
  AnalyticRadiance(SdfPrimitive prim, AnalyticShading shading = {});

  FieldSample sample(const Vec3& p, const Vec3& d) const override;
  Aabb bounds() const override { return bounds_; }
  double default_sigma_threshold() const override { return shading_.surface_density * 0.5; }

  const SdfPrimitive& primitive() const { return prim_; }
  const AnalyticShading& shading() const { return shading_; }

 private:
  SdfPrimitive prim_;
  AnalyticShading shading_;
  Aabb bounds_;
};

struct VolumeDepth {
  double depth = 0.0;
  double alpha = 0.0;
};

struct VolumeColor {
  Rgb color;
  double alpha = 0.0;
};

/// Σ w_i t_i with w_i = T_i (1 - exp(-σ_i δ)), uniform t_i over [t_n, t_f] endpoints included.
VolumeDepth volume_depth(const RadianceField& field, const Ray& ray, double t_near, double t_far, int n_samples);
/// Σ w_i c_i with the same weights as `volume_depth`.
VolumeColor volume_render_color(const RadianceField& field, const Ray& ray, double t_near, double t_far,
                                int n_samples);
/// Per-sample weights, exposed for property checks.
std::vector<double> volume_weights(const RadianceField& field, const Ray& ray, double t_near, double t_far,
                                   int n_samples);

/// Source of first-hit depth supervision in an object's local space.
class DepthOracle {
 public:
  virtual ~DepthOracle() = default;
  /// First-intersection distance along a unit-direction ray, empty on a miss.
  virtual std::optional<double> depth(const Ray& ray) const = 0;
  virtual Aabb bounds() const = 0;
};

class AnalyticOracle final : public DepthOracle {
 public:
  enum class Method { kAuto, kSphereTrace };

  /// Throws std::invalid_argument for unbounded primitives.
  explicit AnalyticOracle(SdfPrimitive prim, double t_max = 1e3, Method method = Method::kAuto);

  std::optional<double> depth(const Ray& ray) const override;
  Aabb bounds() const override { return bounds_; }
  const SdfPrimitive& primitive() const { return prim_; }

 private:
  SdfPrimitive prim_;
  double t_max_;
  Method method_;
  Aabb bounds_;
};

class VoxelOracle final : public DepthOracle {
 public:
  VoxelOracle(std::shared_ptr<const VoxelField> field, int n_samples = 256, double mask_threshold = 0.5);

  std::optional<double> depth(const Ray& ray) const override;
  Aabb bounds() const override { return field_->bounds(); }
  /// Expected-depth quadrature restricted to the part of the ray inside the field bounds.
  VolumeDepth integrate(const Ray& ray) const;

 private:
  std::shared_ptr<const VoxelField> field_;
  int n_samples_;
  double mask_threshold_;
};

/// Binary ground-truth mask: 1 iff the oracle reports a hit.
inline int mask_of_ray(const DepthOracle& oracle, const Ray& ray) { return oracle.depth(ray).has_value() ? 1 : 0; }

}  // namespace nedf
