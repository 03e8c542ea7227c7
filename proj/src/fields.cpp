// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include "nedf/fields.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nedf/binary_io.hpp"

namespace nedf {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

SdfPrimitive SdfPrimitive::sphere(const Vec3& center, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("sphere radius must be positive");
  return {sdf::Sphere{center, radius}};
}

SdfPrimitive SdfPrimitive::box(const Vec3& center, const Vec3& half_extents) {
  if (!(half_extents.x > 0.0 && half_extents.y > 0.0 && half_extents.z > 0.0)) {
    throw std::invalid_argument("box half extents must be positive");
  }
  return {sdf::Box{center, half_extents}};
}

SdfPrimitive SdfPrimitive::torus(const Vec3& center, double major_radius, double minor_radius) {
  if (!(major_radius > 0.0 && minor_radius > 0.0)) throw std::invalid_argument("torus radii must be positive");
  return {sdf::Torus{center, major_radius, minor_radius}};
}

SdfPrimitive SdfPrimitive::plane(const Vec3& normal, double offset) {
  if (std::abs(norm(normal) - 1.0) > 1e-9) throw std::invalid_argument("plane normal must be unit length");
  return {sdf::Plane{normal, offset}};
}

SdfPrimitive SdfPrimitive::make_union(std::vector<SdfPrimitive> children) {
  if (children.empty()) throw std::invalid_argument("union needs at least one child");
  return {sdf::Union{std::move(children)}};
}

SdfPrimitive SdfPrimitive::transformed(SdfPrimitive child, const RigidTransform& g) {
  return {sdf::Transformed{std::make_shared<const SdfPrimitive>(std::move(child)), g}};
}

double sdf_eval(const SdfPrimitive& prim, const Vec3& p) {
  return std::visit(
      Overloaded{
          [&](const sdf::Sphere& s) { return norm(p - s.center) - s.radius; },
          [&](const sdf::Box& b) {
            const Vec3 d = p - b.center;
            const Vec3 q{std::abs(d.x) - b.half_extents.x, std::abs(d.y) - b.half_extents.y,
                         std::abs(d.z) - b.half_extents.z};
            const Vec3 outside{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
            return norm(outside) + std::min(std::max(q.x, std::max(q.y, q.z)), 0.0);
          },
          [&](const sdf::Torus& t) {
            const Vec3 d = p - t.center;
            const double ring = std::sqrt(d.x * d.x + d.z * d.z) - t.major_radius;
            return std::sqrt(ring * ring + d.y * d.y) - t.minor_radius;
          },
          [&](const sdf::Plane& pl) { return dot(pl.normal, p) - pl.offset; },
          [&](const sdf::Union& u) {
            double best = kInf;
            for (const auto& child : u.children) best = std::min(best, sdf_eval(child, p));
            return best;
          },
          [&](const sdf::Transformed& t) {
            return t.transform.scale() * sdf_eval(*t.child, t.transform.inverse_point(p));
          },
      },
      prim.shape);
}

std::optional<Aabb> sdf_bounds(const SdfPrimitive& prim) {
  return std::visit(
      Overloaded{
          [](const sdf::Sphere& s) -> std::optional<Aabb> {
            const Vec3 r{s.radius, s.radius, s.radius};
            return Aabb{s.center - r, s.center + r};
          },
          [](const sdf::Box& b) -> std::optional<Aabb> {
            return Aabb{b.center - b.half_extents, b.center + b.half_extents};
          },
          [](const sdf::Torus& t) -> std::optional<Aabb> {
            const double outer = t.major_radius + t.minor_radius;
            const Vec3 r{outer, t.minor_radius, outer};
            return Aabb{t.center - r, t.center + r};
          },
          [](const sdf::Plane&) -> std::optional<Aabb> { return std::nullopt; },
          [](const sdf::Union& u) -> std::optional<Aabb> {
            std::optional<Aabb> out;
            for (const auto& child : u.children) {
              const auto b = sdf_bounds(child);
              if (!b) return std::nullopt;
              out = out ? out->merged(*b) : *b;
            }
            return out;
          },
          [](const sdf::Transformed& t) -> std::optional<Aabb> {
            const auto b = sdf_bounds(*t.child);
            if (!b) return std::nullopt;
            std::optional<Aabb> out;
            for (const Vec3& c : b->corners()) {
              const Vec3 w = t.transform.apply_point(c);
              const Aabb pt{w, w};
              out = out ? out->merged(pt) : pt;
            }
            return out;
          },
      },
      prim.shape);
}

HitRecord sphere_trace(const SdfPrimitive& prim, const Ray& ray, double t_max) {
  double t = 0.0;
  for (int step = 0; step < kMaxTraceSteps; ++step) {
    const Vec3 p = ray.at(t);
    const double d = sdf_eval(prim, p);
    if (std::abs(d) < kSurfaceEpsilon) return HitRecord{t, p, true};
    // |d| keeps the march forward when the origin starts inside a solid.
    t += std::abs(d);
    if (t > t_max) break;
  }
  return HitRecord{};
}

namespace {

// Smallest root of |o + t d - c|^2 = r^2 with t >= 0.
std::optional<double> intersect_sphere(const sdf::Sphere& s, const Ray& ray) {
  const Vec3 oc = ray.origin - s.center;
  const double b = dot(oc, ray.direction);
  const double c = dot(oc, oc) - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  // Numerically stable pair of roots.
  const double q = -b - std::copysign(root, b);
  double t0 = q;
  double t1 = q != 0.0 ? c / q : -b;
  if (t0 > t1) std::swap(t0, t1);
  if (t0 >= 0.0) return t0;
  if (t1 >= 0.0) return t1;
  return std::nullopt;
}

std::optional<double> intersect_box(const sdf::Box& b, const Ray& ray) {
  const auto span = clip_ray_to_aabb(ray, Aabb{b.center - b.half_extents, b.center + b.half_extents});
  if (!span) return std::nullopt;
  // Inside the box the first surface crossing is the exit.
  return span->t_enter > 0.0 ? span->t_enter : span->t_exit;
}

std::optional<double> intersect_plane(const sdf::Plane& pl, const Ray& ray) {
  const double denom = dot(pl.normal, ray.direction);
  const double dist = dot(pl.normal, ray.origin) - pl.offset;
  if (dist == 0.0) return 0.0;
  if (denom == 0.0) return std::nullopt;
  const double t = -dist / denom;
  if (t < 0.0) return std::nullopt;
  return t;
}

struct ExactResult {
  bool supported = true;
  std::optional<double> t;
};

ExactResult exact_t(const SdfPrimitive& prim, const Ray& ray) {
  return std::visit(
      Overloaded{
          [&](const sdf::Sphere& s) { return ExactResult{true, intersect_sphere(s, ray)}; },
          [&](const sdf::Box& b) { return ExactResult{true, intersect_box(b, ray)}; },
          [&](const sdf::Torus&) { return ExactResult{false, std::nullopt}; },
          [&](const sdf::Plane& pl) { return ExactResult{true, intersect_plane(pl, ray)}; },
          [&](const sdf::Union& u) {
            ExactResult out;
            for (const auto& child : u.children) {
              const ExactResult r = exact_t(child, ray);
              if (!r.supported) return ExactResult{false, std::nullopt};
              if (r.t && (!out.t || *r.t < *out.t)) out.t = r.t;
            }
            return out;
          },
          [&](const sdf::Transformed& t) {
            const Ray local = transform_ray_to_local(t.transform, ray);
            ExactResult r = exact_t(*t.child, local);
            if (r.t) *r.t *= t.transform.scale();
            return r;
          },
      },
      prim.shape);
}

}  // namespace

std::optional<HitRecord> exact_intersect(const SdfPrimitive& prim, const Ray& ray, double t_max) {
  const ExactResult r = exact_t(prim, ray);
  if (!r.supported) return std::nullopt;
  if (!r.t || *r.t > t_max) return HitRecord{};
  return HitRecord{*r.t, ray.at(*r.t), true};
}

// ---------------------------------------------------------------------------------------------

VoxelField::VoxelField(Resolution res, const Aabb& bounds, std::vector<float> density, std::vector<float> color)
    : res_(res), bounds_(bounds), density_(std::move(density)), color_(std::move(color)) {
  if (res.nx <= 0 || res.ny <= 0 || res.nz <= 0) throw std::invalid_argument("voxel resolution must be positive");
  if (density_.size() != res.count() || color_.size() != res.count() * 3) {
    throw std::invalid_argument("voxel arrays do not match the resolution");
  }
  if (!(bounds.min.x < bounds.max.x && bounds.min.y < bounds.max.y && bounds.min.z < bounds.max.z)) {
    throw std::invalid_argument("voxel bounds must have positive volume");
  }
  for (float s : density_) {
    if (!(s >= 0.0f) || !std::isfinite(s)) throw std::invalid_argument("voxel densities must be finite and >= 0");
  }
}

Vec3 VoxelField::voxel_center(int i, int j, int k) const {
  const Vec3 size = bounds_.max - bounds_.min;
  return {bounds_.min.x + (i + 0.5) * size.x / res_.nx, bounds_.min.y + (j + 0.5) * size.y / res_.ny,
          bounds_.min.z + (k + 0.5) * size.z / res_.nz};
}

FieldSample VoxelField::sample(const Vec3& p, const Vec3& /*d*/) const {
  if (!bounds_.contains(p)) return {};
  const Vec3 size = bounds_.max - bounds_.min;
  const int dims[3] = {res_.nx, res_.ny, res_.nz};
  int lo[3];
  int hi[3];
  double frac[3];
  for (std::size_t a = 0; a < 3; ++a) {
    const double u = (p[a] - bounds_.min[a]) / size[a] * dims[a] - 0.5;
    const double clamped = std::clamp(u, 0.0, static_cast<double>(dims[a] - 1));
    const double f = std::floor(clamped);
    lo[a] = static_cast<int>(f);
    hi[a] = std::min(lo[a] + 1, dims[a] - 1);
    frac[a] = clamped - f;
  }
  FieldSample out;
  for (int corner = 0; corner < 8; ++corner) {
    const int i = (corner & 1) ? hi[0] : lo[0];
    const int j = (corner & 2) ? hi[1] : lo[1];
    const int k = (corner & 4) ? hi[2] : lo[2];
    const double w = ((corner & 1) ? frac[0] : 1.0 - frac[0]) * ((corner & 2) ? frac[1] : 1.0 - frac[1]) *
                     ((corner & 4) ? frac[2] : 1.0 - frac[2]);
    if (w == 0.0) continue;
    const std::size_t idx = index(i, j, k);
    out.sigma += w * density_[idx];
    out.color += Rgb{color_[idx * 3], color_[idx * 3 + 1], color_[idx * 3 + 2]} * w;
  }
  return out;
}

namespace {
constexpr char kVoxelMagic[] = "NVXF";
constexpr std::uint32_t kVoxelVersion = 1;
}  // namespace

VoxelField VoxelField::load(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::BinaryReader<FieldFormatError> r(bytes);
  r.expect_magic(kVoxelMagic);
  if (r.u32() != kVoxelVersion) throw FieldFormatError("unsupported voxel field version");
  Resolution res;
  res.nx = static_cast<int>(r.u32());
  res.ny = static_cast<int>(r.u32());
  res.nz = static_cast<int>(r.u32());
  if (res.nx <= 0 || res.ny <= 0 || res.nz <= 0 || res.count() > (1u << 28)) {
    throw FieldFormatError("voxel field declares an invalid resolution");
  }
  float b[6];
  r.f32s(b);
  if (r.remaining() != res.count() * 16) throw FieldFormatError("voxel payload size does not match resolution");
  std::vector<float> density(res.count());
  std::vector<float> color(res.count() * 3);
  r.f32s(density);
  r.f32s(color);
  try {
    return VoxelField(res, Aabb{{b[0], b[1], b[2]}, {b[3], b[4], b[5]}}, std::move(density), std::move(color));
  } catch (const std::invalid_argument& e) {
    throw FieldFormatError(e.what());
  }
}

void VoxelField::save(const std::filesystem::path& path) const {
  io::BinaryWriter w;
  w.magic(kVoxelMagic);
  w.u32(kVoxelVersion);
  w.u32(static_cast<std::uint32_t>(res_.nx));
  w.u32(static_cast<std::uint32_t>(res_.ny));
  w.u32(static_cast<std::uint32_t>(res_.nz));
  const float b[6] = {static_cast<float>(bounds_.min.x), static_cast<float>(bounds_.min.y),
                      static_cast<float>(bounds_.min.z), static_cast<float>(bounds_.max.x),
                      static_cast<float>(bounds_.max.y), static_cast<float>(bounds_.max.z)};
  w.f32s(b);
  w.f32s(density_);
  w.f32s(color_);
  w.write_file(path);
}

AnalyticRadiance::AnalyticRadiance(SdfPrimitive prim, AnalyticShading shading)
    : prim_(std::move(prim)), shading_(shading) {
  const auto b = sdf_bounds(prim_);
  if (!b) throw std::invalid_argument("analytic radiance needs a bounded primitive");
  const Vec3 pad{shading_.band, shading_.band, shading_.band};
  bounds_ = Aabb{b->min - pad, b->max + pad};
}

FieldSample AnalyticRadiance::sample(const Vec3& p, const Vec3& /*d*/) const {
  const double d = sdf_eval(prim_, p);
  FieldSample out;
  out.sigma = shading_.interior_density_slope * std::max(0.0, -d);
  if (std::abs(d) < shading_.band) out.sigma += shading_.surface_density;
  const Vec3 q = p / shading_.color_scale;
  out.color = {std::clamp((q.x + 1.0) * 0.5, 0.0, 1.0), std::clamp((q.y + 1.0) * 0.5, 0.0, 1.0),
               std::clamp((q.z + 1.0) * 0.5, 0.0, 1.0)};
  return out;
}

// ---------------------------------------------------------------------------------------------

namespace {

template <typename Visit>
void march(const RadianceField& field, const Ray& ray, double t_near, double t_far, int n_samples, Visit&& visit) {
  if (!(t_near < t_far)) throw std::invalid_argument("volume integration needs t_near < t_far");
  if (n_samples < 2) throw std::invalid_argument("volume integration needs at least two samples");
  const double delta = (t_far - t_near) / static_cast<double>(n_samples - 1);
  double transmittance = 1.0;
  for (int i = 0; i < n_samples; ++i) {
    const double t = t_near + delta * i;
    const FieldSample s = field.sample(ray.at(t), ray.direction);
    const double w = transmittance * -std::expm1(-s.sigma * delta);
    visit(t, w, s);
    transmittance *= std::exp(-s.sigma * delta);
  }
}

}  // namespace

std::vector<double> volume_weights(const RadianceField& field, const Ray& ray, double t_near, double t_far,
                                   int n_samples) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  march(field, ray, t_near, t_far, n_samples, [&](double, double w, const FieldSample&) { out.push_back(w); });
  return out;
}

VolumeDepth volume_depth(const RadianceField& field, const Ray& ray, double t_near, double t_far, int n_samples) {
  VolumeDepth out;
  const double dir_len = norm(ray.direction);
  march(field, ray, t_near, t_far, n_samples, [&](double t, double w, const FieldSample&) {
    out.depth += w * t * dir_len;
    out.alpha += w;
  });
  return out;
}

VolumeColor volume_render_color(const RadianceField& field, const Ray& ray, double t_near, double t_far,
                                int n_samples) {
  VolumeColor out;
  march(field, ray, t_near, t_far, n_samples, [&](double, double w, const FieldSample& s) {
    out.color += s.color * w;
    out.alpha += w;
  });
  return out;
}

AnalyticOracle::AnalyticOracle(SdfPrimitive prim, double t_max, Method method)
    : prim_(std::move(prim)), t_max_(t_max), method_(method) {
  const auto b = sdf_bounds(prim_);
  if (!b) throw std::invalid_argument("depth oracle geometry is unbounded");
  bounds_ = *b;
}

std::optional<double> AnalyticOracle::depth(const Ray& ray) const {
  if (method_ == Method::kAuto) {
    if (const auto exact = exact_intersect(prim_, ray, t_max_)) {
      return exact->hit ? std::optional<double>(exact->depth) : std::nullopt;
    }
  }
  const HitRecord h = sphere_trace(prim_, ray, t_max_);
  return h.hit ? std::optional<double>(h.depth) : std::nullopt;
}

VoxelOracle::VoxelOracle(std::shared_ptr<const VoxelField> field, int n_samples, double mask_threshold)
    : field_(std::move(field)), n_samples_(n_samples), mask_threshold_(mask_threshold) {
  if (!field_) throw std::invalid_argument("voxel oracle needs a field");
}

VolumeDepth VoxelOracle::integrate(const Ray& ray) const {
  const auto span = clip_ray_to_aabb(ray, field_->bounds());
  if (!span || !(span->t_exit > span->t_enter)) return {};
  return volume_depth(*field_, ray, span->t_enter, span->t_exit, n_samples_);
}

std::optional<double> VoxelOracle::depth(const Ray& ray) const {
  const VolumeDepth v = integrate(ray);
  if (!(v.alpha > mask_threshold_)) return std::nullopt;
  return v.depth;
}

}  // namespace nedf
