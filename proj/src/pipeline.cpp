// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include "nedf/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include <json.hpp>

#include "nedf/parallel.hpp"

namespace nedf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Fixed query batch size: per-row network results never depend on thread count.
constexpr std::size_t kQueryChunk = 4096;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const SceneInstance* find_object(std::span<const SceneInstance> objects, ObjectId id) {
  for (const auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

/// World-space first-hit depth of one object for every ray (inf on a miss).
std::vector<double> object_depth_plane(const SceneInstance& object, std::span<const Ray> rays) {
  std::vector<double> plane(rays.size(), kInf);
  const std::size_t chunks = (rays.size() + kQueryChunk - 1) / kQueryChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kQueryChunk;
    const std::size_t count = std::min(kQueryChunk, rays.size() - begin);
    std::vector<WorldHit> hits(count);
    query_depth_world(*object.depth, rays.subspan(begin, count), object.transform, hits);
    for (std::size_t i = 0; i < count; ++i) {
      if (hits[i].alpha) plane[begin + i] = hits[i].depth;
    }
  });
  return plane;
}

}  // namespace

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y, int width, int height,
                       double near, double far) {
  const Vec3 forward = normalize(target - eye);
  Vec3 right = cross(forward, up);
  if (norm(right) < 1e-12) throw std::invalid_argument("camera up vector is parallel to the view direction");
  right = normalize(right);
  const Vec3 true_up = cross(right, forward);
  Camera cam{eye, Mat3::from_columns(right, true_up, -forward), fov_y, width, height, near, far};
  cam.validate();
  return cam;
}

void Camera::validate() const {
  if (!(fov_y > 0.0 && fov_y < std::numbers::pi)) {
    throw std::invalid_argument("camera fov must be in (0, pi) radians, got " + std::to_string(fov_y));
  }
  if (width < 1 || height < 1) throw std::invalid_argument("camera width and height must be >= 1");
  if (!(near >= 0.0 && near < far) || !std::isfinite(far)) {
    throw std::invalid_argument("camera clip range needs 0 <= near < far < inf");
  }
  if (!is_finite(position)) throw std::invalid_argument("camera position is not finite");
  if (!is_rotation(orientation, 1e-6)) throw std::invalid_argument("camera orientation is not a rotation");
}

std::vector<Ray> generate_primary_rays(const Camera& camera) {
  camera.validate();
  const double tan_half = std::tan(camera.fov_y * 0.5);
  const double aspect = static_cast<double>(camera.width) / camera.height;
  const Vec3 right = camera.orientation.column(0);
  const Vec3 up = camera.orientation.column(1);
  const Vec3 forward = camera.forward();
  std::vector<Ray> rays;
  rays.reserve(camera.pixel_count());
  for (int j = 0; j < camera.height; ++j) {
    const double y = (1.0 - 2.0 * (j + 0.5) / camera.height) * tan_half;
    for (int i = 0; i < camera.width; ++i) {
      const double x = (2.0 * (i + 0.5) / camera.width - 1.0) * tan_half * aspect;
      rays.push_back(Ray::make(camera.position, forward + right * x + up * y));
    }
  }
  return rays;
}

FrameBuffers FrameBuffers::make(int width, int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("frame buffers need positive dimensions");
  FrameBuffers b;
  b.width = width;
  b.height = height;
  b.clear();
  return b;
}

void FrameBuffers::clear() {
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  depth.assign(n, kInf);
  id.assign(n, kNoObject);
  rgb.assign(n, Rgb{});
  shadow.assign(n, 1.0);
  per_object_depth.clear();
}

void RenderConfig::validate() const {
  if (sigma_threshold && !(*sigma_threshold >= 0.0)) throw std::invalid_argument("sigma_threshold must be >= 0");
  if (shadow_epsilon && !(*shadow_epsilon > 0.0)) throw std::invalid_argument("shadow epsilon must be > 0");
  if (!(shadow_intensity > 0.0 && shadow_intensity < 1.0)) {
    throw std::invalid_argument("shadow intensity beta must be in (0, 1)");
  }
  if (volume_samples < 2) throw std::invalid_argument("volume_samples must be >= 2");
}

double default_shadow_epsilon(std::span<const SceneInstance> objects) {
  double worst = 0.0;
  for (const auto& o : objects) worst = std::max(worst, o.transform.scale() * o.depth->fine_bin_width());
  return worst > 0.0 ? 2.0 * worst : 1e-4;
}

void validate_instances(std::span<const SceneInstance> objects) {
  std::set<ObjectId> seen;
  for (const auto& o : objects) {
    if (o.id == kNoObject) throw std::invalid_argument("object id " + std::to_string(kNoObject) + " is reserved");
    if (!seen.insert(o.id).second) throw std::invalid_argument("duplicate object id " + std::to_string(o.id));
    if (!o.depth) throw std::invalid_argument("object " + std::to_string(o.id) + " has no depth field");
    if (!o.radiance) throw std::invalid_argument("object " + std::to_string(o.id) + " has no radiance field");
  }
}

void combine_object_planes(std::span<const SceneInstance> objects, FrameBuffers& buffers) {
  const std::size_t n = buffers.size();
  std::fill(buffers.depth.begin(), buffers.depth.end(), kInf);
  std::fill(buffers.id.begin(), buffers.id.end(), kNoObject);
  for (const auto& o : objects) {
    const auto it = buffers.per_object_depth.find(o.id);
    if (it == buffers.per_object_depth.end()) continue;
    const auto& plane = it->second;
    for (std::size_t i = 0; i < n; ++i) {
      if (plane[i] < buffers.depth[i]) {
        buffers.depth[i] = plane[i];
        buffers.id[i] = o.id;
      }
    }
  }
}

void nedf_generation_step(std::span<const SceneInstance> objects, const Camera& camera, FrameBuffers& buffers) {
  validate_instances(objects);
  if (buffers.width != camera.width || buffers.height != camera.height) {
    buffers = FrameBuffers::make(camera.width, camera.height);
  }
  buffers.clear();
  const std::vector<Ray> rays = generate_primary_rays(camera);
  for (const auto& o : objects) buffers.per_object_depth[o.id] = object_depth_plane(o, rays);
  combine_object_planes(objects, buffers);
}

ReuseReport reuse_buffers(std::span<const SceneInstance> objects, const Camera& camera, FrameBuffers& buffers,
                          const std::set<ObjectId>& changed) {
  validate_instances(objects);
  ReuseReport report;
  bool cache_ok = buffers.width == camera.width && buffers.height == camera.height;
  for (const auto& o : objects) {
    if (changed.count(o.id) == 0 && buffers.per_object_depth.count(o.id) == 0) cache_ok = false;
  }
  if (!cache_ok) {
    report.fell_back = true;
    nedf_generation_step(objects, camera, buffers);
    for (const auto& o : objects) report.recomputed.push_back(o.id);
    return report;
  }
  // Planes of objects no longer in the scene must not leak into the minimum.
  std::erase_if(buffers.per_object_depth, [&](const auto& kv) { return find_object(objects, kv.first) == nullptr; });
  std::vector<Ray> rays;
  for (const auto& o : objects) {
    if (changed.count(o.id) == 0) continue;
    if (rays.empty()) rays = generate_primary_rays(camera);
    buffers.per_object_depth[o.id] = object_depth_plane(o, rays);
    report.recomputed.push_back(o.id);
  }
  combine_object_planes(objects, buffers);
  return report;
}

std::optional<RayInterval> resample_interval(const SceneInstance& object, const Camera& camera, const Ray& local_ray) {
  auto span = clip_ray_to_aabb(local_ray, object.radiance->bounds());
  if (!span) return std::nullopt;
  const double s = object.transform.scale();
  span->t_enter = std::max(span->t_enter, camera.near / s);
  span->t_exit = std::min(span->t_exit, camera.far / s);
  if (!(span->t_enter < span->t_exit)) return std::nullopt;
  return span;
}

ShadingStats deferred_shading_step(std::span<const SceneInstance> objects, const Camera& camera,
                                   FrameBuffers& buffers, const RenderConfig& config) {
  config.validate();
  const std::vector<Ray> rays = generate_primary_rays(camera);
  std::unordered_map<ObjectId, const SceneInstance*> by_id;
  for (const auto& o : objects) by_id[o.id] = &o;

  const std::size_t n = buffers.size();
  std::vector<std::uint8_t> outlier(n, 0);
  std::vector<std::uint8_t> resampled(n, 0);
  std::vector<std::uint8_t> shaded(n, 0);
  const std::size_t chunks = (n + kQueryChunk - 1) / kQueryChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t end = std::min(n, (c + 1) * kQueryChunk);
    for (std::size_t i = c * kQueryChunk; i < end; ++i) {
      if (buffers.id[i] == kNoObject) {
        buffers.rgb[i] = config.clear_color;
        continue;
      }
      const auto it = by_id.find(buffers.id[i]);
      if (it == by_id.end()) continue;
      const SceneInstance& obj = *it->second;
      shaded[i] = 1;
      const Ray& ray = rays[i];
      const Vec3 x = ray.at(buffers.depth[i]);
      const Ray local{obj.transform.inverse_point(x), normalize(obj.transform.inverse_direction(ray.direction))};
      const FieldSample sample = radiance_at(*obj.radiance, local.origin, local.direction);
      const double threshold = config.sigma_threshold.value_or(obj.radiance->default_sigma_threshold());
      buffers.rgb[i] = sample.color;
      if (sample.sigma >= threshold) continue;
      outlier[i] = 1;
      if (!config.resample) continue;
      const Ray local_ray = transform_ray_to_local(obj.transform, ray);
      if (const auto span = resample_interval(obj, camera, local_ray)) {
        buffers.rgb[i] =
            volume_render_color(*obj.radiance, local_ray, span->t_enter, span->t_exit, config.volume_samples).color;
        resampled[i] = 1;
      }
    }
  });
  ShadingStats stats;
  for (std::size_t i = 0; i < n; ++i) {
    stats.shaded += shaded[i];
    stats.outliers += outlier[i];
    stats.resampled += resampled[i];
  }
  return stats;
}

namespace {

struct BoundingSphere {
  Vec3 center;
  double radius = 0.0;
};

BoundingSphere world_bounds(std::span<const SceneInstance> objects) {
  bool first = true;
  Aabb box{};
  for (const auto& o : objects) {
    for (const Vec3& c : o.depth->relaxed_box().corners()) {
      const Vec3 w = o.transform.apply_point(c);
      box = first ? Aabb{w, w} : box.merged(Aabb{w, w});
      first = false;
    }
  }
  return {box.center(), norm(box.half_extents())};
}

}  // namespace

void shadow_step(std::span<const SceneInstance> objects, const Camera& camera, std::span<const Light> lights,
                 FrameBuffers& buffers, const RenderConfig& config) {
  config.validate();
  if (lights.empty() || objects.empty()) return;
  const double eps = config.shadow_epsilon.value_or(default_shadow_epsilon(objects));
  const std::vector<Ray> camera_rays = generate_primary_rays(camera);
  const BoundingSphere scene_sphere = world_bounds(objects);

  std::vector<std::size_t> receivers;
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    if (std::isfinite(buffers.depth[i])) receivers.push_back(i);
  }
  if (receivers.empty()) return;

  for (const Light& light : lights) {
    const double beta = std::visit([&](const auto& l) { return l.beta.value_or(config.shadow_intensity); }, light);
    if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("light beta must be in (0, 1)");
    std::vector<Ray> shadow_rays;
    std::vector<double> light_distance;
    std::vector<std::size_t> pixels;
    shadow_rays.reserve(receivers.size());
    for (std::size_t i : receivers) {
      const Vec3 x = camera_rays[i].at(buffers.depth[i]);
      Vec3 source;
      if (const auto* p = std::get_if<PointLight>(&light)) {
        source = p->position;
      } else {
        // Parallel light as a point source placed beyond every object along the light direction.
        const Vec3 dir = normalize(std::get<DirectionalLight>(light).direction);
        const double reach = norm(x - scene_sphere.center) + scene_sphere.radius + 1.0;
        source = x - dir * reach;
      }
      const Vec3 to_x = x - source;
      const double dist = norm(to_x);
      if (!(dist > 0.0)) continue;
      shadow_rays.push_back(Ray{source, to_x / dist});
      light_distance.push_back(dist);
      pixels.push_back(i);
    }
    std::vector<double> nearest(shadow_rays.size(), kInf);
    for (const auto& o : objects) {
      const std::vector<double> plane = object_depth_plane(o, shadow_rays);
      for (std::size_t k = 0; k < plane.size(); ++k) nearest[k] = std::min(nearest[k], plane[k]);
    }
    for (std::size_t k = 0; k < pixels.size(); ++k) {
      if (nearest[k] + eps < light_distance[k]) buffers.shadow[pixels[k]] *= beta;
    }
  }
}

void import_external_gbuffer(FrameBuffers& buffers, std::span<const double> depth, std::span<const Rgb> color,
                             ObjectId pseudo_id) {
  if (depth.size() != buffers.size() || color.size() != buffers.size()) {
    throw std::invalid_argument("external G-buffer is " + std::to_string(depth.size()) + " depth / " +
                                std::to_string(color.size()) + " color pixels, frame has " +
                                std::to_string(buffers.size()));
  }
  if (pseudo_id == kNoObject) throw std::invalid_argument("external pseudo id must not be the reserved none id");
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    if (depth[i] < buffers.depth[i]) {
      buffers.depth[i] = depth[i];
      buffers.id[i] = pseudo_id;
      buffers.rgb[i] = color[i];
    }
  }
}

void finish_frame(std::span<const SceneInstance> objects, const Camera& camera, std::span<const Light> lights,
                  const RenderConfig& config, Frame& frame, const ExternalGBuffer* external) {
  auto t0 = Clock::now();
  frame.shading = deferred_shading_step(objects, camera, frame.buffers, config);
  if (external) import_external_gbuffer(frame.buffers, external->depth, external->color, external->pseudo_id);
  frame.timings.shading = seconds_since(t0);

  t0 = Clock::now();
  std::fill(frame.buffers.shadow.begin(), frame.buffers.shadow.end(), 1.0);
  if (config.shadows) shadow_step(objects, camera, lights, frame.buffers, config);
  frame.timings.shadow = seconds_since(t0);

  frame.image.resize(frame.buffers.size());
  for (std::size_t i = 0; i < frame.image.size(); ++i) frame.image[i] = frame.buffers.rgb[i] * frame.buffers.shadow[i];
  frame.timings.total = frame.timings.generation + frame.timings.shading + frame.timings.shadow;
  frame.timings.resample_ratio =
      frame.shading.shaded ? static_cast<double>(frame.shading.resampled) / frame.shading.shaded : 0.0;
}

Frame compose_frame(std::span<const SceneInstance> objects, const Camera& camera, std::span<const Light> lights,
                    const RenderConfig& config, const ExternalGBuffer* external) {
  config.validate();
  Frame frame;
  frame.buffers = FrameBuffers::make(camera.width, camera.height);
  const auto t0 = Clock::now();
  nedf_generation_step(objects, camera, frame.buffers);
  frame.timings.generation = seconds_since(t0);
  finish_frame(objects, camera, lights, config, frame, external);
  return frame;
}

std::string timings_to_json(const StepTimings& t) {
  nlohmann::json j;
  j["generation_s"] = t.generation;
  j["shading_s"] = t.shading;
  j["shadow_s"] = t.shadow;
  j["total_s"] = t.total;
  j["resample_ratio"] = t.resample_ratio;
  return j.dump();
}

std::string step_timing_report(std::span<const SceneInstance> objects, const Camera& camera,
                               std::span<const Light> lights, const RenderConfig& config) {
  return timings_to_json(compose_frame(objects, camera, lights, config).timings);
}

}  // namespace nedf
