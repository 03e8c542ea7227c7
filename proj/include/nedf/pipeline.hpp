// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

// Deferred compositing of depth-field objects: depth/ID generation, one-sample shading with
// optional volume resampling of outliers, and per-pixel shadow rays.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nedf/depth_field.hpp"
#include "nedf/fields.hpp"
#include "nedf/geometry.hpp"

namespace nedf {

using ObjectId = std::int32_t;
inline constexpr ObjectId kNoObject = -1;

/// Pinhole camera. Orientation columns are the camera's right, up and backward axes in world
/// space; the camera looks along -column(2).
struct Camera {
  Vec3 position;
  Mat3 orientation;
  double fov_y = 0.8;  // radians
  int width = 64;
  int height = 64;
  double near = 0.01;
  double far = 100.0;

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y, int width, int height,
                        double near = 0.01, double far = 100.0);
  /// Throws std::invalid_argument on a bad FOV, clip range, size or orientation.
  void validate() const;
  Vec3 forward() const { return -orientation.column(2); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  friend bool operator==(const Camera&, const Camera&) = default;
};

/// Unit rays through pixel centers, row-major from the top-left pixel.
std::vector<Ray> generate_primary_rays(const Camera& camera);

struct FrameBuffers {
  int width = 0;
  int height = 0;
  std::vector<double> depth;   // +inf where nothing was hit
  std::vector<ObjectId> id;    // kNoObject where nothing was hit
  std::vector<Rgb> rgb;
  std::vector<double> shadow;  // 1 = lit
  std::map<ObjectId, std::vector<double>> per_object_depth;

  static FrameBuffers make(int width, int height);
  /// depth = inf, id = none, rgb = black, shadow = 1; per-object planes dropped.
  void clear();
  std::size_t size() const { return depth.size(); }
};

struct SceneInstance {
  ObjectId id = 0;
  RigidTransform transform;
  std::shared_ptr<const DepthField> depth;
  std::shared_ptr<const RadianceField> radiance;
};

struct PointLight {
  Vec3 position;
  std::optional<double> beta;  // falls back to RenderConfig::shadow_intensity
  friend bool operator==(const PointLight&, const PointLight&) = default;
};

/// Parallel light; `direction` is the direction the light travels.
struct DirectionalLight {
  Vec3 direction{0, -1, 0};
  std::optional<double> beta;
  friend bool operator==(const DirectionalLight&, const DirectionalLight&) = default;
};

using Light = std::variant<PointLight, DirectionalLight>;

struct RenderConfig {
  std::optional<double> sigma_threshold;  // default: each radiance field's own calibration
  bool resample = false;
  bool shadows = true;
  std::optional<double> shadow_epsilon;   // default: default_shadow_epsilon(objects)
  double shadow_intensity = 0.4;          // β
  Rgb clear_color;
  int volume_samples = 128;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

/// Two quantization steps of the coarsest object: 2 · max(s · 2l / (N_c N_f)).
double default_shadow_epsilon(std::span<const SceneInstance> objects);

/// Throws std::invalid_argument on duplicate ids, kNoObject ids or missing fields.
void validate_instances(std::span<const SceneInstance> objects);

/// Step 1: per-object depth planes, then min/argmin (earlier object wins exact ties).
void nedf_generation_step(std::span<const SceneInstance> objects, const Camera& camera, FrameBuffers& buffers);

/// Rebuilds depth/id from the cached per-object planes in object order.
void combine_object_planes(std::span<const SceneInstance> objects, FrameBuffers& buffers);

struct ReuseReport {
  std::vector<ObjectId> recomputed;
  bool fell_back = false;  // some unchanged object had no cached plane
};

/// Recomputes only `changed` planes and recombines; identical to nedf_generation_step.
ReuseReport reuse_buffers(std::span<const SceneInstance> objects, const Camera& camera, FrameBuffers& buffers,
                          const std::set<ObjectId>& changed);

struct ShadingStats {
  std::size_t shaded = 0;
  std::size_t outliers = 0;
  std::size_t resampled = 0;
};

/// Step 2. Pixels owned by an id not in `objects` (external imports) keep their color.
ShadingStats deferred_shading_step(std::span<const SceneInstance> objects, const Camera& camera,
                                   FrameBuffers& buffers, const RenderConfig& config);

/// Local-space interval used when an outlier pixel is re-rendered volumetrically.
std::optional<RayInterval> resample_interval(const SceneInstance& object, const Camera& camera, const Ray& local_ray);

/// Step 3. Multiplies each light's attenuation into buffers.shadow for pixels with finite depth.
void shadow_step(std::span<const SceneInstance> objects, const Camera& camera, std::span<const Light> lights,
                 FrameBuffers& buffers, const RenderConfig& config);

/// Overwrites depth/id/rgb wherever the external depth is strictly closer.
void import_external_gbuffer(FrameBuffers& buffers, std::span<const double> depth, std::span<const Rgb> color,
                             ObjectId pseudo_id);

struct ExternalGBuffer {
  std::vector<double> depth;
  std::vector<Rgb> color;
  ObjectId pseudo_id = 1 << 30;
};

struct StepTimings {
  double generation = 0.0;  // seconds
  double shading = 0.0;
  double shadow = 0.0;
  double total = 0.0;
  double resample_ratio = 0.0;  // resampled / shaded pixels
};

struct Frame {
  FrameBuffers buffers;
  std::vector<Rgb> image;  // rgb × shadow
  StepTimings timings;
  ShadingStats shading;
};

/// Steps 1 → 2 → (external import) → 3, then rgb × shadow.
Frame compose_frame(std::span<const SceneInstance> objects, const Camera& camera, std::span<const Light> lights,
                    const RenderConfig& config, const ExternalGBuffer* external = nullptr);

/// Steps 2 → (external import) → 3 on buffers whose step 1 is already current.
void finish_frame(std::span<const SceneInstance> objects, const Camera& camera, std::span<const Light> lights,
                  const RenderConfig& config, Frame& frame, const ExternalGBuffer* external = nullptr);

/// Runs compose_frame and reports the per-step wall-clock split as JSON.
std::string step_timing_report(std::span<const SceneInstance> objects, const Camera& camera,
                               std::span<const Light> lights, const RenderConfig& config);
std::string timings_to_json(const StepTimings& t);

}  // namespace nedf
