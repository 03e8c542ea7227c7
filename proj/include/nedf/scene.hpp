// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

// JSON scene files: camera, lights, objects with geometry / depth model / transform / animation,
// and render overrides. Schema: docs/scene-format.md.

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "nedf/depth_field.hpp"
#include "nedf/fields.hpp"
#include "nedf/pipeline.hpp"

namespace nedf {

/// Validation failure; the message starts with the offending field path, e.g. "objects[2].transform.scale: ...".
class SceneError : public std::invalid_argument {
 public:
  SceneError(const std::string& path, const std::string& what);
  const std::string& field_path() const { return path_; }

 private:
  std::string path_;
};

inline constexpr int kSceneVersion = 1;

struct TransformSpec {
  Vec3 translation;
  Quat rotation;  // stored as given; normalized when converted
  double scale = 1.0;

  RigidTransform to_rigid() const { return RigidTransform::from_quat(rotation, translation, scale); }
  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

struct Keyframe {
  double time = 0.0;  // seconds
  TransformSpec transform;
  friend bool operator==(const Keyframe&, const Keyframe&) = default;
};

struct AnimationTrack {
  std::vector<Keyframe> keyframes;  // strictly increasing times
  friend bool operator==(const AnimationTrack&, const AnimationTrack&) = default;
};

/// Clamped outside the key range; lerp translation, slerp rotation, log-linear scale inside it.
RigidTransform evaluate_animation(const AnimationTrack& track, double t);

struct CameraSpec {
  Vec3 position{0, 0, -5};
  Vec3 look_at{0, 0, 0};
  Vec3 up{0, 1, 0};
  double fov_y_deg = 45.0;
  int width = 128;
  int height = 128;
  double near = 0.01;
  double far = 100.0;

  Camera to_camera() const;
  friend bool operator==(const CameraSpec&, const CameraSpec&) = default;
};

struct VoxelGeometry {
  std::string path;  // as written in the file, relative to the scene directory
};

struct GeometrySpec {
  nlohmann::json canonical;  // validated, defaults filled, numbers as written
  std::variant<SdfPrimitive, VoxelGeometry> shape;
};

/// Validates a geometry node and fills its defaults.
GeometrySpec parse_geometry(const nlohmann::json& j, const std::string& path);

struct ObjectSpec {
  ObjectId id = 0;
  GeometrySpec geometry;
  std::optional<std::string> nedf_model;  // absent: exact oracle depth from the geometry
  TransformSpec transform;
  std::optional<AnimationTrack> animation;
  std::optional<AnalyticShading> shading;  // analytic geometry only
};

struct RenderOverrides {
  std::optional<double> sigma_threshold;
  std::optional<bool> resample;
  std::optional<bool> shadows;
  std::optional<double> shadow_epsilon;
  std::optional<double> shadow_intensity;
  std::optional<int> volume_samples;
};

struct SceneDescription {
  int version = kSceneVersion;
  CameraSpec camera;
  Rgb clear_color;
  std::vector<Light> lights;
  std::vector<ObjectSpec> objects;
  RenderOverrides render;
  std::filesystem::path base_dir;  // resolves relative resource paths; not serialized

  /// Engine defaults with the scene's explicit fields applied.
  RenderConfig render_config() const;
  const ObjectSpec* find(ObjectId id) const;
  ObjectSpec* find(ObjectId id);
};

/// Parses and validates a document. Resource files are checked for existence when `check_files`.
SceneDescription parse_scene(const nlohmann::json& doc, const std::filesystem::path& base_dir = {},
                             bool check_files = true);
SceneDescription load_scene(const std::filesystem::path& path);
nlohmann::json scene_to_json(const SceneDescription& scene);
/// Canonical text: every field explicit, keys sorted, two-space indent.
std::string serialize_scene(const SceneDescription& scene);

// Field-level codecs shared with the service API.
TransformSpec parse_transform(const nlohmann::json& j, const std::string& path);
nlohmann::json transform_to_json(const TransformSpec& t);
CameraSpec parse_camera(const nlohmann::json& j, const std::string& path);
nlohmann::json camera_to_json(const CameraSpec& c);
Light parse_light(const nlohmann::json& j, const std::string& path);
nlohmann::json light_to_json(const Light& l);

/// Loads each model / voxel file once and hands out shared handles.
class ResourceCache {
 public:
  std::shared_ptr<const NedfModel> model(const std::filesystem::path& path);
  std::shared_ptr<const VoxelField> voxel(const std::filesystem::path& path);
  std::size_t models_loaded() const;
  std::size_t voxels_loaded() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::filesystem::path, std::shared_ptr<const NedfModel>> models_;
  std::map<std::filesystem::path, std::shared_ptr<const VoxelField>> voxels_;
};

/// Per-object depth and radiance handles; identical geometry or model paths share one handle.
class SceneAssets {
 public:
  SceneAssets(const SceneDescription& scene, ResourceCache& cache);

  /// Instances with transforms evaluated at time `t` (animation tracks), or the static
  /// transforms when `t` is empty.
  std::vector<SceneInstance> instances(const SceneDescription& scene, std::optional<double> t = std::nullopt) const;

  struct Handles {
    std::shared_ptr<const DepthField> depth;
    std::shared_ptr<const RadianceField> radiance;
    std::shared_ptr<const DepthOracle> oracle;
  };
  const Handles& handles(ObjectId id) const;
  /// Rebuilds the handles of one object after its spec changed.
  void refresh(const SceneDescription& scene, ObjectId id, ResourceCache& cache);

 private:
  Handles build(const SceneDescription& scene, const ObjectSpec& spec, ResourceCache& cache);

  std::map<ObjectId, Handles> handles_;
  std::map<std::string, Handles> by_geometry_;  // key: canonical geometry + shading + model path
};

}  // namespace nedf
