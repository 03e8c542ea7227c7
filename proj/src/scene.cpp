// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include "nedf/scene.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

using nlohmann::json;

namespace nedf {

SceneError::SceneError(const std::string& path, const std::string& what)
    : std::invalid_argument(path.empty() ? what : path + ": " + what), path_(path) {}

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw SceneError(path, "expected an object");
}

void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw SceneError(join(path, key), "unknown field");
  }
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw SceneError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw SceneError(path, "must be finite");
  return v;
}

double number_at(const json& j, const char* key, const std::string& path, std::optional<double> fallback) {
  if (!j.contains(key)) {
    if (!fallback) throw SceneError(join(path, key), "required field missing");
    return *fallback;
  }
  return number(j.at(key), join(path, key));
}

int integer_at(const json& j, const char* key, const std::string& path, std::optional<int> fallback) {
  if (!j.contains(key)) {
    if (!fallback) throw SceneError(join(path, key), "required field missing");
    return *fallback;
  }
  const json& v = j.at(key);
  if (!v.is_number_integer()) throw SceneError(join(path, key), "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw SceneError(join(path, key), "integer out of range");
  }
  return static_cast<int>(x);
}

bool boolean(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw SceneError(path, "expected true or false");
  return j.get<bool>();
}

Vec3 vec3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw SceneError(path, "expected an array of 3 numbers");
  return {number(j[0], index(path, 0)), number(j[1], index(path, 1)), number(j[2], index(path, 2))};
}

Vec3 vec3_at(const json& j, const char* key, const std::string& path, std::optional<Vec3> fallback) {
  if (!j.contains(key)) {
    if (!fallback) throw SceneError(join(path, key), "required field missing");
    return *fallback;
  }
  return vec3(j.at(key), join(path, key));
}

json to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

double positive(double v, const std::string& path) {
  if (!(v > 0.0)) throw SceneError(path, "must be > 0");
  return v;
}

Rgb color(const json& j, const std::string& path) {
  const Vec3 c = vec3(j, path);
  for (std::size_t i = 0; i < 3; ++i) {
    if (c[i] < 0.0 || c[i] > 1.0) throw SceneError(index(path, i), "color components must be in [0, 1]");
  }
  return {c.x, c.y, c.z};
}

json to_json(const Rgb& c) { return json::array({c.r, c.g, c.b}); }

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SceneError("", "cannot open scene file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Parses a primitive node, returning its canonical JSON alongside the built shape.
std::pair<json, SdfPrimitive> primitive(const json& j, const std::string& path) {
  require_object(j, path);
  if (!j.contains("type") || !j.at("type").is_string()) throw SceneError(join(path, "type"), "expected a type string");
  const std::string type = j.at("type").get<std::string>();
  json c;
  c["type"] = type;
  try {
    if (type == "sphere") {
      reject_unknown(j, path, {"type", "center", "radius"});
      const Vec3 center = vec3_at(j, "center", path, Vec3{});
      const double r = positive(number_at(j, "radius", path, std::nullopt), join(path, "radius"));
      c["center"] = to_json(center);
      c["radius"] = r;
      return {c, SdfPrimitive::sphere(center, r)};
    }
    if (type == "box") {
      reject_unknown(j, path, {"type", "center", "half_extents"});
      const Vec3 center = vec3_at(j, "center", path, Vec3{});
      const Vec3 h = vec3_at(j, "half_extents", path, std::nullopt);
      if (!(h.x > 0 && h.y > 0 && h.z > 0)) throw SceneError(join(path, "half_extents"), "must all be > 0");
      c["center"] = to_json(center);
      c["half_extents"] = to_json(h);
      return {c, SdfPrimitive::box(center, h)};
    }
    if (type == "torus") {
      reject_unknown(j, path, {"type", "center", "major_radius", "minor_radius"});
      const Vec3 center = vec3_at(j, "center", path, Vec3{});
      const double big = positive(number_at(j, "major_radius", path, std::nullopt), join(path, "major_radius"));
      const double small = positive(number_at(j, "minor_radius", path, std::nullopt), join(path, "minor_radius"));
      c["center"] = to_json(center);
      c["major_radius"] = big;
      c["minor_radius"] = small;
      return {c, SdfPrimitive::torus(center, big, small)};
    }
    if (type == "plane") {
      reject_unknown(j, path, {"type", "normal", "offset"});
      const Vec3 n = vec3_at(j, "normal", path, std::nullopt);
      if (std::abs(norm(n) - 1.0) > 1e-6) throw SceneError(join(path, "normal"), "must be unit length");
      const double offset = number_at(j, "offset", path, 0.0);
      c["normal"] = to_json(n);
      c["offset"] = offset;
      return {c, SdfPrimitive::plane(n, offset)};
    }
    if (type == "union") {
      reject_unknown(j, path, {"type", "children"});
      if (!j.contains("children") || !j.at("children").is_array() || j.at("children").empty()) {
        throw SceneError(join(path, "children"), "expected a non-empty array");
      }
      std::vector<SdfPrimitive> kids;
      c["children"] = json::array();
      for (std::size_t i = 0; i < j.at("children").size(); ++i) {
        auto [kid_json, kid] = primitive(j.at("children")[i], index(join(path, "children"), i));
        c["children"].push_back(kid_json);
        kids.push_back(std::move(kid));
      }
      return {c, SdfPrimitive::make_union(std::move(kids))};
    }
    if (type == "transformed") {
      reject_unknown(j, path, {"type", "child", "transform"});
      if (!j.contains("child")) throw SceneError(join(path, "child"), "required field missing");
      auto [kid_json, kid] = primitive(j.at("child"), join(path, "child"));
      const TransformSpec t = parse_transform(j.contains("transform") ? j.at("transform") : json::object(),
                                              join(path, "transform"));
      c["child"] = kid_json;
      c["transform"] = transform_to_json(t);
      return {c, SdfPrimitive::transformed(std::move(kid), t.to_rigid())};
    }
  } catch (const SceneError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw SceneError(path, e.what());
  }
  throw SceneError(join(path, "type"), "unknown primitive type \"" + type + "\"");
}

AnalyticShading parse_shading(const json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"interior_density_slope", "surface_density", "band", "color_scale"});
  AnalyticShading s;
  s.interior_density_slope = number_at(j, "interior_density_slope", path, s.interior_density_slope);
  s.surface_density = positive(number_at(j, "surface_density", path, s.surface_density), join(path, "surface_density"));
  s.band = positive(number_at(j, "band", path, s.band), join(path, "band"));
  s.color_scale = positive(number_at(j, "color_scale", path, s.color_scale), join(path, "color_scale"));
  if (s.interior_density_slope < 0.0) throw SceneError(join(path, "interior_density_slope"), "must be >= 0");
  return s;
}

json shading_to_json(const AnalyticShading& s) {
  return {{"interior_density_slope", s.interior_density_slope},
          {"surface_density", s.surface_density},
          {"band", s.band},
          {"color_scale", s.color_scale}};
}

AnimationTrack parse_animation(const json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"keyframes"});
  const std::string kp = join(path, "keyframes");
  if (!j.contains("keyframes") || !j.at("keyframes").is_array() || j.at("keyframes").empty()) {
    throw SceneError(kp, "expected a non-empty array");
  }
  AnimationTrack track;
  for (std::size_t i = 0; i < j.at("keyframes").size(); ++i) {
    const json& k = j.at("keyframes")[i];
    const std::string p = index(kp, i);
    require_object(k, p);
    reject_unknown(k, p, {"time", "translation", "rotation_quat", "scale"});
    Keyframe key;
    key.time = number_at(k, "time", p, std::nullopt);
    json t = k;
    t.erase("time");
    key.transform = parse_transform(t, p);
    if (!track.keyframes.empty() && !(key.time > track.keyframes.back().time)) {
      throw SceneError(join(p, "time"), "keyframe times must be strictly increasing");
    }
    track.keyframes.push_back(key);
  }
  return track;
}

json animation_to_json(const AnimationTrack& a) {
  json keys = json::array();
  for (const auto& k : a.keyframes) {
    json kj = transform_to_json(k.transform);
    kj["time"] = k.time;
    keys.push_back(kj);
  }
  return {{"keyframes", keys}};
}

}  // namespace

GeometrySpec parse_geometry(const json& j, const std::string& path) {
  require_object(j, path);
  if (j.contains("type") && j.at("type") == "voxel") {
    reject_unknown(j, path, {"type", "path"});
    if (!j.contains("path") || !j.at("path").is_string() || j.at("path").get<std::string>().empty()) {
      throw SceneError(join(path, "path"), "expected a non-empty file path");
    }
    const std::string file = j.at("path").get<std::string>();
    return GeometrySpec{json{{"type", "voxel"}, {"path", file}}, VoxelGeometry{file}};
  }
  auto [canonical, prim] = primitive(j, path);
  if (!sdf_bounds(prim)) throw SceneError(path, "object geometry must be bounded (planes only inside finite unions)");
  return GeometrySpec{canonical, std::move(prim)};
}

TransformSpec parse_transform(const json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"translation", "rotation_quat", "scale"});
  TransformSpec t;
  t.translation = vec3_at(j, "translation", path, Vec3{});
  if (j.contains("rotation_quat")) {
    const json& q = j.at("rotation_quat");
    const std::string qp = join(path, "rotation_quat");
    if (!q.is_array() || q.size() != 4) throw SceneError(qp, "expected [w, x, y, z]");
    t.rotation = {number(q[0], index(qp, 0)), number(q[1], index(qp, 1)), number(q[2], index(qp, 2)),
                  number(q[3], index(qp, 3))};
    if (std::abs(t.rotation.norm() - 1.0) > 1e-6) {
      throw SceneError(qp, "quaternion must be unit length (|q| = " + std::to_string(t.rotation.norm()) + ")");
    }
  }
  t.scale = number_at(j, "scale", path, 1.0);
  if (!(t.scale > 0.0)) throw SceneError(join(path, "scale"), "must be > 0 (uniform scale only)");
  return t;
}

json transform_to_json(const TransformSpec& t) {
  return {{"translation", to_json(t.translation)},
          {"rotation_quat", json::array({t.rotation.w, t.rotation.x, t.rotation.y, t.rotation.z})},
          {"scale", t.scale}};
}

Camera CameraSpec::to_camera() const {
  return Camera::look_at(position, look_at, up, fov_y_deg * std::numbers::pi / 180.0, width, height, near, far);
}

CameraSpec parse_camera(const json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"position", "look_at", "up", "fov_y_deg", "width", "height", "near", "far"});
  CameraSpec c;
  c.position = vec3_at(j, "position", path, c.position);
  c.look_at = vec3_at(j, "look_at", path, c.look_at);
  c.up = vec3_at(j, "up", path, c.up);
  c.fov_y_deg = number_at(j, "fov_y_deg", path, c.fov_y_deg);
  if (!(c.fov_y_deg > 0.0 && c.fov_y_deg < 180.0)) throw SceneError(join(path, "fov_y_deg"), "must be in (0, 180)");
  c.width = integer_at(j, "width", path, c.width);
  c.height = integer_at(j, "height", path, c.height);
  if (c.width < 1 || c.width > 8192) throw SceneError(join(path, "width"), "must be in [1, 8192]");
  if (c.height < 1 || c.height > 8192) throw SceneError(join(path, "height"), "must be in [1, 8192]");
  c.near = number_at(j, "near", path, c.near);
  c.far = number_at(j, "far", path, c.far);
  if (!(c.near >= 0.0 && c.near < c.far)) throw SceneError(join(path, "near"), "need 0 <= near < far");
  if (norm(c.look_at - c.position) == 0.0) throw SceneError(join(path, "look_at"), "must differ from position");
  try {
    (void)c.to_camera();
  } catch (const std::invalid_argument& e) {
    throw SceneError(path, e.what());
  }
  return c;
}

json camera_to_json(const CameraSpec& c) {
  return {{"position", to_json(c.position)}, {"look_at", to_json(c.look_at)}, {"up", to_json(c.up)},
          {"fov_y_deg", c.fov_y_deg},         {"width", c.width},                {"height", c.height},
          {"near", c.near},                   {"far", c.far}};
}

Light parse_light(const json& j, const std::string& path) {
  require_object(j, path);
  if (!j.contains("type") || !j.at("type").is_string()) throw SceneError(join(path, "type"), "expected \"point\" or \"directional\"");
  const std::string type = j.at("type").get<std::string>();
  std::optional<double> beta;
  if (j.contains("beta")) {
    beta = number(j.at("beta"), join(path, "beta"));
    if (!(*beta > 0.0 && *beta < 1.0)) throw SceneError(join(path, "beta"), "must be in (0, 1)");
  }
  if (type == "point") {
    reject_unknown(j, path, {"type", "position", "beta"});
    return PointLight{vec3_at(j, "position", path, std::nullopt), beta};
  }
  if (type == "directional") {
    reject_unknown(j, path, {"type", "direction", "beta"});
    const Vec3 d = vec3_at(j, "direction", path, std::nullopt);
    if (std::abs(norm(d) - 1.0) > 1e-6) throw SceneError(join(path, "direction"), "must be unit length");
    return DirectionalLight{d, beta};
  }
  throw SceneError(join(path, "type"), "unknown light type \"" + type + "\"");
}

json light_to_json(const Light& l) {
  json j;
  if (const auto* p = std::get_if<PointLight>(&l)) {
    j = {{"type", "point"}, {"position", to_json(p->position)}};
    if (p->beta) j["beta"] = *p->beta;
  } else {
    const auto& d = std::get<DirectionalLight>(l);
    j = {{"type", "directional"}, {"direction", to_json(d.direction)}};
    if (d.beta) j["beta"] = *d.beta;
  }
  return j;
}

RenderConfig SceneDescription::render_config() const {
  RenderConfig cfg;
  cfg.clear_color = clear_color;
  cfg.sigma_threshold = render.sigma_threshold;
  if (render.resample) cfg.resample = *render.resample;
  if (render.shadows) cfg.shadows = *render.shadows;
  cfg.shadow_epsilon = render.shadow_epsilon;
  if (render.shadow_intensity) cfg.shadow_intensity = *render.shadow_intensity;
  if (render.volume_samples) cfg.volume_samples = *render.volume_samples;
  return cfg;
}

const ObjectSpec* SceneDescription::find(ObjectId id) const {
  for (const auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

ObjectSpec* SceneDescription::find(ObjectId id) {
  return const_cast<ObjectSpec*>(std::as_const(*this).find(id));
}

namespace {

RenderOverrides parse_render(const json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path,
                 {"sigma_threshold", "resample", "shadows", "shadow_epsilon", "shadow_intensity", "volume_samples"});
  RenderOverrides r;
  if (j.contains("sigma_threshold")) r.sigma_threshold = number(j.at("sigma_threshold"), join(path, "sigma_threshold"));
  if (j.contains("resample")) r.resample = boolean(j.at("resample"), join(path, "resample"));
  if (j.contains("shadows")) r.shadows = boolean(j.at("shadows"), join(path, "shadows"));
  if (j.contains("shadow_epsilon")) r.shadow_epsilon = number(j.at("shadow_epsilon"), join(path, "shadow_epsilon"));
  if (j.contains("shadow_intensity")) {
    r.shadow_intensity = number(j.at("shadow_intensity"), join(path, "shadow_intensity"));
  }
  if (j.contains("volume_samples")) r.volume_samples = integer_at(j, "volume_samples", path, std::nullopt);
  return r;
}

json render_to_json(const RenderOverrides& r) {
  json j = json::object();
  if (r.sigma_threshold) j["sigma_threshold"] = *r.sigma_threshold;
  if (r.resample) j["resample"] = *r.resample;
  if (r.shadows) j["shadows"] = *r.shadows;
  if (r.shadow_epsilon) j["shadow_epsilon"] = *r.shadow_epsilon;
  if (r.shadow_intensity) j["shadow_intensity"] = *r.shadow_intensity;
  if (r.volume_samples) j["volume_samples"] = *r.volume_samples;
  return j;
}

ObjectSpec parse_object(const json& j, const std::string& path, const std::filesystem::path& base_dir,
                        bool check_files) {
  require_object(j, path);
  reject_unknown(j, path, {"id", "geometry", "nedf_model", "transform", "animation", "shading"});
  ObjectSpec o;
  o.id = integer_at(j, "id", path, std::nullopt);
  if (o.id < 0 || o.id >= 0xFFFE) throw SceneError(join(path, "id"), "must be in [0, 65534)");
  if (!j.contains("geometry")) throw SceneError(join(path, "geometry"), "required field missing");
  o.geometry = parse_geometry(j.at("geometry"), join(path, "geometry"));
  if (j.contains("nedf_model") && !j.at("nedf_model").is_null()) {
    if (!j.at("nedf_model").is_string()) throw SceneError(join(path, "nedf_model"), "expected a file path");
    o.nedf_model = j.at("nedf_model").get<std::string>();
    if (check_files && !std::filesystem::exists(base_dir / *o.nedf_model)) {
      throw SceneError(join(path, "nedf_model"), "file not found: " + (base_dir / *o.nedf_model).string());
    }
  }
  if (const auto* vox = std::get_if<VoxelGeometry>(&o.geometry.shape)) {
    if (check_files && !std::filesystem::exists(base_dir / vox->path)) {
      throw SceneError(join(path, "geometry.path"), "file not found: " + (base_dir / vox->path).string());
    }
  }
  o.transform = parse_transform(j.contains("transform") ? j.at("transform") : json::object(), join(path, "transform"));
  if (j.contains("animation")) o.animation = parse_animation(j.at("animation"), join(path, "animation"));
  if (j.contains("shading")) {
    if (std::holds_alternative<VoxelGeometry>(o.geometry.shape)) {
      throw SceneError(join(path, "shading"), "only analytic geometry takes shading parameters");
    }
    o.shading = parse_shading(j.at("shading"), join(path, "shading"));
  }
  return o;
}

}  // namespace

SceneDescription parse_scene(const json& doc, const std::filesystem::path& base_dir, bool check_files) {
  require_object(doc, "");
  reject_unknown(doc, "", {"version", "camera", "clear_color", "lights", "objects", "render"});
  SceneDescription s;
  s.base_dir = base_dir;
  s.version = integer_at(doc, "version", "", std::nullopt);
  if (s.version != kSceneVersion) {
    throw SceneError("version", "unsupported scene version " + std::to_string(s.version) + " (expected " +
                                    std::to_string(kSceneVersion) + ")");
  }
  if (doc.contains("camera")) s.camera = parse_camera(doc.at("camera"), "camera");
  if (doc.contains("clear_color")) s.clear_color = color(doc.at("clear_color"), "clear_color");
  if (doc.contains("lights")) {
    if (!doc.at("lights").is_array()) throw SceneError("lights", "expected an array");
    for (std::size_t i = 0; i < doc.at("lights").size(); ++i) {
      s.lights.push_back(parse_light(doc.at("lights")[i], index("lights", i)));
    }
  }
  if (!doc.contains("objects") || !doc.at("objects").is_array()) throw SceneError("objects", "expected an array");
  std::map<ObjectId, std::size_t> first_use;
  for (std::size_t i = 0; i < doc.at("objects").size(); ++i) {
    const std::string p = index("objects", i);
    ObjectSpec o = parse_object(doc.at("objects")[i], p, base_dir, check_files);
    const auto [it, inserted] = first_use.emplace(o.id, i);
    if (!inserted) {
      throw SceneError(join(p, "id"), "duplicate id " + std::to_string(o.id) + " (also used by " +
                                          index("objects", it->second) + ")");
    }
    s.objects.push_back(std::move(o));
  }
  if (doc.contains("render")) s.render = parse_render(doc.at("render"), "render");
  try {
    s.render_config().validate();
  } catch (const std::invalid_argument& e) {
    throw SceneError("render", e.what());
  }
  return s;
}

SceneDescription load_scene(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw SceneError("", "malformed JSON in " + path.string() + ": " + e.what());
  }
  return parse_scene(doc, path.parent_path());
}

json scene_to_json(const SceneDescription& s) {
  json j;
  j["version"] = s.version;
  j["camera"] = camera_to_json(s.camera);
  j["clear_color"] = to_json(s.clear_color);
  j["lights"] = json::array();
  for (const auto& l : s.lights) j["lights"].push_back(light_to_json(l));
  j["objects"] = json::array();
  for (const auto& o : s.objects) {
    json oj;
    oj["id"] = o.id;
    oj["geometry"] = o.geometry.canonical;
    oj["nedf_model"] = o.nedf_model ? json(*o.nedf_model) : json(nullptr);
    oj["transform"] = transform_to_json(o.transform);
    if (o.animation) oj["animation"] = animation_to_json(*o.animation);
    if (o.shading) oj["shading"] = shading_to_json(*o.shading);
    j["objects"].push_back(oj);
  }
  j["render"] = render_to_json(s.render);
  return j;
}

std::string serialize_scene(const SceneDescription& scene) { return scene_to_json(scene).dump(2) + "\n"; }

RigidTransform evaluate_animation(const AnimationTrack& track, double t) {
  const auto& keys = track.keyframes;
  if (keys.empty()) throw std::invalid_argument("animation track has no keyframes");
  if (t <= keys.front().time) return keys.front().transform.to_rigid();
  if (t >= keys.back().time) return keys.back().transform.to_rigid();
  std::size_t k = 0;
  while (keys[k + 1].time <= t) ++k;
  if (keys[k].time == t) return keys[k].transform.to_rigid();
  const TransformSpec& a = keys[k].transform;
  const TransformSpec& b = keys[k + 1].transform;
  const double u = (t - keys[k].time) / (keys[k + 1].time - keys[k].time);
  const Vec3 translation = a.translation * (1.0 - u) + b.translation * u;
  const Quat rotation = slerp(a.rotation, b.rotation, u);
  const double scale = std::exp(std::log(a.scale) * (1.0 - u) + std::log(b.scale) * u);
  return RigidTransform::from_quat(rotation, translation, scale);
}

std::shared_ptr<const NedfModel> ResourceCache::model(const std::filesystem::path& path) {
  const auto key = std::filesystem::weakly_canonical(path);
  std::lock_guard lock(mutex_);
  auto& slot = models_[key];
  if (!slot) slot = std::make_shared<const NedfModel>(NedfModel::load(key));
  return slot;
}

std::shared_ptr<const VoxelField> ResourceCache::voxel(const std::filesystem::path& path) {
  const auto key = std::filesystem::weakly_canonical(path);
  std::lock_guard lock(mutex_);
  auto& slot = voxels_[key];
  if (!slot) slot = std::make_shared<const VoxelField>(VoxelField::load(key));
  return slot;
}

std::size_t ResourceCache::models_loaded() const {
  std::lock_guard lock(mutex_);
  return models_.size();
}

std::size_t ResourceCache::voxels_loaded() const {
  std::lock_guard lock(mutex_);
  return voxels_.size();
}

SceneAssets::SceneAssets(const SceneDescription& scene, ResourceCache& cache) {
  for (const auto& o : scene.objects) handles_[o.id] = build(scene, o, cache);
}

SceneAssets::Handles SceneAssets::build(const SceneDescription& scene, const ObjectSpec& spec, ResourceCache& cache) {
  std::string key = spec.geometry.canonical.dump();
  if (spec.shading) key += shading_to_json(*spec.shading).dump();
  if (spec.nedf_model) key += "|" + (scene.base_dir / *spec.nedf_model).lexically_normal().string();
  if (const auto it = by_geometry_.find(key); it != by_geometry_.end()) return it->second;

  Handles h;
  if (const auto* prim = std::get_if<SdfPrimitive>(&spec.geometry.shape)) {
    h.oracle = std::make_shared<const AnalyticOracle>(*prim);
    h.radiance = std::make_shared<const AnalyticRadiance>(*prim, spec.shading.value_or(AnalyticShading{}));
  } else {
    auto field = cache.voxel(scene.base_dir / std::get<VoxelGeometry>(spec.geometry.shape).path);
    h.oracle = std::make_shared<const VoxelOracle>(field);
    h.radiance = field;
  }
  if (spec.nedf_model) {
    h.depth = cache.model(scene.base_dir / *spec.nedf_model);
  } else {
    h.depth = std::make_shared<const OracleDepthField>(h.oracle);
  }
  by_geometry_[key] = h;
  return h;
}

const SceneAssets::Handles& SceneAssets::handles(ObjectId id) const {
  const auto it = handles_.find(id);
  if (it == handles_.end()) throw std::out_of_range("no object with id " + std::to_string(id));
  return it->second;
}

void SceneAssets::refresh(const SceneDescription& scene, ObjectId id, ResourceCache& cache) {
  const ObjectSpec* spec = scene.find(id);
  if (!spec) {
    handles_.erase(id);
    return;
  }
  handles_[id] = build(scene, *spec, cache);
}

std::vector<SceneInstance> SceneAssets::instances(const SceneDescription& scene, std::optional<double> t) const {
  std::vector<SceneInstance> out;
  out.reserve(scene.objects.size());
  for (const auto& o : scene.objects) {
    const Handles& h = handles(o.id);
    const RigidTransform g = (t && o.animation) ? evaluate_animation(*o.animation, *t) : o.transform.to_rigid();
    out.push_back(SceneInstance{o.id, g, h.depth, h.radiance});
  }
  return out;
}

}  // namespace nedf
