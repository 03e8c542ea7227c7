// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <numbers>

#include <doctest.h>
#include <json.hpp>

#include "../support/temp_dir.hpp"
#include "nedf/scene.hpp"

using namespace nedf;
using nlohmann::json;
using doctest::Approx;

namespace {

json minimal() {
  return json::parse(R"({"version": 1, "objects": [{"id": 1, "geometry": {"type": "sphere", "radius": 1}}]})");
}

std::string error_of(const json& doc) {
  try {
    parse_scene(doc, {}, false);
  } catch (const SceneError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("scene") {
  TEST_CASE("minimal scene gets defaults") {
    const SceneDescription s = parse_scene(minimal());
    CHECK(s.version == 1);
    CHECK(s.camera == CameraSpec{});
    CHECK(s.lights.empty());
    REQUIRE(s.objects.size() == 1);
    CHECK(s.objects[0].transform.scale == 1.0);
    CHECK(s.objects[0].transform.rotation == Quat{});
    CHECK_FALSE(s.objects[0].nedf_model);
    const RenderConfig cfg = s.render_config();
    CHECK(cfg.shadows);
    CHECK_FALSE(cfg.resample);
    CHECK(cfg.shadow_intensity == 0.4);
  }

  TEST_CASE("validation errors name the field") {
    json d = minimal();
    d["objects"].push_back(json::parse(R"({"id": 3, "geometry": {"type": "sphere", "radius": 1}})"));
    d["objects"].push_back(json::parse(R"({"id": 1, "geometry": {"type": "box", "half_extents": [1, 1, 1]}})"));
    const std::string dup = error_of(d);
    CHECK(dup.find("objects[2].id") != std::string::npos);
    CHECK(dup.find("objects[0]") != std::string::npos);

    d = minimal();
    d["objects"][0]["transform"] = {{"scale", 0}};
    CHECK(error_of(d).find("objects[0].transform.scale") == 0);

    d = minimal();
    d["objects"][0]["transform"] = {{"rotation_quat", {0.5, 0, 0, 0.5}}};
    CHECK(error_of(d).find("rotation_quat") != std::string::npos);

    d = minimal();
    d["objects"][0]["colour"] = 1;
    CHECK(error_of(d).find("colour") != std::string::npos);

    d = minimal();
    d["version"] = 2;
    CHECK(error_of(d).find("version") == 0);

    d = minimal();
    d["camera"] = {{"fov_y_deg", 0}};
    CHECK(error_of(d).find("camera.fov_y_deg") == 0);

    d = minimal();
    d["lights"] = json::array({{{"type", "directional"}, {"direction", {0, 2, 0}}}});
    CHECK(error_of(d).find("lights[0].direction") == 0);

    d = minimal();
    d["objects"][0]["geometry"] = {{"type", "plane"}, {"normal", {0, 1, 0}}};
    CHECK_FALSE(error_of(d).empty());

    d = minimal();
    d["objects"][0]["nedf_model"] = "nowhere.nedm";
    CHECK_THROWS_AS(parse_scene(d, "/nonexistent-dir"), SceneError);
    CHECK_NOTHROW(parse_scene(d, "/nonexistent-dir", false));
  }

  TEST_CASE("serialization is a fixed point") {
    const json doc = json::parse(R"({
      "version": 1,
      "camera": {"position": [1, 2, -6], "width": 64, "height": 48},
      "clear_color": [0.1, 0.1, 0.1],
      "lights": [{"type": "point", "position": [0, 5, 0], "beta": 0.3},
                 {"type": "directional", "direction": [0, -1, 0]}],
      "render": {"resample": true, "sigma_threshold": 3.5},
      "objects": [
        {"id": 4, "geometry": {"type": "union", "children": [{"type": "sphere", "radius": 0.5},
                                                              {"type": "torus", "major_radius": 1, "minor_radius": 0.2}]},
         "transform": {"translation": [1, 0, 0], "rotation_quat": [0.7071067811865476, 0, 0.7071067811865476, 0], "scale": 2},
         "shading": {"band": 0.05},
         "animation": {"keyframes": [{"time": 0}, {"time": 1, "translation": [0, 1, 0]}]}}
      ]})");
    const SceneDescription a = parse_scene(doc);
    const std::string text = serialize_scene(a);
    const SceneDescription b = parse_scene(json::parse(text));
    CHECK(serialize_scene(b) == text);
    CHECK(b.objects[0].transform == a.objects[0].transform);
    CHECK(b.render.resample == std::optional<bool>(true));
    CHECK(b.lights == a.lights);
  }

  TEST_CASE("animation evaluation") {
    AnimationTrack track;
    track.keyframes = {{0.0, {{0, 0, 0}, Quat{}, 1.0}},
                       {1.0, {{2, 4, 6}, Quat::from_axis_angle({0, 0, 1}, std::numbers::pi / 2), 4.0}}};
    const RigidTransform at0 = evaluate_animation(track, 0.0);
    CHECK(at0 == track.keyframes[0].transform.to_rigid());
    CHECK(evaluate_animation(track, 1.0) == track.keyframes[1].transform.to_rigid());
    CHECK(evaluate_animation(track, -3.0) == at0);
    const RigidTransform mid = evaluate_animation(track, 0.5);
    CHECK(mid.translation().x == Approx(1.0));
    CHECK(mid.translation().z == Approx(3.0));
    CHECK(mid.scale() == Approx(2.0));  // log-linear
    const Vec3 x = mid.apply_direction({1, 0, 0});
    CHECK(std::atan2(x.y, x.x) == Approx(std::numbers::pi / 4).epsilon(1e-9));
  }

  TEST_CASE("keyframes must increase") {
    json d = minimal();
    d["objects"][0]["animation"] = json::parse(R"({"keyframes": [{"time": 1}, {"time": 1}]})");
    CHECK(error_of(d).find("animation") != std::string::npos);
  }

  TEST_CASE("many instances share one loaded model") {
    testing::TempDir dir;
    NedfModel::create(Aabb::make({-1, -1, -1}, {1, 1, 1}), nn::MlpConfig{1008, 8, 1, 64, 128}, 1)
        .save(dir.path() / "ball.nedm");
    json d = {{"version", 1}, {"objects", json::array()}};
    for (int i = 0; i < 1000; ++i) {
      d["objects"].push_back({{"id", i},
                              {"geometry", {{"type", "sphere"}, {"radius", 1}}},
                              {"nedf_model", "ball.nedm"},
                              {"transform", {{"translation", {i % 40, 0, i / 40}}}}});
    }
    const SceneDescription s = parse_scene(d, dir.path());
    ResourceCache cache;
    const SceneAssets assets(s, cache);
    CHECK(cache.models_loaded() == 1);
    const auto inst = assets.instances(s);
    REQUIRE(inst.size() == 1000);
    for (const auto& i : inst) {
      CHECK(i.depth.get() == inst[0].depth.get());
      CHECK(i.radiance.get() == inst[0].radiance.get());
    }
    CHECK(inst[0].depth.use_count() >= 1000);
    CHECK(inst[999].transform.translation() == Vec3{39, 0, 24});
  }

  TEST_CASE("load from file resolves relative paths") {
    testing::TempDir dir;
    {
      std::ofstream out(dir.path() / "s.json");
      out << minimal().dump();
    }
    const SceneDescription s = load_scene(dir.path() / "s.json");
    CHECK(s.base_dir == dir.path());
    CHECK_THROWS_AS(load_scene(dir.path() / "missing.json"), SceneError);
    {
      std::ofstream out(dir.path() / "bad.json");
      out << "{not json";
    }
    CHECK_THROWS_AS(load_scene(dir.path() / "bad.json"), SceneError);
  }

  TEST_CASE("camera spec conversion") {
    CameraSpec c;
    c.position = {0, 0, -5};
    c.fov_y_deg = 90;
    const Camera cam = c.to_camera();
    CHECK(cam.fov_y == Approx(std::numbers::pi / 2));
    CHECK(cam.forward().z == Approx(1.0));
  }
}
