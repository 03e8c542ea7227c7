// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <set>

#include <doctest.h>

#include "../support/scenes.hpp"
#include "nedf/parallel.hpp"
#include "nedf/pipeline.hpp"

using namespace nedf;
using namespace nedf::testing;
using doctest::Approx;

constexpr double kInf = std::numeric_limits<double>::infinity();

namespace {

std::size_t center_index(const Camera& c) {
  return static_cast<std::size_t>(c.height / 2) * static_cast<std::size_t>(c.width) + static_cast<std::size_t>(c.width / 2);
}

// Depth field that reports every ray inside its box as a hit at a fixed local distance.
class FixedDepthField final : public DepthField {
 public:
  explicit FixedDepthField(double depth) : depth_(depth) {}
  void query_local(std::span<const Ray> rays, std::span<LocalHit> out) const override {
    for (std::size_t i = 0; i < rays.size(); ++i) {
      out[i] = {};
      if (clip_ray_to_aabb(rays[i], relaxed_box())) out[i] = {mu_from_depth(tangency_frame(rays[i]), depth_), true};
    }
  }
  using DepthField::query_local;
  Aabb relaxed_box() const override { return Aabb::make({-1.5, -1.5, -1.5}, {1.5, 1.5, 1.5}); }
  double half_range() const override { return relaxed_box().max_corner_distance(); }

 private:
  double depth_;
};

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("primary rays") {
    const Camera one = Camera::look_at({0, 0, -5}, {0, 0, 0}, {0, 1, 0}, 0.8, 1, 1);
    const auto single = generate_primary_rays(one);
    REQUIRE(single.size() == 1);
    CHECK(std::abs(single[0].direction.z - 1.0) < 1e-12);

    const Camera odd = Camera::look_at({1, 2, 3}, {4, 2, -1}, {0, 1, 0}, 0.9, 5, 3);
    const auto rays = generate_primary_rays(odd);
    REQUIRE(rays.size() == 15);
    const Vec3 axis = normalize(Vec3{3, 0, -4});
    CHECK(dot(rays[7].direction, axis) == Approx(1.0).epsilon(1e-12));

    // top-left pixel center at (-(1 - 1/w) a tan, (1 - 1/h) tan) in the image plane
    const Camera c = Camera::look_at({0, 0, 0}, {0, 0, 1}, {0, 1, 0}, 0.7, 8, 6);
    const auto r = generate_primary_rays(c);
    const double t = std::tan(0.35);
    const double x = (1.0 - 1.0 / 8) * t * 8.0 / 6.0;
    const double y = (1.0 - 1.0 / 6) * t;
    const double expect = std::atan(std::sqrt(x * x + y * y));
    CHECK(std::acos(dot(r[0].direction, c.forward())) == Approx(expect).epsilon(1e-9));
    CHECK(dot(r[0].direction, c.orientation.column(1)) > 0);  // top row looks up
  }

  TEST_CASE("camera validation") {
    Camera c = Camera::look_at({0, 0, -5}, {0, 0, 0}, {0, 1, 0}, 0.8, 4, 4);
    c.fov_y = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.fov_y = 0.8;
    c.near = 2.0;
    c.far = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK_THROWS(Camera::look_at({0, 0, 0}, {0, 0, 0}, {0, 1, 0}, 0.8, 4, 4));
  }

  TEST_CASE("occlusion ordering and empty scene") {
    const Camera cam = Camera::look_at({0, 0, -5}, {0, 0, 0}, {0, 1, 0}, 0.8, 9, 9);
    const auto unit = SdfPrimitive::sphere({}, 1.0);
    const std::vector<SceneInstance> objs{oracle_instance(7, unit),
                                          oracle_instance(8, unit, RigidTransform(Mat3::identity(), {0, 0, 2}, 1.0))};
    FrameBuffers b = FrameBuffers::make(9, 9);
    nedf_generation_step(objs, cam, b);
    CHECK(b.id[center_index(cam)] == 7);
    CHECK(b.depth[center_index(cam)] == Approx(4.0));

    FrameBuffers e = FrameBuffers::make(9, 9);
    nedf_generation_step(std::span<const SceneInstance>{}, cam, e);
    for (std::size_t i = 0; i < e.size(); ++i) {
      CHECK(std::isinf(e.depth[i]));
      CHECK(e.id[i] == kNoObject);
    }
  }

  TEST_CASE("exact ties go to the earlier object") {
    const Camera cam = Camera::look_at({0, 0, -5}, {0, 0, 0}, {0, 1, 0}, 0.8, 5, 5);
    const auto unit = SdfPrimitive::sphere({}, 1.0);
    const std::vector<SceneInstance> objs{oracle_instance(3, unit), oracle_instance(2, unit)};
    FrameBuffers b = FrameBuffers::make(5, 5);
    nedf_generation_step(objs, cam, b);
    CHECK(b.id[center_index(cam)] == 3);
  }

  TEST_CASE("instance validation") {
    const auto unit = SdfPrimitive::sphere({}, 1.0);
    const std::vector<SceneInstance> dup{oracle_instance(1, unit), oracle_instance(1, unit)};
    CHECK_THROWS_AS(validate_instances(dup), std::invalid_argument);
    const std::vector<SceneInstance> none{oracle_instance(kNoObject, unit)};
    CHECK_THROWS_AS(validate_instances(none), std::invalid_argument);
    std::vector<SceneInstance> missing{oracle_instance(1, unit)};
    missing[0].radiance.reset();
    CHECK_THROWS_AS(validate_instances(missing), std::invalid_argument);
  }

  TEST_CASE("shading: background and procedural color") {
    const Camera cam = Camera::look_at({0, 0, -5}, {0, 0, 0}, {0, 1, 0}, 0.8, 9, 9);
    const std::vector<SceneInstance> objs{oracle_instance(1, SdfPrimitive::sphere({}, 1.0))};
    RenderConfig cfg;
    cfg.clear_color = {0.1, 0.2, 0.3};
    cfg.shadows = false;
    const Frame f = compose_frame(objs, cam, {}, cfg);
    CHECK(f.image[0] == Rgb{0.1, 0.2, 0.3});
    const Rgb c = f.image[center_index(cam)];
    CHECK(c.r == Approx(0.5));
    CHECK(c.g == Approx(0.5));
    CHECK(c.b == Approx(0.0).scale(1.0));
    CHECK(f.shading.outliers == 0);
  }

  TEST_CASE("outlier resampling equals the volume render of the same ray") {
    const Camera cam = Camera::look_at({0, 0, -5}, {0, 0, 0}, {0, 1, 0}, 0.8, 24, 24);
    const auto unit = SdfPrimitive::sphere({}, 1.0);
    // depth lands in front of the sphere: every shading sample is empty space
    SceneInstance obj{1, RigidTransform(Mat3::identity(), {0.1, 0, 0}, 1.2), std::make_shared<FixedDepthField>(0.2),
                      std::make_shared<AnalyticRadiance>(unit)};
    const std::vector<SceneInstance> objs{obj};
    RenderConfig cfg;
    cfg.shadows = false;
    cfg.volume_samples = 96;

    const Frame off = compose_frame(objs, cam, {}, cfg);
    CHECK(off.shading.outliers > 0);
    CHECK(off.shading.resampled == 0);
    CHECK(off.timings.resample_ratio == 0.0);

    cfg.resample = true;
    const Frame on = compose_frame(objs, cam, {}, cfg);
    // outliers whose ray misses the radiance bounds have nothing to integrate
    CHECK(on.shading.resampled > 0);
    CHECK(on.shading.resampled <= on.shading.outliers);
    CHECK(on.timings.resample_ratio > 0.0);
    const auto rays = generate_primary_rays(cam);
    std::size_t compared = 0;
    for (std::size_t i = 0; i < rays.size(); ++i) {
      if (on.buffers.id[i] != 1) continue;
      const Ray local = transform_ray_to_local(obj.transform, rays[i]);
      const auto span = resample_interval(obj, cam, local);
      if (!span) {
        CHECK(on.buffers.rgb[i] == off.buffers.rgb[i]);
        continue;
      }
      const Rgb expect = volume_render_color(*obj.radiance, local, span->t_enter, span->t_exit, 96).color;
      CHECK(on.buffers.rgb[i] == expect);
      ++compared;
    }
    CHECK(compared > 50);
  }

  TEST_CASE("shadow: axial occluder arithmetic") {
    // sphere (0, 2.5, 0) r = 0.5 over a ground slab whose top is y = 0; light at (0, 5, 0)
    const auto ground = SdfPrimitive::box({0, -0.05, 0}, {3, 0.05, 3});
    const auto ball = SdfPrimitive::sphere({}, 0.5);
    const std::vector<SceneInstance> objs{
        oracle_instance(1, ground), oracle_instance(2, ball, RigidTransform(Mat3::identity(), {0, 2.5, 0}, 1.0))};
    const Camera cam = Camera::look_at({0, 1, -3}, {0, 0, 0}, {0, 1, 0}, 0.6, 33, 33);
    const std::vector<Light> lights{PointLight{{0, 5, 0}, std::nullopt}};
    RenderConfig cfg;
    const Frame f = compose_frame(objs, cam, lights, cfg);
    const std::size_t c = center_index(cam);
    REQUIRE(f.buffers.id[c] == 1);
    const Vec3 x = generate_primary_rays(cam)[c].at(f.buffers.depth[c]);
    CHECK(norm(x) < 1e-9);
    CHECK(f.buffers.shadow[c] == Approx(0.4));
    CHECK(f.image[c].r == Approx(f.buffers.rgb[c].r * 0.4));
    // far ground corner is lit
    CHECK(f.buffers.shadow[0] == 1.0);
  }

  TEST_CASE("shadow: light-facing pole is never self-shadowed") {
    const auto ball = SdfPrimitive::sphere({}, 1.0);
    const std::vector<SceneInstance> objs{oracle_instance(1, ball)};
    const Camera cam = Camera::look_at({0, 4, -0.5}, {0, 0, 0}, {0, 0, 1}, 0.4, 41, 41);
    const std::vector<Light> lights{PointLight{{0, 6, 0}, 0.4}};
    const Frame f = compose_frame(objs, cam, lights, {});
    const auto rays = generate_primary_rays(cam);
    std::size_t pole = 0;
    for (std::size_t i = 0; i < f.buffers.size(); ++i) {
      if (f.buffers.id[i] != 1) continue;
      const Vec3 x = rays[i].at(f.buffers.depth[i]);
      if (x.y < 0.8) continue;
      ++pole;
      CHECK(f.buffers.shadow[i] == 1.0);
    }
    CHECK(pole > 20);
  }

  TEST_CASE("no lights: shadow plane is one and the image is the shaded color") {
    const auto s = three_object_scene(32);
    const Frame f = compose_frame(s.objects, s.camera, {}, {});
    for (std::size_t i = 0; i < f.buffers.size(); ++i) {
      CHECK(f.buffers.shadow[i] == 1.0);
      CHECK(f.image[i] == f.buffers.rgb[i]);
    }
  }

  TEST_CASE("two lights multiply") {
    const auto ground = SdfPrimitive::box({0, -0.05, 0}, {3, 0.05, 3});
    const auto ball = SdfPrimitive::sphere({}, 0.5);
    const std::vector<SceneInstance> objs{
        oracle_instance(1, ground), oracle_instance(2, ball, RigidTransform(Mat3::identity(), {0, 2.5, 0}, 1.0))};
    const Camera cam = Camera::look_at({0, 1, -3}, {0, 0, 0}, {0, 1, 0}, 0.6, 33, 33);
    const std::vector<Light> lights{PointLight{{0, 5, 0}, 0.5}, DirectionalLight{{0, -1, 0}, 0.5}};
    const Frame f = compose_frame(objs, cam, lights, {});
    CHECK(f.buffers.shadow[center_index(cam)] == Approx(0.25));
  }

  TEST_CASE("buffer reuse matches a full step for each changed subset") {
    auto s = three_object_scene(48);
    FrameBuffers cached = FrameBuffers::make(48, 48);
    nedf_generation_step(s.objects, s.camera, cached);
    const FrameBuffers before = cached;
    // nothing changed: nothing recomputed, buffers unchanged
    const ReuseReport none = reuse_buffers(s.objects, s.camera, cached, {});
    CHECK(none.recomputed.empty());
    CHECK(cached.depth == before.depth);
    CHECK(cached.id == before.id);

    s.objects[1].transform = RigidTransform(Mat3::identity(), {0.3, 0.2, 0.1}, 1.0);
    const auto plane0 = cached.per_object_depth.at(1);
    const ReuseReport one = reuse_buffers(s.objects, s.camera, cached, {2});
    CHECK(one.recomputed == std::vector<ObjectId>{2});
    CHECK_FALSE(one.fell_back);
    CHECK(cached.per_object_depth.at(1) == plane0);
    FrameBuffers full = FrameBuffers::make(48, 48);
    nedf_generation_step(s.objects, s.camera, full);
    CHECK(cached.depth == full.depth);
    CHECK(cached.id == full.id);

    FrameBuffers empty = FrameBuffers::make(48, 48);
    const ReuseReport fb = reuse_buffers(s.objects, s.camera, empty, {2});
    CHECK(fb.fell_back);
    CHECK(empty.depth == full.depth);
  }

  TEST_CASE("external G-buffer import") {
    const auto s = three_object_scene(24);
    RenderConfig cfg;
    cfg.shadows = false;
    const Frame base = compose_frame(s.objects, s.camera, {}, cfg);
    const std::size_t n = base.buffers.size();

    ExternalGBuffer front{std::vector<double>(n, 0.05), std::vector<Rgb>(n, Rgb{0.9, 0.1, 0.4}), 99};
    const Frame covered = compose_frame(s.objects, s.camera, {}, cfg, &front);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(covered.image[i] == front.color[i]);
      CHECK(covered.buffers.id[i] == 99);
    }

    ExternalGBuffer far{std::vector<double>(n, kInf), std::vector<Rgb>(n, Rgb{1, 1, 1}), 99};
    const Frame same = compose_frame(s.objects, s.camera, {}, cfg, &far);
    CHECK(same.buffers.depth == base.buffers.depth);
    for (std::size_t i = 0; i < n; ++i) CHECK(same.image[i] == base.image[i]);

    // left half at depth 5, right half absent
    ExternalGBuffer half{std::vector<double>(n, kInf), std::vector<Rgb>(n, Rgb{0, 0, 1}), 99};
    for (std::size_t i = 0; i < n; ++i) {
      if (i % 24 < 12) half.depth[i] = 5.0;
    }
    const Frame mixed = compose_frame(s.objects, s.camera, {}, cfg, &half);
    for (std::size_t i = 0; i < n; ++i) {
      const bool ext = half.depth[i] < base.buffers.depth[i];
      CHECK(mixed.buffers.depth[i] == std::min(half.depth[i], base.buffers.depth[i]));
      CHECK(mixed.buffers.id[i] == (ext ? 99 : base.buffers.id[i]));
      CHECK(mixed.image[i] == (ext ? half.color[i] : base.image[i]));
    }

    FrameBuffers b = FrameBuffers::make(4, 4);
    CHECK_THROWS_AS(import_external_gbuffer(b, std::vector<double>(3), std::vector<Rgb>(3), 5), std::invalid_argument);
  }

  TEST_CASE("results do not depend on the thread count") {
    const auto s = three_object_scene(64);
    const std::vector<Light> lights{PointLight{{1, 4, -2}, std::nullopt}};
    set_max_threads(1);
    const Frame a = compose_frame(s.objects, s.camera, lights, {});
    set_max_threads(4);
    const Frame b = compose_frame(s.objects, s.camera, lights, {});
    set_max_threads(0);
    CHECK(a.buffers.depth == b.buffers.depth);
    CHECK(a.buffers.shadow == b.buffers.shadow);
    for (std::size_t i = 0; i < a.image.size(); ++i) CHECK(a.image[i] == b.image[i]);
  }

  TEST_CASE("timings") {
    const auto s = three_object_scene(32);
    const Frame f = compose_frame(s.objects, s.camera, std::vector<Light>{PointLight{{0, 4, 0}, std::nullopt}}, {});
    const auto& t = f.timings;
    CHECK(t.generation >= 0.0);
    const double sum = t.generation + t.shading + t.shadow;
    CHECK(std::abs(t.total - sum) <= 0.01 + 0.1 * t.total);
    CHECK(t.resample_ratio == 0.0);
    const std::string json = timings_to_json(t);
    CHECK(json.find("\"generation_s\"") != std::string::npos);
  }

  TEST_CASE("default shadow epsilon scales with the coarsest object") {
    const auto unit = SdfPrimitive::sphere({}, 1.0);
    const std::vector<SceneInstance> objs{oracle_instance(1, unit),
                                          oracle_instance(2, unit, RigidTransform(Mat3::identity(), {}, 3.0))};
    const double l = objs[0].depth->half_range();
    CHECK(default_shadow_epsilon(objs) == Approx(2.0 * 3.0 * 2.0 * l / 8192.0));
  }

  TEST_CASE("render config validation") {
    RenderConfig cfg;
    cfg.volume_samples = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.shadow_intensity = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}
