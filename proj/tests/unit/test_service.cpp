// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <condition_variable>
#include <mutex>
#include <thread>

#include <doctest.h>
#include <json.hpp>

#include "nedf/service.hpp"

using namespace nedf;
using namespace nedf::service;
using nlohmann::json;

namespace {

SceneDescription three_objects() {
  return parse_scene(json::parse(R"({
    "version": 1,
    "camera": {"position": [0, 1, -6], "width": 48, "height": 36},
    "lights": [{"type": "point", "position": [0, 5, -2]}],
    "objects": [
      {"id": 1, "geometry": {"type": "box", "half_extents": [3, 0.05, 3]}, "transform": {"translation": [0, -1, 0]}},
      {"id": 2, "geometry": {"type": "sphere", "radius": 0.6}, "transform": {"translation": [-0.8, 0, 0]}},
      {"id": 3, "geometry": {"type": "sphere", "radius": 0.5}, "transform": {"translation": [0.9, 0, 0]}}
    ]})"));
}

std::uint32_t le32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return std::uint32_t{b[at]} | (std::uint32_t{b[at + 1]} << 8) | (std::uint32_t{b[at + 2]} << 16) |
         (std::uint32_t{b[at + 3]} << 24);
}

class RecordingSink final : public FrameSink {
 public:
  explicit RecordingSink(image::BufferKind kind) : kind_(kind) {}
  image::BufferKind buffer() const override { return kind_; }
  void deliver(std::shared_ptr<const std::vector<std::uint8_t>> m) override {
    std::lock_guard lock(mutex_);
    messages_.push_back(std::move(m));
    cv_.notify_all();
  }
  /// Waits for a frame whose header revision is `revision`.
  bool wait_for_revision(std::uint32_t revision, std::chrono::milliseconds timeout = std::chrono::seconds(20)) {
    std::unique_lock lock(mutex_);
    return cv_.wait_for(lock, timeout, [&] {
      return !messages_.empty() && le32(*messages_.back(), 0) == revision;
    });
  }
  std::vector<std::uint32_t> revisions() {
    std::lock_guard lock(mutex_);
    std::vector<std::uint32_t> out;
    for (const auto& m : messages_) out.push_back(le32(*m, 0));
    return out;
  }
  std::shared_ptr<const std::vector<std::uint8_t>> last() {
    std::lock_guard lock(mutex_);
    return messages_.back();
  }

 private:
  image::BufferKind kind_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<std::shared_ptr<const std::vector<std::uint8_t>>> messages_;
};

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("fresh session mirrors the scene at revision 0") {
    const SceneDescription scene = three_objects();
    Session s(scene);
    CHECK(s.revision() == 0);
    const json doc = s.scene_document();
    CHECK(doc["revision"] == 0);
    CHECK(doc["scene"] == scene_to_json(scene));
  }

  TEST_CASE("edits bump the revision and are validated") {
    Session s(three_objects());
    CHECK(s.set_transform(2, json{{"translation", {0, 0, 0}}}) == 1);
    CHECK(s.set_transform(2, json{{"translation", {0, 0, 0}}}) == 2);  // identity update still bumps
    CHECK(s.scene_document()["scene"]["objects"][1]["transform"]["translation"] == json{0.0, 0.0, 0.0});
    CHECK_THROWS_AS(s.set_transform(42, json::object()), NotFoundError);
    CHECK_THROWS_AS(s.set_transform(2, json{{"rotation_quat", {1, 1, 0, 0}}}), SceneError);
    CHECK_THROWS_AS(s.set_transform(2, json{{"scale", -1}}), SceneError);
    CHECK_THROWS_AS(s.set_camera(json{{"fov_y_deg", 0}}), SceneError);
    CHECK_THROWS_AS(s.set_light(json{{"type", "spot"}}), SceneError);
    CHECK(s.revision() == 2);
    CHECK(s.set_light(json{{"type", "point"}, {"position", {1, 2, 3}}}) == 3);
    CHECK(s.set_light(json{{"lights", json::array()}}) == 4);
    CHECK(s.scene_document()["scene"]["lights"].empty());
    CHECK(s.set_camera(json{{"position", {0, 2, -6}}}) == 5);
    CHECK(s.scene_document()["scene"]["camera"]["width"] == 48);
  }

  TEST_CASE("render reuse follows the dependency rules") {
    Session s(three_objects());
    const RenderResult first = s.render_latest();
    CHECK(first.full_generation);

    s.set_transform(3, json{{"translation", {0.5, 0.2, 0}}});
    const RenderResult moved = s.render_latest();
    CHECK_FALSE(moved.full_generation);
    CHECK(moved.recomputed == std::vector<ObjectId>{3});
    CHECK(s.last_render_info()->at("recomputed") == json{3});

    // matches a from-scratch render of the same state
    const Snapshot snap = s.snapshot();
    const Frame fresh = compose_frame(snap.instances, snap.scene.camera.to_camera(), snap.scene.lights,
                                      snap.scene.render_config());
    CHECK(moved.frame.buffers.depth == fresh.buffers.depth);
    CHECK(moved.frame.buffers.id == fresh.buffers.id);
    CHECK(moved.frame.buffers.shadow == fresh.buffers.shadow);

    s.set_light(json{{"type", "point"}, {"position", {2, 5, -2}}});
    const RenderResult lit = s.render_latest();
    CHECK_FALSE(lit.full_generation);
    CHECK(lit.recomputed.empty());
    CHECK(lit.frame.buffers.shadow != moved.frame.buffers.shadow);

    s.set_camera(json{{"position", {0, 1.5, -6}}});
    const RenderResult cam = s.render_latest();
    CHECK(cam.full_generation);
    CHECK(cam.recomputed.size() == 3);
  }

  TEST_CASE("frame header layout") {
    const auto h = frame_header(0x01020304u, image::BufferKind::kId, 640, 480);
    CHECK(h[0] == 4);
    CHECK(h[3] == 1);
    CHECK(h[4] == 2);
    CHECK(h[5] == 0);
    const std::vector<std::uint8_t> v(h.begin(), h.end());
    CHECK(le32(v, 8) == 640);
    CHECK(le32(v, 12) == 480);
  }

  TEST_CASE("stream: subscribe then edit yields a frame at the new revision") {
    Session s(three_objects());
    s.start_streaming();
    auto color = std::make_shared<RecordingSink>(image::BufferKind::kColor);
    auto depth = std::make_shared<RecordingSink>(image::BufferKind::kDepth);
    s.subscribe(color);
    s.subscribe(depth);
    REQUIRE(color->wait_for_revision(0));
    REQUIRE(depth->wait_for_revision(0));
    s.set_transform(2, json{{"translation", {-0.5, 0.3, 0}}});
    REQUIRE(color->wait_for_revision(1));
    REQUIRE(depth->wait_for_revision(1));
    const auto msg = depth->last();
    CHECK((*msg)[4] == static_cast<std::uint8_t>(image::BufferKind::kDepth));
    const std::vector<std::uint8_t> png(msg->begin() + 16, msg->end());
    const image::Image img = image::decode_png(png);
    CHECK(img.channels == 1);
    CHECK(img.width == 48);
    CHECK(color->revisions() == std::vector<std::uint32_t>{0, 1});
    s.stop_streaming();
  }

  TEST_CASE("stream: bursts of edits coalesce to the latest state") {
    Session s(three_objects());
    auto sink = std::make_shared<RecordingSink>(image::BufferKind::kColor);
    s.start_streaming();
    s.subscribe(sink);
    REQUIRE(sink->wait_for_revision(0));
    for (int i = 1; i <= 30; ++i) s.set_transform(3, json{{"translation", {0.9 - 0.02 * i, 0, 0}}});
    REQUIRE(sink->wait_for_revision(30));
    const auto revs = sink->revisions();
    CHECK(revs.size() < 31);
    CHECK(std::is_sorted(revs.begin(), revs.end()));
    // the last streamed frame equals a direct render of the final state
    Session check(three_objects());
    check.set_transform(3, json{{"translation", {0.9 - 0.02 * 30, 0, 0}}});
    const RenderResult direct = check.render_latest();
    const auto png = image::encode_buffer_png(direct.frame, image::BufferKind::kColor);
    const auto last = sink->last();
    CHECK(std::vector<std::uint8_t>(last->begin() + 16, last->end()) == png);
    s.unsubscribe(sink.get());
    s.stop_streaming();
  }

  TEST_CASE("no render happens without subscribers") {
    Session s(three_objects());
    s.start_streaming();
    s.set_transform(2, json::object());
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    CHECK(s.frames_rendered() == 0);
    s.stop_streaming();
  }
}
