// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

// Live composition session plus its HTTP/WebSocket front end.
//
//   GET  /api/scene                      {"revision": R, "scene": {...}}
//   GET  /api/stats                      last render: revision, recomputed ids, step timings
//   PUT  /api/object/{id}/transform      {translation, rotation_quat, scale} -> {"revision": R}
//   PUT  /api/light                      one light, or {"lights": [...]}      -> {"revision": R}
//   PUT  /api/camera                     camera fields (partial allowed)      -> {"revision": R}
//   POST /api/render?buffer=color|depth|id|shadow                            -> image/png
//   WS   /api/stream?buffer=...          binary frames: 16-byte header + PNG

#pragma once

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "nedf/image_io.hpp"
#include "nedf/pipeline.hpp"
#include "nedf/scene.hpp"

namespace nedf::service {

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Consistent copy of the live state at one revision.
struct Snapshot {
  std::uint64_t revision = 0;
  SceneDescription scene;
  std::vector<SceneInstance> instances;
};

struct RenderResult {
  std::uint64_t revision = 0;
  Frame frame;
  std::vector<ObjectId> recomputed;  // objects whose depth plane was re-queried
  bool full_generation = false;      // step 1 ran from scratch
  nlohmann::json info() const;
};

/// Step-1 cache keyed by camera and per-object transforms; changed objects are found by diffing.
class Renderer {
 public:
  RenderResult render(const Snapshot& snap);

 private:
  std::mutex mutex_;
  FrameBuffers buffers_;
  std::optional<CameraSpec> camera_;
  std::map<ObjectId, RigidTransform> transforms_;
};

enum class FrameEncoding : std::uint8_t { kPng = 0 };

/// u32 revision, u8 buffer kind, u8 encoding, u16 reserved, u32 width, u32 height (little-endian).
std::array<std::uint8_t, 16> frame_header(std::uint32_t revision, image::BufferKind kind, std::uint32_t width,
                                          std::uint32_t height, FrameEncoding encoding = FrameEncoding::kPng);

/// Receiver of streamed frames. `deliver` must not block; slow sinks drop frames.
class FrameSink {
 public:
  virtual ~FrameSink() = default;
  virtual image::BufferKind buffer() const = 0;
  virtual void deliver(std::shared_ptr<const std::vector<std::uint8_t>> message) = 0;
};

class Session {
 public:
  explicit Session(SceneDescription scene);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  std::uint64_t revision() const;
  nlohmann::json scene_document() const;

  /// Throws NotFoundError for unknown ids and SceneError for invalid transforms.
  std::uint64_t set_transform(ObjectId id, const nlohmann::json& body);
  std::uint64_t set_light(const nlohmann::json& body);
  std::uint64_t set_camera(const nlohmann::json& body);

  Snapshot snapshot() const;
  /// Renders through the shared step-1 cache and records the result for last_render_info().
  RenderResult render(const Snapshot& snap);
  RenderResult render_latest() { return render(snapshot()); }
  std::optional<nlohmann::json> last_render_info() const;

  /// Starts the coalescing stream worker; renders happen only while sinks are attached.
  void start_streaming();
  void stop_streaming();
  void subscribe(const std::shared_ptr<FrameSink>& sink);
  void unsubscribe(const FrameSink* sink);
  std::uint64_t frames_rendered() const { return frames_rendered_.load(); }

 private:
  void worker_loop();
  void publish(const RenderResult& result, const std::vector<std::shared_ptr<FrameSink>>& sinks);
  std::uint64_t bump();

  mutable std::mutex mutex_;
  std::condition_variable wake_;
  SceneDescription scene_;
  ResourceCache cache_;
  std::unique_ptr<SceneAssets> assets_;
  std::uint64_t revision_ = 0;
  Renderer renderer_;

  std::vector<std::weak_ptr<FrameSink>> sinks_;
  std::optional<std::uint64_t> streamed_revision_;
  std::shared_ptr<const RenderResult> last_result_;
  std::optional<nlohmann::json> last_info_;
  bool stopping_ = false;
  std::thread worker_;
  std::atomic<std::uint64_t> frames_rendered_{0};
};

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 7870;  // 0 picks a free port
};

class Server {
 public:
  Server(std::shared_ptr<Session> session, ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts serving on background threads; returns the bound port.
  unsigned short start();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace nedf::service
