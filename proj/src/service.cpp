// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include "nedf/service.hpp"

#include <algorithm>
#include <chrono>
#include <csignal>
#include <set>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace nedf::service {

using nlohmann::json;

// ---------------------------------------------------------------------------------------------
// Rendering and session state

json RenderResult::info() const {
  json j;
  j["revision"] = revision;
  j["recomputed"] = recomputed;
  j["full_generation"] = full_generation;
  j["timings"] = json::parse(timings_to_json(frame.timings));
  j["width"] = frame.buffers.width;
  j["height"] = frame.buffers.height;
  return j;
}

RenderResult Renderer::render(const Snapshot& snap) {
  std::lock_guard lock(mutex_);
  const Camera camera = snap.scene.camera.to_camera();
  const RenderConfig config = snap.scene.render_config();
  RenderResult result;
  result.revision = snap.revision;

  const auto t0 = std::chrono::steady_clock::now();
  const bool camera_same = camera_ && *camera_ == snap.scene.camera && buffers_.width == camera.width &&
                           buffers_.height == camera.height;
  if (!camera_same) {
    nedf_generation_step(snap.instances, camera, buffers_);
    result.full_generation = true;
    for (const auto& o : snap.instances) result.recomputed.push_back(o.id);
  } else {
    std::set<ObjectId> changed;
    for (const auto& o : snap.instances) {
      const auto it = transforms_.find(o.id);
      if (it == transforms_.end() || !(it->second == o.transform)) changed.insert(o.id);
    }
    const ReuseReport report = reuse_buffers(snap.instances, camera, buffers_, changed);
    result.recomputed = report.recomputed;
    result.full_generation = report.fell_back;
  }
  camera_ = snap.scene.camera;
  transforms_.clear();
  for (const auto& o : snap.instances) transforms_[o.id] = o.transform;

  FrameBuffers& out = result.frame.buffers;
  out.width = buffers_.width;
  out.height = buffers_.height;
  out.depth = buffers_.depth;
  out.id = buffers_.id;
  out.rgb = buffers_.rgb;
  out.shadow = buffers_.shadow;
  result.frame.timings.generation = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  finish_frame(snap.instances, camera, snap.scene.lights, config, result.frame);
  return result;
}

std::array<std::uint8_t, 16> frame_header(std::uint32_t revision, image::BufferKind kind, std::uint32_t width,
                                          std::uint32_t height, FrameEncoding encoding) {
  std::array<std::uint8_t, 16> h{};
  auto put32 = [&](std::size_t at, std::uint32_t v) {
    for (std::size_t i = 0; i < 4; ++i) h[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  };
  put32(0, revision);
  h[4] = static_cast<std::uint8_t>(kind);
  h[5] = static_cast<std::uint8_t>(encoding);
  put32(8, width);
  put32(12, height);
  return h;
}

namespace {

std::shared_ptr<const std::vector<std::uint8_t>> frame_message(const RenderResult& r, image::BufferKind kind) {
  const auto png = image::encode_buffer_png(r.frame, kind);
  const auto header = frame_header(static_cast<std::uint32_t>(r.revision), kind,
                                   static_cast<std::uint32_t>(r.frame.buffers.width),
                                   static_cast<std::uint32_t>(r.frame.buffers.height));
  auto msg = std::make_shared<std::vector<std::uint8_t>>(header.size() + png.size());
  std::copy(header.begin(), header.end(), msg->begin());
  std::copy(png.begin(), png.end(), msg->begin() + static_cast<std::ptrdiff_t>(header.size()));
  return msg;
}

}  // namespace

Session::Session(SceneDescription scene) : scene_(std::move(scene)) {
  assets_ = std::make_unique<SceneAssets>(scene_, cache_);
}

Session::~Session() { stop_streaming(); }

std::uint64_t Session::revision() const {
  std::lock_guard lock(mutex_);
  return revision_;
}

json Session::scene_document() const {
  std::lock_guard lock(mutex_);
  return {{"revision", revision_}, {"scene", scene_to_json(scene_)}};
}

std::uint64_t Session::bump() {
  ++revision_;
  wake_.notify_all();
  return revision_;
}

std::uint64_t Session::set_transform(ObjectId id, const json& body) {
  std::lock_guard lock(mutex_);
  ObjectSpec* obj = scene_.find(id);
  if (!obj) throw NotFoundError("no object with id " + std::to_string(id));
  json merged = transform_to_json(obj->transform);
  if (!body.is_object()) throw SceneError("transform", "expected an object");
  merged.merge_patch(body);
  TransformSpec t = parse_transform(merged, "transform");
  try {
    (void)t.to_rigid();
  } catch (const std::invalid_argument& e) {
    throw SceneError("transform", e.what());
  }
  obj->transform = t;
  return bump();
}

std::uint64_t Session::set_light(const json& body) {
  std::vector<Light> lights;
  if (body.is_object() && body.contains("lights")) {
    if (!body.at("lights").is_array()) throw SceneError("lights", "expected an array");
    for (std::size_t i = 0; i < body.at("lights").size(); ++i) {
      lights.push_back(parse_light(body.at("lights")[i], "lights[" + std::to_string(i) + "]"));
    }
  } else {
    lights.push_back(parse_light(body, "light"));
  }
  std::lock_guard lock(mutex_);
  scene_.lights = std::move(lights);
  return bump();
}

std::uint64_t Session::set_camera(const json& body) {
  std::lock_guard lock(mutex_);
  if (!body.is_object()) throw SceneError("camera", "expected an object");
  json merged = camera_to_json(scene_.camera);
  merged.merge_patch(body);
  scene_.camera = parse_camera(merged, "camera");
  return bump();
}

Snapshot Session::snapshot() const {
  std::lock_guard lock(mutex_);
  Snapshot s;
  s.revision = revision_;
  s.scene = scene_;
  s.instances = assets_->instances(scene_);
  return s;
}

RenderResult Session::render(const Snapshot& snap) {
  RenderResult result = renderer_.render(snap);
  std::lock_guard lock(mutex_);
  last_info_ = result.info();
  return result;
}

std::optional<json> Session::last_render_info() const {
  std::lock_guard lock(mutex_);
  return last_info_;
}

void Session::start_streaming() {
  std::lock_guard lock(mutex_);
  if (worker_.joinable()) return;
  stopping_ = false;
  worker_ = std::thread([this] { worker_loop(); });
}

void Session::stop_streaming() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  wake_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void Session::subscribe(const std::shared_ptr<FrameSink>& sink) {
  std::lock_guard lock(mutex_);
  sinks_.push_back(sink);
  if (last_result_) sink->deliver(frame_message(*last_result_, sink->buffer()));
  wake_.notify_all();
}

void Session::unsubscribe(const FrameSink* sink) {
  std::lock_guard lock(mutex_);
  std::erase_if(sinks_, [&](const auto& w) {
    const auto s = w.lock();
    return !s || s.get() == sink;
  });
}

void Session::publish(const RenderResult& result, const std::vector<std::shared_ptr<FrameSink>>& sinks) {
  std::map<image::BufferKind, std::shared_ptr<const std::vector<std::uint8_t>>> encoded;
  for (const auto& sink : sinks) {
    auto& msg = encoded[sink->buffer()];
    if (!msg) msg = frame_message(result, sink->buffer());
    sink->deliver(msg);
  }
}

void Session::worker_loop() {
  for (;;) {
    Snapshot snap;
    {
      std::unique_lock lock(mutex_);
      wake_.wait(lock, [&] {
        std::erase_if(sinks_, [](const auto& w) { return w.expired(); });
        return stopping_ || (!sinks_.empty() && streamed_revision_ != revision_);
      });
      if (stopping_) return;
      snap.revision = revision_;
      snap.scene = scene_;
      snap.instances = assets_->instances(scene_);
    }
    // Edits arriving while this renders only bump the revision; the next pass takes the latest state.
    RenderResult result;
    try {
      result = renderer_.render(snap);
    } catch (const std::exception&) {
      std::lock_guard lock(mutex_);
      streamed_revision_ = snap.revision;
      continue;
    }
    ++frames_rendered_;
    auto shared = std::make_shared<const RenderResult>(std::move(result));
    std::vector<std::shared_ptr<FrameSink>> sinks;
    {
      std::lock_guard lock(mutex_);
      streamed_revision_ = shared->revision;
      last_result_ = shared;
      last_info_ = shared->info();
      for (const auto& w : sinks_) {
        if (auto s = w.lock()) sinks.push_back(std::move(s));
      }
    }
    publish(*shared, sinks);
  }
}

// ---------------------------------------------------------------------------------------------
// HTTP / WebSocket front end

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;

struct Target {
  std::string path;
  std::map<std::string, std::string> query;
};

Target split_target(std::string_view target) {
  Target t;
  const auto q = target.find('?');
  t.path = std::string(target.substr(0, q));
  if (q == std::string_view::npos) return t;
  std::string_view rest = target.substr(q + 1);
  while (!rest.empty()) {
    const auto amp = rest.find('&');
    const std::string_view pair = rest.substr(0, amp);
    const auto eq = pair.find('=');
    if (eq == std::string_view::npos) {
      t.query[std::string(pair)] = "";
    } else {
      t.query[std::string(pair.substr(0, eq))] = std::string(pair.substr(eq + 1));
    }
    if (amp == std::string_view::npos) break;
    rest = rest.substr(amp + 1);
  }
  return t;
}

image::BufferKind buffer_param(const Target& t) {
  const auto it = t.query.find("buffer");
  return it == t.query.end() ? image::BufferKind::kColor : image::parse_buffer_kind(it->second);
}

Response make_response(const Request& req, http::status status, std::string body, std::string_view type) {
  Response res{status, req.version()};
  res.set(http::field::server, "nedf-compose");
  res.set(http::field::content_type, std::string(type));
  res.set(http::field::access_control_allow_origin, "*");
  res.set(http::field::access_control_expose_headers,
          "X-Nedf-Revision, X-Nedf-Recomputed, X-Nedf-Full-Generation, X-Nedf-Timings");
  res.keep_alive(req.keep_alive());
  res.body() = std::move(body);
  res.prepare_payload();
  return res;
}

Response json_response(const Request& req, http::status status, const json& body) {
  return make_response(req, status, body.dump(), "application/json");
}

Response error_response(const Request& req, http::status status, const std::string& message) {
  return json_response(req, status, {{"error", message}});
}

class WsConnection : public FrameSink, public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(tcp::socket socket, std::shared_ptr<Session> session, image::BufferKind kind)
      : ws_(std::move(socket)), session_(std::move(session)), kind_(kind) {}

  image::BufferKind buffer() const override { return kind_; }

  void run(Request req) {
    ws_.binary(true);
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
  }

  void deliver(std::shared_ptr<const std::vector<std::uint8_t>> message) override {
    net::post(ws_.get_executor(), [self = shared_from_this(), message = std::move(message)]() mutable {
      if (self->closed_) return;
      if (self->writing_) {
        self->pending_ = std::move(message);  // latest wins; the older pending frame is dropped
        return;
      }
      self->write(std::move(message));
    });
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    session_->subscribe(shared_from_this());
    read();
  }

  void read() {
    ws_.async_read(inbound_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->session_->unsubscribe(self.get());
        return;
      }
      self->inbound_.consume(self->inbound_.size());
      self->read();
    });
  }

  void write(std::shared_ptr<const std::vector<std::uint8_t>> message) {
    writing_ = true;
    ws_.async_write(net::buffer(*message),
                    [self = shared_from_this(), message](beast::error_code ec, std::size_t) {
                      self->writing_ = false;
                      if (ec) {
                        self->closed_ = true;
                        self->session_->unsubscribe(self.get());
                        return;
                      }
                      if (self->pending_) self->write(std::exchange(self->pending_, nullptr));
                    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<Session> session_;
  image::BufferKind kind_;
  beast::flat_buffer inbound_;
  bool writing_ = false;
  bool closed_ = false;
  std::shared_ptr<const std::vector<std::uint8_t>> pending_;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket socket, std::shared_ptr<Session> session, net::thread_pool& render_pool)
      : stream_(std::move(socket)), session_(std::move(session)), render_pool_(render_pool) {}

  void run() {
    net::dispatch(stream_.get_executor(), [self = shared_from_this()] { self->read(); });
  }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(60));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      self->handle();
    });
  }

  void send(Response res) {
    auto holder = std::make_shared<Response>(std::move(res));
    http::async_write(stream_, *holder, [self = shared_from_this(), holder](beast::error_code ec, std::size_t) {
      if (ec || !holder->keep_alive()) {
        self->close();
        return;
      }
      self->read();
    });
  }

  void close() {
    beast::error_code ec;
    stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
  }

  void handle() {
    const Target target = split_target(std::string_view(req_.target().data(), req_.target().size()));
    try {
      if (websocket::is_upgrade(req_)) {
        if (target.path != "/api/stream") {
          send(error_response(req_, http::status::not_found, "no websocket endpoint at " + target.path));
          return;
        }
        const image::BufferKind kind = buffer_param(target);
        stream_.expires_never();
        std::make_shared<WsConnection>(stream_.release_socket(), session_, kind)->run(std::move(req_));
        return;
      }
      route(target);
    } catch (const NotFoundError& e) {
      send(error_response(req_, http::status::not_found, e.what()));
    } catch (const json::exception& e) {
      send(error_response(req_, http::status::bad_request, std::string("invalid JSON body: ") + e.what()));
    } catch (const std::invalid_argument& e) {
      send(error_response(req_, http::status::bad_request, e.what()));
    } catch (const std::exception& e) {
      send(error_response(req_, http::status::internal_server_error, e.what()));
    }
  }

  void route(const Target& target) {
    const auto method = req_.method();
    const std::string& path = target.path;
    if (method == http::verb::options) {
      Response res = make_response(req_, http::status::no_content, "", "text/plain");
      res.set(http::field::access_control_allow_methods, "GET, PUT, POST, OPTIONS");
      res.set(http::field::access_control_allow_headers, "Content-Type");
      send(std::move(res));
      return;
    }
    if (path == "/api/scene") {
      if (method != http::verb::get) return method_not_allowed();
      send(json_response(req_, http::status::ok, session_->scene_document()));
      return;
    }
    if (path == "/api/stats") {
      if (method != http::verb::get) return method_not_allowed();
      const auto info = session_->last_render_info();
      send(json_response(req_, http::status::ok,
                         {{"revision", session_->revision()},
                          {"last_render", info ? *info : json(nullptr)},
                          {"frames_streamed", session_->frames_rendered()}}));
      return;
    }
    if (path == "/api/light" || path == "/api/camera") {
      if (method != http::verb::put) return method_not_allowed();
      const json body = json::parse(req_.body());
      const auto rev = path == "/api/light" ? session_->set_light(body) : session_->set_camera(body);
      send(json_response(req_, http::status::ok, {{"revision", rev}}));
      return;
    }
    constexpr std::string_view kObject = "/api/object/";
    constexpr std::string_view kTransform = "/transform";
    if (path.starts_with(kObject) && path.ends_with(kTransform) && path.size() > kObject.size() + kTransform.size()) {
      if (method != http::verb::put) return method_not_allowed();
      const std::string id_text = path.substr(kObject.size(), path.size() - kObject.size() - kTransform.size());
      std::size_t used = 0;
      long id = -1;
      try {
        id = std::stol(id_text, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != id_text.size() || id < 0 || id > std::numeric_limits<ObjectId>::max()) {
        throw NotFoundError("no object with id " + id_text);
      }
      const json body = json::parse(req_.body());
      const auto rev = session_->set_transform(static_cast<ObjectId>(id), body);
      send(json_response(req_, http::status::ok, {{"revision", rev}}));
      return;
    }
    if (path == "/api/render") {
      if (method != http::verb::post) return method_not_allowed();
      const image::BufferKind kind = buffer_param(target);
      // Render off the I/O thread so edits stay responsive.
      net::post(render_pool_, [self = shared_from_this(), kind] {
        Response res;
        try {
          const RenderResult r = self->session_->render_latest();
          const auto png = image::encode_buffer_png(r.frame, kind);
          res = self->make_png(std::string(png.begin(), png.end()), r);
        } catch (const std::exception& e) {
          res = error_response(self->req_, http::status::internal_server_error, e.what());
        }
        net::post(self->stream_.get_executor(), [self, res = std::move(res)]() mutable { self->send(std::move(res)); });
      });
      return;
    }
    send(error_response(req_, http::status::not_found, "no endpoint at " + path));
  }

  Response make_png(std::string body, const RenderResult& r) {
    Response res = make_response(req_, http::status::ok, std::move(body), "image/png");
    std::string ids;
    for (ObjectId id : r.recomputed) ids += (ids.empty() ? "" : ",") + std::to_string(id);
    res.set("X-Nedf-Revision", std::to_string(r.revision));
    res.set("X-Nedf-Recomputed", ids);
    res.set("X-Nedf-Full-Generation", r.full_generation ? "1" : "0");
    res.set("X-Nedf-Timings", timings_to_json(r.frame.timings));
    return res;
  }

  void method_not_allowed() { send(error_response(req_, http::status::method_not_allowed, "method not allowed")); }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  Request req_;
  std::shared_ptr<Session> session_;
  net::thread_pool& render_pool_;
};

}  // namespace

struct Server::Impl {
  std::shared_ptr<Session> session;
  ServerOptions options;
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  net::signal_set signals{ioc};
  net::thread_pool render_pool{1};
  std::thread io_thread;
  std::mutex stop_mutex;
  std::condition_variable stop_cv;
  bool stop_requested = false;
  bool stopped = false;

  void accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      std::make_shared<HttpConnection>(std::move(socket), session, render_pool)->run();
      accept();
    });
  }

  void request_stop() {
    {
      std::lock_guard lock(stop_mutex);
      stop_requested = true;
    }
    stop_cv.notify_all();
  }
};

Server::Server(std::shared_ptr<Session> session, ServerOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->session = std::move(session);
  impl_->options = std::move(options);
}

Server::~Server() { stop(); }

unsigned short Server::start() {
  Impl& s = *impl_;
  const tcp::endpoint endpoint{net::ip::make_address(s.options.address), s.options.port};
  s.acceptor.open(endpoint.protocol());
  s.acceptor.set_option(net::socket_base::reuse_address(true));
  s.acceptor.bind(endpoint);
  s.acceptor.listen(net::socket_base::max_listen_connections);
  s.signals.add(SIGINT);
  s.signals.add(SIGTERM);
  s.signals.async_wait([&s](beast::error_code ec, int) {
    if (!ec) s.request_stop();
  });
  s.session->start_streaming();
  s.accept();
  s.io_thread = std::thread([&s] { s.ioc.run(); });
  return s.acceptor.local_endpoint().port();
}

void Server::wait() {
  std::unique_lock lock(impl_->stop_mutex);
  impl_->stop_cv.wait(lock, [&] { return impl_->stop_requested; });
}

void Server::stop() {
  Impl& s = *impl_;
  {
    std::lock_guard lock(s.stop_mutex);
    if (s.stopped) return;
    s.stopped = true;
    s.stop_requested = true;
  }
  s.stop_cv.notify_all();
  s.session->stop_streaming();
  net::post(s.ioc, [&s] {
    beast::error_code ec;
    s.acceptor.close(ec);
    s.signals.cancel(ec);
  });
  s.ioc.stop();
  if (s.io_thread.joinable()) s.io_thread.join();
  s.render_pool.join();
}

}  // namespace nedf::service
