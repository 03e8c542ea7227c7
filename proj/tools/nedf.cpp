// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

// nedf: train depth fields, render and animate scenes, benchmark the pipeline, serve the viewer API.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nedf/binary_io.hpp"
#include "nedf/image_io.hpp"
#include "nedf/parallel.hpp"
#include "nedf/pipeline.hpp"
#include "nedf/scene.hpp"
#include "nedf/service.hpp"
#include "nedf/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nedf;

namespace {

// Exit codes; messages on stderr start with "nedf: error[<category>]: ".
constexpr int kExitUsage = 2;
constexpr int kExitScene = 3;
constexpr int kExitIo = 4;
constexpr int kExitTraining = 5;
constexpr int kExitOther = 1;

struct CliError : std::runtime_error {
  CliError(int code, std::string category, const std::string& what)
      : std::runtime_error(what), exit_code(code), category(std::move(category)) {}
  int exit_code;
  std::string category;
};

void require_parent_dir(const fs::path& path) {
  const fs::path parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) throw CliError(kExitIo, "io", "output directory does not exist: " + parent.string());
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ----- train --------------------------------------------------------------------------------

struct TrainArgs {
  std::string geometry = "sphere";
  std::string out;
  std::string profile = "desk";
  std::optional<int> iterations;
  std::optional<int> batch;
  std::string sampler;
  double relax = 1.5;
  int eval_rays = 4000;
  int log_every = 500;
};

SdfPrimitive resolve_geometry(const std::string& spec) {
  if (spec == "sphere") return SdfPrimitive::sphere({0, 0, 0}, 1.0);
  if (spec == "box") return SdfPrimitive::box({0, 0, 0}, {0.8, 0.8, 0.8});
  if (spec == "torus") return SdfPrimitive::torus({0, 0, 0}, 0.8, 0.3);
  json doc;
  try {
    if (!spec.empty() && spec.front() == '{') {
      doc = json::parse(spec);
    } else {
      std::ifstream in(spec);
      if (!in) throw CliError(kExitIo, "io", "cannot open geometry file " + spec);
      doc = json::parse(in);
    }
  } catch (const json::parse_error& e) {
    throw CliError(kExitScene, "scene", std::string("geometry is not valid JSON: ") + e.what());
  }
  GeometrySpec g = parse_geometry(doc, "geometry");
  if (!std::holds_alternative<SdfPrimitive>(g.shape)) {
    throw CliError(kExitUsage, "usage", "train supports analytic geometry only");
  }
  return std::get<SdfPrimitive>(g.shape);
}

int cmd_train(const TrainArgs& a, std::uint64_t seed) {
  require_parent_dir(a.out);
  TrainingProfile profile;
  if (a.profile == "desk") {
    profile = TrainingProfile::desk();
  } else if (a.profile == "full") {
    profile = TrainingProfile::full();
  } else {
    throw CliError(kExitUsage, "usage", "unknown profile \"" + a.profile + "\" (desk|full)");
  }
  if (a.iterations) profile.options.iterations = *a.iterations;
  if (a.batch) profile.options.batch_size = *a.batch;
  if (a.sampler == "direct") profile.options.sampler.mode = RaySampler::kDirect;
  if (a.sampler == "views") profile.options.sampler.mode = RaySampler::kViews;
  profile.options.seed = seed;

  const AnalyticOracle oracle(resolve_geometry(a.geometry));
  NedfModel model = NedfModel::create(oracle.bounds(), profile.mlp, seed, a.relax);
  std::printf("profile %s: D_f=%d blocks=%d batch=%d iterations=%d lr=%g l=%.6f fine_bin=%.3g\n", a.profile.c_str(),
              profile.mlp.feature_dim, profile.mlp.blocks, profile.options.batch_size, profile.options.iterations,
              profile.options.learning_rate, model.config().half_range, model.config().fine_bin_width());
  const int every = std::max(1, a.log_every);
  profile.options.on_iteration = [&](int it, const LossBreakdown& l) {
    if (it % every == 0 || it + 1 == profile.options.iterations) {
      std::printf("iter %6d loss %.5f (coarse %.5f fine %.5f alpha %.5f)\n", it, l.total, l.coarse, l.fine, l.alpha);
      std::fflush(stdout);
    }
  };
  std::vector<double> losses;
  try {
    losses = train(model, oracle, profile.options);
  } catch (const TrainingError& e) {
    throw CliError(kExitTraining, "training", e.what());
  }
  model.save(a.out);
  if (!losses.empty()) {
    std::printf("loss first %.5f min %.5f last %.5f\n", losses.front(),
                *std::min_element(losses.begin(), losses.end()), losses.back());
  }
  const DepthEvaluation ev = evaluate_depth(model, oracle, a.eval_rays, seed ^ 0x5EEDull, profile.options.sampler);
  std::printf("held-out rays %zu both-hit %zu mask accuracy %.4f median |depth err| %.6g (%.2f fine bins) mean %.6g\n",
              ev.rays, ev.both_hit, ev.mask_accuracy, ev.median_abs_error, ev.median_abs_error / ev.fine_bin_width,
              ev.mean_abs_error);
  std::printf("wrote %s\n", a.out.c_str());
  return 0;
}

// ----- shared render plumbing ---------------------------------------------------------------

struct RenderFlags {
  std::optional<bool> shadows;
  std::optional<bool> resample;
};

RenderConfig effective_config(const SceneDescription& scene, const RenderFlags& f) {
  RenderConfig cfg = scene.render_config();
  if (f.shadows) cfg.shadows = *f.shadows;
  if (f.resample) cfg.resample = *f.resample;
  return cfg;
}

std::optional<bool> on_off(const std::string& v, const char* flag) {
  if (v.empty()) return std::nullopt;
  if (v == "on") return true;
  if (v == "off") return false;
  throw CliError(kExitUsage, "usage", std::string(flag) + " expects on|off");
}

void write_color(const fs::path& prefix, const Frame& frame) {
  const auto rgb = image::to_rgb8(frame.image);
  const int w = frame.buffers.width;
  const int h = frame.buffers.height;
  io::write_file(fs::path(prefix.string() + ".png"), image::encode_png_rgb8(w, h, rgb));
  image::write_ppm(fs::path(prefix.string() + ".ppm"), w, h, rgb);
}

// ----- render -------------------------------------------------------------------------------

struct RenderArgs {
  std::string scene;
  std::string out;
  std::string shadows;
  std::optional<bool> resample;
  bool buffers = false;
  std::optional<double> time;
  std::string external_depth;
  std::string external_color;
  int external_id = 1 << 30;
};

ExternalGBuffer load_external(const RenderArgs& a, const Camera& camera) {
  ExternalGBuffer ext;
  const image::DepthPlane plane = image::read_depth_raw(a.external_depth);
  const image::Image color = image::read_png(a.external_color);
  if (plane.width != camera.width || plane.height != camera.height || color.width != camera.width ||
      color.height != camera.height) {
    throw CliError(kExitIo, "io", "external G-buffer size does not match the camera");
  }
  if (color.channels != 3) throw CliError(kExitIo, "io", "external color must be an RGB PNG");
  ext.depth.resize(plane.depth.size());
  for (std::size_t i = 0; i < plane.depth.size(); ++i) ext.depth[i] = static_cast<double>(plane.depth[i]) * plane.scale;
  const double max_v = color.bit_depth == 16 ? 65535.0 : 255.0;
  ext.color.resize(ext.depth.size());
  for (std::size_t i = 0; i < ext.color.size(); ++i) {
    ext.color[i] = {color.samples[3 * i] / max_v, color.samples[3 * i + 1] / max_v, color.samples[3 * i + 2] / max_v};
  }
  ext.pseudo_id = a.external_id;
  return ext;
}

int cmd_render(const RenderArgs& a) {
  require_parent_dir(a.out);
  const SceneDescription scene = load_scene(a.scene);
  ResourceCache cache;
  const SceneAssets assets(scene, cache);
  const auto instances = assets.instances(scene, a.time);
  const Camera camera = scene.camera.to_camera();
  const RenderConfig cfg = effective_config(scene, {on_off(a.shadows, "--shadows"), a.resample});
  std::optional<ExternalGBuffer> external;
  if (!a.external_depth.empty() || !a.external_color.empty()) {
    if (a.external_depth.empty() || a.external_color.empty()) {
      throw CliError(kExitUsage, "usage", "--external-depth and --external-color go together");
    }
    external = load_external(a, camera);
  }
  const Frame frame = compose_frame(instances, camera, scene.lights, cfg, external ? &*external : nullptr);
  write_color(a.out, frame);
  if (a.buffers) {
    const int w = frame.buffers.width;
    const int h = frame.buffers.height;
    image::DepthPlane plane{w, h, 1.0f, {}};
    plane.depth.assign(frame.buffers.depth.begin(), frame.buffers.depth.end());
    image::write_depth_raw(a.out + "_depth.ndpt", plane);
    io::write_file(a.out + "_depth.png", image::encode_buffer_png(frame, image::BufferKind::kDepth));
    io::write_file(a.out + "_id.png", image::encode_buffer_png(frame, image::BufferKind::kId));
    if (cfg.shadows) io::write_file(a.out + "_shadow.png", image::encode_buffer_png(frame, image::BufferKind::kShadow));
  }
  const auto rgb = image::to_rgb8(frame.image);
  std::printf("rendered %dx%d objects=%zu shadows=%s resample=%s resampled=%zu hash=%s\n", camera.width,
              camera.height, instances.size(), cfg.shadows ? "on" : "off", cfg.resample ? "on" : "off",
              frame.shading.resampled, hex64(fnv1a(rgb)).c_str());
  std::printf("timings %s\n", timings_to_json(frame.timings).c_str());
  return 0;
}

// ----- animate ------------------------------------------------------------------------------

struct AnimateArgs {
  std::string scene;
  std::string out_dir;
  double t0 = 0.0;
  std::optional<double> t1;
  double fps = 30.0;
  int frames = 120;
  std::string shadows;
  std::optional<bool> resample;
};

int cmd_animate(const AnimateArgs& a) {
  if (!fs::is_directory(a.out_dir)) throw CliError(kExitIo, "io", "output directory does not exist: " + a.out_dir);
  if (!(a.fps > 0.0)) throw CliError(kExitUsage, "usage", "--fps must be > 0");
  int count = a.frames;
  if (a.t1) {
    if (*a.t1 < a.t0) throw CliError(kExitUsage, "usage", "--t1 must be >= --t0");
    count = static_cast<int>(std::floor((*a.t1 - a.t0) * a.fps + 1e-9)) + 1;
  }
  if (count < 1) throw CliError(kExitUsage, "usage", "need at least one frame");

  SceneDescription scene = load_scene(a.scene);
  ResourceCache cache;
  const SceneAssets assets(scene, cache);
  const RenderConfig cfg = effective_config(scene, {on_off(a.shadows, "--shadows"), a.resample});
  scene.render.shadows = cfg.shadows;
  scene.render.resample = cfg.resample;
  service::Renderer renderer;  // step-1 planes of objects that did not move are reused
  std::ofstream csv(fs::path(a.out_dir) / "timings.csv");
  if (!csv) throw CliError(kExitIo, "io", "cannot write timings.csv in " + a.out_dir);
  csv << "frame,time,generation_s,shading_s,shadow_s,total_s,resample_ratio,recomputed\n";
  for (int k = 0; k < count; ++k) {
    const double t = a.t0 + k / a.fps;
    service::Snapshot snap{static_cast<std::uint64_t>(k), scene, assets.instances(scene, t)};
    const service::RenderResult r = renderer.render(snap);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.png", k);
    io::write_file(fs::path(a.out_dir) / name, image::encode_buffer_png(r.frame, image::BufferKind::kColor));
    const auto& tm = r.frame.timings;
    csv << k << ',' << t << ',' << tm.generation << ',' << tm.shading << ',' << tm.shadow << ',' << tm.total << ','
        << tm.resample_ratio << ',' << r.recomputed.size() << '\n';
  }
  std::printf("wrote %d frames and timings.csv to %s\n", count, a.out_dir.c_str());
  return 0;
}

// ----- bench --------------------------------------------------------------------------------

struct BenchArgs {
  std::string scene;
  int repetitions = 5;
  std::string out;
  std::string shadows;
  std::optional<bool> resample;
};

json mean_std(const std::vector<double>& xs) {
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {{"mean", mean}, {"stddev", std::sqrt(var / static_cast<double>(xs.size()))}};
}

int cmd_bench(const BenchArgs& a) {
  if (a.repetitions < 1) throw CliError(kExitUsage, "usage", "--repetitions must be >= 1");
  if (!a.out.empty()) require_parent_dir(a.out);
  const SceneDescription scene = load_scene(a.scene);
  ResourceCache cache;
  const SceneAssets assets(scene, cache);
  const auto instances = assets.instances(scene);
  const Camera camera = scene.camera.to_camera();
  const RenderConfig cfg = effective_config(scene, {on_off(a.shadows, "--shadows"), a.resample});
  std::vector<double> gen, shade, shadow, total, ratio;
  for (int r = 0; r < a.repetitions; ++r) {
    const StepTimings t = compose_frame(instances, camera, scene.lights, cfg).timings;
    gen.push_back(t.generation);
    shade.push_back(t.shading);
    shadow.push_back(t.shadow);
    total.push_back(t.total);
    ratio.push_back(t.resample_ratio);
  }
  json report;
  report["scene"] = a.scene;
  report["repetitions"] = a.repetitions;
  report["width"] = camera.width;
  report["height"] = camera.height;
  report["objects"] = instances.size();
  report["resample"] = cfg.resample;
  report["shadows"] = cfg.shadows;
  report["threads"] = max_threads();
  report["steps"] = {{"generation", mean_std(gen)}, {"shading", mean_std(shade)}, {"shadow", mean_std(shadow)}};
  report["total"] = mean_std(total);
  const double sum = report["steps"]["generation"]["mean"].get<double>() +
                     report["steps"]["shading"]["mean"].get<double>() + report["steps"]["shadow"]["mean"].get<double>();
  report["shares"] = {{"generation", sum > 0 ? report["steps"]["generation"]["mean"].get<double>() / sum : 0.0},
                      {"shading", sum > 0 ? report["steps"]["shading"]["mean"].get<double>() / sum : 0.0},
                      {"shadow", sum > 0 ? report["steps"]["shadow"]["mean"].get<double>() / sum : 0.0}};
  report["resample_ratio"] = mean_std(ratio)["mean"];
  const std::string text = report.dump(2);
  std::printf("%s\n", text.c_str());
  if (!a.out.empty()) {
    std::ofstream out(a.out);
    out << text << '\n';
    if (!out) throw CliError(kExitIo, "io", "cannot write " + a.out);
  }
  return 0;
}

// ----- serve --------------------------------------------------------------------------------

struct ServeArgs {
  std::string scene;
  std::string address = "127.0.0.1";
  int port = 7870;
};

int cmd_serve(const ServeArgs& a) {
  if (a.port < 0 || a.port > 65535) throw CliError(kExitUsage, "usage", "--port must be in [0, 65535]");
  auto session = std::make_shared<service::Session>(load_scene(a.scene));
  service::Server server(session, {a.address, static_cast<unsigned short>(a.port)});
  const unsigned short port = server.start();
  std::printf("listening on http://%s:%u\n", a.address.c_str(), port);
  std::fflush(stdout);
  server.wait();
  server.stop();
  return 0;
}

int run_threads_flag(int threads) {
  if (threads > 0) return threads;
  if (const char* env = std::getenv("NEDF_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw CliError(kExitUsage, "usage", "NEDF_THREADS must be a positive integer");
    return static_cast<int>(v);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural depth field compositing: train, render, animate, bench, serve"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  int threads = 0;
  app.add_option("--seed", seed, "Seed for weight init and ray sampling")->capture_default_str();
  app.add_option("--threads", threads, "Worker thread cap (default: NEDF_THREADS or all cores)");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Distill an analytic geometry into a depth-field model");
  train->add_option("--geometry", train_args.geometry, "sphere | box | torus | geometry JSON file | inline JSON")
      ->capture_default_str();
  train->add_option("--out", train_args.out, "Output model file (.nedm)")->required();
  train->add_option("--profile", train_args.profile, "desk | full")->capture_default_str();
  train->add_option("--iterations", train_args.iterations, "Override the profile's iteration count");
  train->add_option("--batch", train_args.batch, "Override the profile's batch size");
  train->add_option("--sampler", train_args.sampler, "direct | views (default per profile)")
      ->check(CLI::IsMember({"direct", "views"}));
  train->add_option("--relax", train_args.relax, "Bounding-box relaxation factor")->capture_default_str();
  train->add_option("--eval-rays", train_args.eval_rays, "Held-out rays for the depth report")->capture_default_str();
  train->add_option("--log-every", train_args.log_every, "Loss print interval")->capture_default_str();

  RenderArgs render_args;
  auto* render = app.add_subcommand("render", "Render a scene to PNG/PPM and optional buffer planes");
  render->add_option("scene", render_args.scene, "Scene JSON file")->required();
  render->add_option("--out", render_args.out, "Output prefix (writes <prefix>.png and <prefix>.ppm)")->required();
  render->add_option("--shadows", render_args.shadows, "on | off (default: scene setting)");
  render->add_flag("--resample,!--no-resample", render_args.resample, "Volume-render outlier pixels");
  render->add_flag("--buffers", render_args.buffers, "Also write depth (.ndpt + .png), id and shadow planes");
  render->add_option("--time", render_args.time, "Evaluate animation tracks at this time (seconds)");
  render->add_option("--external-depth", render_args.external_depth, "External depth plane (.ndpt)");
  render->add_option("--external-color", render_args.external_color, "External color image (PNG)");
  render->add_option("--external-id", render_args.external_id, "Pseudo object id for external pixels");

  AnimateArgs animate_args;
  auto* animate = app.add_subcommand("animate", "Render a frame sequence with a per-frame timing log");
  animate->add_option("scene", animate_args.scene, "Scene JSON file")->required();
  animate->add_option("--out-dir", animate_args.out_dir, "Existing output directory")->required();
  animate->add_option("--t0", animate_args.t0, "Start time (s)")->capture_default_str();
  animate->add_option("--t1", animate_args.t1, "End time (s); overrides --frames");
  animate->add_option("--fps", animate_args.fps, "Frames per second")->capture_default_str();
  animate->add_option("--frames", animate_args.frames, "Frame count")->capture_default_str();
  animate->add_option("--shadows", animate_args.shadows, "on | off");
  animate->add_flag("--resample,!--no-resample", animate_args.resample, "Volume-render outlier pixels");

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Per-step timing report (JSON)");
  bench->add_option("scene", bench_args.scene, "Scene JSON file")->required();
  bench->add_option("--repetitions", bench_args.repetitions, "Frames to time")->capture_default_str();
  bench->add_option("--out", bench_args.out, "Also write the report here");
  bench->add_option("--shadows", bench_args.shadows, "on | off");
  bench->add_flag("--resample,!--no-resample", bench_args.resample, "Volume-render outlier pixels");

  ServeArgs serve_args;
  auto* serve = app.add_subcommand("serve", "Serve the interactive composition API");
  serve->add_option("scene", serve_args.scene, "Scene JSON file")->required();
  serve->add_option("--port", serve_args.port, "TCP port (0 = any free port)")->capture_default_str();
  serve->add_option("--address", serve_args.address, "Bind address")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "nedf: error[usage]: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    set_max_threads(run_threads_flag(threads));
    if (*train) return cmd_train(train_args, seed);
    if (*render) return cmd_render(render_args);
    if (*animate) return cmd_animate(animate_args);
    if (*bench) return cmd_bench(bench_args);
    if (*serve) return cmd_serve(serve_args);
  } catch (const CliError& e) {
    std::cerr << "nedf: error[" << e.category << "]: " << e.what() << '\n';
    return e.exit_code;
  } catch (const SceneError& e) {
    std::cerr << "nedf: error[scene]: " << e.what() << '\n';
    return kExitScene;
  } catch (const nn::FormatError& e) {
    std::cerr << "nedf: error[io]: " << e.what() << '\n';
    return kExitIo;
  } catch (const nn::DimensionError& e) {
    std::cerr << "nedf: error[io]: " << e.what() << '\n';
    return kExitIo;
  } catch (const FieldFormatError& e) {
    std::cerr << "nedf: error[io]: " << e.what() << '\n';
    return kExitIo;
  } catch (const image::ImageError& e) {
    std::cerr << "nedf: error[io]: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "nedf: error[internal]: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitUsage;
}
