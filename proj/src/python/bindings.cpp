// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nedf/depth_field.hpp"
#include "nedf/fields.hpp"
#include "nedf/image_io.hpp"
#include "nedf/pipeline.hpp"
#include "nedf/scene.hpp"
#include "nedf/service.hpp"
#include "nedf/training.hpp"

namespace py = pybind11;
using namespace nedf;
using nlohmann::json;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Vec3> rows_of(const DoubleArray& a, const char* name) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw std::invalid_argument(std::string(name) + " must have shape (N, 3)");
  const auto v = a.unchecked<2>();
  std::vector<Vec3> out(static_cast<std::size_t>(a.shape(0)));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[static_cast<std::size_t>(i)] = {v(i, 0), v(i, 1), v(i, 2)};
  return out;
}

std::vector<Ray> rays_of(const DoubleArray& origins, const DoubleArray& directions) {
  const auto o = rows_of(origins, "origins");
  const auto d = rows_of(directions, "directions");
  if (o.size() != d.size()) throw std::invalid_argument("origins and directions differ in length");
  std::vector<Ray> rays(o.size());
  for (std::size_t i = 0; i < o.size(); ++i) rays[i] = Ray::make(o[i], d[i]);
  return rays;
}

SdfPrimitive analytic_geometry(const py::object& geometry) {
  const json doc = json::parse(py::str(py::module_::import("json").attr("dumps")(geometry)).cast<std::string>());
  GeometrySpec g = parse_geometry(doc, "geometry");
  if (!std::holds_alternative<SdfPrimitive>(g.shape)) throw std::invalid_argument("training needs analytic geometry");
  return std::get<SdfPrimitive>(g.shape);
}

template <typename T>
py::array_t<T> image_array(const std::vector<T>& data, int h, int w) {
  py::array_t<T> out({h, w});
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

py::dict frame_dict(const Frame& f) {
  const int w = f.buffers.width;
  const int h = f.buffers.height;
  py::array_t<double> image({h, w, 3});
  double* p = image.mutable_data();
  for (const Rgb& c : f.image) {
    *p++ = c.r;
    *p++ = c.g;
    *p++ = c.b;
  }
  py::dict d;
  d["image"] = image;
  d["depth"] = image_array(f.buffers.depth, h, w);
  d["id"] = image_array(f.buffers.id, h, w);
  d["shadow"] = image_array(f.buffers.shadow, h, w);
  d["timings"] = py::dict(py::arg("generation") = f.timings.generation, py::arg("shading") = f.timings.shading,
                          py::arg("shadow") = f.timings.shadow, py::arg("total") = f.timings.total,
                          py::arg("resample_ratio") = f.timings.resample_ratio);
  d["shaded"] = f.shading.shaded;
  d["outliers"] = f.shading.outliers;
  d["resampled"] = f.shading.resampled;
  return d;
}

class PyScene {
 public:
  explicit PyScene(SceneDescription scene) : scene_(std::move(scene)), assets_(scene_, cache_) {}

  py::dict render(std::optional<double> time, std::optional<bool> shadows, std::optional<bool> resample) {
    RenderConfig cfg = scene_.render_config();
    if (shadows) cfg.shadows = *shadows;
    if (resample) cfg.resample = *resample;
    const auto instances = assets_.instances(scene_, time);
    Frame f;
    {
      py::gil_scoped_release release;
      f = compose_frame(instances, scene_.camera.to_camera(), scene_.lights, cfg);
    }
    return frame_dict(f);
  }

  py::bytes render_png(const std::string& buffer) {
    const auto kind = image::parse_buffer_kind(buffer);
    const auto instances = assets_.instances(scene_);
    std::vector<std::uint8_t> png;
    {
      py::gil_scoped_release release;
      const Frame f = compose_frame(instances, scene_.camera.to_camera(), scene_.lights, scene_.render_config());
      png = image::encode_buffer_png(f, kind);
    }
    return {reinterpret_cast<const char*>(png.data()), png.size()};
  }

  std::string to_json() const { return serialize_scene(scene_); }
  std::vector<ObjectId> object_ids() const {
    std::vector<ObjectId> ids;
    for (const auto& o : scene_.objects) ids.push_back(o.id);
    return ids;
  }
  std::size_t models_loaded() const { return cache_.models_loaded(); }
  std::pair<int, int> size() const { return {scene_.camera.width, scene_.camera.height}; }

 private:
  SceneDescription scene_;
  ResourceCache cache_;
  SceneAssets assets_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Depth-field compositing core";

  py::register_exception<SceneError>(m, "SceneError", PyExc_ValueError);

  py::class_<ClassifierConfig>(m, "ClassifierConfig")
      .def(py::init(&ClassifierConfig::make), py::arg("half_range"), py::arg("n_coarse") = 64,
           py::arg("n_fine") = 128)
      .def_readonly("half_range", &ClassifierConfig::half_range)
      .def_readonly("n_coarse", &ClassifierConfig::n_coarse)
      .def_readonly("n_fine", &ClassifierConfig::n_fine)
      .def_property_readonly("fine_bin_width", &ClassifierConfig::fine_bin_width);

  m.def(
      "segment",
      [](double mu, const ClassifierConfig& cfg) {
        const BinPair b = segment(mu, cfg);
        return std::make_pair(b.coarse, b.fine);
      },
      py::arg("mu"), py::arg("config"), "Quantize mu into (coarse, fine) bins.");
  m.def(
      "unsegment",
      [](std::pair<int, int> bins, const ClassifierConfig& cfg, bool centered) {
        return unsegment(BinPair{bins.first, bins.second}, cfg, centered);
      },
      py::arg("bins"), py::arg("config"), py::arg("centered") = false);

  py::class_<NedfModel, std::shared_ptr<NedfModel>>(m, "Model")
      .def_static("load", [](const std::filesystem::path& p) { return std::make_shared<NedfModel>(NedfModel::load(p)); })
      .def("save", &NedfModel::save)
      .def_property_readonly("half_range", &NedfModel::half_range)
      .def_property_readonly("fine_bin_width", &NedfModel::fine_bin_width)
      .def_property_readonly("relaxed_box",
                             [](const NedfModel& m) {
                               const Aabb b = m.relaxed_box();
                               return std::make_pair(std::array{b.min.x, b.min.y, b.min.z},
                                                     std::array{b.max.x, b.max.y, b.max.z});
                             })
      .def(
          "query",
          [](const NedfModel& model, const DoubleArray& origins, const DoubleArray& directions) {
            const auto rays = rays_of(origins, directions);
            std::vector<LocalHit> hits(rays.size());
            {
              py::gil_scoped_release release;
              model.query_local(rays, hits);
            }
            py::array_t<double> mu(static_cast<py::ssize_t>(hits.size()));
            py::array_t<bool> alpha(static_cast<py::ssize_t>(hits.size()));
            for (std::size_t i = 0; i < hits.size(); ++i) {
              mu.mutable_data()[i] = hits[i].mu;
              alpha.mutable_data()[i] = hits[i].alpha;
            }
            return py::make_tuple(mu, alpha);
          },
          py::arg("origins"), py::arg("directions"), "Local-space (mu, alpha) per ray.")
      .def(
          "query_depth",
          [](const NedfModel& model, const DoubleArray& origins, const DoubleArray& directions) {
            const auto rays = rays_of(origins, directions);
            py::array_t<double> depth(static_cast<py::ssize_t>(rays.size()));
            for (std::size_t i = 0; i < rays.size(); ++i) {
              depth.mutable_data()[i] = query_depth_world(model, rays[i], RigidTransform::identity()).depth;
            }
            return depth;
          },
          py::arg("origins"), py::arg("directions"), "Depth along each ray; inf where the mask is off.");

  m.def(
      "train",
      [](const py::object& geometry, const std::string& profile, std::optional<int> iterations,
         std::optional<int> batch_size, std::uint64_t seed, int eval_rays) {
        TrainingProfile p = profile == "full" ? TrainingProfile::full() : TrainingProfile::desk();
        if (profile != "full" && profile != "desk") throw std::invalid_argument("profile must be desk or full");
        if (iterations) p.options.iterations = *iterations;
        if (batch_size) p.options.batch_size = *batch_size;
        p.options.seed = seed;
        const AnalyticOracle oracle(analytic_geometry(geometry));
        auto model = std::make_shared<NedfModel>(NedfModel::create(oracle.bounds(), p.mlp, seed));
        std::vector<double> losses;
        DepthEvaluation ev;
        {
          py::gil_scoped_release release;
          losses = nedf::train(*model, oracle, p.options);
          ev = evaluate_depth(*model, oracle, eval_rays, seed ^ 0x5EEDull, p.options.sampler);
        }
        py::dict evaluation(py::arg("rays") = ev.rays, py::arg("mask_accuracy") = ev.mask_accuracy,
                            py::arg("median_abs_error") = ev.median_abs_error,
                            py::arg("mean_abs_error") = ev.mean_abs_error,
                            py::arg("fine_bin_width") = ev.fine_bin_width);
        return py::make_tuple(model, losses, evaluation);
      },
      py::arg("geometry"), py::arg("profile") = "desk", py::arg("iterations") = py::none(),
      py::arg("batch_size") = py::none(), py::arg("seed") = 0, py::arg("eval_rays") = 2000,
      "Distill an analytic shape; returns (model, losses, held-out evaluation).");

  py::class_<PyScene>(m, "Scene")
      .def(py::init([](const std::filesystem::path& p) { return std::make_unique<PyScene>(load_scene(p)); }),
           py::arg("path"))
      .def_static(
          "from_json",
          [](const std::string& text, const std::filesystem::path& base_dir) {
            return std::make_unique<PyScene>(parse_scene(json::parse(text), base_dir));
          },
          py::arg("text"), py::arg("base_dir") = std::filesystem::path("."))
      .def("render", &PyScene::render, py::arg("time") = py::none(), py::arg("shadows") = py::none(),
           py::arg("resample") = py::none())
      .def("render_png", &PyScene::render_png, py::arg("buffer") = "color")
      .def("to_json", &PyScene::to_json)
      .def_property_readonly("object_ids", &PyScene::object_ids)
      .def_property_readonly("models_loaded", &PyScene::models_loaded)
      .def_property_readonly("size", &PyScene::size);

  m.def(
      "frame_header",
      [](std::uint32_t revision, const std::string& buffer, std::uint32_t width, std::uint32_t height) {
        const auto h = service::frame_header(revision, image::parse_buffer_kind(buffer), width, height);
        return py::bytes(reinterpret_cast<const char*>(h.data()), h.size());
      },
      py::arg("revision"), py::arg("buffer"), py::arg("width"), py::arg("height"));
}
