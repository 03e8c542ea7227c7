// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include "nedf/depth_field.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace nedf {

ClassifierConfig ClassifierConfig::make(double half_range, int n_coarse, int n_fine) {
  if (!(half_range > 0.0) || !std::isfinite(half_range)) throw std::invalid_argument("classifier range l must be > 0");
  if (n_coarse < 2 || n_fine < 2) throw std::invalid_argument("classifier needs at least two bins per level");
  return ClassifierConfig{half_range, n_coarse, n_fine};
}

BinPair segment(double mu, const ClassifierConfig& cfg) {
  const double l = cfg.half_range;
  const double clamped = std::clamp(mu, -l, l);
  const double u = (clamped + l) / (2.0 * l);
  const double scaled = u * cfg.n_coarse;
  const int coarse = std::min(static_cast<int>(std::floor(scaled)), cfg.n_coarse - 1);
  const double remainder = std::max(scaled - coarse, 0.0);
  const int fine = std::min(static_cast<int>(std::floor(remainder * cfg.n_fine)), cfg.n_fine - 1);
  return BinPair{coarse, fine};
}

double unsegment(const BinPair& bins, const ClassifierConfig& cfg, bool centered) {
  const double fine = bins.fine + (centered ? 0.5 : 0.0);
  return cfg.lambda1() * (static_cast<double>(bins.coarse) / cfg.n_coarse) +
         cfg.lambda2() * (fine / cfg.n_fine) - cfg.half_range;
}

LocalHit DepthField::query_local(const Ray& local_ray) const {
  LocalHit out;
  query_local(std::span<const Ray>(&local_ray, 1), std::span<LocalHit>(&out, 1));
  return out;
}

NedfModel::NedfModel(nn::Mlp<float> mlp, ClassifierConfig config, const Aabb& relaxed_box, double alpha_threshold)
    : mlp_(std::move(mlp)), config_(config), relaxed_box_(relaxed_box), alpha_threshold_(alpha_threshold) {
  const auto& c = mlp_.config();
  if (c.n_coarse != config_.n_coarse || c.n_fine != config_.n_fine) {
    throw nn::DimensionError("network bin counts do not match the classifier configuration");
  }
  if (c.input_dim != static_cast<int>(kEncodedRayWidth)) {
    throw nn::DimensionError("network input width must be " + std::to_string(kEncodedRayWidth));
  }
  if (!(alpha_threshold > 0.0 && alpha_threshold < 1.0)) throw std::invalid_argument("alpha threshold must be in (0,1)");
}

NedfModel::NedfModel(const NedfModel& other)
    : mlp_(other.mlp_),
      config_(other.config_),
      relaxed_box_(other.relaxed_box_),
      alpha_threshold_(other.alpha_threshold_),
      centered_decode_(other.centered_decode_) {}

NedfModel NedfModel::create(const Aabb& bounds, const nn::MlpConfig& mlp_config, std::uint64_t seed,
                            double relax_factor) {
  // Metadata is stored as f32; round now so a saved and reloaded model decodes identically.
  auto f32 = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  const Aabb r = relax_aabb(bounds, relax_factor);
  const Aabb relaxed{{f32(r.min.x), f32(r.min.y), f32(r.min.z)}, {f32(r.max.x), f32(r.max.y), f32(r.max.z)}};
  const auto cfg =
      ClassifierConfig::make(f32(relaxed.max_corner_distance()), mlp_config.n_coarse, mlp_config.n_fine);
  nn::Mlp<float> mlp(mlp_config);
  std::mt19937_64 rng(seed);
  mlp.initialize(rng);
  return NedfModel(std::move(mlp), cfg, relaxed);
}

nn::Tensor<float> encode_rays(std::span<const Ray> local_rays, const Aabb& box, std::vector<std::uint8_t>& hit) {
  hit.assign(local_rays.size(), 0);
  std::vector<RaySampleTuple> tuples;
  tuples.reserve(local_rays.size());
  std::size_t rows = 0;
  for (std::size_t i = 0; i < local_rays.size(); ++i) {
    RaySampleTuple t = sample_ray_points(local_rays[i], box);
    if (t.hit_box) {
      hit[i] = 1;
      ++rows;
      tuples.push_back(t);
    }
  }
  nn::Tensor<float> out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(kEncodedRayWidth));
  for (std::size_t r = 0; r < rows; ++r) {
    positional_encode_into(tuples[r], std::span<float>(out.row(static_cast<Eigen::Index>(r)).data(), kEncodedRayWidth));
  }
  return out;
}

void NedfModel::query_local(std::span<const Ray> local_rays, std::span<LocalHit> out) const {
  if (out.size() != local_rays.size()) throw std::invalid_argument("query output size mismatch");
  std::vector<std::uint8_t> hit;
  const nn::Tensor<float> encoded = encode_rays(local_rays, relaxed_box_, hit);
  std::fill(out.begin(), out.end(), LocalHit{});
  if (encoded.rows() == 0) return;
  rows_evaluated_ += static_cast<std::size_t>(encoded.rows());
  const nn::MlpOutput<float> logits = mlp_.forward(encoded);
  const auto alpha_logit_threshold = static_cast<float>(std::log(alpha_threshold_ / (1.0 - alpha_threshold_)));
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < local_rays.size(); ++i) {
    if (!hit[i]) continue;
    const auto coarse_row = logits.logits_coarse.row(row);
    const auto fine_row = logits.logits_fine.row(row);
    const BinPair bins{argmax_lowest(coarse_row), argmax_lowest(fine_row)};
    // sigmoid(z) > t  <=>  z > logit(t)
    out[i] = LocalHit{unsegment(bins, config_, centered_decode_), logits.logit_alpha(row, 0) > alpha_logit_threshold};
    ++row;
  }
}

namespace {
constexpr std::uint32_t kNedfFileVersion = 2;
constexpr std::size_t kNedfExtensionFloats = 7;
}  // namespace

void NedfModel::save(const std::filesystem::path& path) const {
  nn::ModelFileMeta meta;
  meta.half_range = static_cast<float>(config_.half_range);
  const Aabb& b = relaxed_box_;
  meta.extension = {static_cast<float>(b.min.x), static_cast<float>(b.min.y), static_cast<float>(b.min.z),
                    static_cast<float>(b.max.x), static_cast<float>(b.max.y), static_cast<float>(b.max.z),
                    static_cast<float>(alpha_threshold_)};
  nn::save_model(mlp_, path, meta, kNedfFileVersion);
}

NedfModel NedfModel::load(const std::filesystem::path& path) {
  nn::LoadedModel loaded = nn::load_model(path, kNedfExtensionFloats);
  if (loaded.version != kNedfFileVersion) {
    throw nn::FormatError("unsupported depth-field model version " + std::to_string(loaded.version));
  }
  const auto& e = loaded.meta.extension;
  const Aabb box{{e[0], e[1], e[2]}, {e[3], e[4], e[5]}};
  if (!(box.min.x <= box.max.x && box.min.y <= box.max.y && box.min.z <= box.max.z)) {
    throw nn::FormatError("depth-field model has an inverted bounding box");
  }
  const auto& c = loaded.model.config();
  ClassifierConfig cfg;
  try {
    cfg = ClassifierConfig::make(loaded.meta.half_range, c.n_coarse, c.n_fine);
  } catch (const std::invalid_argument& err) {
    throw nn::FormatError(err.what());
  }
  return NedfModel(std::move(loaded.model), cfg, box, e[6]);
}

OracleDepthField::OracleDepthField(std::shared_ptr<const DepthOracle> oracle, double relax_factor)
    : oracle_(std::move(oracle)) {
  if (!oracle_) throw std::invalid_argument("oracle depth field needs an oracle");
  relaxed_box_ = relax_aabb(oracle_->bounds(), relax_factor);
  half_range_ = relaxed_box_.max_corner_distance();
}

void OracleDepthField::query_local(std::span<const Ray> local_rays, std::span<LocalHit> out) const {
  if (out.size() != local_rays.size()) throw std::invalid_argument("query output size mismatch");
  for (std::size_t i = 0; i < local_rays.size(); ++i) {
    const Ray& r = local_rays[i];
    out[i] = LocalHit{};
    if (!clip_ray_to_aabb(r, relaxed_box_)) continue;
    if (const auto d = oracle_->depth(r)) out[i] = LocalHit{mu_from_depth(tangency_frame(r), *d), true};
  }
}

namespace {

WorldHit to_world(const LocalHit& local, const Ray& world_ray, const RigidTransform& g) {
  if (!local.alpha) return {};
  const TangencyFrame frame = tangency_frame(Ray{world_ray.origin - g.translation(), world_ray.direction});
  const double depth = frame.dist_o_pperp - g.scale() * local.mu;
  if (!(depth > 0.0) || !std::isfinite(depth)) return {};
  return WorldHit{depth, true};
}

}  // namespace

WorldHit query_depth_world(const DepthField& field, const Ray& world_ray, const RigidTransform& g) {
  return to_world(field.query_local(transform_ray_to_local(g, world_ray)), world_ray, g);
}

void query_depth_world(const DepthField& field, std::span<const Ray> world_rays, const RigidTransform& g,
                       std::span<WorldHit> out) {
  if (out.size() != world_rays.size()) throw std::invalid_argument("query output size mismatch");
  std::vector<Ray> local(world_rays.size());
  for (std::size_t i = 0; i < world_rays.size(); ++i) local[i] = transform_ray_to_local(g, world_rays[i]);
  std::vector<LocalHit> hits(world_rays.size());
  field.query_local(local, hits);
  for (std::size_t i = 0; i < world_rays.size(); ++i) out[i] = to_world(hits[i], world_rays[i], g);
}

}  // namespace nedf
