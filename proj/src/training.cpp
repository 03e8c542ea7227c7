// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include "nedf/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace nedf {

std::size_t TrainingSampleBatch::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

void check_oracle_fits(const DepthOracle& oracle, const NedfModel& model) {
  const Aabb b = oracle.bounds();
  const Aabb box = model.relaxed_box();
  if (!box.contains(b.min, 1e-9) || !box.contains(b.max, 1e-9)) {
    throw std::invalid_argument("oracle geometry escapes the model's relaxed bounding box");
  }
}

namespace {

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const Vec3 v{n(rng), n(rng), n(rng)};
    const double len = norm(v);
    if (len > 1e-12) return v / len;
  }
}

// Deterministic orbit camera for view index `k`.
struct OrbitView {
  Vec3 eye;
  Vec3 right;
  Vec3 up;
  Vec3 forward;
};

OrbitView orbit_view(const Aabb& box, int k) {
  std::mt19937_64 view_rng(0x9E3779B97F4A7C15ull ^ static_cast<std::uint64_t>(k));
  const Vec3 c = box.center();
  const double radius = 2.0 * norm(box.half_extents());
  const Vec3 eye = c + random_unit(view_rng) * radius;
  const Vec3 forward = normalize(c - eye);
  Vec3 helper{0, 1, 0};
  if (std::abs(dot(helper, forward)) > 0.99) helper = {1, 0, 0};
  const Vec3 right = normalize(cross(forward, helper));
  const Vec3 up = cross(right, forward);
  return {eye, right, up, forward};
}

}  // namespace

std::vector<Ray> sample_training_rays(const NedfModel& model, const SamplerSpec& sampler, int count,
                                      std::mt19937_64& rng) {
  const Aabb box = model.relaxed_box();
  const Vec3 c = box.center();
  const Vec3 h = box.half_extents();
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(count));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (sampler.mode == RaySampler::kDirect) {
    const double radius = 1.2 * norm(h) + 1e-6;
    for (int i = 0; i < count; ++i) {
      const Vec3 origin = c + random_unit(rng) * radius;
      const Vec3 target{box.min.x + unit(rng) * 2 * h.x, box.min.y + unit(rng) * 2 * h.y,
                        box.min.z + unit(rng) * 2 * h.z};
      rays.push_back(Ray::make(origin, target - origin));
    }
    return rays;
  }
  std::uniform_int_distribution<int> pick_view(0, std::max(sampler.views, 1) - 1);
  std::uniform_int_distribution<int> pick_pixel(0, std::max(sampler.view_resolution, 1) - 1);
  const double tan_half = std::tan(sampler.view_fov * 0.5);
  for (int i = 0; i < count; ++i) {
    const OrbitView v = orbit_view(box, pick_view(rng));
    const int res = std::max(sampler.view_resolution, 1);
    const double px = ((pick_pixel(rng) + 0.5) / res * 2.0 - 1.0) * tan_half;
    const double py = (1.0 - (pick_pixel(rng) + 0.5) / res * 2.0) * tan_half;
    rays.push_back(Ray::make(v.eye, v.forward + v.right * px + v.up * py));
  }
  return rays;
}

TrainingSampleBatch make_training_batch(const DepthOracle& oracle, const NedfModel& model, std::span<const Ray> rays) {
  const ClassifierConfig& cfg = model.config();
  std::vector<std::uint8_t> in_box;
  TrainingSampleBatch batch;
  batch.encoded = encode_rays(rays, model.relaxed_box(), in_box);
  const auto rows = batch.encoded.rows();
  batch.target_coarse = nn::Tensor<float>::Zero(rows, cfg.n_coarse);
  batch.target_fine = nn::Tensor<float>::Zero(rows, cfg.n_fine);
  batch.target_alpha = nn::Tensor<float>::Zero(rows, 1);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < rays.size(); ++i) {
    if (!in_box[i]) continue;
    const Ray& r = rays[i];
    batch.rays.push_back(r);
    const auto depth = oracle.depth(r);
    if (depth) {
      const double mu = mu_from_depth(tangency_frame(r), *depth);
      const BinPair bins = segment(mu, cfg);
      batch.target_coarse(row, bins.coarse) = 1.0f;
      batch.target_fine(row, bins.fine) = 1.0f;
      batch.target_alpha(row, 0) = 1.0f;
      batch.valid.push_back(1);
      batch.mu.push_back(mu);
    } else {
      batch.valid.push_back(0);
      batch.mu.push_back(std::numeric_limits<double>::quiet_NaN());
    }
    ++row;
  }
  return batch;
}

TrainingSampleBatch build_training_batch(const DepthOracle& oracle, const NedfModel& model, const SamplerSpec& sampler,
                                         int batch_size, std::mt19937_64& rng) {
  if (batch_size <= 0) throw std::invalid_argument("batch size must be positive");
  check_oracle_fits(oracle, model);
  // Both samplers aim at the relaxed box; the rare box miss from view sampling is topped up.
  TrainingSampleBatch batch = make_training_batch(oracle, model, sample_training_rays(model, sampler, batch_size, rng));
  while (batch.size() < static_cast<std::size_t>(batch_size)) {
    const int missing = batch_size - static_cast<int>(batch.size());
    TrainingSampleBatch extra = make_training_batch(oracle, model, sample_training_rays(model, sampler, missing, rng));
    const auto old_rows = batch.encoded.rows();
    const auto add = std::min<Eigen::Index>(extra.encoded.rows(), missing);
    auto grow = [&](nn::Tensor<float>& dst, const nn::Tensor<float>& src) {
      nn::Tensor<float> merged(old_rows + add, dst.cols());
      merged.topRows(old_rows) = dst;
      merged.bottomRows(add) = src.topRows(add);
      dst = std::move(merged);
    };
    grow(batch.encoded, extra.encoded);
    grow(batch.target_coarse, extra.target_coarse);
    grow(batch.target_fine, extra.target_fine);
    grow(batch.target_alpha, extra.target_alpha);
    for (Eigen::Index i = 0; i < add; ++i) {
      const auto k = static_cast<std::size_t>(i);
      batch.valid.push_back(extra.valid[k]);
      batch.mu.push_back(extra.mu[k]);
      batch.rays.push_back(extra.rays[k]);
    }
  }
  return batch;
}

namespace {

// BCE over the rows flagged valid; gradient rows of invalid entries stay zero.
double masked_bce(const nn::Tensor<float>& logits, const nn::Tensor<float>& targets,
                  const std::vector<std::uint8_t>& valid, std::size_t n_valid, nn::Tensor<float>* grad,
                  double weight) {
  if (grad) *grad = nn::Tensor<float>::Zero(logits.rows(), logits.cols());
  if (n_valid == 0) return 0.0;
  nn::Tensor<float> sub_logits(static_cast<Eigen::Index>(n_valid), logits.cols());
  nn::Tensor<float> sub_targets(static_cast<Eigen::Index>(n_valid), logits.cols());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (!valid[static_cast<std::size_t>(r)]) continue;
    sub_logits.row(k) = logits.row(r);
    sub_targets.row(k) = targets.row(r);
    ++k;
  }
  nn::Tensor<float> sub_grad;
  const double loss = nn::bce_loss(sub_logits, sub_targets, sub_grad);
  if (grad) {
    k = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      if (!valid[static_cast<std::size_t>(r)]) continue;
      grad->row(r) = sub_grad.row(k++) * static_cast<float>(weight);
    }
  }
  return loss;
}

}  // namespace

LossBreakdown nedf_loss(const nn::MlpOutput<float>& logits, const TrainingSampleBatch& batch,
                        nn::MlpOutput<float>* grads, const LossWeights& weights) {
  const std::size_t n_valid = batch.valid_count();
  LossBreakdown out;
  out.coarse = masked_bce(logits.logits_coarse, batch.target_coarse, batch.valid, n_valid,
                          grads ? &grads->logits_coarse : nullptr, weights.coarse);
  out.fine = masked_bce(logits.logits_fine, batch.target_fine, batch.valid, n_valid,
                        grads ? &grads->logits_fine : nullptr, weights.fine);
  nn::Tensor<float> alpha_grad;
  out.alpha = nn::bce_loss(logits.logit_alpha, batch.target_alpha, alpha_grad);
  if (grads) grads->logit_alpha = alpha_grad * static_cast<float>(weights.alpha);
  out.total = weights.coarse * out.coarse + weights.fine * out.fine + weights.alpha * out.alpha;
  return out;
}

TrainingProfile TrainingProfile::desk() {
  TrainingProfile p;
  p.mlp = nn::MlpConfig::desk();
  p.options.iterations = 3000;
  p.options.batch_size = 1024;
  p.options.learning_rate = 5e-4;
  return p;
}

TrainingProfile TrainingProfile::full() {
  TrainingProfile p;
  p.mlp = nn::MlpConfig::full();
  p.options.iterations = 600000;
  p.options.batch_size = 4096;
  p.options.learning_rate = 5e-4;
  p.options.sampler.mode = RaySampler::kViews;
  return p;
}

std::vector<double> train(NedfModel& model, const DepthOracle& oracle, const TrainOptions& options) {
  check_oracle_fits(oracle, model);
  nn::Mlp<float>& mlp = model.mutable_mlp();
  nn::Adam<float> adam(mlp.parameters(), {options.learning_rate});
  std::mt19937_64 rng(options.seed);
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(std::max(options.iterations, 0)));
  nn::ForwardCache<float> cache;
  for (int it = 0; it < options.iterations; ++it) {
    const TrainingSampleBatch batch = build_training_batch(oracle, model, options.sampler, options.batch_size, rng);
    const nn::MlpOutput<float> logits = mlp.forward(batch.encoded, &cache);
    nn::MlpOutput<float> grads;
    const LossBreakdown loss = nedf_loss(logits, batch, &grads);
    if (!std::isfinite(loss.total)) {
      throw TrainingError("non-finite loss at iteration " + std::to_string(it) + " (coarse " +
                          std::to_string(loss.coarse) + ", fine " + std::to_string(loss.fine) + ", alpha " +
                          std::to_string(loss.alpha) + ")");
    }
    const nn::Mlp<float> grad = mlp.backward(cache, grads);
    adam.step(grad.parameters());
    mlp.mark_modified();
    losses.push_back(loss.total);
    if (options.on_iteration) options.on_iteration(it, loss);
  }
  return losses;
}

DepthEvaluation evaluate_depth(const NedfModel& model, const DepthOracle& oracle, int count, std::uint64_t seed,
                               const SamplerSpec& sampler) {
  std::mt19937_64 rng(seed);
  const std::vector<Ray> rays = sample_training_rays(model, sampler, count, rng);
  std::vector<LocalHit> hits(rays.size());
  model.query_local(rays, hits);
  DepthEvaluation out;
  out.fine_bin_width = model.config().fine_bin_width();
  std::vector<double> errors;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const auto truth = oracle.depth(rays[i]);
    ++out.rays;
    if (hits[i].alpha == truth.has_value()) ++correct;
    if (hits[i].alpha && truth) {
      const double predicted = depth_from_mu(tangency_frame(rays[i]), hits[i].mu);
      errors.push_back(std::abs(predicted - *truth));
    }
  }
  out.both_hit = errors.size();
  out.mask_accuracy = out.rays ? static_cast<double>(correct) / static_cast<double>(out.rays) : 0.0;
  if (!errors.empty()) {
    double sum = 0.0;
    for (double e : errors) sum += e;
    out.mean_abs_error = sum / static_cast<double>(errors.size());
    const auto mid = errors.begin() + static_cast<std::ptrdiff_t>(errors.size() / 2);
    std::nth_element(errors.begin(), mid, errors.end());
    out.median_abs_error = *mid;
  }
  return out;
}

}  // namespace nedf
