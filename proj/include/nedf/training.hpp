// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

// Distillation of a depth oracle into a NedfModel.

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "nedf/depth_field.hpp"
#include "nedf/fields.hpp"
#include "nedf/nn.hpp"

namespace nedf {

enum class RaySampler {
  kDirect,  // origin on an enclosing sphere, aimed at a uniform point of the relaxed box
  kViews,   // pixels of random pinhole cameras orbiting the object
};

struct SamplerSpec {
  RaySampler mode = RaySampler::kDirect;
  int views = 500;
  int view_resolution = 64;
  double view_fov = 0.8;  // radians
};

struct TrainingSampleBatch {
  nn::Tensor<float> encoded;          // B x 1008
  nn::Tensor<float> target_coarse;    // B x N_c one-hot (zero rows where invalid)
  nn::Tensor<float> target_fine;      // B x N_f one-hot
  nn::Tensor<float> target_alpha;     // B x 1
  std::vector<std::uint8_t> valid;    // ray hit the surface, bin targets present
  std::vector<double> mu;             // supervision μ, NaN on misses
  std::vector<Ray> rays;

  std::size_t size() const { return rays.size(); }
  std::size_t valid_count() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws std::invalid_argument when the oracle's geometry escapes the model's relaxed box.
void check_oracle_fits(const DepthOracle& oracle, const NedfModel& model);

/// Targets for explicit rays: oracle depth -> μ -> segment -> one-hot. Rays missing the relaxed
/// box are skipped, so the batch may hold fewer rows than `rays`.
TrainingSampleBatch make_training_batch(const DepthOracle& oracle, const NedfModel& model, std::span<const Ray> rays);

std::vector<Ray> sample_training_rays(const NedfModel& model, const SamplerSpec& sampler, int count,
                                      std::mt19937_64& rng);

TrainingSampleBatch build_training_batch(const DepthOracle& oracle, const NedfModel& model, const SamplerSpec& sampler,
                                         int batch_size, std::mt19937_64& rng);

struct LossWeights {
  double coarse = 1.0;
  double fine = 1.0;
  double alpha = 0.1;
};

struct LossBreakdown {
  double total = 0.0;
  double coarse = 0.0;
  double fine = 0.0;
  double alpha = 0.0;
};

/// BCE_c + BCE_f + 0.1 BCE_α; the bin terms average over valid rows only. Fills `grads` when given.
LossBreakdown nedf_loss(const nn::MlpOutput<float>& logits, const TrainingSampleBatch& batch,
                        nn::MlpOutput<float>* grads = nullptr, const LossWeights& weights = {});

struct TrainOptions {
  int iterations = 3000;
  int batch_size = 1024;
  double learning_rate = 5e-4;
  std::uint64_t seed = 0;
  SamplerSpec sampler;
  std::function<void(int iteration, const LossBreakdown&)> on_iteration;
};

struct TrainingProfile {
  nn::MlpConfig mlp;
  TrainOptions options;

  /// D_f=64, 4 blocks, batch 1024, 3000 iterations, lr 5e-4.
  static TrainingProfile desk();
  /// D_f=256, 16 blocks, batch 4096, lr 5e-4, view sampling.
  static TrainingProfile full();
};

/// Adam on the NeDF loss. Returns the per-iteration total loss; throws TrainingError on NaN.
std::vector<double> train(NedfModel& model, const DepthOracle& oracle, const TrainOptions& options);

struct DepthEvaluation {
  std::size_t rays = 0;
  std::size_t both_hit = 0;
  double mask_accuracy = 0.0;
  double median_abs_error = 0.0;
  double mean_abs_error = 0.0;
  double fine_bin_width = 0.0;
};

/// Held-out comparison of model depth against the oracle on `count` fresh rays.
DepthEvaluation evaluate_depth(const NedfModel& model, const DepthOracle& oracle, int count, std::uint64_t seed,
                               const SamplerSpec& sampler = {});

}  // namespace nedf
