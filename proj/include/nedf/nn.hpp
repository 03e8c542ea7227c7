// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nedf::nn {

/// Row-major dense matrix; rows index the batch.
template <typename Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
struct Linear {
  Tensor<Scalar> weight;  // out x in
  Vector<Scalar> bias;    // out

  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out) : weight(Tensor<Scalar>::Zero(out, in)), bias(Vector<Scalar>::Zero(out)) {}

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const;
  /// Accumulates parameter gradients into `grad` and returns dL/dx.
  Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out, Linear& grad) const;
};

template <typename Scalar>
struct ResidualBlock {
  Linear<Scalar> fc1;
  Linear<Scalar> fc2;
};

struct MlpConfig {
  int input_dim = 1008;
  int feature_dim = 256;
  int blocks = 16;
  int n_coarse = 64;
  int n_fine = 128;

  static MlpConfig full() { return {}; }
  static MlpConfig desk() { return {1008, 64, 4, 64, 128}; }
  friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

template <typename Scalar>
struct MlpOutput {
  Tensor<Scalar> logits_coarse;  // B x N_c
  Tensor<Scalar> logits_fine;    // B x N_f
  Tensor<Scalar> logit_alpha;    // B x 1
};

/// Activations kept by `forward` for the matching `backward` call.
template <typename Scalar>
struct ForwardCache {
  std::uint64_t model_id = 0;
  std::uint64_t model_version = 0;
  Tensor<Scalar> input;
  std::vector<Tensor<Scalar>> block_inputs;  // x_k entering block k; back() is the tail input
  std::vector<Tensor<Scalar>> hidden;        // ReLU(fc1(x_k))
  std::vector<Tensor<Scalar>> branch;        // ReLU(fc2(hidden_k)) pre-skip, kept for the ReLU mask
};

/// Head linear -> residual blocks x + ReLU(fc2(ReLU(fc1(x)))) -> two linear tails.
/// Tail A emits N_c coarse logits followed by the alpha logit; tail B emits N_f fine logits.
template <typename Scalar>
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(const MlpConfig& config);

  const MlpConfig& config() const { return config_; }

  /// Kaiming-uniform weights with fan-in scaling, zero biases.
  void initialize(std::mt19937_64& rng);
  void set_zero();

  MlpOutput<Scalar> forward(const Tensor<Scalar>& batch, ForwardCache<Scalar>* cache = nullptr) const;

  /// Exact reverse-mode gradients. Throws std::logic_error when `cache` is stale.
  Mlp backward(const ForwardCache<Scalar>& cache, const MlpOutput<Scalar>& output_grads) const;

  /// Parameter views in serialization order: head, blocks (fc1, fc2), tail A, tail B; weight before bias.
  std::vector<std::span<Scalar>> parameters();
  std::vector<std::span<const Scalar>> parameters() const;
  std::size_t parameter_count() const;

  /// Bumps the version so caches from earlier forwards are rejected.
  void mark_modified() { ++version_; }
  std::uint64_t version() const { return version_; }

  Linear<Scalar> head;
  std::vector<ResidualBlock<Scalar>> body;
  Linear<Scalar> tail_a;
  Linear<Scalar> tail_b;

  template <typename Other>
  Mlp<Other> cast() const;

 private:
  // Copies get a fresh identity so caches never validate against a different parameter set.
  struct Identity {
    std::uint64_t value = next();
    Identity() = default;
    Identity(const Identity&) : value(next()) {}
    Identity& operator=(const Identity&) {
      value = next();
      return *this;
    }
    static std::uint64_t next();
  };

  MlpConfig config_{};
  Identity id_;
  std::uint64_t version_ = 0;
};

/// Mean binary cross-entropy over all elements, in log-sum-exp form.
/// Writes (sigmoid(z) - t) / count into `grad` (resized to match).
template <typename Scalar>
double bce_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& targets, Tensor<Scalar>& grad);

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  return z >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-z)) : std::exp(z) / (Scalar(1) + std::exp(z));
}

template <typename Scalar>
class Adam {
 public:
  struct Options {
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam(std::vector<std::span<Scalar>> params, Options options);
  explicit Adam(std::vector<std::span<Scalar>> params) : Adam(std::move(params), Options{}) {}

  /// One bias-corrected update. `grads` must mirror the parameter layout.
  void step(const std::vector<std::span<const Scalar>>& grads);

  std::uint64_t step_count() const { return step_; }
  const Options& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }

 private:
  std::vector<std::span<Scalar>> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  Options options_;
  std::uint64_t step_ = 0;
};

/// Header fields of a model file beyond the layer dimensions.
struct ModelFileMeta {
  float half_range = 0.0f;           // classifier l
  std::vector<float> extension;      // trailing values owned by higher-level formats
};

inline constexpr std::uint32_t kModelFileVersion = 1;

void save_model(const Mlp<float>& model, const std::filesystem::path& path, const ModelFileMeta& meta = {},
                std::uint32_t version = kModelFileVersion);

struct LoadedModel {
  Mlp<float> model;
  ModelFileMeta meta;
  std::uint32_t version = 0;
};

/// Validates magic and dimensions. `extension_floats` is the number of trailing f32 values
/// the caller expects after the parameters (0 for bare models).
LoadedModel load_model(const std::filesystem::path& path, std::size_t extension_floats = 0);

}  // namespace nedf::nn
