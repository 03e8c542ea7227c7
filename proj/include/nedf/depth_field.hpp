// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

// Neural depth fields: ray -> offset μ of the first surface hit from the ray's tangency point,
// predicted by a coarse/fine bin classifier and converted to depth along the ray.

#pragma once

#include <atomic>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>

#include "nedf/fields.hpp"
#include "nedf/geometry.hpp"
#include "nedf/nn.hpp"

namespace nedf {

struct ClassifierConfig {
  double half_range = 1.0;  // l: μ lives in [-l, l]
  int n_coarse = 64;
  int n_fine = 128;

  /// Throws std::invalid_argument unless l > 0 and both bin counts are >= 2.
  static ClassifierConfig make(double half_range, int n_coarse = 64, int n_fine = 128);

  double lambda1() const { return 2.0 * half_range; }
  double lambda2() const { return 2.0 * half_range / n_coarse; }
  /// Resolution of the two-level classifier, 2l / (N_c N_f).
  double fine_bin_width() const { return 2.0 * half_range / (static_cast<double>(n_coarse) * n_fine); }
};

struct BinPair {
  int coarse = 0;
  int fine = 0;
  friend auto operator<=>(const BinPair&, const BinPair&) = default;
};

/// Quantizes μ (clamped to [-l, l]) into a coarse bin and a fine bin within it.
BinPair segment(double mu, const ClassifierConfig& cfg);

/// μ = λ1 coarse/N_c + λ2 fine/N_f - l. `centered` shifts to the middle of the fine bin.
double unsegment(const BinPair& bins, const ClassifierConfig& cfg, bool centered = false);

/// Index of the largest value, lowest index on ties.
template <typename Row>
int argmax_lowest(const Row& row) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(row.size()); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

struct LocalHit {
  double mu = std::numeric_limits<double>::quiet_NaN();
  bool alpha = false;
};

struct WorldHit {
  double depth = std::numeric_limits<double>::infinity();
  bool alpha = false;
};

/// Anything that answers first-hit queries for rays in an object's local space.
class DepthField {
 public:
  virtual ~DepthField() = default;
  virtual void query_local(std::span<const Ray> local_rays, std::span<LocalHit> out) const = 0;
  LocalHit query_local(const Ray& local_ray) const;
  /// Local region outside of which every query misses.
  virtual Aabb relaxed_box() const = 0;
  virtual double half_range() const = 0;
  /// Local depth quantization step; exact fields report the default classifier's step.
  virtual double fine_bin_width() const { return 2.0 * half_range() / (64.0 * 128.0); }
};

/// Trained intersection network plus its classifier range and relaxed bounding box.
class NedfModel final : public DepthField {
 public:
  NedfModel(nn::Mlp<float> mlp, ClassifierConfig config, const Aabb& relaxed_box, double alpha_threshold = 0.5);

  /// Fresh randomly initialized model sized for `bounds` relaxed by `relax_factor`.
  /// l is the largest distance from the local origin to a relaxed-box corner.
  static NedfModel create(const Aabb& bounds, const nn::MlpConfig& mlp_config, std::uint64_t seed,
                          double relax_factor = 1.5);

  void query_local(std::span<const Ray> local_rays, std::span<LocalHit> out) const override;
  using DepthField::query_local;
  Aabb relaxed_box() const override { return relaxed_box_; }
  double half_range() const override { return config_.half_range; }
  double fine_bin_width() const override { return config_.fine_bin_width(); }

  const ClassifierConfig& config() const { return config_; }
  double alpha_threshold() const { return alpha_threshold_; }
  const nn::Mlp<float>& mlp() const { return mlp_; }
  nn::Mlp<float>& mutable_mlp() { return mlp_; }

  void set_centered_decode(bool on) { centered_decode_ = on; }
  bool centered_decode() const { return centered_decode_; }

  /// Rows pushed through the network so far (rays that missed the box are never evaluated).
  std::size_t network_rows_evaluated() const { return rows_evaluated_.load(); }

  void save(const std::filesystem::path& path) const;
  /// Throws nn::FormatError / nn::DimensionError on malformed files.
  static NedfModel load(const std::filesystem::path& path);

  NedfModel(const NedfModel& other);
  NedfModel& operator=(const NedfModel&) = delete;

 private:
  nn::Mlp<float> mlp_;
  ClassifierConfig config_;
  Aabb relaxed_box_;
  double alpha_threshold_;
  bool centered_decode_ = false;
  mutable std::atomic<std::size_t> rows_evaluated_{0};
};

/// Encodes rays that hit `box` into rows of a B x 1008 tensor; `hit[i]` marks encoded rows.
nn::Tensor<float> encode_rays(std::span<const Ray> local_rays, const Aabb& box, std::vector<std::uint8_t>& hit);

/// Exact depth field backed by a geometric oracle; μ comes from the oracle depth.
class OracleDepthField final : public DepthField {
 public:
  explicit OracleDepthField(std::shared_ptr<const DepthOracle> oracle, double relax_factor = 1.5);

  void query_local(std::span<const Ray> local_rays, std::span<LocalHit> out) const override;
  using DepthField::query_local;
  Aabb relaxed_box() const override { return relaxed_box_; }
  double half_range() const override { return half_range_; }
  const DepthOracle& oracle() const { return *oracle_; }

 private:
  std::shared_ptr<const DepthOracle> oracle_;
  Aabb relaxed_box_;
  double half_range_;
};

/// D̂ = |o - p⊥| - s μ(G⁻¹ r), with p⊥ the foot of the perpendicular from the object origin T
/// to the world ray. Non-positive or non-finite depths are reported as misses.
WorldHit query_depth_world(const DepthField& field, const Ray& world_ray, const RigidTransform& g);
void query_depth_world(const DepthField& field, std::span<const Ray> world_rays, const RigidTransform& g,
                       std::span<WorldHit> out);

}  // namespace nedf
