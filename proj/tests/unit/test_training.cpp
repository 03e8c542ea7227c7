// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <random>

#include <doctest.h>

#include "nedf/training.hpp"

using namespace nedf;
using doctest::Approx;

namespace {

// -[t log σ(z) + (1 - t) log(1 - σ(z))], evaluated directly.
double naive_bce(double z, double t) {
  const double s = 1.0 / (1.0 + std::exp(-z));
  return -(t * std::log(s) + (1.0 - t) * std::log(1.0 - s));
}

NedfModel sphere_model(double half_range = 2.0) {
  nn::Mlp<float> mlp(nn::MlpConfig{1008, 8, 1, 64, 128});
  std::mt19937_64 rng(1);
  mlp.initialize(rng);
  return NedfModel(std::move(mlp), ClassifierConfig::make(half_range), Aabb::make({-1.5, -1.5, -1.5}, {1.5, 1.5, 1.5}));
}

// Two rays: row 0 hits with coarse bin 1 / fine bin 2, row 1 misses.
TrainingSampleBatch two_ray_batch() {
  TrainingSampleBatch b;
  b.rays = {Ray::make({0, 0, -3}, {0, 0, 1}), Ray::make({0, 3, -3}, {0, 0, 1})};
  b.encoded = nn::Tensor<float>::Zero(2, 1008);
  b.target_coarse = nn::Tensor<float>::Zero(2, 4);
  b.target_fine = nn::Tensor<float>::Zero(2, 3);
  b.target_alpha = nn::Tensor<float>::Zero(2, 1);
  b.target_coarse(0, 1) = 1.0f;
  b.target_fine(0, 2) = 1.0f;
  b.target_alpha(0, 0) = 1.0f;
  b.valid = {1, 0};
  b.mu = {1.0, std::nan("")};
  return b;
}

nn::MlpOutput<float> two_ray_logits() {
  nn::MlpOutput<float> o{nn::Tensor<float>(2, 4), nn::Tensor<float>(2, 3), nn::Tensor<float>(2, 1)};
  o.logits_coarse << 0.5f, 2.0f, -1.0f, 0.0f,  //
      9.0f, -9.0f, 9.0f, -9.0f;                // ignored: row 1 is a miss
  o.logits_fine << -0.25f, 1.0f, 3.0f,  //
      7.0f, 7.0f, 7.0f;
  o.logit_alpha << 1.5f, -0.75f;
  return o;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("loss is BCE_c + BCE_f + 0.1 BCE_alpha on a hand-computed 2-ray batch") {
    const auto batch = two_ray_batch();
    const auto logits = two_ray_logits();
    const double coarse = (naive_bce(0.5, 0) + naive_bce(2.0, 1) + naive_bce(-1.0, 0) + naive_bce(0.0, 0)) / 4.0;
    const double fine = (naive_bce(-0.25, 0) + naive_bce(1.0, 0) + naive_bce(3.0, 1)) / 3.0;
    const double alpha = (naive_bce(1.5, 1) + naive_bce(-0.75, 0)) / 2.0;
    const LossBreakdown l = nedf_loss(logits, batch);
    CHECK(l.coarse == Approx(coarse).epsilon(1e-6));
    CHECK(l.fine == Approx(fine).epsilon(1e-6));
    CHECK(l.alpha == Approx(alpha).epsilon(1e-6));
    CHECK(l.total == Approx(coarse + fine + 0.1 * alpha).epsilon(1e-6));
    const LossWeights w;
    CHECK(w.coarse == 1.0);
    CHECK(w.fine == 1.0);
    CHECK(w.alpha == 0.1);
  }

  TEST_CASE("loss gradient matches finite differences and ignores miss rows") {
    const auto batch = two_ray_batch();
    auto logits = two_ray_logits();
    nn::MlpOutput<float> grads;
    nedf_loss(logits, batch, &grads);
    CHECK(grads.logits_coarse.row(1).cwiseAbs().maxCoeff() == 0.0f);
    CHECK(grads.logits_fine.row(1).cwiseAbs().maxCoeff() == 0.0f);
    CHECK(grads.logit_alpha(1, 0) != 0.0f);
    const float h = 1e-2f;
    auto fd = [&](nn::Tensor<float>& t, const nn::Tensor<float>& g) {
      for (Eigen::Index i = 0; i < t.size(); ++i) {
        const float keep = t.data()[i];
        t.data()[i] = keep + h;
        const double up = nedf_loss(logits, batch).total;
        t.data()[i] = keep - h;
        const double down = nedf_loss(logits, batch).total;
        t.data()[i] = keep;
        CHECK(g.data()[i] == Approx((up - down) / (2.0 * h)).epsilon(1e-3).scale(1e-3));
      }
    };
    fd(logits.logits_coarse, grads.logits_coarse);
    fd(logits.logits_fine, grads.logits_fine);
    fd(logits.logit_alpha, grads.logit_alpha);
  }

  TEST_CASE("all-miss batch has zero bin terms") {
    auto batch = two_ray_batch();
    batch.valid = {0, 0};
    batch.target_alpha.setZero();
    const LossBreakdown l = nedf_loss(two_ray_logits(), batch);
    CHECK(l.coarse == 0.0);
    CHECK(l.fine == 0.0);
    CHECK(l.total == Approx(0.1 * l.alpha));
  }

  TEST_CASE("targets from the sphere oracle") {
    const AnalyticOracle oracle(SdfPrimitive::sphere({}, 1.0));
    const NedfModel model = sphere_model(2.0);
    const std::vector<Ray> rays{Ray::make({0, 0, -3}, {0, 0, 1}), Ray::make({0, 1.3, -3}, {0, 0, 1}),
                                Ray::make({9, 9, 9}, {0, 0, 1})};
    const TrainingSampleBatch b = make_training_batch(oracle, model, rays);
    REQUIRE(b.size() == 2);  // third ray misses the relaxed box
    CHECK(b.encoded.rows() == 2);
    CHECK(b.encoded.cols() == 1008);
    CHECK(b.valid[0] == 1);
    CHECK(b.mu[0] == Approx(1.0).epsilon(1e-9));
    CHECK(segment(b.mu[0], model.config()) == BinPair{48, 0});
    CHECK(b.target_coarse(0, 48) == 1.0f);
    CHECK(b.target_coarse.row(0).sum() == 1.0f);
    CHECK(b.target_fine(0, 0) == 1.0f);
    CHECK(b.target_fine.row(0).sum() == 1.0f);
    CHECK(b.target_alpha(0, 0) == 1.0f);
    CHECK(b.valid[1] == 0);
    CHECK(b.target_alpha(1, 0) == 0.0f);
    CHECK(b.target_coarse.row(1).sum() == 0.0f);
    CHECK(std::isnan(b.mu[1]));
  }

  TEST_CASE("sampled batches are full, balanced enough and reproducible") {
    const AnalyticOracle oracle(SdfPrimitive::sphere({}, 1.0));
    const NedfModel model = NedfModel::create(oracle.bounds(), nn::MlpConfig{1008, 8, 1, 64, 128}, 0);
    for (RaySampler mode : {RaySampler::kDirect, RaySampler::kViews}) {
      SamplerSpec spec;
      spec.mode = mode;
      std::mt19937_64 a(9);
      std::mt19937_64 b(9);
      const TrainingSampleBatch x = build_training_batch(oracle, model, spec, 256, a);
      const TrainingSampleBatch y = build_training_batch(oracle, model, spec, 256, b);
      CHECK(x.size() == 256);
      CHECK(x.encoded.rows() == 256);
      CHECK(x.encoded == y.encoded);
      const double hit_fraction = static_cast<double>(x.valid_count()) / 256.0;
      CHECK(hit_fraction > 0.1);
      CHECK(hit_fraction < 0.9);
    }
  }

  TEST_CASE("profiles") {
    const auto desk = TrainingProfile::desk();
    CHECK(desk.mlp.feature_dim == 64);
    CHECK(desk.mlp.blocks == 4);
    CHECK(desk.options.batch_size == 1024);
    CHECK(desk.options.iterations == 3000);
    CHECK(desk.options.learning_rate == 5e-4);
    const auto full = TrainingProfile::full();
    CHECK(full.mlp.feature_dim == 256);
    CHECK(full.mlp.blocks == 16);
    CHECK(full.options.batch_size == 4096);
    CHECK(full.options.learning_rate == 5e-4);
    CHECK(full.mlp.n_coarse == 64);
    CHECK(full.mlp.n_fine == 128);
  }

  TEST_CASE("short training run lowers the loss deterministically") {
    const AnalyticOracle oracle(SdfPrimitive::sphere({}, 1.0));
    TrainOptions opt;
    opt.iterations = 100;
    opt.batch_size = 128;
    opt.seed = 4;
    NedfModel a = NedfModel::create(oracle.bounds(), nn::MlpConfig{1008, 16, 1, 64, 128}, 4);
    NedfModel b = NedfModel::create(oracle.bounds(), nn::MlpConfig{1008, 16, 1, 64, 128}, 4);
    const auto la = train(a, oracle, opt);
    const auto lb = train(b, oracle, opt);
    CHECK(la == lb);
    REQUIRE(la.size() == 100);
    const double head = std::accumulate(la.begin(), la.begin() + 10, 0.0);
    const double tail = std::accumulate(la.end() - 10, la.end(), 0.0);
    CHECK(tail < 0.75 * head);
  }

  TEST_CASE("oracle that escapes the model box is rejected") {
    const AnalyticOracle big(SdfPrimitive::sphere({}, 3.0));
    const NedfModel model = sphere_model();
    CHECK_THROWS_AS(check_oracle_fits(big, model), std::invalid_argument);
  }

  TEST_CASE("evaluation of an untrained model") {
    const AnalyticOracle oracle(SdfPrimitive::sphere({}, 1.0));
    const NedfModel model = NedfModel::create(oracle.bounds(), nn::MlpConfig{1008, 8, 1, 64, 128}, 2);
    const DepthEvaluation e = evaluate_depth(model, oracle, 200, 1);
    CHECK(e.rays == 200);
    CHECK(e.mask_accuracy >= 0.0);
    CHECK(e.mask_accuracy <= 1.0);
    CHECK(e.fine_bin_width == Approx(model.config().fine_bin_width()));
  }
}
