// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference checks shared by the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "nedf/nn.hpp"

namespace nedf::testing {

using nn::Tensor;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

inline Tensor<double> random_tensor(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Tensor<double> t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}

/// L = Σ G ⊙ outputs, so dL/d(outputs) = G.
inline double probe(const nn::MlpOutput<double>& out, const nn::MlpOutput<double>& g) {
  return (out.logits_coarse.array() * g.logits_coarse.array()).sum() +
         (out.logits_fine.array() * g.logits_fine.array()).sum() +
         (out.logit_alpha.array() * g.logit_alpha.array()).sum();
}

/// Worst relative error between backprop and central differences over `samples` random
/// parameters (all of them when samples <= 0).
inline double mlp_gradcheck(nn::Mlp<double>& model, const Tensor<double>& x, std::mt19937_64& rng, int samples,
                            double h = 1e-6) {
  nn::ForwardCache<double> cache;
  const nn::MlpOutput<double> out = model.forward(x, &cache);
  nn::MlpOutput<double> g{random_tensor(out.logits_coarse.rows(), out.logits_coarse.cols(), rng),
                          random_tensor(out.logits_fine.rows(), out.logits_fine.cols(), rng),
                          random_tensor(out.logit_alpha.rows(), out.logit_alpha.cols(), rng)};
  const nn::Mlp<double> grads = model.backward(cache, g);
  const auto analytic = grads.parameters();
  auto params = model.parameters();

  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) picks.emplace_back(t, i);
  }
  if (samples > 0 && static_cast<std::size_t>(samples) < picks.size()) {
    std::shuffle(picks.begin(), picks.end(), rng);
    picks.resize(static_cast<std::size_t>(samples));
  }
  double worst = 0.0;
  for (auto [t, i] : picks) {
    const double keep = params[t][i];
    params[t][i] = keep + h;
    model.mark_modified();
    const double up = probe(model.forward(x), g);
    params[t][i] = keep - h;
    model.mark_modified();
    const double down = probe(model.forward(x), g);
    params[t][i] = keep;
    model.mark_modified();
    worst = std::max(worst, relative_error(analytic[t][i], (up - down) / (2.0 * h)));
  }
  return worst;
}

/// Parameter and input gradients of one linear layer.
inline double linear_gradcheck(std::mt19937_64& rng, double h = 1e-6) {
  nn::Linear<double> layer(5, 4);
  layer.weight = random_tensor(4, 5, rng);
  layer.bias = random_tensor(4, 1, rng);
  Tensor<double> x = random_tensor(3, 5, rng);
  const Tensor<double> g = random_tensor(3, 4, rng);
  auto loss = [&] { return (layer.forward(x).array() * g.array()).sum(); };
  nn::Linear<double> grad(5, 4);
  const Tensor<double> dx = layer.backward(x, g, grad);
  double worst = 0.0;
  auto check = [&](double& slot, double analytic) {
    const double keep = slot;
    slot = keep + h;
    const double up = loss();
    slot = keep - h;
    const double down = loss();
    slot = keep;
    worst = std::max(worst, relative_error(analytic, (up - down) / (2.0 * h)));
  };
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) check(layer.weight.data()[i], grad.weight.data()[i]);
  for (Eigen::Index i = 0; i < layer.bias.size(); ++i) check(layer.bias.data()[i], grad.bias.data()[i]);
  for (Eigen::Index i = 0; i < x.size(); ++i) check(x.data()[i], dx.data()[i]);
  return worst;
}

/// Gradient of the mean BCE with respect to the logits.
inline double bce_gradcheck(std::mt19937_64& rng, double h = 1e-6) {
  Tensor<double> z = random_tensor(4, 6, rng, 3.0);
  Tensor<double> t(4, 6);
  std::bernoulli_distribution coin(0.5);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = coin(rng) ? 1.0 : 0.0;
  Tensor<double> grad;
  nn::bce_loss(z, t, grad);
  Tensor<double> scratch;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double keep = z.data()[i];
    z.data()[i] = keep + h;
    const double up = nn::bce_loss(z, t, scratch);
    z.data()[i] = keep - h;
    const double down = nn::bce_loss(z, t, scratch);
    z.data()[i] = keep;
    worst = std::max(worst, relative_error(grad.data()[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

}  // namespace nedf::testing
