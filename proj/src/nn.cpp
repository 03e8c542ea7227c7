// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#include "nedf/nn.hpp"

#include <atomic>
#include <cmath>

#include "nedf/binary_io.hpp"

namespace nedf::nn {

template <typename Scalar>
Tensor<Scalar> Linear<Scalar>::forward(const Tensor<Scalar>& x) const {
  if (x.cols() != in_dim()) {
    throw DimensionError("linear layer expects width " + std::to_string(in_dim()) + ", got " +
                         std::to_string(x.cols()));
  }
  Tensor<Scalar> y(x.rows(), out_dim());
  y.noalias() = x * weight.transpose();
  y.rowwise() += bias.transpose();
  return y;
}

template <typename Scalar>
Tensor<Scalar> Linear<Scalar>::backward(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out,
                                        Linear& grad) const {
  grad.weight.noalias() += grad_out.transpose() * x;
  grad.bias += grad_out.colwise().sum().transpose();
  Tensor<Scalar> grad_in(x.rows(), in_dim());
  grad_in.noalias() = grad_out * weight;
  return grad_in;
}

template <typename Scalar>
std::uint64_t Mlp<Scalar>::Identity::next() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

template <typename Scalar>
Mlp<Scalar>::Mlp(const MlpConfig& config) : config_(config) {
  if (config.input_dim <= 0 || config.feature_dim <= 0 || config.blocks < 0 || config.n_coarse < 2 ||
      config.n_fine < 2) {
    throw DimensionError("invalid MLP dimensions");
  }
  head = Linear<Scalar>(config.input_dim, config.feature_dim);
  body.resize(static_cast<std::size_t>(config.blocks));
  for (auto& block : body) {
    block.fc1 = Linear<Scalar>(config.feature_dim, config.feature_dim);
    block.fc2 = Linear<Scalar>(config.feature_dim, config.feature_dim);
  }
  tail_a = Linear<Scalar>(config.feature_dim, config.n_coarse + 1);
  tail_b = Linear<Scalar>(config.feature_dim, config.n_fine);
}

template <typename Scalar>
void Mlp<Scalar>::initialize(std::mt19937_64& rng) {
  auto init = [&rng](Linear<Scalar>& layer) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.in_dim()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = static_cast<Scalar>(dist(rng));
    layer.bias.setZero();
  };
  init(head);
  for (auto& block : body) {
    init(block.fc1);
    init(block.fc2);
  }
  init(tail_a);
  init(tail_b);
  mark_modified();
}

template <typename Scalar>
void Mlp<Scalar>::set_zero() {
  for (auto p : parameters()) std::fill(p.begin(), p.end(), Scalar(0));
  mark_modified();
}

template <typename Scalar>
MlpOutput<Scalar> Mlp<Scalar>::forward(const Tensor<Scalar>& batch, ForwardCache<Scalar>* cache) const {
  if (batch.cols() != config_.input_dim) {
    throw DimensionError("batch width " + std::to_string(batch.cols()) + " does not match input dimension " +
                         std::to_string(config_.input_dim));
  }
  Tensor<Scalar> x = head.forward(batch);
  if (cache) {
    cache->model_id = id_.value;
    cache->model_version = version_;
    cache->input = batch;
    cache->block_inputs.clear();
    cache->hidden.clear();
    cache->branch.clear();
  }
  for (const auto& block : body) {
    Tensor<Scalar> h = block.fc1.forward(x).cwiseMax(Scalar(0));
    Tensor<Scalar> b = block.fc2.forward(h).cwiseMax(Scalar(0));
    if (cache) {
      cache->block_inputs.push_back(x);
      cache->hidden.push_back(std::move(h));
      x += b;
      cache->branch.push_back(std::move(b));
    } else {
      x += b;
    }
  }
  const Tensor<Scalar> a = tail_a.forward(x);
  MlpOutput<Scalar> out;
  out.logits_coarse = a.leftCols(config_.n_coarse);
  out.logit_alpha = a.rightCols(1);
  out.logits_fine = tail_b.forward(x);
  if (cache) cache->block_inputs.push_back(std::move(x));
  return out;
}

template <typename Scalar>
Mlp<Scalar> Mlp<Scalar>::backward(const ForwardCache<Scalar>& cache, const MlpOutput<Scalar>& g) const {
  if (cache.model_id != id_.value || cache.model_version != version_ ||
      cache.block_inputs.size() != body.size() + 1) {
    throw std::logic_error("forward cache does not belong to the current model parameters");
  }
  const Eigen::Index rows = cache.input.rows();
  if (g.logits_coarse.rows() != rows || g.logits_coarse.cols() != config_.n_coarse || g.logits_fine.rows() != rows ||
      g.logits_fine.cols() != config_.n_fine || g.logit_alpha.rows() != rows || g.logit_alpha.cols() != 1) {
    throw DimensionError("output gradient shapes do not match the forward batch");
  }
  Mlp grad(config_);

  Tensor<Scalar> grad_a(rows, config_.n_coarse + 1);
  grad_a.leftCols(config_.n_coarse) = g.logits_coarse;
  grad_a.rightCols(1) = g.logit_alpha;
  const Tensor<Scalar>& tail_in = cache.block_inputs.back();
  Tensor<Scalar> gx = tail_a.backward(tail_in, grad_a, grad.tail_a);
  gx += tail_b.backward(tail_in, g.logits_fine, grad.tail_b);

  for (std::size_t k = body.size(); k-- > 0;) {
    const auto& block = body[k];
    auto& gblock = grad.body[k];
    const Tensor<Scalar> g_pre2 = (cache.branch[k].array() > Scalar(0)).select(gx, Scalar(0));
    const Tensor<Scalar> g_h = block.fc2.backward(cache.hidden[k], g_pre2, gblock.fc2);
    const Tensor<Scalar> g_pre1 = (cache.hidden[k].array() > Scalar(0)).select(g_h, Scalar(0));
    gx += block.fc1.backward(cache.block_inputs[k], g_pre1, gblock.fc1);
  }
  // Head input gradient is unused; accumulate parameters only.
  grad.head.weight.noalias() += gx.transpose() * cache.input;
  grad.head.bias += gx.colwise().sum().transpose();
  return grad;
}

template <typename Scalar>
std::vector<std::span<Scalar>> Mlp<Scalar>::parameters() {
  std::vector<std::span<Scalar>> out;
  auto add = [&out](Linear<Scalar>& l) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  };
  add(head);
  for (auto& block : body) {
    add(block.fc1);
    add(block.fc2);
  }
  add(tail_a);
  add(tail_b);
  return out;
}

template <typename Scalar>
std::vector<std::span<const Scalar>> Mlp<Scalar>::parameters() const {
  std::vector<std::span<const Scalar>> out;
  for (auto p : const_cast<Mlp*>(this)->parameters()) out.emplace_back(p.data(), p.size());
  return out;
}

template <typename Scalar>
std::size_t Mlp<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (auto p : parameters()) n += p.size();
  return n;
}

template <typename Scalar>
template <typename Other>
Mlp<Other> Mlp<Scalar>::cast() const {
  Mlp<Other> out(config_);
  auto src = parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (std::size_t j = 0; j < src[i].size(); ++j) dst[i][j] = static_cast<Other>(src[i][j]);
  }
  return out;
}

template <typename Scalar>
double bce_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& targets, Tensor<Scalar>& grad) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw DimensionError("BCE logits and targets differ in shape");
  }
  grad.resize(logits.rows(), logits.cols());
  const Eigen::Index count = logits.size();
  if (count == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (Eigen::Index i = 0; i < count; ++i) {
    const double z = static_cast<double>(logits.data()[i]);
    const double t = static_cast<double>(targets.data()[i]);
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    grad.data()[i] = static_cast<Scalar>((sigmoid(z) - t) * inv);
  }
  return total * inv;
}

template <typename Scalar>
Adam<Scalar>::Adam(std::vector<std::span<Scalar>> params, Options options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

template <typename Scalar>
void Adam<Scalar>::step(const std::vector<std::span<const Scalar>>& grads) {
  if (grads.size() != params_.size()) throw DimensionError("gradient list does not mirror parameters");
  ++step_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = options_.learning_rate;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i];
    const auto g = grads[i];
    if (g.size() != p.size()) throw DimensionError("gradient tensor size mismatch");
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] = static_cast<Scalar>(static_cast<double>(p[j]) - lr * m_hat / (std::sqrt(v_hat) + options_.epsilon));
    }
  }
}

namespace {

constexpr char kModelMagic[] = "NEDM";
constexpr std::uint32_t kMaxDimension = 1u << 20;

}  // namespace

void save_model(const Mlp<float>& model, const std::filesystem::path& path, const ModelFileMeta& meta,
                std::uint32_t version) {
  const MlpConfig& c = model.config();
  io::BinaryWriter w;
  w.magic(kModelMagic);
  w.u32(version);
  w.u32(static_cast<std::uint32_t>(c.input_dim));
  w.u32(static_cast<std::uint32_t>(c.feature_dim));
  w.u32(static_cast<std::uint32_t>(c.blocks));
  w.u32(static_cast<std::uint32_t>(c.n_coarse));
  w.u32(static_cast<std::uint32_t>(c.n_fine));
  w.f32(meta.half_range);
  for (auto p : model.parameters()) w.f32s(p);
  w.f32s(meta.extension);
  w.write_file(path);
}

LoadedModel load_model(const std::filesystem::path& path, std::size_t extension_floats) {
  const std::vector<std::uint8_t> bytes = io::read_file(path);
  io::BinaryReader<FormatError> r(bytes);
  r.expect_magic(kModelMagic);
  LoadedModel out;
  out.version = r.u32();
  MlpConfig c;
  const std::uint32_t dims[5] = {r.u32(), r.u32(), r.u32(), r.u32(), r.u32()};
  for (std::uint32_t d : dims) {
    if (d > kMaxDimension) throw DimensionError("model header declares an implausible dimension");
  }
  c.input_dim = static_cast<int>(dims[0]);
  c.feature_dim = static_cast<int>(dims[1]);
  c.blocks = static_cast<int>(dims[2]);
  c.n_coarse = static_cast<int>(dims[3]);
  c.n_fine = static_cast<int>(dims[4]);
  out.meta.half_range = r.f32();

  Mlp<float> model(c);
  const std::size_t expected = (model.parameter_count() + extension_floats) * 4;
  if (r.remaining() < expected) {
    throw FormatError("model file is truncated: " + std::to_string(r.remaining()) + " payload bytes, expected " +
                      std::to_string(expected));
  }
  if (r.remaining() > expected) {
    throw DimensionError("declared dimensions do not match the parameter payload (" +
                         std::to_string(r.remaining()) + " bytes, expected " + std::to_string(expected) + ")");
  }
  for (auto p : model.parameters()) r.f32s(p);
  out.meta.extension.resize(extension_floats);
  r.f32s(out.meta.extension);
  model.mark_modified();
  out.model = std::move(model);
  return out;
}

template struct Linear<float>;
template struct Linear<double>;
template class Mlp<float>;
template class Mlp<double>;
template Mlp<double> Mlp<float>::cast<double>() const;
template Mlp<float> Mlp<double>::cast<float>() const;
template Mlp<float> Mlp<float>::cast<float>() const;
template Mlp<double> Mlp<double>::cast<double>() const;
template double bce_loss<float>(const Tensor<float>&, const Tensor<float>&, Tensor<float>&);
template double bce_loss<double>(const Tensor<double>&, const Tensor<double>&, Tensor<double>&);
template class Adam<float>;
template class Adam<double>;

}  // namespace nedf::nn
