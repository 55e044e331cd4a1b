// SPDX-License-Identifier: Apache-2.0

#include "eendvc/layers.hpp"

#include <cmath>

#include "eendvc/error.hpp"

namespace eendvc::nn {

namespace {
Matrix uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}
}  // namespace

Linear::Linear(int in, int out, bool bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = Parameter(uniform(out, in, bound, rng));
  if (bias) bias_ = Parameter(uniform(1, out, bound, rng));
}

Var Linear::forward(Tape& tape, const Var& x) const {
  const Var w = tape.param(weight_);
  Var b;
  if (bias_) b = tape.param(*bias_);
  Var y = linear(x, w, bias_ ? &b : nullptr);
  if (lora_) {
    const Var a = tape.param(lora_->a);
    const Var bb = tape.param(lora_->b);
    y = add(y, scale(matmul_nt(matmul_nt(x, a), bb), lora_->scaling));
  }
  return y;
}

void Linear::attach_lora(int rank, double alpha, Rng& rng) {
  if (rank < 1) throw ConfigError("LoRA rank must be positive");
  auto adapter = std::make_unique<LoRAAdapter>();
  adapter->a = Parameter(uniform(rank, in_features(), 1.0 / std::sqrt(static_cast<double>(in_features())), rng));
  adapter->b = Parameter(Matrix::Zero(out_features(), rank));
  adapter->scaling = alpha / static_cast<double>(rank);
  lora_ = std::move(adapter);
}

void Linear::merge_lora() {
  if (!lora_) return;
  weight_.value += lora_->scaling * (lora_->b.value * lora_->a.value);
}

void Linear::unmerge_lora() {
  if (!lora_) return;
  weight_.value -= lora_->scaling * (lora_->b.value * lora_->a.value);
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "weight", weight_);
  if (bias_) fn(prefix + "bias", *bias_);
  if (lora_) {
    fn(prefix + "lora_A", lora_->a);
    fn(prefix + "lora_B", lora_->b);
  }
}

LayerNorm::LayerNorm(int dim, double eps)
    : gamma_(Matrix::Ones(1, dim)), beta_(Matrix::Zero(1, dim)), eps_(eps) {}

Var LayerNorm::forward(Tape& tape, const Var& x) const {
  return layer_norm(x, tape.param(gamma_), tape.param(beta_), eps_);
}

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "weight", gamma_);
  fn(prefix + "bias", beta_);
}

MultiHeadAttention::MultiHeadAttention(int dim, int heads, Rng& rng, bool key_bias)
    : heads_(heads),
      q_(dim, dim, true, rng),
      k_(dim, dim, key_bias, rng),
      v_(dim, dim, true, rng),
      out_(dim, dim, true, rng) {
  if (heads < 1 || dim % heads != 0) throw ConfigError("attention width must be divisible by the head count");
}

Var MultiHeadAttention::forward(Tape& tape, const Var& x, const Mode& mode, double dropout,
                                const AttentionBias* bias) const {
  const Var q = q_.forward(tape, x);
  const Var k = k_.forward(tape, x);
  const Var v = v_.forward(tape, x);
  const Eigen::Index dh = q.cols() / heads_;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    const Var qh = slice_cols(q, h * dh, dh);
    const Var kh = slice_cols(k, h * dh, dh);
    const Var vh = slice_cols(v, h * dh, dh);
    Var scores = scale(matmul_nt(qh, kh), inv);
    if (bias && *bias) scores = add(scores, (*bias)(tape, h, x));
    Var attn = dropout_rng_apply(softmax_rows(scores), dropout, mode);
    heads.push_back(matmul(attn, vh));
  }
  return out_.forward(tape, concat_cols(heads));
}

void MultiHeadAttention::visit(const std::string& prefix, const ParamVisitor& fn) {
  q_.visit(prefix + "q_proj.", fn);
  k_.visit(prefix + "k_proj.", fn);
  v_.visit(prefix + "v_proj.", fn);
  out_.visit(prefix + "out_proj.", fn);
}

ConformerFeedForward::ConformerFeedForward(int dim, int hidden, Rng& rng)
    : norm_(dim), up_(dim, hidden, true, rng), down_(hidden, dim, true, rng) {}

Var ConformerFeedForward::forward(Tape& tape, const Var& x, const Mode& mode, double dropout) const {
  Var h = silu(up_.forward(tape, norm_.forward(tape, x)));
  h = dropout_rng_apply(h, dropout, mode);
  return dropout_rng_apply(down_.forward(tape, h), dropout, mode);
}

void ConformerFeedForward::visit(const std::string& prefix, const ParamVisitor& fn) {
  norm_.visit(prefix + "norm.", fn);
  up_.visit(prefix + "linear1.", fn);
  down_.visit(prefix + "linear2.", fn);
}

ConvModule::ConvModule(int dim, int kernel, Rng& rng)
    : norm_(dim),
      depth_norm_(dim),
      pointwise_in_(dim, 2 * dim, true, rng),
      pointwise_out_(dim, dim, true, rng) {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("convolution kernel must be odd");
  const double bound = 1.0 / std::sqrt(static_cast<double>(kernel));
  std::uniform_real_distribution<double> u(-bound, bound);
  depth_weight_ = Parameter(Matrix(dim, kernel).unaryExpr([&](double) { return u(rng); }));
  depth_bias_ = Parameter(Matrix(1, dim).unaryExpr([&](double) { return u(rng); }));
}

Var ConvModule::forward(Tape& tape, const Var& x, const Mode& mode, double dropout) const {
  Var h = glu(pointwise_in_.forward(tape, norm_.forward(tape, x)));
  h = depthwise_conv1d(h, tape.param(depth_weight_), tape.param(depth_bias_));
  h = silu(depth_norm_.forward(tape, h));
  return dropout_rng_apply(pointwise_out_.forward(tape, h), dropout, mode);
}

void ConvModule::visit(const std::string& prefix, const ParamVisitor& fn) {
  norm_.visit(prefix + "norm.", fn);
  pointwise_in_.visit(prefix + "pointwise1.", fn);
  fn(prefix + "depthwise.weight", depth_weight_);
  fn(prefix + "depthwise.bias", depth_bias_);
  depth_norm_.visit(prefix + "depth_norm.", fn);
  pointwise_out_.visit(prefix + "pointwise2.", fn);
}

ConformerBlock::ConformerBlock(const ConformerBlockConfig& config, Rng& rng)
    : config_(config),
      ff1_(config.dim, config.ff_hidden, rng),
      ff2_(config.dim, config.ff_hidden, rng),
      attn_norm_(config.dim),
      final_norm_(config.dim),
      attn_(config.dim, config.heads, rng),
      conv_(config.dim, config.kernel, rng) {}

Var ConformerBlock::forward(Tape& tape, const Var& x, const Mode& mode) const {
  const double p = config_.dropout;
  Var h = add(x, scale(ff1_.forward(tape, x, mode, p), 0.5));
  h = add(h, dropout_rng_apply(attn_.forward(tape, attn_norm_.forward(tape, h), mode, p), p, mode));
  h = add(h, conv_.forward(tape, h, mode, p));
  h = add(h, scale(ff2_.forward(tape, h, mode, p), 0.5));
  return final_norm_.forward(tape, h);
}

void ConformerBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  ff1_.visit(prefix + "ff1.", fn);
  attn_norm_.visit(prefix + "attn_norm.", fn);
  attn_.visit(prefix + "attn.", fn);
  conv_.visit(prefix + "conv.", fn);
  ff2_.visit(prefix + "ff2.", fn);
  final_norm_.visit(prefix + "final_norm.", fn);
}

Matrix sinusoidal_positions(int length, int dim) {
  Matrix pe(length, dim);
  for (int pos = 0; pos < length; ++pos)
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  return pe;
}

}  // namespace eendvc::nn
