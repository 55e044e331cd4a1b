// SPDX-License-Identifier: Apache-2.0
//
// Neural building blocks shared by the segmentation model and the encoder
// backends.

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "eendvc/autograd.hpp"

namespace eendvc::nn {

/// Forward-pass context: training enables dropout through `rng`.
struct Mode {
  bool train = false;
  Rng* rng = nullptr;
  Rng* dropout_rng() const { return train ? rng : nullptr; }
};

inline Var dropout_rng_apply(const Var& x, double p, const Mode& mode) { return dropout(x, p, mode.dropout_rng()); }

/// Low-rank residual B * A added to a frozen weight, scaled by alpha / rank.
struct LoRAAdapter {
  Parameter a;  // rank x in
  Parameter b;  // out x rank
  double scaling = 1.0;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, bool bias, Rng& rng);

  Var forward(Tape& tape, const Var& x) const;

  int in_features() const { return static_cast<int>(weight_.value.cols()); }
  int out_features() const { return static_cast<int>(weight_.value.rows()); }
  bool has_bias() const { return bias_.has_value(); }

  Parameter& weight() { return weight_; }
  const Parameter& weight() const { return weight_; }
  Parameter* bias() { return bias_ ? &*bias_ : nullptr; }

  /// B starts at zero so attaching never changes outputs.
  void attach_lora(int rank, double alpha, Rng& rng);
  void remove_lora() { lora_.reset(); }
  bool has_lora() const { return lora_ != nullptr; }
  LoRAAdapter* lora() { return lora_.get(); }
  /// Folds the adapter product into the weight (and back out).
  void merge_lora();
  void unmerge_lora();

  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  Parameter weight_;
  std::optional<Parameter> bias_;
  std::unique_ptr<LoRAAdapter> lora_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int dim, double eps = 1e-5);
  Var forward(Tape& tape, const Var& x) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  Parameter gamma_;
  Parameter beta_;
  double eps_ = 1e-5;
};

/// Additive per-head attention bias hook: returns a T x T node for head h.
using AttentionBias = std::function<Var(Tape&, int head, const Var& input)>;

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int dim, int heads, Rng& rng, bool key_bias = true);

  Var forward(Tape& tape, const Var& x, const Mode& mode, double dropout,
              const AttentionBias* bias = nullptr) const;

  int heads() const { return heads_; }
  Linear& q() { return q_; }
  Linear& k() { return k_; }
  Linear& v() { return v_; }
  Linear& out() { return out_; }
  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  int heads_ = 1;
  Linear q_, k_, v_, out_;
};

/// Conformer half-step feed-forward: LN -> Linear -> Swish -> Dropout -> Linear -> Dropout.
class ConformerFeedForward {
 public:
  ConformerFeedForward() = default;
  ConformerFeedForward(int dim, int hidden, Rng& rng);
  Var forward(Tape& tape, const Var& x, const Mode& mode, double dropout) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  LayerNorm norm_;
  Linear up_, down_;
};

/// LN -> pointwise (2d) -> GLU -> depthwise conv -> LN -> Swish -> pointwise -> Dropout.
class ConvModule {
 public:
  ConvModule() = default;
  ConvModule(int dim, int kernel, Rng& rng);
  Var forward(Tape& tape, const Var& x, const Mode& mode, double dropout) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  LayerNorm norm_, depth_norm_;
  Linear pointwise_in_, pointwise_out_;
  Parameter depth_weight_, depth_bias_;
};

struct ConformerBlockConfig {
  int dim = 256;
  int ff_hidden = 1024;
  int heads = 4;
  int kernel = 31;
  double dropout = 0.1;
};

class ConformerBlock {
 public:
  ConformerBlock() = default;
  ConformerBlock(const ConformerBlockConfig& config, Rng& rng);
  Var forward(Tape& tape, const Var& x, const Mode& mode) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  ConformerBlockConfig config_;
  ConformerFeedForward ff1_, ff2_;
  LayerNorm attn_norm_, final_norm_;
  MultiHeadAttention attn_;
  ConvModule conv_;
};

/// Sinusoidal position table, rows = positions.
Matrix sinusoidal_positions(int length, int dim);

}  // namespace eendvc::nn
