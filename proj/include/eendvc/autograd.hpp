// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over row-major matrices.
// A Tape records every operation of one forward pass; backward() walks it in
// reverse and accumulates gradients into the Parameters that were read.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace eendvc::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

struct Parameter {
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  /// The gradient buffer is allocated on first use.
  explicit Parameter(Matrix v) : value(std::move(v)) {}

  void zero_grad() { grad.resize(0, 0); }
  bool has_grad() const { return grad.size() != 0; }
  Eigen::Index size() const { return value.size(); }
};

using ParamVisitor = std::function<void(const std::string& name, Parameter& p)>;

class Tape;

/// Handle to one node of a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(const Matrix& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix value);
  /// Reads a parameter; its gradient is accumulated on backward() when trainable.
  Var param(const Parameter& p);

  /// Records an operation. `backward` is dropped when no input needs gradients.
  Var record(Matrix value, bool requires_grad, Backward backward);

  /// Adds `g` to the gradient of `v` (no-op when v does not require grad).
  void accumulate(const Var& v, const Matrix& g);

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 node and propagates.
  void backward(const Var& loss);

  const Matrix& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.param ? n.param->value : n.value;
  }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };
  bool grad_enabled_;
  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// ---------------------------------------------------------------------------
// Operations. All inputs must live on the same tape.

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
/// x * W^T (+ bias row)
Var linear(const Var& x, const Var& weight, const Var* bias = nullptr);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Adds a 1 x cols row to every row.
Var add_row(const Var& a, const Var& row);
/// Multiplies every row elementwise by a 1 x cols row.
Var mul_row(const Var& a, const Var& row);
/// Multiplies row t of `a` by v(t, 0).
Var mul_col(const Var& a, const Var& column);
/// Multiplies every element by the 1x1 node `s`.
Var mul_scalar(const Var& a, const Var& s);
Var add_scalar(const Var& a, double s);

Var sigmoid(const Var& a);
Var silu(const Var& a);
Var gelu(const Var& a);
Var relu(const Var& a);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);
Var dropout(const Var& x, double p, Rng* rng);

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var transpose(const Var& x);
/// First half of the columns gated by sigmoid of the second half.
Var glu(const Var& x);

/// Time-major 1-D convolution. x: T x Cin; weight: Cout x (Cin/groups * K) laid out
/// as [in_channel][tap]; output: T' x Cout with T' = (T + 2*padding - K) / stride + 1.
Var conv1d(const Var& x, const Var& weight, const Var* bias, int kernel, int stride, int padding, int groups);
/// Per-channel convolution with `same` padding. weight: C x K.
Var depthwise_conv1d(const Var& x, const Var& weight, const Var& bias);

/// softmax(logits)-weighted sum of equally shaped layers. logits: 1 x L.
Var weighted_layer_sum(std::span<const Var> layers, const Var& logits);

/// Mean over frames of -log softmax(logits)[t, target[t]].
Var cross_entropy(const Var& logits, std::span<const int> targets);

Var sum_all(const Var& x);

/// out(i, j) = table(index(i, j), column).
Var gather(const Var& table, const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& index,
           Eigen::Index column);

}  // namespace eendvc::nn
