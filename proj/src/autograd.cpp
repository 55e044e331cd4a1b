// SPDX-License-Identifier: Apache-2.0

#include "eendvc/autograd.hpp"

#include <cmath>

#include "eendvc/error.hpp"

namespace eendvc::nn {

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::param(const Parameter& p) {
  // Gradients are only written back when recording for training.
  auto* mutable_p = const_cast<Parameter*>(&p);
  nodes_.push_back(Node{Matrix(), Matrix(), grad_enabled_ && p.trainable, nullptr, mutable_p});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, bool requires_grad, Backward backward) {
  const bool rg = grad_enabled_ && requires_grad;
  nodes_.push_back(Node{std::move(value), Matrix(), rg, rg ? std::move(backward) : nullptr, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = g;
  else n.grad += g;
}

void Tape::backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward() needs a scalar loss");
  if (!loss.requires_grad()) return;
  nodes_[static_cast<std::size_t>(loss.id())].grad = Matrix::Ones(1, 1);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.param) {
      if (n.param->grad.size() == 0) n.param->grad = n.grad;
      else n.param->grad += n.grad;
    }
    if (n.backward) n.backward(n.grad);
    n.grad.resize(0, 0);
  }
}

namespace {

Tape& tape_of(const Var& a) { return *a.tape(); }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Tape& t = tape_of(a);
  return t.record(a.value() * b.value(), a.requires_grad() || b.requires_grad(), [a, b, &t](const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
  Tape& t = tape_of(a);
  return t.record(a.value() * b.value().transpose(), a.requires_grad() || b.requires_grad(),
                  [a, b, &t](const Matrix& g) {
                    if (a.requires_grad()) t.accumulate(a, g * b.value());
                    if (b.requires_grad()) t.accumulate(b, g.transpose() * a.value());
                  });
}

Var linear(const Var& x, const Var& weight, const Var* bias) {
  if (x.cols() != weight.cols())
    throw ShapeError("linear: input width " + std::to_string(x.cols()) + " vs weight " +
                     std::to_string(weight.cols()));
  Tape& t = tape_of(x);
  Matrix out = x.value() * weight.value().transpose();
  Var b;
  if (bias) {
    b = *bias;
    if (b.rows() != 1 || b.cols() != out.cols()) throw ShapeError("linear: bias shape");
    out.rowwise() += b.value().row(0);
  }
  const bool rg = x.requires_grad() || weight.requires_grad() || (b.valid() && b.requires_grad());
  return t.record(std::move(out), rg, [x, weight, b, &t](const Matrix& g) {
    if (x.requires_grad()) t.accumulate(x, g * weight.value());
    if (weight.requires_grad()) t.accumulate(weight, g.transpose() * x.value());
    if (b.valid() && b.requires_grad()) t.accumulate(b, g.colwise().sum());
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tape& t = tape_of(a);
  return t.record(a.value() + b.value(), a.requires_grad() || b.requires_grad(), [a, b, &t](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tape& t = tape_of(a);
  return t.record(a.value() - b.value(), a.requires_grad() || b.requires_grad(), [a, b, &t](const Matrix& g) {
    t.accumulate(a, g);
    if (b.requires_grad()) t.accumulate(b, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tape& t = tape_of(a);
  return t.record(a.value().cwiseProduct(b.value()), a.requires_grad() || b.requires_grad(),
                  [a, b, &t](const Matrix& g) {
                    if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
                    if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
                  });
}

Var scale(const Var& a, double s) {
  Tape& t = tape_of(a);
  return t.record(a.value() * s, a.requires_grad(), [a, s, &t](const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_scalar(const Var& a, double s) {
  Tape& t = tape_of(a);
  return t.record((a.value().array() + s).matrix(), a.requires_grad(),
                  [a, &t](const Matrix& g) { t.accumulate(a, g); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: row shape");
  Tape& t = tape_of(a);
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return t.record(std::move(out), a.requires_grad() || row.requires_grad(), [a, row, &t](const Matrix& g) {
    t.accumulate(a, g);
    if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("mul_row: row shape");
  Tape& t = tape_of(a);
  Matrix out = (a.value().array().rowwise() * row.value().row(0).array()).matrix();
  return t.record(std::move(out), a.requires_grad() || row.requires_grad(), [a, row, &t](const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, (g.array().rowwise() * row.value().row(0).array()).matrix());
    if (row.requires_grad()) t.accumulate(row, g.cwiseProduct(a.value()).colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& column) {
  if (column.cols() != 1 || column.rows() != a.rows()) throw ShapeError("mul_col: column shape");
  Tape& t = tape_of(a);
  Matrix out = (a.value().array().colwise() * column.value().col(0).array()).matrix();
  return t.record(std::move(out), a.requires_grad() || column.requires_grad(), [a, column, &t](const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, (g.array().colwise() * column.value().col(0).array()).matrix());
    if (column.requires_grad()) t.accumulate(column, g.cwiseProduct(a.value()).rowwise().sum());
  });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("mul_scalar: scalar must be 1x1");
  Tape& t = tape_of(a);
  return t.record(a.value() * s.value()(0, 0), a.requires_grad() || s.requires_grad(), [a, s, &t](const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * s.value()(0, 0));
    if (s.requires_grad()) t.accumulate(s, Matrix::Constant(1, 1, g.cwiseProduct(a.value()).sum()));
  });
}

Var sigmoid(const Var& a) {
  Tape& t = tape_of(a);
  Matrix y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return t.record(y, a.requires_grad(), [a, y, &t](const Matrix& g) {
    t.accumulate(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var silu(const Var& a) {
  Tape& t = tape_of(a);
  const auto& x = a.value();
  Matrix sig = (1.0 / (1.0 + (-x.array()).exp())).matrix();
  Matrix y = x.cwiseProduct(sig);
  return t.record(std::move(y), a.requires_grad(), [a, sig, &t](const Matrix& g) {
    const auto& x = a.value();
    t.accumulate(a, (g.array() * sig.array() * (1.0 + x.array() * (1.0 - sig.array()))).matrix());
  });
}

Var gelu(const Var& a) {
  Tape& t = tape_of(a);
  const auto& x = a.value();
  Matrix y = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
  return t.record(std::move(y), a.requires_grad(), [a, &t](const Matrix& g) {
    Matrix d = a.value().unaryExpr([](double v) {
      const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
      return cdf + v * pdf;
    });
    t.accumulate(a, g.cwiseProduct(d));
  });
}

Var relu(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(a.value().cwiseMax(0.0), a.requires_grad(), [a, &t](const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0).matrix());
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x.cols();
  if (gamma.cols() != n || beta.cols() != n) throw ShapeError("layer_norm: affine width");
  Tape& t = tape_of(x);
  const auto& xv = x.value();
  Eigen::VectorXd mean = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mean;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(n)) + eps).rsqrt().matrix();
  Matrix xhat = (centered.array().colwise() * inv_std.array()).matrix();
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  y.rowwise() += beta.value().row(0);
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return t.record(std::move(y), rg, [x, gamma, beta, xhat, inv_std, n, &t](const Matrix& g) {
    if (gamma.requires_grad()) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
    if (beta.requires_grad()) t.accumulate(beta, g.colwise().sum());
    if (x.requires_grad()) {
      Matrix dxhat = (g.array().rowwise() * gamma.value().row(0).array()).matrix();
      Eigen::VectorXd s1 = dxhat.rowwise().sum();
      Eigen::VectorXd s2 = dxhat.cwiseProduct(xhat).rowwise().sum();
      Matrix dx = (static_cast<double>(n) * dxhat.array() - (xhat.array().colwise() * s2.array())).matrix();
      dx.colwise() -= s1;
      dx = (dx.array().colwise() * (inv_std.array() / static_cast<double>(n))).matrix();
      t.accumulate(x, dx);
    }
  });
}

namespace {
Matrix softmax_value(const Matrix& x) {
  Matrix y = x.colwise() - x.rowwise().maxCoeff();
  y = y.array().exp().matrix();
  y = (y.array().colwise() / y.rowwise().sum().array()).matrix();
  return y;
}
}  // namespace

Var softmax_rows(const Var& x) {
  Tape& t = tape_of(x);
  Matrix y = softmax_value(x.value());
  return t.record(y, x.requires_grad(), [x, y, &t](const Matrix& g) {
    Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Matrix gm = g.colwise() - dot;
    t.accumulate(x, gm.cwiseProduct(y));
  });
}

Var log_softmax_rows(const Var& x) {
  Tape& t = tape_of(x);
  const auto& xv = x.value();
  Eigen::VectorXd mx = xv.rowwise().maxCoeff();
  Matrix shifted = xv.colwise() - mx;
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  Matrix y = shifted.colwise() - lse;
  Matrix p = y.array().exp().matrix();
  return t.record(std::move(y), x.requires_grad(), [x, p, &t](const Matrix& g) {
    Eigen::VectorXd s = g.rowwise().sum();
    t.accumulate(x, g - (p.array().colwise() * s.array()).matrix());
  });
}

Var dropout(const Var& x, double p, Rng* rng) {
  if (!rng || p <= 0.0) return x;
  Tape& t = tape_of(x);
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(x.rows(), x.cols());
  const double s = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? s : 0.0;
  return t.record(x.value().cwiseProduct(mask), x.requires_grad(),
                  [x, mask, &t](const Matrix& g) { t.accumulate(x, g.cwiseProduct(mask)); });
}

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw ShapeError("slice_cols out of range");
  Tape& t = tape_of(x);
  return t.record(x.value().middleCols(start, count), x.requires_grad(), [x, start, count, &t](const Matrix& g) {
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    d.middleCols(start, count) = g;
    t.accumulate(x, d);
  });
}

Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw ShapeError("slice_rows out of range");
  Tape& t = tape_of(x);
  return t.record(x.value().middleRows(start, count), x.requires_grad(), [x, start, count, &t](const Matrix& g) {
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    d.middleRows(start, count) = g;
    t.accumulate(x, d);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Tape& t = tape_of(parts.front());
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
    rg = rg || p.requires_grad();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> copy(parts.begin(), parts.end());
  return t.record(std::move(out), rg, [copy, &t](const Matrix& g) {
    Eigen::Index c = 0;
    for (const auto& p : copy) {
      if (p.requires_grad()) t.accumulate(p, g.middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

Var transpose(const Var& x) {
  Tape& t = tape_of(x);
  return t.record(x.value().transpose(), x.requires_grad(),
                  [x, &t](const Matrix& g) { t.accumulate(x, g.transpose()); });
}

Var glu(const Var& x) {
  if (x.cols() % 2 != 0) throw ShapeError("glu needs an even width");
  const Eigen::Index h = x.cols() / 2;
  Tape& t = tape_of(x);
  Matrix a = x.value().leftCols(h);
  Matrix sig = (1.0 / (1.0 + (-x.value().rightCols(h).array()).exp())).matrix();
  return t.record(a.cwiseProduct(sig), x.requires_grad(), [x, a, sig, h, &t](const Matrix& g) {
    Matrix d(x.rows(), x.cols());
    d.leftCols(h) = g.cwiseProduct(sig);
    d.rightCols(h) = (g.array() * a.array() * sig.array() * (1.0 - sig.array())).matrix();
    t.accumulate(x, d);
  });
}

Var conv1d(const Var& x, const Var& weight, const Var* bias, int kernel, int stride, int padding, int groups) {
  const Eigen::Index T = x.rows();
  const Eigen::Index cin = x.cols();
  const Eigen::Index cout = weight.rows();
  if (groups < 1 || cin % groups != 0 || cout % groups != 0) throw ShapeError("conv1d: bad group count");
  const Eigen::Index cin_g = cin / groups;
  const Eigen::Index cout_g = cout / groups;
  if (weight.cols() != cin_g * kernel) throw ShapeError("conv1d: weight shape");
  const Eigen::Index tout = (T + 2 * padding - kernel) / stride + 1;
  if (tout <= 0) throw ShapeError("conv1d: input shorter than kernel");
  Tape& t = tape_of(x);

  auto im2col = [=](const Matrix& xv, Eigen::Index g) {
    Matrix cols = Matrix::Zero(tout, cin_g * kernel);
    for (Eigen::Index o = 0; o < tout; ++o) {
      for (Eigen::Index k = 0; k < kernel; ++k) {
        const Eigen::Index src = o * stride - padding + k;
        if (src < 0 || src >= T) continue;
        for (Eigen::Index c = 0; c < cin_g; ++c) cols(o, c * kernel + k) = xv(src, g * cin_g + c);
      }
    }
    return cols;
  };

  Matrix out(tout, cout);
  for (Eigen::Index g = 0; g < groups; ++g) {
    const Matrix cols = im2col(x.value(), g);
    out.middleCols(g * cout_g, cout_g).noalias() = cols * weight.value().middleRows(g * cout_g, cout_g).transpose();
  }
  Var b;
  if (bias) {
    b = *bias;
    out.rowwise() += b.value().row(0);
  }
  const bool rg = x.requires_grad() || weight.requires_grad() || (b.valid() && b.requires_grad());
  return t.record(std::move(out), rg, [=, &t](const Matrix& grad) {
    Matrix dw = Matrix::Zero(cout, cin_g * kernel);
    Matrix dx = Matrix::Zero(T, cin);
    for (Eigen::Index g = 0; g < groups; ++g) {
      const Matrix go = grad.middleCols(g * cout_g, cout_g);
      if (weight.requires_grad()) dw.middleRows(g * cout_g, cout_g) = go.transpose() * im2col(x.value(), g);
      if (x.requires_grad()) {
        const Matrix dcols = go * weight.value().middleRows(g * cout_g, cout_g);
        for (Eigen::Index o = 0; o < tout; ++o)
          for (Eigen::Index k = 0; k < kernel; ++k) {
            const Eigen::Index src = o * stride - padding + k;
            if (src < 0 || src >= T) continue;
            for (Eigen::Index c = 0; c < cin_g; ++c) dx(src, g * cin_g + c) += dcols(o, c * kernel + k);
          }
      }
    }
    if (weight.requires_grad()) t.accumulate(weight, dw);
    if (x.requires_grad()) t.accumulate(x, dx);
    if (b.valid() && b.requires_grad()) t.accumulate(b, grad.colwise().sum());
  });
}

Var depthwise_conv1d(const Var& x, const Var& weight, const Var& bias) {
  const Eigen::Index T = x.rows(), C = x.cols(), K = weight.cols();
  if (weight.rows() != C || bias.cols() != C) throw ShapeError("depthwise_conv1d: weight shape");
  const Eigen::Index pad = (K - 1) / 2;
  Tape& t = tape_of(x);
  const auto& xv = x.value();
  const auto& wv = weight.value();
  Matrix out(T, C);
  out.rowwise() = bias.value().row(0);
  for (Eigen::Index k = 0; k < K; ++k) {
    const Eigen::Index shift = k - pad;
    const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
    const Eigen::Index hi = std::min<Eigen::Index>(T, T - shift);
    if (hi <= lo) continue;
    out.middleRows(lo, hi - lo).array() +=
        xv.middleRows(lo + shift, hi - lo).array().rowwise() * wv.col(k).transpose().array();
  }
  const bool rg = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
  return t.record(std::move(out), rg, [x, weight, bias, T, C, K, pad, &t](const Matrix& g) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    Matrix dx = Matrix::Zero(T, C);
    Matrix dw = Matrix::Zero(C, K);
    for (Eigen::Index k = 0; k < K; ++k) {
      const Eigen::Index shift = k - pad;
      const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
      const Eigen::Index hi = std::min<Eigen::Index>(T, T - shift);
      if (hi <= lo) continue;
      const auto gs = g.middleRows(lo, hi - lo).array();
      dw.col(k) = (gs * xv.middleRows(lo + shift, hi - lo).array()).colwise().sum().transpose();
      dx.middleRows(lo + shift, hi - lo).array() += gs.rowwise() * wv.col(k).transpose().array();
    }
    if (x.requires_grad()) t.accumulate(x, dx);
    if (weight.requires_grad()) t.accumulate(weight, dw);
    if (bias.requires_grad()) t.accumulate(bias, g.colwise().sum());
  });
}

Var weighted_layer_sum(std::span<const Var> layers, const Var& logits) {
  const auto L = static_cast<Eigen::Index>(layers.size());
  if (L == 0 || logits.rows() != 1 || logits.cols() != L) throw ShapeError("weighted_layer_sum: logits length");
  Tape& t = tape_of(logits);
  Matrix w = softmax_value(logits.value());
  Matrix out = Matrix::Zero(layers.front().rows(), layers.front().cols());
  bool rg = logits.requires_grad();
  for (Eigen::Index l = 0; l < L; ++l) {
    const auto& layer = layers[static_cast<std::size_t>(l)];
    if (layer.rows() != out.rows() || layer.cols() != out.cols()) throw ShapeError("weighted_layer_sum: layer shape");
    out += w(0, l) * layer.value();
    rg = rg || layer.requires_grad();
  }
  std::vector<Var> copy(layers.begin(), layers.end());
  return t.record(std::move(out), rg, [copy, logits, w, L, &t](const Matrix& g) {
    Matrix dw(1, L);
    for (Eigen::Index l = 0; l < L; ++l) {
      const auto& layer = copy[static_cast<std::size_t>(l)];
      dw(0, l) = g.cwiseProduct(layer.value()).sum();
      if (layer.requires_grad()) t.accumulate(layer, g * w(0, l));
    }
    if (logits.requires_grad()) {
      const double dot = dw.cwiseProduct(w).sum();
      t.accumulate(logits, (w.array() * (dw.array() - dot)).matrix());
    }
  });
}

Var cross_entropy(const Var& logits, std::span<const int> targets) {
  const Eigen::Index T = logits.rows();
  if (static_cast<Eigen::Index>(targets.size()) != T) throw ShapeError("cross_entropy: target count");
  Tape& t = tape_of(logits);
  Matrix p = softmax_value(logits.value());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < T; ++i) {
    const int c = targets[static_cast<std::size_t>(i)];
    if (c < 0 || c >= logits.cols()) throw ShapeError("cross_entropy: target out of range");
    loss -= std::log(std::max(p(i, c), std::numeric_limits<double>::min()));
  }
  loss /= static_cast<double>(T);
  std::vector<int> tg(targets.begin(), targets.end());
  return t.record(Matrix::Constant(1, 1, loss), logits.requires_grad(), [logits, p, tg, T, &t](const Matrix& g) {
    Matrix d = p;
    for (Eigen::Index i = 0; i < T; ++i) d(i, tg[static_cast<std::size_t>(i)]) -= 1.0;
    t.accumulate(logits, d * (g(0, 0) / static_cast<double>(T)));
  });
}

Var sum_all(const Var& x) {
  Tape& t = tape_of(x);
  return t.record(Matrix::Constant(1, 1, x.value().sum()), x.requires_grad(), [x, &t](const Matrix& g) {
    t.accumulate(x, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var gather(const Var& table, const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& index,
           Eigen::Index column) {
  Tape& t = tape_of(table);
  Matrix out(index.rows(), index.cols());
  for (Eigen::Index i = 0; i < index.size(); ++i) out.data()[i] = table.value()(index.data()[i], column);
  return t.record(std::move(out), table.requires_grad(), [table, index, column, &t](const Matrix& g) {
    Matrix d = Matrix::Zero(table.rows(), table.cols());
    for (Eigen::Index i = 0; i < index.size(); ++i) d(index.data()[i], column) += g.data()[i];
    t.accumulate(table, d);
  });
}

}  // namespace eendvc::nn
