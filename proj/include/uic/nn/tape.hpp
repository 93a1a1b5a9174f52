#pragma once

// Reverse-mode differentiation over dense row-major matrices. Ops record a
// backward closure only when one of their inputs requires a gradient, so
// frozen sub-networks and pure inference cost nothing extra.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "uic/error.hpp"

namespace uic::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool decay = true;      // weight decay applies (weight matrices, not biases or norms)
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix v, bool d) : name(std::move(n)), value(std::move(v)), decay(d) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Var {
  int id = -1;
};

class Tape {
 public:
  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

  Var param(Parameter& p) {
    Var v = push(p.value, p.trainable, nullptr);
    if (p.trainable) nodes_[v.id].param = &p;
    return v;
  }

  const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }

  Matrix& grad(Var v) {
    auto& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Records an op result; `back` runs during backward() with the output grad available via grad(out).
  Var record(Matrix value, bool req, std::function<void(Tape&, Var)> back) {
    Var out = push(std::move(value), req, nullptr);
    if (req) nodes_[out.id].back = std::move(back);
    return out;
  }

  void backward(Var root) {
    if (value(root).size() != 1) throw StateError("backward root must be a scalar");
    grad(root)(0, 0) = 1.0;
    for (int i = root.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.back) n.back(*this, Var{i});
      if (n.param) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, Var)> back;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Matrix value, bool req, Parameter* p) {
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, p, req});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// ops

inline Var matmul(Tape& t, Var a, Var b) {
  Matrix out = t.value(a) * t.value(b);
  const bool req = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), req, [a, b](Tape& t, Var o) {
    const Matrix& g = t.grad(o);
    if (t.requires_grad(a)) t.grad(a).noalias() += g * t.value(b).transpose();
    if (t.requires_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
  });
}

/// a · bᵀ
inline Var matmul_bt(Tape& t, Var a, Var b) {
  Matrix out = t.value(a) * t.value(b).transpose();
  const bool req = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), req, [a, b](Tape& t, Var o) {
    const Matrix& g = t.grad(o);
    if (t.requires_grad(a)) t.grad(a).noalias() += g * t.value(b);
    if (t.requires_grad(b)) t.grad(b).noalias() += g.transpose() * t.value(a);
  });
}

inline Var add(Tape& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw StateError("add: shape mismatch");
  Matrix out = t.value(a) + t.value(b);
  const bool req = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), req, [a, b](Tape& t, Var o) {
    if (t.requires_grad(a)) t.grad(a) += t.grad(o);
    if (t.requires_grad(b)) t.grad(b) += t.grad(o);
  });
}

/// x (n×m) + bias (1×m) broadcast over rows.
inline Var add_bias(Tape& t, Var x, Var bias) {
  Matrix out = t.value(x);
  out.rowwise() += t.value(bias).row(0);
  const bool req = t.requires_grad(x) || t.requires_grad(bias);
  return t.record(std::move(out), req, [x, bias](Tape& t, Var o) {
    if (t.requires_grad(x)) t.grad(x) += t.grad(o);
    if (t.requires_grad(bias)) t.grad(bias) += t.grad(o).colwise().sum();
  });
}

inline Var affine(Tape& t, Var x, Var w, Var b) { return add_bias(t, matmul(t, x, w), b); }

inline Var tanh(Tape& t, Var x) {
  Matrix out = t.value(x).array().tanh().matrix();
  return t.record(out, t.requires_grad(x), [x](Tape& t, Var o) {
    const Matrix& y = t.value(o);
    t.grad(x).array() += t.grad(o).array() * (1.0 - y.array().square());
  });
}

/// GELU, tanh approximation.
inline Var gelu(Tape& t, Var x) {
  static constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  const Matrix& xv = t.value(x);
  Matrix inner = (c * (xv.array() + 0.044715 * xv.array().cube())).matrix();
  Matrix th = inner.array().tanh().matrix();
  Matrix out = (0.5 * xv.array() * (1.0 + th.array())).matrix();
  return t.record(std::move(out), t.requires_grad(x), [x, th](Tape& t, Var o) {
    const Matrix& xv = t.value(x);
    auto d = 0.5 * (1.0 + th.array()) +
             0.5 * xv.array() * (1.0 - th.array().square()) * c * (1.0 + 3.0 * 0.044715 * xv.array().square());
    t.grad(x).array() += t.grad(o).array() * d;
  });
}

/// Row-wise layer normalization with gain and bias rows.
inline Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5) {
  const Matrix& xv = t.value(x);
  const auto n = xv.rows(), m = xv.cols();
  Matrix xhat(n, m);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = xv.row(i).mean();
    const double var = (xv.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mean) * inv_std(i);
  }
  Matrix out = xhat;
  out.array().rowwise() *= t.value(gain).row(0).array();
  out.rowwise() += t.value(bias).row(0);
  const bool req = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(bias);
  return t.record(std::move(out), req, [x, gain, bias, xhat, inv_std](Tape& t, Var o) {
    const Matrix& g = t.grad(o);
    if (t.requires_grad(gain)) t.grad(gain) += (g.array() * xhat.array()).colwise().sum().matrix();
    if (t.requires_grad(bias)) t.grad(bias) += g.colwise().sum();
    if (t.requires_grad(x)) {
      Matrix gx = g;
      gx.array().rowwise() *= t.value(gain).row(0).array();
      const double m = static_cast<double>(gx.cols());
      Matrix& dx = t.grad(x);
      for (Eigen::Index i = 0; i < gx.rows(); ++i) {
        const double s1 = gx.row(i).sum();
        const double s2 = gx.row(i).dot(xhat.row(i));
        dx.row(i).array() += inv_std(i) / m * (m * gx.row(i).array() - s1 - xhat.row(i).array() * s2);
      }
    }
  });
}

/// Packed sequences: sequence i occupies rows [start, start + length).
struct Segment {
  Eigen::Index start = 0;
  Eigen::Index length = 0;
};

/// Multi-head scaled dot-product attention over packed sequences. `qkv` holds
/// [Q | K | V] column blocks of width d each; returns the concatenated heads (rows × d).
inline Var attention(Tape& t, Var qkv, std::vector<Segment> segments, int heads, bool causal) {
  const Matrix& in = t.value(qkv);
  const Eigen::Index d = in.cols() / 3;
  if (d * 3 != in.cols() || d % heads != 0) throw StateError("attention: bad qkv width");
  const Eigen::Index hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix out = Matrix::Zero(in.rows(), d);
  std::vector<Matrix> probs;  // per (segment, head)
  probs.reserve(segments.size() * static_cast<std::size_t>(heads));
  for (const auto& s : segments) {
    for (int h = 0; h < heads; ++h) {
      auto q = in.block(s.start, h * hd, s.length, hd);
      auto k = in.block(s.start, d + h * hd, s.length, hd);
      auto v = in.block(s.start, 2 * d + h * hd, s.length, hd);
      Matrix sc = (q * k.transpose()) * scale;
      for (Eigen::Index i = 0; i < s.length; ++i) {
        const Eigen::Index lim = causal ? i + 1 : s.length;
        const double mx = sc.row(i).head(lim).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < lim; ++j) z += (sc(i, j) = std::exp(sc(i, j) - mx));
        for (Eigen::Index j = 0; j < lim; ++j) sc(i, j) /= z;
        for (Eigen::Index j = lim; j < s.length; ++j) sc(i, j) = 0.0;
      }
      out.block(s.start, h * hd, s.length, hd).noalias() = sc * v;
      probs.push_back(std::move(sc));
    }
  }
  return t.record(std::move(out), t.requires_grad(qkv),
                  [qkv, segments = std::move(segments), heads, d, hd, scale, probs = std::move(probs)](Tape& t, Var o) {
                    const Matrix& in = t.value(qkv);
                    const Matrix& g = t.grad(o);
                    Matrix& din = t.grad(qkv);
                    std::size_t pi = 0;
                    for (const auto& s : segments) {
                      for (int h = 0; h < heads; ++h, ++pi) {
                        const Matrix& p = probs[pi];
                        auto q = in.block(s.start, h * hd, s.length, hd);
                        auto k = in.block(s.start, d + h * hd, s.length, hd);
                        auto v = in.block(s.start, 2 * d + h * hd, s.length, hd);
                        auto go = g.block(s.start, h * hd, s.length, hd);
                        din.block(s.start, 2 * d + h * hd, s.length, hd).noalias() += p.transpose() * go;
                        Matrix dp = go * v.transpose();
                        Matrix ds = p.array() * (dp.colwise() - (dp.array() * p.array()).rowwise().sum().matrix()).array();
                        ds *= scale;
                        din.block(s.start, h * hd, s.length, hd).noalias() += ds * k;
                        din.block(s.start, d + h * hd, s.length, hd).noalias() += ds.transpose() * q;
                      }
                    }
                  });
}

inline Var gather_rows(Tape& t, Var x, std::vector<Eigen::Index> rows) {
  const Matrix& xv = t.value(x);
  Matrix out(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
  return t.record(std::move(out), t.requires_grad(x), [x, rows = std::move(rows)](Tape& t, Var o) {
    const Matrix& g = t.grad(o);
    Matrix& dx = t.grad(x);
    for (std::size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

/// Reshapes a 1×(r·c) row into r×c (row-major order).
inline Var reshape(Tape& t, Var x, Eigen::Index r, Eigen::Index c) {
  const Matrix& xv = t.value(x);
  if (xv.size() != r * c) throw StateError("reshape: size mismatch");
  Matrix out = Eigen::Map<const Matrix>(xv.data(), r, c);
  const auto orows = xv.rows(), ocols = xv.cols();
  return t.record(std::move(out), t.requires_grad(x), [x, orows, ocols](Tape& t, Var o) {
    const Matrix& g = t.grad(o);
    t.grad(x) += Eigen::Map<const Matrix>(g.data(), orows, ocols);
  });
}

/// Row-wise log-softmax of a matrix (no tape).
inline Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

/// Σᵢ wᵢ · (−log softmax(logits row i)[targetᵢ]) as a 1×1 value.
inline Var weighted_nll(Tape& t, Var logits, std::vector<int> targets, std::vector<double> weights) {
  const Matrix& lv = t.value(logits);
  if (static_cast<Eigen::Index>(targets.size()) != lv.rows() || targets.size() != weights.size())
    throw StateError("weighted_nll: size mismatch");
  Matrix lsm = log_softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) loss -= weights[i] * lsm(static_cast<Eigen::Index>(i), targets[i]);
  Matrix out(1, 1);
  out(0, 0) = loss;
  return t.record(std::move(out), t.requires_grad(logits),
                  [logits, targets = std::move(targets), weights = std::move(weights), lsm](Tape& t, Var o) {
                    const double g = t.grad(o)(0, 0);
                    Matrix& dl = t.grad(logits);
                    for (std::size_t i = 0; i < targets.size(); ++i) {
                      const auto r = static_cast<Eigen::Index>(i);
                      dl.row(r).array() += g * weights[i] * lsm.row(r).array().exp();
                      dl(r, targets[i]) -= g * weights[i];
                    }
                  });
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline constexpr double kProbClamp = 1e-12;

/// Σᵢ wᵢ · BCE(σ(scoreᵢ), labelᵢ) with probabilities clamped to [1e-12, 1 − 1e-12].
/// Where the clamp is active the gradient is zero, matching the clamped forward value.
inline Var weighted_bce(Tape& t, Var scores, std::vector<int> labels, std::vector<double> weights) {
  const Matrix& sv = t.value(scores);
  if (sv.cols() != 1 || static_cast<Eigen::Index>(labels.size()) != sv.rows() || labels.size() != weights.size())
    throw StateError("weighted_bce: size mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(sigmoid(sv(static_cast<Eigen::Index>(i), 0)), kProbClamp, 1.0 - kProbClamp);
    loss -= weights[i] * (labels[i] ? std::log(p) : std::log(1.0 - p));
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  return t.record(std::move(out), t.requires_grad(scores),
                  [scores, labels = std::move(labels), weights = std::move(weights)](Tape& t, Var o) {
                    const double g = t.grad(o)(0, 0);
                    const Matrix& sv = t.value(scores);
                    Matrix& ds = t.grad(scores);
                    for (std::size_t i = 0; i < labels.size(); ++i) {
                      const auto r = static_cast<Eigen::Index>(i);
                      const double p = sigmoid(sv(r, 0));
                      if (p < kProbClamp || p > 1.0 - kProbClamp) continue;
                      ds(r, 0) += g * weights[i] * (p - (labels[i] ? 1.0 : 0.0));
                    }
                  });
}

}  // namespace uic::nn
