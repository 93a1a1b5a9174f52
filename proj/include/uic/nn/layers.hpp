#pragma once

#include <string>
#include <vector>

#include "uic/nn/tape.hpp"
#include "uic/rng.hpp"

namespace uic::nn {

inline Matrix gaussian_matrix(Eigen::Index r, Eigen::Index c, double sd, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
  return m;
}

struct Linear {
  Parameter weight;  // in × out
  Parameter bias;    // 1 × out

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, double sd, Rng& rng)
      : weight(name + ".weight", gaussian_matrix(in, out, sd, rng), true),
        bias(name + ".bias", Matrix::Zero(1, out), false) {}

  Var operator()(Tape& t, Var x) { return affine(t, x, t.param(weight), t.param(bias)); }

  Matrix forward(const Matrix& x) const {
    Matrix y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

struct LayerNorm {
  Parameter gain;
  Parameter bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, Eigen::Index dim)
      : gain(name + ".gain", Matrix::Ones(1, dim), false), bias(name + ".bias", Matrix::Zero(1, dim), false) {}

  Var operator()(Tape& t, Var x) { return layer_norm(t, x, t.param(gain), t.param(bias)); }

  Matrix forward(const Matrix& x, double eps = 1e-5) const {
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mean = x.row(i).mean();
      const double var = (x.row(i).array() - mean).square().mean();
      y.row(i) = ((x.row(i).array() - mean) / std::sqrt(var + eps)) * gain.value.row(0).array() +
                 bias.value.row(0).array();
    }
    return y;
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }
};

inline Matrix gelu(const Matrix& x) {
  constexpr double c = 0.7978845608028654;
  return (0.5 * x.array() * (1.0 + (c * (x.array() + 0.044715 * x.array().cube())).tanh())).matrix();
}

/// Pre-norm transformer block: x + attn(ln1(x)), then + mlp(ln2(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  Linear qkv, out, fc, proj;
  int heads = 1;

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, Eigen::Index d, Eigen::Index ff, int n_heads, double sd, Rng& rng)
      : ln1(name + ".ln1", d),
        ln2(name + ".ln2", d),
        qkv(name + ".qkv", d, 3 * d, sd, rng),
        out(name + ".attn_out", d, d, sd, rng),
        fc(name + ".fc", d, ff, sd, rng),
        proj(name + ".proj", ff, d, sd, rng),
        heads(n_heads) {}

  Var operator()(Tape& t, Var x, const std::vector<Segment>& segs, bool causal) {
    Var a = attention(t, qkv(t, ln1(t, x)), segs, heads, causal);
    Var h = add(t, x, out(t, a));
    Var m = proj(t, nn::gelu(t, fc(t, ln2(t, h))));
    return add(t, h, m);
  }

  void collect(std::vector<Parameter*>& v) {
    ln1.collect(v);
    qkv.collect(v);
    out.collect(v);
    ln2.collect(v);
    fc.collect(v);
    proj.collect(v);
  }
};

}  // namespace uic::nn
