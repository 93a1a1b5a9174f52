#pragma once

#include <cmath>
#include <functional>

#include "test_util.hpp"
#include "uic/training.hpp"

// Fully enumerable policy for checking the SCST estimator.
namespace uic::test {

// vocabulary {".", "a"} with max_len 2: the only captions are ".", "a .", "a a"
struct TinySpace {
  Generator gen;
  Matrix emb;
  TinySpace() : gen(config(), TokenVocab({".", "a"})), emb(1, 4) {
    Rng r(21);
    for (Eigen::Index j = 0; j < emb.cols(); ++j) emb(0, j) = r.normal();
    // push the first-token distribution away from uniform
    Rng q(22);
    for (auto* p : gen.parameters()) p->value += nn::gaussian_matrix(p->value.rows(), p->value.cols(), 0.3, q);
  }
  static GeneratorConfig config() {
    auto c = tiny_generator(4);
    c.max_len = 2;
    c.d2 = 6;
    return c;
  }
  static std::vector<std::vector<int>> sequences() { return {{0}, {1, 0}, {1, 1}}; }
  double logp(const std::vector<int>& s) {
    double sum = 0;
    for (double x : score_tokens(gen, gen.mapper().forward(row_values()), s)) sum += x;
    return sum;
  }
  std::vector<float> row_values() const {
    std::vector<float> v(4);
    for (int j = 0; j < 4; ++j) v[j] = static_cast<float>(emb(0, j));
    return v;
  }
  std::vector<Matrix> grad_of(const std::function<double()>& f, double h) {
    std::vector<Matrix> g;
    for (auto* p : gen.parameters()) {
      Matrix m = Matrix::Zero(p->value.rows(), p->value.cols());
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        const double o = p->value.data()[i];
        p->value.data()[i] = o + h;
        const double up = f();
        p->value.data()[i] = o - h;
        const double dn = f();
        p->value.data()[i] = o;
        m.data()[i] = (up - dn) / (2 * h);
      }
      g.push_back(std::move(m));
    }
    return g;
  }
  // −∇ of the SCST loss (the ascent direction of the estimator)
  std::vector<Matrix> scst_direction(const Rollout& r, const RolloutRewards& rw) {
    for (auto* p : gen.parameters()) p->zero_grad();
    nn::Tape t;
    ScstResult res;
    auto l = scst_loss(t, gen, r, rw, res);
    if (l) t.backward(*l);
    std::vector<Matrix> g;
    for (auto* p : gen.parameters()) g.push_back(-p->grad);
    return g;
  }
};

inline CaptionSample sample_of(const Generator& g, std::vector<int> toks) {
  CaptionSample s;
  s.tokens = toks;
  s.text = g.vocab().decode(toks);
  return s;
}

inline Rollout rollout_of(TinySpace& sp, const std::vector<std::vector<int>>& seqs) {
  // embedding precision follows the float path used by map_prompts
  Rollout r;
  r.images = {0};
  r.embeddings = sp.emb.cast<float>().cast<double>();
  r.greedy.push_back(sample_of(sp.gen, {0}));
  r.samples.emplace_back();
  for (const auto& s : seqs) r.samples[0].push_back(sample_of(sp.gen, s));
  return r;
}

inline RewardBreakdown total(double v) {
  RewardBreakdown b;
  b.total = v;
  return b;
}

inline double max_abs_diff(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).cwiseAbs().maxCoeff());
  return m;
}

/// Max deviation of the estimator from the analytic gradient of E[R], over baselines {0, greedy reward}.
inline double scst_enumeration_error() {
  TinySpace sp;
  const auto seqs = TinySpace::sequences();
  const std::vector<double> R{0.3, 1.7, -0.4};
  std::vector<double> p;
  for (const auto& s : seqs) p.push_back(std::exp(sp.logp(s)));
  auto expected_reward = [&] {
    double e = 0;
    for (std::size_t i = 0; i < seqs.size(); ++i) e += std::exp(sp.logp(seqs[i])) * R[i];
    return e;
  };
  const auto fd = sp.grad_of(expected_reward, 1e-5);
  double worst = 0;
  for (double b : {0.0, R[0]}) {
    // each caption appears once; rewards are reweighted by n·p(s) so the sample mean is the expectation
    const auto r = rollout_of(sp, seqs);
    RolloutRewards rw;
    rw.greedy.push_back(total(b));
    rw.samples.emplace_back();
    for (std::size_t i = 0; i < seqs.size(); ++i)
      rw.samples[0].push_back(total(b + static_cast<double>(seqs.size()) * p[i] * (R[i] - b)));
    worst = std::max(worst, max_abs_diff(sp.scst_direction(r, rw), fd));
  }
  return worst;
}

}  // namespace uic::test
