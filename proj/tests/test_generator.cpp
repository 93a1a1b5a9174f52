#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "uic/generator.hpp"

using namespace uic;
using uic::test::row;
using uic::test::TableLM;

namespace {

TableLM constant_lm(RowVector logits) {
  const int v = static_cast<int>(logits.size());
  return TableLM{[logits](const std::vector<int>&) { return logits; }, test::numbered_words(v)};
}

DecodeConfig decode(int max_len, int eos) { return DecodeConfig{max_len, eos, 1, 1.0}; }

struct RiggedGenerator : TableLM {
  std::vector<std::string> vocab_words;
  VisualPromptSet map_prompts(const EmbeddingVector&) const { return test::dummy_prompts(); }
  std::vector<int> encode(std::string_view s) const {
    std::vector<int> ids;
    for (const auto& t : text::word_tokens(s))
      for (int i = 0; i < vocab_size(); ++i)
        if (token_text(i) == t) ids.push_back(i);
    return ids;
  }
};

}  // namespace

TEST(PromptMapper, ZeroParametersGiveZeroPrompts) {
  auto cfg = test::tiny_generator();
  Rng r(1);
  PromptMapper m(cfg, r);
  for (auto* p : std::vector<nn::Parameter*>{&m.hidden.weight, &m.hidden.bias, &m.output.weight, &m.output.bias})
    p->value.setZero();
  const std::vector<float> x{0.3f, -1, 2, 0.5f, 0, 1, -0.2f, 0.9f};
  const auto p = m.forward(x);
  EXPECT_EQ(p.vectors.rows(), cfg.k);
  EXPECT_EQ(p.vectors.cols(), cfg.d2);
  EXPECT_EQ(p.vectors.cwiseAbs().maxCoeff(), 0.0);
}

TEST(PromptMapper, MatchesExplicitLoops) {
  auto cfg = test::tiny_generator(8);
  Rng r(2);
  PromptMapper m(cfg, r);
  m.hidden.bias.value = nn::gaussian_matrix(1, cfg.mlp_hidden, 0.3, r);
  m.output.bias.value = nn::gaussian_matrix(1, cfg.k * cfg.d2, 0.3, r);
  const std::vector<float> x{0.1f, -0.4f, 0.25f, 0.7f, -0.9f, 0.05f, 0.33f, -0.2f};
  std::vector<double> h(static_cast<std::size_t>(cfg.mlp_hidden));
  for (int j = 0; j < cfg.mlp_hidden; ++j) {
    double s = m.hidden.bias.value(0, j);
    for (int i = 0; i < 8; ++i) s += static_cast<double>(x[static_cast<std::size_t>(i)]) * m.hidden.weight.value(i, j);
    h[static_cast<std::size_t>(j)] = std::tanh(s);
  }
  const auto p = m.forward(x);
  for (int a = 0; a < cfg.k; ++a)
    for (int b = 0; b < cfg.d2; ++b) {
      const int col = a * cfg.d2 + b;
      double s = m.output.bias.value(0, col);
      for (int j = 0; j < cfg.mlp_hidden; ++j) s += h[static_cast<std::size_t>(j)] * m.output.weight.value(j, col);
      EXPECT_NEAR(p.vectors(a, b), s, 1e-12);
    }
  EXPECT_EQ(m.forward(x).vectors, p.vectors);
}

TEST(PromptMapper, WrongDimensionRejected) {
  Rng r(3);
  PromptMapper m(test::tiny_generator(8), r);
  EXPECT_THROW(m.forward(std::vector<float>(5, 0.f)), InputError);
}

TEST(GreedyDecode, ForcedArgmaxRunsToMaxLength) {
  RowVector l = RowVector::Zero(10);
  l(7) = 5;
  const auto s = greedy_decode(constant_lm(l), test::dummy_prompts(), decode(6, 0));
  EXPECT_EQ(s.tokens, std::vector<int>(6, 7));
  EXPECT_FALSE(s.terminated);
  EXPECT_EQ(s.step_logprobs.size(), 6u);
}

TEST(GreedyDecode, EosAtFirstStep) {
  const auto s = greedy_decode(constant_lm(row({3, 0, 1})), test::dummy_prompts(), decode(6, 0));
  EXPECT_EQ(s.tokens, std::vector<int>{0});
  EXPECT_TRUE(s.terminated);
}

TEST(GreedyDecode, HandEnumeratedTransitions) {
  // next logits depend on the last token; start → 2, 2 → 1, 1 → 0 (EOS)
  TableLM lm{[](const std::vector<int>& p) {
               if (p.empty()) return row({0.0, 1.0, 2.0});
               if (p.back() == 2) return row({0.5, 3.0, 1.0});
               return row({4.0, 0.0, 1.0});
             },
             {".", "x", "y"}};
  const auto s = greedy_decode(lm, test::dummy_prompts(), decode(5, 0));
  EXPECT_EQ(s.tokens, (std::vector<int>{2, 1, 0}));
  EXPECT_TRUE(s.terminated);
  EXPECT_EQ(s.text, "y x.");
}

TEST(GreedyDecode, InvariantUnderIncreasingTransform) {
  Rng r(4);
  TableLM base{[](const std::vector<int>& p) {
                 RowVector l(6);
                 for (int i = 0; i < 6; ++i) l(i) = std::sin(1.3 * i + 0.7 * static_cast<double>(p.size()) + (p.empty() ? 0 : p.back()));
                 return l;
               },
               test::numbered_words(6)};
  TableLM warped{[&base](const std::vector<int>& p) {
                   RowVector l = base.fn(p);
                   return RowVector((3.0 * l.array().exp() + 1.0).matrix());
                 },
                 base.words};
  EXPECT_EQ(greedy_decode(base, test::dummy_prompts(), decode(8, 0)).tokens,
            greedy_decode(warped, test::dummy_prompts(), decode(8, 0)).tokens);
}

TEST(GreedyDecode, TiesGoToLowestId) {
  const auto s = greedy_decode(constant_lm(row({0, 2, 2, 1})), test::dummy_prompts(), decode(2, 0));
  EXPECT_EQ(s.tokens, (std::vector<int>{1, 1}));
}

TEST(SampleDecode, OneHotEqualsGreedy) {
  TableLM lm{[](const std::vector<int>& p) {
               RowVector l = RowVector::Constant(4, -1e9);
               l(p.size() < 2 ? 3 : 0) = 0.0;
               return l;
             },
             test::numbered_words(4)};
  Rng r(5);
  const auto g = greedy_decode(lm, test::dummy_prompts(), decode(6, 0));
  for (const auto& s : sample_decode(lm, test::dummy_prompts(), decode(6, 0), 7, r)) EXPECT_EQ(s, g);
}

TEST(SampleDecode, SeededReproducibility) {
  const auto lm = constant_lm(row({0.1, 0.5, 0.2, 0.9}));
  Rng a(6), b(6);
  EXPECT_EQ(sample_decode(lm, test::dummy_prompts(), decode(5, 0), 10, a),
            sample_decode(lm, test::dummy_prompts(), decode(5, 0), 10, b));
}

// Binomial(10000, 0.75): sd ≈ 0.0043, so [0.73, 0.77] is a ±4.6σ band.
TEST(SampleDecode, EmpiricalFrequencyMatchesProbability) {
  const auto lm = constant_lm(row({std::log(0.75), std::log(0.25)}));
  Rng r(7);
  const auto samples = sample_decode(lm, test::dummy_prompts(), decode(1, 5), 10000, r);
  int a = 0;
  for (const auto& s : samples) a += s.tokens.at(0) == 0;
  const double f = a / 10000.0;
  EXPECT_GE(f, 0.73);
  EXPECT_LE(f, 0.77);
}

TEST(SampleDecode, StopsAtEosAndCountsIt) {
  const auto lm = constant_lm(row({0.0, 0.0}));
  Rng r(8);
  for (const auto& s : sample_decode(lm, test::dummy_prompts(), decode(12, 0), 50, r)) {
    const auto it = std::find(s.tokens.begin(), s.tokens.end(), 0);
    if (it != s.tokens.end()) {
      EXPECT_EQ(it + 1, s.tokens.end());
      EXPECT_TRUE(s.terminated);
    }
    EXPECT_EQ(s.step_logprobs.size(), s.tokens.size());
  }
}

TEST(ReconstructionLoss, CertainDecoderGivesZero) {
  // every gold token gets probability 1
  RiggedGenerator g;
  g.words = {".", "a", "dog"};
  g.fn = [](const std::vector<int>& p) {
    const int gold[] = {1, 2, 0};
    RowVector l = RowVector::Constant(3, -1e9);
    l(gold[std::min<std::size_t>(p.size(), 2)]) = 0.0;
    return l;
  };
  toy::ToyWorldSpec spec;
  ToyBackend be(spec);
  EXPECT_NEAR(init_reconstruction_loss(g, {"s", "a dog ."}, be, 20), 0.0, 1e-12);
}

TEST(ReconstructionLoss, UniformDecoderGivesLogV) {
  RiggedGenerator g;
  g.words = {".", "a", "dog", "cat", "runs", "the"};
  g.fn = [](const std::vector<int>&) { return RowVector(RowVector::Zero(6)); };
  ToyBackend be(toy::ToyWorldSpec{});
  EXPECT_NEAR(init_reconstruction_loss(g, {"s", "a dog runs ."}, be, 20), std::log(6.0), 1e-12);
}

TEST(ReconstructionLoss, HandComputedTwoTokens) {
  RiggedGenerator g;
  g.words = {".", "a", "dog", "cat", "runs"};
  const RowVector l1 = row({0.2, 1.5, -0.3, 0.0, 0.7});
  const RowVector l2 = row({1.0, -1.0, 0.4, 2.0, 0.1});
  g.fn = [&](const std::vector<int>& p) { return p.empty() ? l1 : l2; };
  auto lp = [](const RowVector& l, int i) { return l(i) - std::log(l.array().exp().sum()); };
  ToyBackend be(toy::ToyWorldSpec{});
  EXPECT_NEAR(init_reconstruction_loss(g, {"s", "a cat"}, be, 20), -(lp(l1, 1) + lp(l2, 3)) / 2, 1e-12);
}

TEST(TokenVocab, EncodeDecode) {
  TokenVocab v({".", "a", "dog", "runs"});
  EXPECT_EQ(v.encode("A dog runs."), (std::vector<int>{1, 2, 3, 0}));
  EXPECT_EQ(v.decode({1, 2, 3, 0}), "a dog runs.");
  EXPECT_THROW(v.encode("a cat"), InputError);
  TokenVocab u({".", "<unk>", "a"});
  EXPECT_EQ(u.encode("a cat"), (std::vector<int>{2, 1}));
}

class GeneratorFixture : public ::testing::Test {
 protected:
  GeneratorFixture() : gen(test::tiny_generator(), TokenVocab({".", "a", "the", "dog", "cat", "runs", "sits"})) {}
  EmbeddingVector embedding(std::uint64_t seed) {
    Rng r(seed);
    std::vector<double> raw(8);
    for (auto& x : raw) x = r.normal();
    return normalize(raw);
  }
  Generator gen;
};

TEST_F(GeneratorFixture, RescoreMatchesSampledLogProbs) {
  Rng r(9);
  std::vector<EmbeddingVector> embs{embedding(1), embedding(2)};
  Matrix batch(2, 8);
  std::vector<TrainSequence> seqs;
  std::vector<std::vector<double>> recorded;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 8; ++j) batch(i, j) = embs[static_cast<std::size_t>(i)].values[static_cast<std::size_t>(j)];
    for (auto& s : sample_decode(gen, gen.map_prompts(embs[static_cast<std::size_t>(i)]), gen.decode_config(), 4, r)) {
      seqs.push_back({i, s.tokens});
      recorded.push_back(s.step_logprobs);
    }
  }
  const auto re = gen.rescore(batch, seqs);
  for (std::size_t s = 0; s < seqs.size(); ++s)
    for (std::size_t t = 0; t < seqs[s].tokens.size(); ++t) EXPECT_NEAR(re[s][t], recorded[s][t], 1e-5);
}

TEST_F(GeneratorFixture, GreedyIsDeterministic) {
  const auto p = gen.map_prompts(embedding(3));
  EXPECT_EQ(greedy_decode(gen, p, gen.decode_config()), greedy_decode(gen, p, gen.decode_config()));
}

TEST_F(GeneratorFixture, WeightedNllGradientMatchesFiniteDifferences) {
  Matrix batch(1, 8);
  const auto e = embedding(4);
  for (int j = 0; j < 8; ++j) batch(0, j) = e.values[static_cast<std::size_t>(j)];
  const std::vector<TrainSequence> seqs{{0, {1, 3, 5, 0}}};
  const std::vector<std::vector<double>> w{{1.0, 1.0, 1.0, 1.0}};
  auto params = gen.parameters();
  for (auto* p : params) p->zero_grad();
  {
    nn::Tape t;
    auto y = gen.weighted_nll(t, batch, seqs, w);
    t.backward(y);
  }
  auto loss = [&] {
    nn::Tape t;
    return t.value(gen.weighted_nll(t, batch, seqs, w))(0, 0);
  };
  const double h = 1e-6;
  int checked = 0;
  for (auto* p : params)
    for (Eigen::Index i = 0; i < p->value.size(); i += 7) {
      const double o = p->value.data()[i];
      p->value.data()[i] = o + h;
      const double up = loss();
      p->value.data()[i] = o - h;
      const double dn = loss();
      p->value.data()[i] = o;
      const double fd = (up - dn) / (2 * h);
      EXPECT_NEAR(p->grad.data()[i], fd, 1e-5 * std::max(1.0, std::abs(fd))) << p->name;
      ++checked;
    }
  EXPECT_GT(checked, 50);
}

TEST_F(GeneratorFixture, BadConfigRejected) {
  auto c = test::tiny_generator();
  c.decoder = "gpt2-xl";
  EXPECT_THROW(Generator(c, TokenVocab({".", "a"})), InputError);
  c = test::tiny_generator();
  c.eos_token = "<eos>";
  EXPECT_THROW(Generator(c, TokenVocab({".", "a"})), InputError);
}
