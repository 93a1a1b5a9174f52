#pragma once

// Naturalness discriminator: a small bidirectional transformer sentence
// encoder with a tanh pooler over the leading [CLS] position, followed by a
// two-layer head (pooled → hidden → 1, tanh on the hidden layer). It reads
// text through its own hashed word vocabulary.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "uic/error.hpp"
#include "uic/nn/layers.hpp"
#include "uic/nn/tape.hpp"
#include "uic/rng.hpp"
#include "uic/text.hpp"

namespace uic {

using nn::Matrix;

struct DiscriminatorConfig {
  std::string encoder = "toy-encoder";
  int head_hidden = 384;
  int d = 32;
  int layers = 1;
  int heads = 2;
  int buckets = 256;
  int max_len = 24;
  bool freeze_encoder = false;
  std::uint64_t init_seed = 2;

  void validate() const {
    if (encoder != "toy-encoder") throw InputError("unsupported sentence encoder '" + encoder + "' (available: toy-encoder)");
    if (head_hidden < 1 || d < 1 || layers < 0 || buckets < 1 || max_len < 2) throw InputError("bad discriminator dimensions");
    if (heads < 1 || d % heads != 0) throw InputError("discriminator.d must be divisible by discriminator.heads");
  }
};

/// Hashes lowercased word tokens into buckets 1..B; id 0 is the leading [CLS] marker.
class HashTokenizer {
 public:
  HashTokenizer(int buckets, int max_len) : buckets_(buckets), max_len_(max_len) {}

  std::vector<int> encode(std::string_view s) const {
    std::vector<int> ids{0};
    for (const auto& tok : text::word_tokens(s)) {
      if (static_cast<int>(ids.size()) >= max_len_) break;
      ids.push_back(1 + static_cast<int>(fnv1a64(tok) % static_cast<std::uint64_t>(buckets_)));
    }
    return ids;
  }

 private:
  int buckets_, max_len_;
};

/// Mean over reals of −ln σ(s) plus mean over fakes of −ln(1 − σ(s)), probabilities clamped.
inline double discriminator_loss(std::span<const double> real_scores, std::span<const double> fake_scores) {
  if (real_scores.empty() || fake_scores.empty()) throw InputError("discriminator loss needs real and fake scores");
  auto clamp = [](double p) { return std::clamp(p, nn::kProbClamp, 1.0 - nn::kProbClamp); };
  double lr = 0.0, lf = 0.0;
  for (double s : real_scores) lr -= std::log(clamp(nn::sigmoid(s)));
  for (double s : fake_scores) lf -= std::log(clamp(1.0 - nn::sigmoid(s)));
  return lr / static_cast<double>(real_scores.size()) + lf / static_cast<double>(fake_scores.size());
}

class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig cfg)
      : cfg_(std::move(cfg)), tokenizer_((cfg_.validate(), cfg_.buckets), cfg_.max_len) {
    Rng rng(derive_seed(cfg_.init_seed, "discriminator-init"));
    constexpr double sd = 0.02;
    tok_emb_ = nn::Parameter("disc.tok_emb", nn::gaussian_matrix(cfg_.buckets + 1, cfg_.d, sd, rng), true);
    pos_emb_ = nn::Parameter("disc.pos_emb", nn::gaussian_matrix(cfg_.max_len, cfg_.d, sd, rng), false);
    for (int l = 0; l < cfg_.layers; ++l)
      blocks_.emplace_back("disc.block" + std::to_string(l), cfg_.d, 4 * cfg_.d, cfg_.heads, sd, rng);
    ln_f_ = nn::LayerNorm("disc.ln_f", cfg_.d);
    const double sd_d = 1.0 / std::sqrt(static_cast<double>(cfg_.d));
    pooler_ = nn::Linear("disc.pooler", cfg_.d, cfg_.d, sd_d, rng);
    head_hidden_ = nn::Linear("disc.head.hidden", cfg_.d, cfg_.head_hidden, sd_d, rng);
    head_out_ = nn::Linear("disc.head.out", cfg_.head_hidden, 1,
                           1.0 / std::sqrt(static_cast<double>(cfg_.head_hidden)), rng);
    set_encoder_frozen(cfg_.freeze_encoder);
  }

  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  const DiscriminatorConfig& config() const { return cfg_; }
  const HashTokenizer& tokenizer() const { return tokenizer_; }

  void set_encoder_frozen(bool frozen) {
    for (auto* p : encoder_parameters()) p->trainable = !frozen;
  }

  /// Pooled sentence representations (N × d), on the tape.
  nn::Var pooled(nn::Tape& t, std::span<const std::string> texts) {
    std::vector<nn::Segment> segs;
    std::vector<std::vector<int>> ids;
    Eigen::Index n = 0;
    for (const auto& s : texts) {
      if (text::word_tokens(s).empty()) throw InputError("cannot score empty text");
      ids.push_back(tokenizer_.encode(s));
      segs.push_back({n, static_cast<Eigen::Index>(ids.back().size())});
      n += segs.back().length;
    }
    nn::Var x = embed(t, ids, n);
    for (auto& b : blocks_) x = b(t, x, segs, false);
    std::vector<Eigen::Index> cls;
    for (const auto& s : segs) cls.push_back(s.start);
    nn::Var h = nn::gather_rows(t, ln_f_(t, x), std::move(cls));
    return nn::tanh(t, pooler_(t, h));
  }

  nn::Var head(nn::Tape& t, nn::Var pooled) { return head_out_(t, nn::tanh(t, head_hidden_(t, pooled))); }

  /// Naturalness scores f_D (N × 1), on the tape.
  nn::Var scores(nn::Tape& t, std::span<const std::string> texts) { return head(t, pooled(t, texts)); }

  std::vector<double> naturalness(std::span<const std::string> texts) {
    if (texts.empty()) return {};
    nn::Tape t;
    const Matrix& v = t.value(scores(t, texts));
    return std::vector<double>(v.data(), v.data() + v.rows());
  }

  double naturalness(const std::string& text) { return naturalness(std::span<const std::string>(&text, 1)).at(0); }

  /// Adversarial loss on the tape (mean reduction over each class).
  nn::Var loss(nn::Tape& t, std::span<const std::string> real, std::span<const std::string> fake) {
    if (real.empty() || fake.empty()) throw InputError("discriminator update needs real and fake sentences");
    std::vector<std::string> all(real.begin(), real.end());
    all.insert(all.end(), fake.begin(), fake.end());
    std::vector<int> labels(all.size(), 0);
    std::vector<double> w(all.size(), 1.0 / static_cast<double>(fake.size()));
    for (std::size_t i = 0; i < real.size(); ++i) {
      labels[i] = 1;
      w[i] = 1.0 / static_cast<double>(real.size());
    }
    return nn::weighted_bce(t, scores(t, all), std::move(labels), std::move(w));
  }

  nn::Linear& head_hidden() { return head_hidden_; }
  nn::Linear& head_out() { return head_out_; }

  std::vector<nn::Parameter*> encoder_parameters() {
    std::vector<nn::Parameter*> v{&tok_emb_, &pos_emb_};
    for (auto& b : blocks_) b.collect(v);
    ln_f_.collect(v);
    pooler_.collect(v);
    return v;
  }

  std::vector<nn::Parameter*> head_parameters() {
    std::vector<nn::Parameter*> v;
    head_hidden_.collect(v);
    head_out_.collect(v);
    return v;
  }

  std::vector<nn::Parameter*> parameters() {
    auto v = encoder_parameters();
    for (auto* p : head_parameters()) v.push_back(p);
    return v;
  }

 private:
  nn::Var embed(nn::Tape& t, const std::vector<std::vector<int>>& ids, Eigen::Index n) {
    nn::Var tok = t.param(tok_emb_);
    nn::Var pos = t.param(pos_emb_);
    Matrix out(n, cfg_.d);
    Eigen::Index r = 0;
    for (const auto& s : ids)
      for (std::size_t j = 0; j < s.size(); ++j, ++r)
        out.row(r) = t.value(tok).row(s[j]) + t.value(pos).row(static_cast<Eigen::Index>(j));
    const bool req = t.requires_grad(tok) || t.requires_grad(pos);
    return t.record(std::move(out), req, [tok, pos, ids](nn::Tape& t, nn::Var o) {
      const Matrix& g = t.grad(o);
      Eigen::Index r = 0;
      for (const auto& s : ids)
        for (std::size_t j = 0; j < s.size(); ++j, ++r) {
          if (t.requires_grad(tok)) t.grad(tok).row(s[j]) += g.row(r);
          if (t.requires_grad(pos)) t.grad(pos).row(static_cast<Eigen::Index>(j)) += g.row(r);
        }
    });
  }

  DiscriminatorConfig cfg_;
  HashTokenizer tokenizer_;
  nn::Parameter tok_emb_, pos_emb_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_f_;
  nn::Linear pooler_, head_hidden_, head_out_;
};

}  // namespace uic
