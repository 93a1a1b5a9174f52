#pragma once

// Caption generator: a prompt mapper (two affine layers, tanh on the hidden
// layer) turns an image embedding into k prompt vectors, which a small
// GPT-style decoder with tied token embeddings consumes as pseudo-tokens at
// positions 0..k-1 before the caption tokens.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "uic/embeddings.hpp"
#include "uic/error.hpp"
#include "uic/nn/layers.hpp"
#include "uic/nn/tape.hpp"
#include "uic/rng.hpp"
#include "uic/text.hpp"

namespace uic {

using nn::Matrix;
using nn::RowVector;

struct GeneratorConfig {
  int d1 = 768;
  int k = 10;
  int d2 = 768;
  int mlp_hidden = 3840;
  int max_len = 20;
  std::string eos_token = ".";
  int sample_n = 5;
  double temperature = 1.0;
  std::string decoder = "toy-gpt";
  int layers = 2;
  int heads = 2;
  int ff = 0;  // 0 → 4·d2
  std::uint64_t init_seed = 1;
  double init_noise = 0.0;  // optional Gaussian noise on init-stage text embeddings; off by default

  int ff_width() const { return ff > 0 ? ff : 4 * d2; }

  void validate() const {
    if (d1 <= 0 || k <= 0 || d2 <= 0 || mlp_hidden <= 0) throw InputError("generator dimensions must be positive");
    if (max_len < 1) throw InputError("generator.max_len must be >= 1");
    if (sample_n < 1) throw InputError("generator.sample_n must be >= 1");
    if (!(temperature > 0.0)) throw InputError("generator.temperature must be > 0");
    if (heads < 1 || d2 % heads != 0) throw InputError("generator.d2 must be divisible by generator.heads");
    if (layers < 1) throw InputError("generator.layers must be >= 1");
    if (decoder != "toy-gpt") throw InputError("unsupported decoder '" + decoder + "' (available: toy-gpt)");
  }
};

struct DecodeConfig {
  int max_len = 20;
  int eos = 0;
  int beam_size = 1;
  double temperature = 1.0;

  void validate() const {
    if (max_len < 1) throw InputError("decode max length must be >= 1");
    if (beam_size != 1) throw InputError("only beam size 1 is supported");
    if (!(temperature > 0.0)) throw InputError("sampling temperature must be > 0");
  }
};

/// k × d2 prompt vectors.
struct VisualPromptSet {
  Matrix vectors;

  void validate() const {
    if (vectors.size() == 0) throw InputError("empty visual prompt set");
    if (!vectors.allFinite()) throw InputError("visual prompts contain non-finite entries");
  }
};

struct CaptionSample {
  std::vector<int> tokens;
  std::string text;
  std::vector<double> step_logprobs;
  bool terminated = false;

  double total_logprob() const {
    double s = 0.0;
    for (double x : step_logprobs) s += x;
    return s;
  }
  bool operator==(const CaptionSample&) const = default;
};

/// Word-level decoder vocabulary. Tokens starting with "##" are word-internal pieces.
class TokenVocab {
 public:
  TokenVocab() = default;
  explicit TokenVocab(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i)
      if (!index_.emplace(words_[i], static_cast<int>(i)).second) throw InputError("duplicate vocabulary token '" + words_[i] + "'");
  }

  int size() const { return static_cast<int>(words_.size()); }
  const std::string& token(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& words() const { return words_; }
  bool is_word_internal(int id) const { return token(id).rfind("##", 0) == 0; }

  int id(const std::string& tok) const {
    if (auto it = index_.find(tok); it != index_.end()) return it->second;
    if (auto it = index_.find("<unk>"); it != index_.end()) return it->second;
    throw InputError("token '" + tok + "' is not in the decoder vocabulary");
  }

  std::vector<int> encode(std::string_view s) const {
    std::vector<int> ids;
    for (const auto& t : text::word_tokens(s)) ids.push_back(id(t));
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::vector<std::string> toks;
    for (int i : ids) toks.push_back(token(i));
    return text::detokenize(toks);
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

/// A prompt-conditioned autoregressive model with an incremental session.
template <class M>
concept PromptConditionedLM = requires(const M& m, const VisualPromptSet& p, typename M::Session& s, int tok) {
  { m.begin(p) } -> std::same_as<typename M::Session>;
  { m.next_logits(s) } -> std::convertible_to<RowVector>;
  { m.push(s, tok) };
  { m.vocab_size() } -> std::convertible_to<int>;
  { m.token_text(tok) } -> std::convertible_to<std::string>;
};

inline RowVector log_softmax(const RowVector& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return (logits.array() - lse).matrix();
}

/// Lowest index among maximal entries.
inline int argmax_lowest(const RowVector& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

namespace detail {
template <class M>
std::string render(const M& m, const std::vector<int>& ids) {
  std::vector<std::string> toks;
  toks.reserve(ids.size());
  for (int i : ids) toks.push_back(m.token_text(i));
  return text::detokenize(toks);
}
}  // namespace detail

template <PromptConditionedLM M>
CaptionSample greedy_decode(const M& model, const VisualPromptSet& prompts, const DecodeConfig& cfg) {
  cfg.validate();
  prompts.validate();
  CaptionSample out;
  auto session = model.begin(prompts);
  for (int t = 0; t < cfg.max_len; ++t) {
    const RowVector lp = log_softmax(model.next_logits(session));
    const int tok = argmax_lowest(lp);
    out.tokens.push_back(tok);
    out.step_logprobs.push_back(lp(tok));
    if (tok == cfg.eos) {
      out.terminated = true;
      break;
    }
    if (t + 1 < cfg.max_len) model.push(session, tok);
  }
  out.text = detail::render(model, out.tokens);
  return out;
}

/// n ancestral samples; each step log-prob is that of the (tempered) categorical actually sampled from.
template <PromptConditionedLM M>
std::vector<CaptionSample> sample_decode(const M& model, const VisualPromptSet& prompts, const DecodeConfig& cfg,
                                         int n, Rng& rng) {
  cfg.validate();
  prompts.validate();
  if (n < 1) throw InputError("sample count must be >= 1");
  std::vector<CaptionSample> out(static_cast<std::size_t>(n));
  std::vector<double> probs;
  for (auto& s : out) {
    auto session = model.begin(prompts);
    for (int t = 0; t < cfg.max_len; ++t) {
      const RowVector lp = log_softmax(model.next_logits(session) / cfg.temperature);
      probs.assign(lp.data(), lp.data() + lp.size());
      for (auto& p : probs) p = std::exp(p);
      const int tok = static_cast<int>(rng.categorical(probs));
      s.tokens.push_back(tok);
      s.step_logprobs.push_back(lp(tok));
      if (tok == cfg.eos) {
        s.terminated = true;
        break;
      }
      if (t + 1 < cfg.max_len) model.push(session, tok);
    }
    s.text = detail::render(model, s.tokens);
  }
  return out;
}

/// Teacher-forced per-step log-probabilities of `tokens`.
template <PromptConditionedLM M>
std::vector<double> score_tokens(const M& model, const VisualPromptSet& prompts, const std::vector<int>& tokens) {
  std::vector<double> lps;
  auto session = model.begin(prompts);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const RowVector lp = log_softmax(model.next_logits(session));
    lps.push_back(lp(tokens[t]));
    if (t + 1 < tokens.size()) model.push(session, tokens[t]);
  }
  return lps;
}

// ---------------------------------------------------------------------------

struct PromptMapper {
  nn::Linear hidden;
  nn::Linear output;
  int k = 0, d2 = 0;

  PromptMapper() = default;
  PromptMapper(const GeneratorConfig& cfg, Rng& rng)
      : hidden("mapper.hidden", cfg.d1, cfg.mlp_hidden, 1.0 / std::sqrt(static_cast<double>(cfg.d1)), rng),
        output("mapper.output", cfg.mlp_hidden, static_cast<Eigen::Index>(cfg.k) * cfg.d2,
               1.0 / std::sqrt(static_cast<double>(cfg.mlp_hidden)), rng),
        k(cfg.k),
        d2(cfg.d2) {}

  Eigen::Index input_dim() const { return hidden.weight.value.rows(); }

  VisualPromptSet forward(std::span<const float> embedding) const {
    if (static_cast<Eigen::Index>(embedding.size()) != input_dim())
      throw InputError("image embedding has dimension " + std::to_string(embedding.size()) + ", mapper expects " +
                       std::to_string(input_dim()));
    Matrix x(1, input_dim());
    for (Eigen::Index i = 0; i < x.cols(); ++i) x(0, i) = embedding[static_cast<std::size_t>(i)];
    Matrix h = hidden.forward(x).array().tanh().matrix();
    Matrix flat = output.forward(h);
    return VisualPromptSet{Eigen::Map<const Matrix>(flat.data(), k, d2)};
  }

  /// Batch rows (B × d1) → B × (k·d2).
  nn::Var operator()(nn::Tape& t, nn::Var x) { return output(t, nn::tanh(t, hidden(t, x))); }

  void collect(std::vector<nn::Parameter*>& v) {
    hidden.collect(v);
    output.collect(v);
  }
};

struct TrainSequence {
  int image = 0;            // row of the embedding batch providing the prompts
  std::vector<int> tokens;  // targets c_1..c_T
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(const GeneratorConfig& cfg, int vocab_size, Rng& rng)
      : d_(cfg.d2), k_(cfg.k), max_positions_(cfg.k + cfg.max_len) {
    constexpr double sd = 0.02;
    tok_emb_ = nn::Parameter("decoder.tok_emb", nn::gaussian_matrix(vocab_size, d_, sd, rng), true);
    pos_emb_ = nn::Parameter("decoder.pos_emb", nn::gaussian_matrix(max_positions_, d_, sd, rng), false);
    for (int l = 0; l < cfg.layers; ++l)
      blocks_.emplace_back("decoder.block" + std::to_string(l), d_, cfg.ff_width(), cfg.heads, sd, rng);
    ln_f_ = nn::LayerNorm("decoder.ln_f", d_);
  }

  int vocab_size() const { return static_cast<int>(tok_emb_.value.rows()); }
  int width() const { return d_; }
  const Matrix& token_embeddings() const { return tok_emb_.value; }

  struct Session {
    std::vector<Matrix> keys, values;  // per layer, rows = positions so far
    Eigen::Index length = 0;
    RowVector last_hidden;
  };

  Session begin(const VisualPromptSet& prompts) const {
    if (prompts.vectors.cols() != d_ || prompts.vectors.rows() != k_)
      throw InputError("visual prompts must be " + std::to_string(k_) + " x " + std::to_string(d_));
    Session s;
    s.keys.assign(blocks_.size(), Matrix(max_positions_, d_));
    s.values.assign(blocks_.size(), Matrix(max_positions_, d_));
    Matrix x = prompts.vectors + pos_emb_.value.topRows(k_);
    run_rows(s, x);
    return s;
  }

  void push(Session& s, int token) const {
    if (s.length >= max_positions_) throw StateError("decoder session exceeded its position budget");
    Matrix x = tok_emb_.value.row(token) + pos_emb_.value.row(s.length);
    run_rows(s, x);
  }

  RowVector next_logits(const Session& s) const { return ln_f_.forward(s.last_hidden) * tok_emb_.value.transpose(); }

  /// Packed teacher-forced forward; returns logits (Σ T_j × V) in sequence order.
  nn::Var logits(nn::Tape& t, nn::Var prompts_flat, const std::vector<TrainSequence>& seqs) {
    nn::Var tok = t.param(tok_emb_);
    nn::Var pos = t.param(pos_emb_);
    std::vector<nn::Segment> segs;
    std::vector<Eigen::Index> target_rows;
    Eigen::Index n = 0;
    for (const auto& s : seqs) {
      if (s.tokens.empty()) throw InputError("training sequence is empty");
      const auto len = static_cast<Eigen::Index>(k_ + s.tokens.size() - 1);
      if (len > max_positions_) throw InputError("training sequence longer than the decoder position budget");
      segs.push_back({n, len});
      for (std::size_t j = 0; j < s.tokens.size(); ++j) target_rows.push_back(n + k_ - 1 + static_cast<Eigen::Index>(j));
      n += len;
    }
    nn::Var x = pack(t, prompts_flat, tok, pos, seqs, n);
    for (auto& b : blocks_) x = b(t, x, segs, true);
    nn::Var h = nn::gather_rows(t, ln_f_(t, x), std::move(target_rows));
    return nn::matmul_bt(t, h, tok);
  }

  void collect(std::vector<nn::Parameter*>& v) {
    v.push_back(&tok_emb_);
    v.push_back(&pos_emb_);
    for (auto& b : blocks_) b.collect(v);
    ln_f_.collect(v);
  }

 private:
  void run_rows(Session& s, const Matrix& x_in) const {
    Matrix x = x_in;
    const Eigen::Index r = x.rows(), start = s.length;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const auto& b = blocks_[l];
      Matrix qkv = b.qkv.forward(b.ln1.forward(x));
      s.keys[l].middleRows(start, r) = qkv.middleCols(d_, d_);
      s.values[l].middleRows(start, r) = qkv.rightCols(d_);
      const Eigen::Index hd = d_ / b.heads;
      const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
      Matrix att(r, d_);
      for (Eigen::Index i = 0; i < r; ++i) {
        const Eigen::Index visible = start + i + 1;
        for (int h = 0; h < b.heads; ++h) {
          RowVector q = qkv.block(i, h * hd, 1, hd);
          RowVector sc = (q * s.keys[l].block(0, h * hd, visible, hd).transpose()) * scale;
          const double mx = sc.maxCoeff();
          sc = (sc.array() - mx).exp().matrix();
          sc /= sc.sum();
          att.block(i, h * hd, 1, hd) = sc * s.values[l].block(0, h * hd, visible, hd);
        }
      }
      x += b.out.forward(att);
      x += b.proj.forward(nn::gelu(b.fc.forward(b.ln2.forward(x))));
    }
    s.length += r;
    s.last_hidden = x.row(r - 1);
  }

  nn::Var pack(nn::Tape& t, nn::Var prompts_flat, nn::Var tok, nn::Var pos, const std::vector<TrainSequence>& seqs,
               Eigen::Index n) const {
    const Matrix& pv = t.value(prompts_flat);
    const Matrix& tv = t.value(tok);
    const Matrix& posv = t.value(pos);
    Matrix out(n, d_);
    Eigen::Index r = 0;
    for (const auto& s : seqs) {
      for (int i = 0; i < k_; ++i, ++r)
        out.row(r) = pv.block(s.image, static_cast<Eigen::Index>(i) * d_, 1, d_) + posv.row(i);
      for (std::size_t j = 0; j + 1 < s.tokens.size(); ++j, ++r)
        out.row(r) = tv.row(s.tokens[j]) + posv.row(k_ + static_cast<Eigen::Index>(j));
    }
    const bool req = t.requires_grad(prompts_flat) || t.requires_grad(tok) || t.requires_grad(pos);
    const int k = k_, d = d_;
    return t.record(std::move(out), req, [prompts_flat, tok, pos, seqs, k, d](nn::Tape& t, nn::Var o) {
      const Matrix& g = t.grad(o);
      const bool gp = t.requires_grad(prompts_flat), gt = t.requires_grad(tok), gq = t.requires_grad(pos);
      Eigen::Index r = 0;
      for (const auto& s : seqs) {
        for (int i = 0; i < k; ++i, ++r) {
          if (gp) t.grad(prompts_flat).block(s.image, static_cast<Eigen::Index>(i) * d, 1, d) += g.row(r);
          if (gq) t.grad(pos).row(i) += g.row(r);
        }
        for (std::size_t j = 0; j + 1 < s.tokens.size(); ++j, ++r) {
          if (gt) t.grad(tok).row(s.tokens[j]) += g.row(r);
          if (gq) t.grad(pos).row(k + static_cast<Eigen::Index>(j)) += g.row(r);
        }
      }
    });
  }

  int d_ = 0, k_ = 0;
  Eigen::Index max_positions_ = 0;
  nn::Parameter tok_emb_, pos_emb_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_f_;
};

/// Prompt mapper + decoder + vocabulary. Satisfies PromptConditionedLM.
class Generator {
 public:
  using Session = Decoder::Session;

  Generator(GeneratorConfig cfg, TokenVocab vocab) : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
    cfg_.validate();
    if (vocab_.size() < 2) throw InputError("decoder vocabulary needs at least 2 tokens");
    eos_ = vocab_.id(cfg_.eos_token);
    Rng rng(derive_seed(cfg_.init_seed, "generator-init"));
    mapper_ = PromptMapper(cfg_, rng);
    decoder_ = Decoder(cfg_, vocab_.size(), rng);
  }

  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  const GeneratorConfig& config() const { return cfg_; }
  const TokenVocab& vocab() const { return vocab_; }
  int eos() const { return eos_; }

  DecodeConfig decode_config() const { return DecodeConfig{cfg_.max_len, eos_, 1, cfg_.temperature}; }

  VisualPromptSet map_prompts(const EmbeddingVector& e) const { return mapper_.forward(e.values); }

  Session begin(const VisualPromptSet& p) const { return decoder_.begin(p); }
  void push(Session& s, int tok) const { decoder_.push(s, tok); }
  RowVector next_logits(const Session& s) const { return decoder_.next_logits(s); }
  int vocab_size() const { return vocab_.size(); }
  std::string token_text(int id) const { return vocab_.token(id); }

  std::vector<int> encode(std::string_view s) const { return vocab_.encode(s); }

  PromptMapper& mapper() { return mapper_; }
  Decoder& decoder() { return decoder_; }
  const Decoder& decoder() const { return decoder_; }

  /// Σ over sequences and steps of weight × (−log p(token)), on the tape. `embeddings` is B × d1.
  nn::Var weighted_nll(nn::Tape& t, const Matrix& embeddings, const std::vector<TrainSequence>& seqs,
                       const std::vector<std::vector<double>>& token_weights) {
    nn::Var prompts = mapper_(t, t.constant(embeddings));
    nn::Var logits = decoder_.logits(t, prompts, seqs);
    std::vector<int> targets;
    std::vector<double> weights;
    for (std::size_t j = 0; j < seqs.size(); ++j) {
      if (token_weights[j].size() != seqs[j].tokens.size()) throw StateError("token weight count mismatch");
      targets.insert(targets.end(), seqs[j].tokens.begin(), seqs[j].tokens.end());
      weights.insert(weights.end(), token_weights[j].begin(), token_weights[j].end());
    }
    return nn::weighted_nll(t, logits, std::move(targets), std::move(weights));
  }

  /// Teacher-forced log-probs via the training path (used to re-score samples).
  std::vector<std::vector<double>> rescore(const Matrix& embeddings, const std::vector<TrainSequence>& seqs) {
    nn::Tape t;
    nn::Var prompts = mapper_(t, t.constant(embeddings));
    const Matrix lsm = nn::log_softmax_rows(t.value(decoder_.logits(t, prompts, seqs)));
    std::vector<std::vector<double>> out;
    Eigen::Index r = 0;
    for (const auto& s : seqs) {
      auto& v = out.emplace_back();
      for (int tok : s.tokens) v.push_back(lsm(r++, tok));
    }
    return out;
  }

  std::vector<nn::Parameter*> parameters() {
    std::vector<nn::Parameter*> v;
    mapper_.collect(v);
    decoder_.collect(v);
    return v;
  }

 private:
  GeneratorConfig cfg_;
  TokenVocab vocab_;
  int eos_ = 0;
  PromptMapper mapper_;
  Decoder decoder_;
};

/// Caption tokens for training: tokenized and truncated to max_len.
inline std::vector<int> caption_targets(const TokenVocab& vocab, std::string_view text, int max_len) {
  auto ids = vocab.encode(text);
  if (ids.empty()) throw InputError("cannot train on an empty sentence");
  if (static_cast<int>(ids.size()) > max_len) ids.resize(static_cast<std::size_t>(max_len));
  return ids;
}

/// Mean token NLL of a sentence conditioned on prompts from its own text embedding.
template <class G>
  requires PromptConditionedLM<G> && requires(const G& g, const EmbeddingVector& e, std::string_view s) {
    { g.map_prompts(e) } -> std::same_as<VisualPromptSet>;
    { g.encode(s) } -> std::same_as<std::vector<int>>;
  }
double init_reconstruction_loss(const G& gen, const SentenceRecord& sentence, const EmbeddingBackend& backend,
                                int max_len) {
  auto ids = gen.encode(sentence.text);
  if (ids.empty()) throw InputError("cannot score an empty sentence");
  if (static_cast<int>(ids.size()) > max_len) ids.resize(static_cast<std::size_t>(max_len));
  const auto prompts = gen.map_prompts(backend.encode_text(sentence));
  const auto lps = score_tokens(gen, prompts, ids);
  double s = 0.0;
  for (double x : lps) s -= x;
  return s / static_cast<double>(lps.size());
}

}  // namespace uic
