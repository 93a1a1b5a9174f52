#pragma once

// Two-stage training: corpus reconstruction, then alternating discriminator
// and SCST generator updates. One Trainer owns all parameters and optimizer
// state; parameter addresses are registered with the optimizers, so a
// Trainer never moves.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uic/binary_io.hpp"
#include "uic/config.hpp"
#include "uic/discriminator.hpp"
#include "uic/embeddings.hpp"
#include "uic/error.hpp"
#include "uic/generator.hpp"
#include "uic/nn/optim.hpp"
#include "uic/rewards.hpp"
#include "uic/rng.hpp"

namespace uic {

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointFormat = "uic-checkpoint";

/// Everything a training run reads. Images and aggregates are aligned by index.
struct TrainingData {
  std::vector<SentenceRecord> corpus;
  std::vector<EmbeddingVector> corpus_embeddings;
  std::vector<std::string> image_ids;
  std::vector<EmbeddingVector> image_embeddings;
  std::vector<AggregateEmbedding> aggregates;
  std::vector<std::string> pseudo_captions;  // supervised pseudo-label mode only
  const EmbeddingBackend* backend = nullptr;

  void validate(const RewardConfig& rc) const {
    if (corpus.empty()) throw InputError("training corpus is empty");
    if (corpus_embeddings.size() != corpus.size()) throw StateError("corpus embeddings are not aligned with the corpus");
    if (image_ids.size() != image_embeddings.size()) throw StateError("image ids are not aligned with embeddings");
    if (rc.use_semantic && rc.strategy != RewardStrategy::cos && aggregates.size() != image_embeddings.size())
      throw StateError("aggregate embeddings are not aligned with the training images");
  }
};

struct RunningStats {
  long count = 0;
  double reward_sum = 0.0;
  double advantage_sum = 0.0;
  bool operator==(const RunningStats&) const = default;
};

struct TrainState {
  std::string stage = "fresh";  // fresh | init | adversarial | pseudo
  long step = 0;                // adversarial (or pseudo) steps taken
  long init_step = 0;
  long skipped_generator_updates = 0;
  std::string data_rng, sample_rng, noise_rng;
  RunningStats stats;
  bool operator==(const TrainState&) const = default;
};

struct NamedTensor {
  std::string name;
  Matrix value;
  bool operator==(const NamedTensor& o) const {
    return name == o.name && value.rows() == o.value.rows() && value.cols() == o.value.cols() && value == o.value;
  }
};

struct OptimizerState {
  long steps = 0;
  std::vector<NamedTensor> m, v;
  bool operator==(const OptimizerState&) const = default;
};

struct CheckpointBundle {
  int version = kCheckpointVersion;
  std::string tag;
  io::json config;  // resolved RunConfig, flat {key: value}
  std::vector<std::string> vocab;
  TrainState state;
  std::vector<NamedTensor> generator;
  std::vector<NamedTensor> discriminator;
  OptimizerState init_opt, g_opt, d_opt;
  bool operator==(const CheckpointBundle&) const = default;
};

struct InitLog {
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct StepLog {
  long step = 0;
  std::optional<double> d_loss;
  double mean_advantage = 0.0;
  double lambda = 0.0;
  double mean_reward = 0.0;
  double mean_naturalness = 0.0;
  double mean_semantic = 0.0;
  double grad_norm = 0.0;
  bool generator_updated = false;
};

inline io::json to_json(const InitLog& l) {
  return {{"stage", "init"}, {"step", l.step}, {"loss", l.loss}, {"lr", l.lr}};
}

inline io::json to_json(const StepLog& l) {
  io::json j = {{"step", l.step},
                {"d_loss", l.d_loss ? io::json(*l.d_loss) : io::json(nullptr)},
                {"mean_advantage", l.mean_advantage},
                {"lambda", l.lambda},
                {"mean_reward", l.mean_reward},
                {"mean_naturalness", l.mean_naturalness},
                {"mean_semantic", l.mean_semantic},
                {"grad_norm", l.grad_norm},
                {"generator_updated", l.generator_updated}};
  return j;
}

/// Generated captions for one batch of images.
struct Rollout {
  std::vector<std::size_t> images;  // indices into TrainingData
  Matrix embeddings;                // B × d1
  std::vector<CaptionSample> greedy;
  std::vector<std::vector<CaptionSample>> samples;  // B × n

  std::vector<std::string> sample_texts() const {
    std::vector<std::string> out;
    for (const auto& row : samples)
      for (const auto& s : row) out.push_back(s.text);
    return out;
  }
};

struct RolloutRewards {
  std::vector<RewardBreakdown> greedy;
  std::vector<std::vector<RewardBreakdown>> samples;
};

inline Matrix embedding_rows(const std::vector<EmbeddingVector>& src, const std::vector<std::size_t>& idx) {
  if (src.empty()) throw InputError("no embeddings to batch");
  Matrix m(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(src[0].dim()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& v = src.at(idx[i]).values;
    if (static_cast<Eigen::Index>(v.size()) != m.cols()) throw InputError("embedding dimension mismatch in batch");
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(static_cast<Eigen::Index>(i), j) = v[static_cast<std::size_t>(j)];
  }
  return m;
}

struct ScstResult {
  double mean_advantage = 0.0;
  double grad_norm = 0.0;
  bool updated = false;
};

/// −mean_s (R(s) − R(greedy)) · Σ_t log p(c_t) on the tape; nullopt when every advantage is zero.
inline std::optional<nn::Var> scst_loss(nn::Tape& t, Generator& gen, const Rollout& r, const RolloutRewards& rw,
                                        ScstResult& res) {
  std::vector<TrainSequence> seqs;
  std::vector<std::vector<double>> weights;
  double adv_sum = 0.0;
  std::size_t count = 0;
  for (const auto& row : r.samples) count += row.size();
  if (count == 0) throw InputError("SCST update needs at least one sample");
  for (std::size_t i = 0; i < r.samples.size(); ++i)
    for (std::size_t j = 0; j < r.samples[i].size(); ++j) {
      const double a = rw.samples[i][j].total - rw.greedy[i].total;
      if (!std::isfinite(a)) throw DivergenceError("non-finite reward in SCST batch");
      adv_sum += a;
      if (a == 0.0) continue;
      const auto& s = r.samples[i][j];
      seqs.push_back({static_cast<int>(i), s.tokens});
      weights.emplace_back(s.tokens.size(), a / static_cast<double>(count));
    }
  res = ScstResult{adv_sum / static_cast<double>(count), 0.0, false};
  if (seqs.empty()) return std::nullopt;
  return gen.weighted_nll(t, r.embeddings, seqs, weights);
}

class Trainer {
 public:
  Trainer(RunConfig cfg, TokenVocab vocab)
      : cfg_((cfg.validate(), std::move(cfg))),
        gen_(cfg_.resolved_generator(), std::move(vocab)),
        disc_(cfg_.resolved_discriminator()),
        data_rng_(derive_seed(cfg_.seed, "data")),
        sample_rng_(derive_seed(cfg_.seed, "sampling")),
        noise_rng_(derive_seed(cfg_.seed, "init-noise")) {
    const auto& tc = cfg_.train;
    init_opt_ = nn::AdamW(gen_.parameters(),
                          {cfg_.init.lr, tc.beta1, tc.beta2, tc.eps, tc.weight_decay, cfg_.init.warmup});
    g_opt_ = nn::AdamW(gen_.parameters(), {tc.g_lr, tc.beta1, tc.beta2, tc.eps, tc.weight_decay, tc.g_warmup});
    d_opt_ = nn::AdamW(disc_.parameters(), {tc.d_lr, tc.beta1, tc.beta2, tc.eps, tc.weight_decay, tc.d_warmup});
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const RunConfig& config() const { return cfg_; }
  Generator& generator() { return gen_; }
  const Generator& generator() const { return gen_; }
  Discriminator& discriminator() { return disc_; }
  const TrainState& state() const { return state_; }
  long step() const { return state_.step; }

  // ---- initialization -----------------------------------------------------

  /// One reconstruction step on a random corpus batch; returns the batch mean NLL per token.
  InitLog init_step(const TrainingData& data) {
    if (data.corpus.empty()) throw InputError("initialization needs a nonempty corpus");
    const int B = cfg_.init.batch;
    std::vector<std::size_t> idx(static_cast<std::size_t>(B));
    for (auto& i : idx) i = static_cast<std::size_t>(data_rng_.below(data.corpus.size()));
    Matrix emb = embedding_rows(data.corpus_embeddings, idx);
    if (gen_.config().init_noise > 0.0)
      for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] += gen_.config().init_noise * noise_rng_.normal();
    std::vector<std::string> texts;
    for (auto i : idx) texts.push_back(data.corpus[i].text);
    const double lr = nn::warmup_lr(cfg_.init.lr, init_opt_.steps(), cfg_.init.warmup);
    const double loss = supervised_update(emb, texts, init_opt_, "initialization", state_.init_step);
    ++state_.init_step;
    state_.stage = "init";
    return {state_.init_step - 1, loss, lr};
  }

  /// Mean over sentences of the per-token reconstruction NLL (decoding path).
  double mean_reconstruction_loss(const TrainingData& data, std::size_t limit = 0) const {
    const std::size_t n = limit ? std::min(limit, data.corpus.size()) : data.corpus.size();
    if (n == 0) throw InputError("empty corpus");
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto ids = caption_targets(gen_.vocab(), data.corpus[i].text, gen_.config().max_len);
      const auto lps = score_tokens(gen_, gen_.map_prompts(data.corpus_embeddings[i]), ids);
      double l = 0.0;
      for (double x : lps) l -= x;
      s += l / static_cast<double>(lps.size());
    }
    return s / static_cast<double>(n);
  }

  // ---- supervised pseudo-label mode ----------------------------------------

  InitLog pseudo_step(const TrainingData& data) {
    if (data.pseudo_captions.size() != data.image_embeddings.size() || data.pseudo_captions.empty())
      throw InputError("pseudo-label mode needs one pseudo caption per training image");
    const int B = cfg_.train.batch;
    std::vector<std::size_t> idx(static_cast<std::size_t>(B));
    for (auto& i : idx) i = static_cast<std::size_t>(data_rng_.below(data.image_embeddings.size()));
    std::vector<std::string> texts;
    for (auto i : idx) texts.push_back(data.pseudo_captions[i]);
    const double lr = nn::warmup_lr(cfg_.train.g_lr, g_opt_.steps(), cfg_.train.g_warmup);
    const double loss = supervised_update(embedding_rows(data.image_embeddings, idx), texts, g_opt_, "pseudo-label", state_.step);
    ++state_.step;
    state_.stage = "pseudo";
    return {state_.step - 1, loss, lr};
  }

  // ---- adversarial stage ----------------------------------------------------

  Rollout rollout(const TrainingData& data) {
    if (data.image_embeddings.empty()) throw InputError("adversarial training needs a nonempty image set");
    Rollout r;
    r.images.resize(static_cast<std::size_t>(cfg_.train.batch));
    for (auto& i : r.images) i = static_cast<std::size_t>(data_rng_.below(data.image_embeddings.size()));
    return rollout(data, r.images);
  }

  Rollout rollout(const TrainingData& data, const std::vector<std::size_t>& images) {
    Rollout r;
    r.images = images;
    r.embeddings = embedding_rows(data.image_embeddings, images);
    const auto dc = gen_.decode_config();
    for (auto i : images) {
      const auto prompts = gen_.map_prompts(data.image_embeddings[i]);
      r.greedy.push_back(greedy_decode(gen_, prompts, dc));
      r.samples.push_back(sample_decode(gen_, prompts, dc, gen_.config().sample_n, sample_rng_));
    }
    return r;
  }

  /// Discriminator updates on real corpus sentences vs the rollout's sampled captions; returns the last loss.
  std::optional<double> discriminator_update(const TrainingData& data, const Rollout& r) {
    if (!cfg_.reward.use_naturalness || cfg_.train.d_steps_per_g == 0) return std::nullopt;
    const auto fakes = r.sample_texts();
    const std::size_t n_real = r.images.size();
    double last = 0.0;
    for (int k = 0; k < cfg_.train.d_steps_per_g; ++k) {
      std::vector<std::string> real;
      for (std::size_t i = 0; i < n_real; ++i)
        real.push_back(data.corpus[static_cast<std::size_t>(data_rng_.below(data.corpus.size()))].text);
      nn::Tape t;
      d_opt_.zero_grad();
      nn::Var loss = disc_.loss(t, real, fakes);
      last = t.value(loss)(0, 0);
      if (!std::isfinite(last)) throw DivergenceError("discriminator loss is not finite at step " + std::to_string(state_.step));
      t.backward(loss);
      nn::clip_grad_norm(d_opt_.params(), cfg_.train.clip_norm);
      d_opt_.step();
    }
    return last;
  }

  RolloutRewards score(const TrainingData& data, const Rollout& r) {
    std::vector<std::string> texts;
    for (const auto& g : r.greedy) texts.push_back(g.text);
    const auto samples = r.sample_texts();
    texts.insert(texts.end(), samples.begin(), samples.end());

    std::vector<double> fd(texts.size(), 0.0);
    if (cfg_.reward.use_naturalness) fd = disc_.naturalness(texts);
    std::vector<EmbeddingVector> emb;
    if (cfg_.reward.use_semantic) {
      if (!data.backend) throw StateError("semantic rewards need a text encoder");
      emb = data.backend->encode_texts(texts);
    }
    auto one = [&](std::size_t text_idx, std::size_t img) {
      double sem = 0.0;
      if (cfg_.reward.use_semantic) {
        const AggregateEmbedding* agg = data.aggregates.empty() ? nullptr : &data.aggregates[img];
        sem = semantic_reward(data.image_embeddings[img], emb[text_idx], agg, cfg_.reward);
      }
      return combined_reward(fd[text_idx], sem, state_.step, cfg_.reward);
    };
    RolloutRewards out;
    const std::size_t B = r.images.size();
    for (std::size_t i = 0; i < B; ++i) out.greedy.push_back(one(i, r.images[i]));
    std::size_t t = B;
    for (std::size_t i = 0; i < B; ++i) {
      auto& row = out.samples.emplace_back();
      for (std::size_t j = 0; j < r.samples[i].size(); ++j) row.push_back(one(t++, r.images[i]));
    }
    return out;
  }

  using ScstResult = uic::ScstResult;

  /// SCST step; a batch whose advantages are all zero leaves every parameter and optimizer moment untouched.
  ScstResult scst_update(const Rollout& r, const RolloutRewards& rw) {
    nn::Tape t;
    ScstResult res;
    const auto loss = scst_loss(t, gen_, r, rw, res);
    if (!loss) return res;
    if (!std::isfinite(t.value(*loss)(0, 0))) throw DivergenceError("SCST loss is not finite at step " + std::to_string(state_.step));
    g_opt_.zero_grad();
    t.backward(*loss);
    res.grad_norm = nn::clip_grad_norm(g_opt_.params(), cfg_.train.clip_norm);
    g_opt_.step();
    res.updated = true;
    return res;
  }

  StepLog adversarial_step(const TrainingData& data) {
    if (data.corpus.empty() || data.image_embeddings.empty())
      throw InputError("adversarial step needs nonempty sentence and image batches");
    const Rollout r = rollout(data);
    StepLog log;
    log.step = state_.step;
    log.d_loss = discriminator_update(data, r);
    const auto rw = score(data, r);
    const auto res = scst_update(r, rw);
    log.mean_advantage = res.mean_advantage;
    log.grad_norm = res.grad_norm;
    log.generator_updated = res.updated;
    log.lambda = ramp_weight(state_.step, cfg_.reward);
    std::size_t n = 0;
    for (const auto& row : rw.samples)
      for (const auto& b : row) {
        log.mean_reward += b.total;
        log.mean_naturalness += b.naturalness;
        log.mean_semantic += b.semantic;
        ++n;
      }
    log.mean_reward /= static_cast<double>(n);
    log.mean_naturalness /= static_cast<double>(n);
    log.mean_semantic /= static_cast<double>(n);
    if (!res.updated) ++state_.skipped_generator_updates;
    state_.stats.count += 1;
    state_.stats.reward_sum += log.mean_reward;
    state_.stats.advantage_sum += log.mean_advantage;
    ++state_.step;
    state_.stage = "adversarial";
    return log;
  }

  // ---- checkpoints ------------------------------------------------------------

  CheckpointBundle snapshot(std::string tag) {
    CheckpointBundle b;
    b.tag = std::move(tag);
    b.config = config_to_json(cfg_);
    b.vocab = gen_.vocab().words();
    b.state = state_;
    b.state.data_rng = data_rng_.serialize();
    b.state.sample_rng = sample_rng_.serialize();
    b.state.noise_rng = noise_rng_.serialize();
    for (auto* p : gen_.parameters()) b.generator.push_back({p->name, p->value});
    for (auto* p : disc_.parameters()) b.discriminator.push_back({p->name, p->value});
    b.init_opt = save_opt(init_opt_);
    b.g_opt = save_opt(g_opt_);
    b.d_opt = save_opt(d_opt_);
    return b;
  }

  /// Rebuilds a trainer from a bundle. `cfg` replaces the stored config (e.g. new step counts);
  /// architecture keys must still match the stored tensors.
  static std::unique_ptr<Trainer> from_bundle(const CheckpointBundle& b, std::optional<RunConfig> cfg = std::nullopt) {
    RunConfig rc = cfg ? *cfg : config_from_json(b.config);
    auto tr = std::make_unique<Trainer>(rc, TokenVocab(b.vocab));
    tr->restore(b);
    return tr;
  }

  void restore(const CheckpointBundle& b) {
    if (b.version != kCheckpointVersion) throw FormatError("checkpoint version " + std::to_string(b.version) + " is not supported");
    restore_params(gen_.parameters(), b.generator, "generator");
    restore_params(disc_.parameters(), b.discriminator, "discriminator");
    restore_opt(init_opt_, b.init_opt);
    restore_opt(g_opt_, b.g_opt);
    restore_opt(d_opt_, b.d_opt);
    state_ = b.state;
    data_rng_.deserialize(b.state.data_rng);
    sample_rng_.deserialize(b.state.sample_rng);
    noise_rng_.deserialize(b.state.noise_rng);
    state_.data_rng.clear();
    state_.sample_rng.clear();
    state_.noise_rng.clear();
  }

 private:
  double supervised_update(const Matrix& emb, const std::vector<std::string>& texts, nn::AdamW& opt,
                           const char* what, long step) {
    std::vector<TrainSequence> seqs;
    std::vector<std::vector<double>> weights;
    const double B = static_cast<double>(texts.size());
    double total_tokens = 0.0;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      auto ids = caption_targets(gen_.vocab(), texts[i], gen_.config().max_len);
      weights.emplace_back(ids.size(), 1.0 / (static_cast<double>(ids.size()) * B));
      total_tokens += static_cast<double>(ids.size());
      seqs.push_back({static_cast<int>(i), std::move(ids)});
    }
    nn::Tape t;
    opt.zero_grad();
    nn::Var loss = gen_.weighted_nll(t, emb, seqs, weights);
    const double v = t.value(loss)(0, 0);
    if (!std::isfinite(v)) throw DivergenceError(std::string(what) + " loss is NaN at step " + std::to_string(step));
    t.backward(loss);
    nn::clip_grad_norm(opt.params(), cfg_.train.clip_norm);
    opt.step();
    return v;
  }

  static OptimizerState save_opt(nn::AdamW& o) {
    OptimizerState s;
    s.steps = o.steps();
    for (std::size_t i = 0; i < o.params().size(); ++i) {
      s.m.push_back({o.params()[i]->name, o.first_moments()[i]});
      s.v.push_back({o.params()[i]->name, o.second_moments()[i]});
    }
    return s;
  }

  static void copy_tensor(Matrix& dst, const NamedTensor& src) {
    if (dst.rows() != src.value.rows() || dst.cols() != src.value.cols())
      throw FormatError("checkpoint tensor '" + src.name + "' has shape " + std::to_string(src.value.rows()) + "x" +
                        std::to_string(src.value.cols()) + ", model expects " + std::to_string(dst.rows()) + "x" +
                        std::to_string(dst.cols()));
    dst = src.value;
  }

  static void restore_params(const std::vector<nn::Parameter*>& params, const std::vector<NamedTensor>& src,
                             const char* what) {
    if (params.size() != src.size()) throw FormatError(std::string("checkpoint ") + what + " tensor count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->name != src[i].name) throw FormatError("checkpoint tensor '" + src[i].name + "' does not match '" + params[i]->name + "'");
      copy_tensor(params[i]->value, src[i]);
    }
  }

  static void restore_opt(nn::AdamW& o, const OptimizerState& s) {
    if (s.m.size() != o.params().size() || s.v.size() != o.params().size())
      throw FormatError("checkpoint optimizer state does not match the model");
    for (std::size_t i = 0; i < s.m.size(); ++i) {
      copy_tensor(o.first_moments()[i], s.m[i]);
      copy_tensor(o.second_moments()[i], s.v[i]);
    }
    o.set_steps(s.steps);
  }

  RunConfig cfg_;
  Generator gen_;
  Discriminator disc_;
  nn::AdamW init_opt_, g_opt_, d_opt_;
  Rng data_rng_, sample_rng_, noise_rng_;
  TrainState state_;
};

// ---- checkpoint files -----------------------------------------------------------

namespace ckpt_detail {

inline void put_tensors(io::json& list, io::ByteWriter& w, const std::vector<NamedTensor>& ts) {
  for (const auto& t : ts) {
    list.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
    for (Eigen::Index i = 0; i < t.value.size(); ++i) w.f64(t.value.data()[i]);
  }
}

inline std::vector<NamedTensor> get_tensors(const io::json& list, io::ByteReader& r) {
  std::vector<NamedTensor> out;
  for (const auto& e : list) {
    NamedTensor t;
    t.name = e.at("name").get<std::string>();
    const auto rows = e.at("rows").get<Eigen::Index>(), cols = e.at("cols").get<Eigen::Index>();
    if (rows < 0 || cols < 0) throw FormatError("negative tensor shape in checkpoint");
    t.value.resize(rows, cols);
    for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = r.f64();
    out.push_back(std::move(t));
  }
  return out;
}

inline io::json stats_json(const RunningStats& s) {
  return {{"count", s.count},
          {"reward_sum_bits", std::bit_cast<std::uint64_t>(s.reward_sum)},
          {"advantage_sum_bits", std::bit_cast<std::uint64_t>(s.advantage_sum)}};
}

}  // namespace ckpt_detail

inline std::string encode_checkpoint(const CheckpointBundle& b) {
  io::ByteWriter w;
  io::json sections = io::json::object();
  auto section = [&](const char* key, const std::vector<NamedTensor>& ts) {
    io::json list = io::json::array();
    ckpt_detail::put_tensors(list, w, ts);
    sections[key] = std::move(list);
  };
  section("generator", b.generator);
  section("discriminator", b.discriminator);
  section("init_opt.m", b.init_opt.m);
  section("init_opt.v", b.init_opt.v);
  section("g_opt.m", b.g_opt.m);
  section("g_opt.v", b.g_opt.v);
  section("d_opt.m", b.d_opt.m);
  section("d_opt.v", b.d_opt.v);
  const auto& s = b.state;
  io::json h = {{"format", kCheckpointFormat},
                {"version", b.version},
                {"tag", b.tag},
                {"config", b.config},
                {"seed", b.config.value("run.seed", std::string())},
                {"vocab", b.vocab},
                {"state",
                 {{"stage", s.stage},
                  {"step", s.step},
                  {"init_step", s.init_step},
                  {"skipped_generator_updates", s.skipped_generator_updates},
                  {"data_rng", s.data_rng},
                  {"sample_rng", s.sample_rng},
                  {"noise_rng", s.noise_rng},
                  {"stats", ckpt_detail::stats_json(s.stats)}}},
                {"optimizer_steps", {{"init", b.init_opt.steps}, {"g", b.g_opt.steps}, {"d", b.d_opt.steps}}},
                {"tensors", sections}};
  return io::encode_container(std::move(h), w.bytes());
}

inline CheckpointBundle decode_checkpoint(std::string_view data) {
  const auto c = io::decode_container(data, kCheckpointFormat);
  const auto& h = c.header;
  CheckpointBundle b;
  try {
    b.version = h.at("version").get<int>();
    if (b.version != kCheckpointVersion)
      throw FormatError("checkpoint version " + std::to_string(b.version) + " is not supported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    b.tag = h.at("tag").get<std::string>();
    b.config = h.at("config");
    b.vocab = h.at("vocab").get<std::vector<std::string>>();
    const auto& s = h.at("state");
    b.state.stage = s.at("stage").get<std::string>();
    b.state.step = s.at("step").get<long>();
    b.state.init_step = s.at("init_step").get<long>();
    b.state.skipped_generator_updates = s.at("skipped_generator_updates").get<long>();
    b.state.data_rng = s.at("data_rng").get<std::string>();
    b.state.sample_rng = s.at("sample_rng").get<std::string>();
    b.state.noise_rng = s.at("noise_rng").get<std::string>();
    const auto& st = s.at("stats");
    b.state.stats.count = st.at("count").get<long>();
    b.state.stats.reward_sum = std::bit_cast<double>(st.at("reward_sum_bits").get<std::uint64_t>());
    b.state.stats.advantage_sum = std::bit_cast<double>(st.at("advantage_sum_bits").get<std::uint64_t>());
    const auto& os = h.at("optimizer_steps");
    b.init_opt.steps = os.at("init").get<long>();
    b.g_opt.steps = os.at("g").get<long>();
    b.d_opt.steps = os.at("d").get<long>();
    const auto& ts = h.at("tensors");
    std::size_t expected = 0;
    for (const auto& [k, list] : ts.items())
      for (const auto& e : list) expected += 8 * e.at("rows").get<std::size_t>() * e.at("cols").get<std::size_t>();
    if (expected != c.payload.size()) throw FormatError("checkpoint payload does not match its tensor manifest");
    io::ByteReader r(c.payload);
    b.generator = ckpt_detail::get_tensors(ts.at("generator"), r);
    b.discriminator = ckpt_detail::get_tensors(ts.at("discriminator"), r);
    b.init_opt.m = ckpt_detail::get_tensors(ts.at("init_opt.m"), r);
    b.init_opt.v = ckpt_detail::get_tensors(ts.at("init_opt.v"), r);
    b.g_opt.m = ckpt_detail::get_tensors(ts.at("g_opt.m"), r);
    b.g_opt.v = ckpt_detail::get_tensors(ts.at("g_opt.v"), r);
    b.d_opt.m = ckpt_detail::get_tensors(ts.at("d_opt.m"), r);
    b.d_opt.v = ckpt_detail::get_tensors(ts.at("d_opt.v"), r);
  } catch (const io::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  }
  return b;
}

inline void save_checkpoint(const CheckpointBundle& b, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(b));
}

inline CheckpointBundle load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

// ---- stage drivers ------------------------------------------------------------------

using InitLogFn = std::function<void(const InitLog&)>;
using StepLogFn = std::function<void(const StepLog&)>;

/// Runs `steps` reconstruction steps (pre: nonempty corpus) and returns a checkpoint tagged "init".
inline CheckpointBundle run_initialization(Trainer& tr, const TrainingData& data, long steps, const InitLogFn& log = {}) {
  if (data.corpus.empty()) throw InputError("initialization needs a nonempty corpus");
  for (long s = 0; s < steps; ++s) {
    const auto l = tr.init_step(data);
    if (log) log(l);
  }
  return tr.snapshot("init");
}

inline CheckpointBundle run_adversarial(Trainer& tr, const TrainingData& data, long steps, const StepLogFn& log = {}) {
  data.validate(tr.config().reward);
  for (long s = 0; s < steps; ++s) {
    const auto l = tr.adversarial_step(data);
    if (log) log(l);
  }
  return tr.snapshot("adversarial");
}

inline CheckpointBundle run_pseudo(Trainer& tr, const TrainingData& data, long steps, const InitLogFn& log = {}) {
  for (long s = 0; s < steps; ++s) {
    const auto l = tr.pseudo_step(data);
    if (log) log(l);
  }
  return tr.snapshot("pseudo");
}

}  // namespace uic
