#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uic/binary_io.hpp"
#include "uic/embeddings.hpp"
#include "uic/error.hpp"

namespace uic {

enum class RewardStrategy { cos, agg, mix };
enum class L1Reduction { mean, sum };
enum class RampMode { additive, convex };

inline RewardStrategy parse_strategy(const std::string& s) {
  if (s == "cos") return RewardStrategy::cos;
  if (s == "agg") return RewardStrategy::agg;
  if (s == "mix") return RewardStrategy::mix;
  throw InputError("unknown reward strategy '" + s + "' (expected cos, agg or mix)");
}

inline std::string to_string(RewardStrategy s) {
  switch (s) {
    case RewardStrategy::cos: return "cos";
    case RewardStrategy::agg: return "agg";
    case RewardStrategy::mix: return "mix";
  }
  return "?";
}

struct RewardConfig {
  RewardStrategy strategy = RewardStrategy::agg;
  double tau = 0.05;
  bool use_cos_term = true;
  bool use_l1_term = true;
  L1Reduction l1 = L1Reduction::mean;
  long warmup_d_only_steps = 150;
  long ramp_steps = 2350;
  double mix_cos = 0.5;
  double mix_agg = 0.5;
  bool use_naturalness = true;
  bool use_semantic = true;
  RampMode ramp_mode = RampMode::additive;
  bool clamp_naturalness = false;  // clamp f_D to [-2, 2]

  void validate() const {
    if (!(tau > 0.0)) throw InputError("reward.tau must be > 0");
    if (strategy != RewardStrategy::cos && !use_cos_term && !use_l1_term)
      throw InputError("CLIP-agg needs at least one of the cosine and L1 terms");
    if (warmup_d_only_steps < 0 || ramp_steps < 0) throw InputError("reward schedule steps must be >= 0");
  }
};

struct AggregateEmbedding {
  std::vector<float> values;
  std::string image_id;
  double tau = 0.0;
  bool operator==(const AggregateEmbedding&) const = default;
};

struct RewardBreakdown {
  double naturalness = 0.0;
  double semantic = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

inline void require_normalized(const EmbeddingVector& v, const char* what) {
  if (!v.normalized) throw InputError(std::string(what) + " must be a normalized embedding");
}

/// Cosine of two normalized embeddings.
inline double reward_cos(const EmbeddingVector& image, const EmbeddingVector& caption) {
  require_normalized(image, "image embedding");
  require_normalized(caption, "caption embedding");
  return cosine(image.values, caption.values);
}

/// Softmax over rows of cos(row, image)/τ, with max subtraction.
inline std::vector<double> aggregation_weights(const EmbeddingVector& image, const CorpusEmbeddingTable& table,
                                               double tau) {
  if (table.rows.empty()) throw InputError("cannot aggregate over an empty table");
  if (!(tau > 0.0)) throw InputError("temperature must be > 0");
  require_normalized(image, "image embedding");
  std::vector<double> w(table.rows.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = cosine(table.rows[i].embedding.values, image.values) / tau;
  const double mx = *std::max_element(w.begin(), w.end());
  double z = 0.0;
  for (auto& x : w) z += (x = std::exp(x - mx));
  for (auto& x : w) x /= z;
  return w;
}

/// Attention-weighted sum of corpus embeddings (not renormalized).
inline AggregateEmbedding aggregate(const EmbeddingVector& image, const CorpusEmbeddingTable& table, double tau,
                                    std::string image_id = {}) {
  const auto w = aggregation_weights(image, table, tau);
  std::vector<double> acc(table.dim, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& v = table.rows[i].embedding.values;
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += w[i] * v[j];
  }
  AggregateEmbedding a{std::vector<float>(acc.begin(), acc.end()), std::move(image_id), tau};
  for (float x : a.values)
    if (!std::isfinite(x)) throw StateError("non-finite aggregate embedding");
  return a;
}

inline AggregateEmbedding aggregate(const EmbeddingVector& image, const CorpusEmbeddingTable& table, double tau,
                                    const EmbeddingBackend& backend, std::string image_id = {}) {
  table.require_backend(backend);
  return aggregate(image, table, tau, std::move(image_id));
}

inline double l1_distance(std::span<const float> a, std::span<const float> b, L1Reduction red) {
  if (a.size() != b.size()) throw InputError("dimension mismatch in L1 distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - b[i]);
  return red == L1Reduction::mean ? s / static_cast<double>(a.size()) : s;
}

/// [cos term]·cos(e^C, e^agg) − [L1 term]·L1(e^C, e^agg).
inline double reward_agg(const EmbeddingVector& caption, const AggregateEmbedding& agg, const RewardConfig& cfg) {
  if (caption.dim() != agg.values.size()) throw InputError("dimension mismatch between caption and aggregate");
  double r = 0.0;
  if (cfg.use_cos_term) r += cosine(caption.values, agg.values);
  if (cfg.use_l1_term) r -= l1_distance(caption.values, agg.values, cfg.l1);
  return r;
}

inline double reward_mix(double r_cos, double r_agg, double w_cos = 0.5, double w_agg = 0.5) {
  return w_cos * r_cos + w_agg * r_agg;
}

inline double semantic_reward(const EmbeddingVector& image, const EmbeddingVector& caption,
                              const AggregateEmbedding* agg, const RewardConfig& cfg) {
  switch (cfg.strategy) {
    case RewardStrategy::cos: return reward_cos(image, caption);
    case RewardStrategy::agg:
      if (!agg) throw StateError("CLIP-agg reward requires an aggregate embedding");
      return reward_agg(caption, *agg, cfg);
    case RewardStrategy::mix:
      if (!agg) throw StateError("Reward-mix requires an aggregate embedding");
      return reward_mix(reward_cos(image, caption), reward_agg(caption, *agg, cfg), cfg.mix_cos, cfg.mix_agg);
  }
  return 0.0;
}

/// 0 during the discriminator-only warmup, then a linear ramp to 1.
inline double ramp_weight(long step, const RewardConfig& cfg) {
  if (step < cfg.warmup_d_only_steps) return 0.0;
  if (cfg.ramp_steps == 0) return 1.0;
  return std::min(1.0, static_cast<double>(step - cfg.warmup_d_only_steps) / static_cast<double>(cfg.ramp_steps));
}

inline RewardBreakdown combined_reward(double f_d, double r_semantic, long step, const RewardConfig& cfg) {
  if (step < 0) throw InputError("step must be nonnegative");
  RewardBreakdown b;
  b.naturalness = cfg.use_naturalness ? (cfg.clamp_naturalness ? std::clamp(f_d, -2.0, 2.0) : f_d) : 0.0;
  b.semantic = cfg.use_semantic ? r_semantic : 0.0;
  b.lambda = ramp_weight(step, cfg);
  if (cfg.ramp_mode == RampMode::additive) {
    b.total = b.naturalness + b.lambda * b.semantic;
  } else {
    const double w = 0.5 * b.lambda;
    b.total = (1.0 - w) * b.naturalness + w * b.semantic;
  }
  return b;
}

// ---------------------------------------------------------------------------
// aggregate cache

inline constexpr std::string_view kAggregateFormat = "uic-aggregate-cache";

struct AggregateSet {
  std::string table_fingerprint;
  std::uint64_t table_digest = 0;
  double tau = 0.0;
  std::size_t dim = 0;
  std::vector<AggregateEmbedding> rows;
  bool operator==(const AggregateSet&) const = default;
};

inline void save_aggregates(const AggregateSet& set, const std::filesystem::path& path,
                            const io::json& provenance = nullptr) {
  io::ByteWriter w;
  std::vector<io::json> side;
  for (const auto& a : set.rows) {
    if (a.values.size() != set.dim) throw StateError("aggregate dimension mismatch");
    for (float x : a.values) w.f32(x);
    side.push_back({{"id", a.image_id}});
  }
  io::json h = {{"format", kAggregateFormat},
                {"version", 1},
                {"fingerprint", set.table_fingerprint},
                {"table_digest", set.table_digest},
                {"tau_bits", std::bit_cast<std::uint64_t>(set.tau)},
                {"tau", set.tau},
                {"d1", set.dim},
                {"count", set.rows.size()}};
  if (!provenance.is_null()) h["provenance"] = provenance;
  io::write_file_atomic(sidecar_path(path), io::to_jsonl(side));
  io::write_container(path, h, w.bytes());
}

inline AggregateSet load_aggregates(const std::filesystem::path& path) {
  const auto c = io::read_container(path, kAggregateFormat);
  AggregateSet s;
  s.table_fingerprint = c.header.at("fingerprint").get<std::string>();
  s.table_digest = c.header.at("table_digest").get<std::uint64_t>();
  s.tau = std::bit_cast<double>(c.header.at("tau_bits").get<std::uint64_t>());
  s.dim = c.header.at("d1").get<std::size_t>();
  const auto count = c.header.at("count").get<std::size_t>();
  if (c.payload.size() != count * s.dim * sizeof(float)) throw FormatError("aggregate cache payload size mismatch");
  const auto side = io::read_jsonl(sidecar_path(path));
  if (side.size() != count) throw FormatError("aggregate cache sidecar row count mismatch");
  io::ByteReader r(c.payload);
  for (std::size_t i = 0; i < count; ++i) {
    AggregateEmbedding a;
    a.image_id = side[i].at("id").get<std::string>();
    a.tau = s.tau;
    a.values.resize(s.dim);
    for (auto& x : a.values) x = r.f32();
    s.rows.push_back(std::move(a));
  }
  return s;
}

inline AggregateSet compute_aggregates(const std::vector<std::pair<std::string, EmbeddingVector>>& images,
                                       const CorpusEmbeddingTable& table, double tau) {
  AggregateSet s{table.fingerprint, table.content_digest(), tau, table.dim, {}};
  for (const auto& [id, e] : images) s.rows.push_back(aggregate(e, table, tau, id));
  return s;
}

/// Cache file for (image set, table, τ) inside `dir`.
inline std::filesystem::path aggregate_cache_path(const std::filesystem::path& dir,
                                                  const std::vector<std::pair<std::string, EmbeddingVector>>& images,
                                                  const std::string& image_fingerprint,
                                                  const CorpusEmbeddingTable& table, double tau) {
  std::uint64_t h = fnv1a64(image_fingerprint, table.content_digest());
  const auto tb = std::bit_cast<std::uint64_t>(tau);
  h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&tb), sizeof tb), h);
  for (const auto& [id, e] : images) {
    h = fnv1a64(id, h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(e.values.data()), e.values.size() * sizeof(float)), h);
  }
  char name[40];
  std::snprintf(name, sizeof name, "agg-%016llx.bin", static_cast<unsigned long long>(h));
  return dir / name;
}

/// Loads the cached aggregates when present and consistent; otherwise computes and writes them.
inline AggregateSet cached_aggregates(const std::filesystem::path& dir,
                                      const std::vector<std::pair<std::string, EmbeddingVector>>& images,
                                      const std::string& image_fingerprint, const CorpusEmbeddingTable& table,
                                      double tau) {
  const auto path = aggregate_cache_path(dir, images, image_fingerprint, table, tau);
  if (std::filesystem::exists(path)) {
    try {
      auto s = load_aggregates(path);
      bool ok = s.table_digest == table.content_digest() && s.tau == tau && s.rows.size() == images.size();
      for (std::size_t i = 0; ok && i < images.size(); ++i) ok = s.rows[i].image_id == images[i].first;
      if (ok) return s;
    } catch (const Error&) {
      // unreadable cache entry: rebuild below
    }
  }
  auto s = compute_aggregates(images, table, tau);
  save_aggregates(s, path, {{"image_fingerprint", image_fingerprint}});
  return s;
}

}  // namespace uic
