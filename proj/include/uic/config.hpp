#pragma once

// Run configuration: a flat-nested key-value document ("[section]" headers
// and "key = value" lines, '#' comments). Precedence is defaults < file <
// overrides; unknown keys are rejected.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "uic/binary_io.hpp"
#include "uic/discriminator.hpp"
#include "uic/error.hpp"
#include "uic/generator.hpp"
#include "uic/rewards.hpp"
#include "uic/text.hpp"
#include "uic/toy_world.hpp"
#include "uic/train_config.hpp"

namespace uic {

struct BackendConfig {
  std::string kind = "toy";  // toy | pretrained:<model-id>
  std::string encoder_url = "http://127.0.0.1:8765";
  toy::ToyWorldSpec toy;
};

struct WorldConfig {
  int corpus_size = 500;
  int num_images = 500;
  std::uint64_t seed = 11;
};

struct DataConfig {
  std::string corpus;
  std::string images;
  std::string refs;
  std::string corpus_table;
  std::string cache_dir;
  std::string pseudo_labels;
};

struct RunConfig {
  std::uint64_t seed = 1234;
  std::string name = "run";
  BackendConfig backend;
  WorldConfig world;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  RewardConfig reward;
  InitConfig init;
  TrainConfig train;
  DataConfig data;
  bool eval_external = true;

  /// Generator/discriminator seeds and d1 follow from the root seed and backend.
  GeneratorConfig resolved_generator() const {
    GeneratorConfig g = generator;
    g.d1 = backend.toy.d1;
    g.init_seed = derive_seed(seed, "generator");
    return g;
  }
  DiscriminatorConfig resolved_discriminator() const {
    DiscriminatorConfig d = discriminator;
    d.init_seed = derive_seed(seed, "discriminator");
    return d;
  }

  void validate() const {
    if (backend.kind != "toy" && backend.kind.rfind("pretrained:", 0) != 0)
      throw InputError("backend.kind must be toy or pretrained:<model-id>");
    backend.toy.validate();
    resolved_generator().validate();
    discriminator.validate();
    reward.validate();
    init.validate();
    train.validate();
  }
};

namespace config_detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline std::string fmt(bool v) { return v ? "true" : "false"; }

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InputError("config key " + key + ": expected a boolean, got '" + v + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    T out{};
    if constexpr (std::is_same_v<T, double>) out = std::stod(v, &pos);
    else if constexpr (std::is_same_v<T, std::uint64_t>) out = std::stoull(v, &pos);
    else out = static_cast<T>(std::stoll(v, &pos));
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw InputError("config key " + key + ": expected a number, got '" + v + "'");
  }
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define UIC_NUM(member, type)                                                                           \
  Field {                                                                                               \
    [](RunConfig& c, const std::string& v) { c.member = parse_number<type>(#member, v); },             \
        [](const RunConfig& c) -> std::string {                                                         \
          if constexpr (std::is_same_v<type, double>) return fmt(static_cast<double>(c.member));        \
          else return std::to_string(c.member);                                                         \
        }                                                                                               \
  }
#define UIC_BOOL(member)                                                                            \
  Field {                                                                                           \
    [](RunConfig& c, const std::string& v) { c.member = parse_bool(#member, v); },                \
        [](const RunConfig& c) -> std::string { return fmt(c.member); }                             \
  }
#define UIC_STR(member)                                                                             \
  Field {                                                                                           \
    [](RunConfig& c, const std::string& v) { c.member = v; },                                     \
        [](const RunConfig& c) -> std::string { return c.member; }                                 \
  }

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = {
      {"run.seed", UIC_NUM(seed, std::uint64_t)},
      {"run.name", UIC_STR(name)},
      {"backend.kind", UIC_STR(backend.kind)},
      {"backend.encoder_url", UIC_STR(backend.encoder_url)},
      {"backend.vocab_size", UIC_NUM(backend.toy.vocab_size, int)},
      {"backend.d1", UIC_NUM(backend.toy.d1, int)},
      {"backend.projection_seed", UIC_NUM(backend.toy.projection_seed, std::uint64_t)},
      {"backend.image_noise", UIC_NUM(backend.toy.image_noise, double)},
      {"backend.orthogonal", UIC_BOOL(backend.toy.orthogonal_rows)},
      {"world.corpus_size", UIC_NUM(world.corpus_size, int)},
      {"world.num_images", UIC_NUM(world.num_images, int)},
      {"world.seed", UIC_NUM(world.seed, std::uint64_t)},
      {"generator.k", UIC_NUM(generator.k, int)},
      {"generator.d2", UIC_NUM(generator.d2, int)},
      {"generator.mlp_hidden", UIC_NUM(generator.mlp_hidden, int)},
      {"generator.max_len", UIC_NUM(generator.max_len, int)},
      {"generator.eos_token", UIC_STR(generator.eos_token)},
      {"generator.sample_n", UIC_NUM(generator.sample_n, int)},
      {"generator.temperature", UIC_NUM(generator.temperature, double)},
      {"generator.decoder", UIC_STR(generator.decoder)},
      {"generator.layers", UIC_NUM(generator.layers, int)},
      {"generator.heads", UIC_NUM(generator.heads, int)},
      {"generator.ff", UIC_NUM(generator.ff, int)},
      {"generator.init_noise", UIC_NUM(generator.init_noise, double)},
      {"discriminator.encoder", UIC_STR(discriminator.encoder)},
      {"discriminator.head_hidden", UIC_NUM(discriminator.head_hidden, int)},
      {"discriminator.d", UIC_NUM(discriminator.d, int)},
      {"discriminator.layers", UIC_NUM(discriminator.layers, int)},
      {"discriminator.heads", UIC_NUM(discriminator.heads, int)},
      {"discriminator.buckets", UIC_NUM(discriminator.buckets, int)},
      {"discriminator.max_len", UIC_NUM(discriminator.max_len, int)},
      {"discriminator.freeze_encoder", UIC_BOOL(discriminator.freeze_encoder)},
      {"reward.strategy",
       Field{[](RunConfig& c, const std::string& v) { c.reward.strategy = parse_strategy(v); },
             [](const RunConfig& c) { return to_string(c.reward.strategy); }}},
      {"reward.tau", UIC_NUM(reward.tau, double)},
      {"reward.use_cos_term", UIC_BOOL(reward.use_cos_term)},
      {"reward.use_l1_term", UIC_BOOL(reward.use_l1_term)},
      {"reward.l1_reduction",
       Field{[](RunConfig& c, const std::string& v) {
               if (v == "mean") c.reward.l1 = L1Reduction::mean;
               else if (v == "sum") c.reward.l1 = L1Reduction::sum;
               else throw InputError("reward.l1_reduction must be mean or sum");
             },
             [](const RunConfig& c) { return std::string(c.reward.l1 == L1Reduction::mean ? "mean" : "sum"); }}},
      {"reward.warmup_d_only_steps", UIC_NUM(reward.warmup_d_only_steps, long)},
      {"reward.ramp_steps", UIC_NUM(reward.ramp_steps, long)},
      {"reward.mix_cos", UIC_NUM(reward.mix_cos, double)},
      {"reward.mix_agg", UIC_NUM(reward.mix_agg, double)},
      {"reward.use_naturalness", UIC_BOOL(reward.use_naturalness)},
      {"reward.use_semantic", UIC_BOOL(reward.use_semantic)},
      {"reward.ramp_mode",
       Field{[](RunConfig& c, const std::string& v) {
               if (v == "additive") c.reward.ramp_mode = RampMode::additive;
               else if (v == "convex") c.reward.ramp_mode = RampMode::convex;
               else throw InputError("reward.ramp_mode must be additive or convex");
             },
             [](const RunConfig& c) {
               return std::string(c.reward.ramp_mode == RampMode::additive ? "additive" : "convex");
             }}},
      {"reward.clamp_naturalness", UIC_BOOL(reward.clamp_naturalness)},
      {"init.enabled", UIC_BOOL(init.enabled)},
      {"init.steps", UIC_NUM(init.steps, long)},
      {"init.lr", UIC_NUM(init.lr, double)},
      {"init.warmup", UIC_NUM(init.warmup, long)},
      {"init.batch", UIC_NUM(init.batch, int)},
      {"train.mode", UIC_STR(train.mode)},
      {"train.steps", UIC_NUM(train.steps, long)},
      {"train.g_lr", UIC_NUM(train.g_lr, double)},
      {"train.g_warmup", UIC_NUM(train.g_warmup, long)},
      {"train.d_lr", UIC_NUM(train.d_lr, double)},
      {"train.d_warmup", UIC_NUM(train.d_warmup, long)},
      {"train.batch", UIC_NUM(train.batch, int)},
      {"train.d_steps_per_g", UIC_NUM(train.d_steps_per_g, int)},
      {"train.clip_norm", UIC_NUM(train.clip_norm, double)},
      {"train.weight_decay", UIC_NUM(train.weight_decay, double)},
      {"train.beta1", UIC_NUM(train.beta1, double)},
      {"train.beta2", UIC_NUM(train.beta2, double)},
      {"train.eps", UIC_NUM(train.eps, double)},
      {"data.corpus", UIC_STR(data.corpus)},
      {"data.images", UIC_STR(data.images)},
      {"data.refs", UIC_STR(data.refs)},
      {"data.corpus_table", UIC_STR(data.corpus_table)},
      {"data.cache_dir", UIC_STR(data.cache_dir)},
      {"data.pseudo_labels", UIC_STR(data.pseudo_labels)},
      {"eval.external", UIC_BOOL(eval_external)},
  };
  return f;
}

#undef UIC_NUM
#undef UIC_BOOL
#undef UIC_STR

}  // namespace config_detail

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& f = config_detail::fields();
  auto it = f.find(key);
  if (it == f.end()) throw InputError("unknown config key '" + key + "'");
  it->second.set(cfg, text::trim(value));
}

inline std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  const auto& f = config_detail::fields();
  auto it = f.find(key);
  if (it == f.end()) throw InputError("unknown config key '" + key + "'");
  return it->second.get(cfg);
}

/// "key=value" with a dotted key.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InputError("override '" + assignment + "' is not key=value");
  set_config_value(cfg, text::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

inline void apply_config_text(RunConfig& cfg, const std::string& content, const std::string& origin = "<config>") {
  std::istringstream in(content);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = text::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw InputError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      section = text::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    auto key = text::trim(line.substr(0, eq));
    auto value = text::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    const std::string full = section.empty() ? key : section + "." + key;
    try {
      set_config_value(cfg, full, value);
    } catch (const InputError& e) {
      throw InputError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  RunConfig cfg;
  if (!path.empty()) apply_config_text(cfg, io::read_file(path), path.string());
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

/// Fully resolved config as a flat {key: string} object.
inline io::json config_to_json(const RunConfig& cfg) {
  io::json j = io::json::object();
  for (const auto& [k, f] : config_detail::fields()) j[k] = f.get(cfg);
  return j;
}

inline RunConfig config_from_json(const io::json& j) {
  RunConfig cfg;
  for (auto it = j.begin(); it != j.end(); ++it) set_config_value(cfg, it.key(), it.value().get<std::string>());
  cfg.validate();
  return cfg;
}

/// Config file text in section form; loading it reproduces `cfg`.
inline std::string config_to_text(const RunConfig& cfg) {
  std::string out, section;
  for (const auto& [k, f] : config_detail::fields()) {
    const auto dot = k.find('.');
    const auto sec = k.substr(0, dot);
    if (sec != section) {
      out += (out.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += k.substr(dot + 1) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace uic
