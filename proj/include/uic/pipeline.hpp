#pragma once

// End-to-end actions shared by the command-line tool, the sweep harness and
// the acceptance checks.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "uic/config.hpp"
#include "uic/embeddings.hpp"
#include "uic/evaluation.hpp"
#include "uic/explain.hpp"
#include "uic/remote_encoder.hpp"
#include "uic/rewards.hpp"
#include "uic/toy_world.hpp"
#include "uic/training.hpp"

namespace uic {

namespace fs = std::filesystem;

inline std::unique_ptr<EmbeddingBackend> make_backend(const RunConfig& cfg) {
  if (cfg.backend.kind == "toy") return std::make_unique<ToyBackend>(cfg.backend.toy);
  const std::string prefix = "pretrained:";
  if (cfg.backend.kind.rfind(prefix, 0) == 0)
    return std::make_unique<RemoteBackend>(cfg.backend.encoder_url, cfg.backend.kind.substr(prefix.size()));
  throw InputError("unknown backend '" + cfg.backend.kind + "'");
}

/// EOS first, then the sorted distinct corpus tokens.
inline TokenVocab corpus_vocab(const std::vector<SentenceRecord>& corpus, const std::string& eos) {
  std::set<std::string> words;
  for (const auto& s : corpus)
    for (auto& t : text::word_tokens(s.text)) words.insert(std::move(t));
  words.erase(eos);
  std::vector<std::string> v{eos};
  v.insert(v.end(), words.begin(), words.end());
  return TokenVocab(std::move(v));
}

inline fs::path cache_dir(const RunConfig& cfg) {
  if (!cfg.data.cache_dir.empty()) return cfg.data.cache_dir;
  if (const char* env = std::getenv("UIC_CACHE_DIR"); env && *env) return env;
  return {};
}

// ---- toy world ----------------------------------------------------------------

struct ToyWorldFiles {
  fs::path corpus, images, refs;
};

/// Writes corpus.jsonl, images.jsonl and refs.json (hidden captions) into `dir`.
inline ToyWorldFiles write_toy_world(const RunConfig& cfg, const fs::path& dir) {
  const auto vocab = toy::Vocabulary::make(cfg.backend.toy.vocab_size);
  if (!vocab.supports_grammar()) throw InputError("toy vocabulary is too small for the sentence templates");
  const auto world = toy::generate(vocab, cfg.world.corpus_size, cfg.world.num_images, cfg.world.seed);
  fs::create_directories(dir);
  ToyWorldFiles f{dir / "corpus.jsonl", dir / "images.jsonl", dir / "refs.json"};
  std::vector<io::json> corpus;
  for (const auto& [id, t] : world.corpus) corpus.push_back({{"id", id}, {"text", t}});
  io::write_file_atomic(f.corpus, io::to_jsonl(corpus));
  std::vector<ImageRecord> images;
  ReferenceSet refs;
  for (const auto& img : world.images) {
    images.push_back({img.id, ToyImagePayload{img.hidden_caption, img.noise_seed}});
    refs[img.id] = {img.hidden_caption};
  }
  save_images(images, f.images);
  save_references(refs, f.refs);
  return f;
}

// ---- data loading ---------------------------------------------------------------

inline ImageEmbeddings encode_images(const EmbeddingBackend& backend, const std::vector<ImageRecord>& images) {
  ImageEmbeddings out;
  for (const auto& img : images) out.emplace_back(img.id, backend.encode_image(img));
  return out;
}

/// Loads the corpus table at `path` when it exists and matches; otherwise encodes (and saves when a path is given).
inline CorpusEmbeddingTable corpus_table(const RunConfig& cfg, const EmbeddingBackend& backend,
                                         const std::vector<SentenceRecord>& corpus, const fs::path& path = {}) {
  if (!path.empty() && fs::exists(path)) {
    auto t = load_table(path);
    t.require_backend(backend);
    bool same = t.rows.size() == corpus.size();
    for (std::size_t i = 0; same && i < corpus.size(); ++i) same = t.rows[i].id == corpus[i].id && t.rows[i].text == corpus[i].text;
    if (!same) throw StateError("corpus table " + path.string() + " was built from a different corpus");
    return t;
  }
  auto t = build_corpus_table(backend, corpus);
  if (!path.empty()) save_table(t, path, config_to_json(cfg));
  return t;
}

struct LoadedData {
  std::unique_ptr<EmbeddingBackend> backend;
  std::vector<ImageRecord> images;
  ImageEmbeddings image_embeddings;
  CorpusEmbeddingTable table;
  TrainingData data;
};

inline std::vector<std::pair<std::string, std::string>> load_pseudo_labels(const fs::path& path) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& row : io::read_jsonl(path))
    out.emplace_back(row.at("image_id").get<std::string>(), row.at("caption").get<std::string>());
  return out;
}

inline LoadedData load_training_data(const RunConfig& cfg) {
  if (cfg.data.corpus.empty()) throw InputError("data.corpus is not set");
  if (cfg.data.images.empty()) throw InputError("data.images is not set");
  LoadedData d;
  d.backend = make_backend(cfg);
  d.data.backend = d.backend.get();
  d.data.corpus = load_corpus(cfg.data.corpus);
  d.table = corpus_table(cfg, *d.backend, d.data.corpus, cfg.data.corpus_table);
  for (const auto& r : d.table.rows) d.data.corpus_embeddings.push_back(r.embedding);
  d.images = load_images(cfg.data.images);
  d.image_embeddings = encode_images(*d.backend, d.images);
  for (const auto& [id, e] : d.image_embeddings) {
    d.data.image_ids.push_back(id);
    d.data.image_embeddings.push_back(e);
  }
  if (cfg.reward.use_semantic && cfg.reward.strategy != RewardStrategy::cos) {
    const auto dir = cache_dir(cfg);
    AggregateSet agg;
    if (dir.empty()) {
      agg = compute_aggregates(d.image_embeddings, d.table, cfg.reward.tau);
    } else {
      fs::create_directories(dir);
      agg = cached_aggregates(dir, d.image_embeddings, d.backend->image_fingerprint(), d.table, cfg.reward.tau);
    }
    d.data.aggregates = std::move(agg.rows);
  }
  if (cfg.train.mode == "pseudo") {
    auto pairs = cfg.data.pseudo_labels.empty() ? clip_pseudo_labels(d.image_embeddings, d.table, *d.backend)
                                                : load_pseudo_labels(cfg.data.pseudo_labels);
    std::map<std::string, std::string> by_id(pairs.begin(), pairs.end());
    for (const auto& id : d.data.image_ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw InputError("no pseudo label for image '" + id + "'");
      d.data.pseudo_captions.push_back(it->second);
    }
  }
  return d;
}

// ---- inference ----------------------------------------------------------------------

inline std::vector<std::pair<std::string, std::string>> infer_captions(const Generator& gen,
                                                                       const ImageEmbeddings& images) {
  std::vector<std::pair<std::string, std::string>> out;
  const auto dc = gen.decode_config();
  for (const auto& [id, e] : images) out.emplace_back(id, greedy_decode(gen, gen.map_prompts(e), dc).text);
  return out;
}

inline CandidateSet to_candidates(const std::vector<std::pair<std::string, std::string>>& rows) {
  return CandidateSet(rows.begin(), rows.end());
}

/// Mean cosine between each image embedding and its caption's text embedding.
inline double mean_caption_cosine(const EmbeddingBackend& backend, const ImageEmbeddings& images,
                                  const std::vector<std::pair<std::string, std::string>>& captions) {
  if (images.size() != captions.size() || images.empty()) throw InputError("caption/image count mismatch");
  std::vector<std::string> texts;
  for (const auto& c : captions) texts.push_back(c.second);
  const auto emb = backend.encode_texts(texts);
  double s = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) s += reward_cos(images[i].second, emb[i]);
  return s / static_cast<double>(images.size());
}

inline void append_jsonl(std::ofstream* out, const io::json& row) {
  if (out) *out << row.dump() << '\n';
}

// ---- full run -----------------------------------------------------------------------

struct RunSummary {
  CheckpointBundle init_checkpoint;
  CheckpointBundle final_checkpoint;
  MetricReport init_report, report;
  double init_loss = 0.0;   // mean per-token reconstruction NLL over the corpus after initialization
  double init_cos = 0.0;    // mean toy cosine of greedy captions at the init checkpoint
  double final_cos = 0.0;
  double mean_semantic = 0.0;
  double mean_naturalness = 0.0;
  double mean_reward = 0.0;
};

struct RunOptions {
  fs::path out_dir;            // empty: keep artifacts in memory only
  bool evaluate_init = true;   // also score the init checkpoint
  long resume_at = -1;         // adversarial step at which to save, reload and continue (testing resume)
};

inline MetricReport score_generator(const RunConfig& cfg, const Generator& gen, const LoadedData& d,
                                    const ReferenceSet& refs, std::vector<std::pair<std::string, std::string>>* caps) {
  auto rows = infer_captions(gen, d.image_embeddings);
  auto report = evaluate(to_candidates(rows), refs, cfg.eval_external);
  report.config = config_to_json(cfg);
  report.metadata["seed"] = std::to_string(cfg.seed);
  report.metadata["split"] = "train-images";
  report.metadata["mean_cos"] = format_number(mean_caption_cosine(*d.backend, d.image_embeddings, rows));
  if (caps) *caps = std::move(rows);
  return report;
}

/// Initialization, the adversarial (or pseudo-label) stage, inference and evaluation.
inline RunSummary run_pipeline(const RunConfig& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  auto d = load_training_data(cfg);
  const auto refs = cfg.data.refs.empty() ? ReferenceSet{} : load_references(cfg.data.refs);
  if (refs.empty()) throw InputError("data.refs is not set or empty");
  RunSummary sum;
  std::unique_ptr<std::ofstream> init_log, train_log;
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    io::write_file_atomic(opt.out_dir / "config.ini", config_to_text(cfg));
    init_log = std::make_unique<std::ofstream>(opt.out_dir / "init_log.jsonl");
    train_log = std::make_unique<std::ofstream>(opt.out_dir / "train_log.jsonl");
  }
  auto tr = std::make_unique<Trainer>(cfg, corpus_vocab(d.data.corpus, cfg.generator.eos_token));
  const long init_steps = cfg.init.enabled ? cfg.init.steps : 0;
  sum.init_checkpoint = run_initialization(*tr, d.data, init_steps,
                                           [&](const InitLog& l) { append_jsonl(init_log.get(), to_json(l)); });
  sum.init_loss = tr->mean_reconstruction_loss(d.data);
  if (opt.evaluate_init) {
    sum.init_report = score_generator(cfg, tr->generator(), d, refs, nullptr);
    sum.init_cos = std::stod(sum.init_report.metadata["mean_cos"]);
  }
  if (!opt.out_dir.empty()) save_checkpoint(sum.init_checkpoint, opt.out_dir / "init.ckpt");

  double sem = 0.0, nat = 0.0, rew = 0.0;
  long n = 0;
  auto on_step = [&](const StepLog& l) {
    sem += l.mean_semantic;
    nat += l.mean_naturalness;
    rew += l.mean_reward;
    ++n;
    append_jsonl(train_log.get(), to_json(l));
  };
  if (cfg.train.mode == "pseudo") {
    sum.final_checkpoint = run_pseudo(*tr, d.data, cfg.train.steps,
                                      [&](const InitLog& l) { append_jsonl(train_log.get(), to_json(l)); });
  } else {
    d.data.validate(cfg.reward);
    long done = 0;
    if (opt.resume_at >= 0 && opt.resume_at < cfg.train.steps) {
      run_adversarial(*tr, d.data, opt.resume_at, on_step);
      const auto bytes = encode_checkpoint(tr->snapshot("adversarial"));
      tr.reset();
      tr = Trainer::from_bundle(decode_checkpoint(bytes), cfg);
      done = opt.resume_at;
    }
    sum.final_checkpoint = run_adversarial(*tr, d.data, cfg.train.steps - done, on_step);
  }
  if (n > 0) {
    sum.mean_semantic = sem / static_cast<double>(n);
    sum.mean_naturalness = nat / static_cast<double>(n);
    sum.mean_reward = rew / static_cast<double>(n);
  }
  std::vector<std::pair<std::string, std::string>> caps;
  sum.report = score_generator(cfg, tr->generator(), d, refs, &caps);
  sum.final_cos = std::stod(sum.report.metadata["mean_cos"]);
  sum.report.metadata["mean_semantic"] = format_number(sum.mean_semantic);
  sum.report.metadata["mean_naturalness"] = format_number(sum.mean_naturalness);
  sum.report.metadata["checkpoint"] = sum.final_checkpoint.tag;
  if (!opt.out_dir.empty()) {
    save_checkpoint(sum.final_checkpoint, opt.out_dir / "final.ckpt");
    save_candidates(caps, opt.out_dir / "candidates.jsonl");
    sum.report.metadata["timestamp"] = "";  // reports from identical runs compare equal
    emit_report(sum.report, opt.out_dir / "report.json");
  }
  return sum;
}

// ---- sweep ---------------------------------------------------------------------------

struct SweepPoint {
  std::map<std::string, std::string> keys;  // row keys
  std::vector<std::string> overrides;       // key=value
};

/// Cartesian product of "key=v1,v2,..." axes.
inline std::vector<SweepPoint> grid_points(const std::vector<std::string>& axes) {
  if (axes.empty()) throw InputError("sweep grid is empty");
  std::vector<SweepPoint> pts{SweepPoint{}};
  for (const auto& axis : axes) {
    const auto eq = axis.find('=');
    if (eq == std::string::npos) throw InputError("grid axis '" + axis + "' is not key=v1,v2,...");
    const auto key = text::trim(axis.substr(0, eq));
    std::vector<std::string> values;
    std::string cur;
    for (char c : axis.substr(eq + 1) + ",") {
      if (c == ',') {
        if (auto v = text::trim(cur); !v.empty()) values.push_back(v);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (values.empty()) throw InputError("grid axis '" + key + "' has no values");
    std::vector<SweepPoint> next;
    for (const auto& p : pts)
      for (const auto& v : values) {
        auto q = p;
        q.keys[key] = v;
        q.overrides.push_back(key + "=" + v);
        next.push_back(std::move(q));
      }
    pts = std::move(next);
  }
  return pts;
}

inline std::vector<SweepPoint> preset_points(const std::string& name) {
  auto pt = [&](std::string label, std::vector<std::string> o) {
    return SweepPoint{{{"preset", name}, {"point", std::move(label)}}, std::move(o)};
  };
  if (name == "combos")
    return {pt("init-only", {"init.enabled=true", "train.steps=0"}),
            pt("init+f_D", {"init.enabled=true", "reward.use_semantic=false"}),
            // no discriminator: nothing to warm up, so the semantic term is on from the first step
            pt("init+r", {"init.enabled=true", "reward.use_naturalness=false", "reward.warmup_d_only_steps=0",
                          "reward.ramp_steps=0"}),
            pt("f_D+r", {"init.enabled=false"}),
            pt("all", {"init.enabled=true"})};
  if (name == "strategies")
    return {pt("cos", {"reward.strategy=cos"}), pt("agg", {"reward.strategy=agg"}), pt("mix", {"reward.strategy=mix"})};
  if (name == "agg-terms")
    return {pt("cos-term", {"reward.strategy=agg", "reward.use_cos_term=true", "reward.use_l1_term=false"}),
            pt("l1-term", {"reward.strategy=agg", "reward.use_cos_term=false", "reward.use_l1_term=true"}),
            pt("both", {"reward.strategy=agg", "reward.use_cos_term=true", "reward.use_l1_term=true"})};
  throw InputError("unknown sweep preset '" + name + "' (expected combos, strategies or agg-terms)");
}

struct SweepRow {
  std::map<std::string, std::string> keys;
  std::optional<RunSummary> summary;
  std::string status = "ok";
};

inline std::vector<std::string> sweep_stat_columns() { return {"mean_cos", "mean_semantic", "mean_naturalness"}; }

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::set<std::string> keyset;
  for (const auto& r : rows)
    for (const auto& [k, v] : r.keys) keyset.insert(k);
  std::string out;
  for (const auto& k : keyset) out += csv_escape(k) + ",";
  for (const auto& m : report_metric_columns()) out += m + ",";
  for (const auto& m : sweep_stat_columns()) out += m + ",";
  out += "status\n";
  for (const auto& r : rows) {
    for (const auto& k : keyset) out += csv_escape(r.keys.count(k) ? r.keys.at(k) : "") + ",";
    if (r.summary) {
      const auto [h, line] = report_csv(r.summary->report);
      (void)h;
      // metric columns without the trailing status field
      out += line.substr(0, line.rfind(',') + 1);
      out += format_number(r.summary->final_cos) + "," + format_number(r.summary->mean_semantic) + "," +
             format_number(r.summary->mean_naturalness) + ",";
    } else {
      for (std::size_t i = 0; i < report_metric_columns().size() + sweep_stat_columns().size(); ++i) out += "unavailable,";
    }
    out += csv_escape(r.status) + "\n";
  }
  return out;
}

/// One run per point; failures are recorded in their row and the sweep continues.
inline std::vector<SweepRow> run_sweep(const RunConfig& base, const std::vector<SweepPoint>& points,
                                       const fs::path& out_dir = {},
                                       const std::function<void(const SweepRow&)>& on_row = {}) {
  if (points.empty()) throw InputError("sweep grid is empty");
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < points.size(); ++i) {
    SweepRow row;
    row.keys = points[i].keys;
    try {
      RunConfig cfg = base;
      for (const auto& o : points[i].overrides) apply_override(cfg, o);
      cfg.validate();
      RunOptions opt;
      opt.evaluate_init = false;
      if (!out_dir.empty()) opt.out_dir = out_dir / ("point-" + std::to_string(i));
      row.summary = run_pipeline(cfg, opt);
      for (const auto& [k, v] : row.keys) row.summary->report.row_keys[k] = v;
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
    }
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  if (!out_dir.empty()) io::write_file_atomic(out_dir / "sweep.csv", sweep_csv(rows));
  return rows;
}

}  // namespace uic
