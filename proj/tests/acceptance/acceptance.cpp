// Acceptance checks: one PASS/FAIL line per criterion; exits nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "scst_oracle.hpp"
#include "test_util.hpp"
#include "uic/pipeline.hpp"

using namespace uic;

namespace {

namespace fs = std::filesystem;

// pinned tolerances and margins
constexpr double kWeightSumTol = 1e-6;
constexpr double kNearestTol = 1e-3;
constexpr double kMeanTol = 1e-4;
constexpr double kAggSelfTol = 1e-6;
constexpr double kLossFixtureTol = 1e-6;
constexpr double kSeparatedLossMax = 1e-9;
constexpr double kHeadGradRelTol = 1e-4;
constexpr double kScstTol = 1e-6;
constexpr double kMetricTol = 1e-4;
constexpr double kInitLossMax = 0.05;
// smallest observed improvements over seeds 1, 2 and 1234 were 0.0077 (cos) and 0.29 (CIDEr)
constexpr double kCosMargin = 0.002;
constexpr double kCiderMargin = 0.1;
constexpr long kResumeStep = 500;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void criterion(const std::string& name, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.require(secs <= budget_s, "runtime budget " + std::to_string(budget_s) + " s");
  std::printf("%s  %-28s %7.1fs %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.str().c_str());
  std::fflush(stdout);
  failures += !o.pass;
}

fs::path source_dir() { return UIC_SOURCE_DIR; }

EmbeddingVector random_unit(int d, Rng& r) {
  std::vector<double> v(static_cast<std::size_t>(d));
  for (auto& x : v) x = r.normal();
  return normalize(v);
}

CorpusEmbeddingTable random_table(int n, int d, Rng& r) {
  CorpusEmbeddingTable t;
  t.fingerprint = "acceptance";
  t.dim = static_cast<std::size_t>(d);
  for (int i = 0; i < n; ++i) t.rows.push_back({"r" + std::to_string(i), "x", random_unit(d, r)});
  return t;
}

double linf(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

void reward_math(Outcome& o) {
  Rng r(101);
  double worst_sum = 0, worst_near = 0, worst_mean = 0, worst_single = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_table(40, 32, r);
    const auto img = random_unit(32, r);
    for (double tau : {1e-4, 0.01, 0.05, 1.0, 1e6}) {
      double s = 0;
      for (double w : aggregation_weights(img, t, tau)) s += w;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.rows.size(); ++i)
      if (cosine(t.rows[i].embedding.values, img.values) > cosine(t.rows[best].embedding.values, img.values)) best = i;
    worst_near = std::max(worst_near, linf(aggregate(img, t, 1e-4).values, t.rows[best].embedding.values));
    std::vector<float> mean(32, 0.f);
    for (const auto& row : t.rows)
      for (std::size_t j = 0; j < 32; ++j) mean[j] += row.embedding.values[j] / 40.f;
    worst_mean = std::max(worst_mean, linf(aggregate(img, t, 1e6).values, mean));
    CorpusEmbeddingTable one = t;
    one.rows.resize(1);
    worst_single = std::max(worst_single, linf(aggregate(img, one, 0.05).values, one.rows[0].embedding.values));
  }
  o.require(worst_sum <= kWeightSumTol, "weights sum to 1");
  o.require(worst_single == 0.0, "single-row identity");
  o.require(worst_near <= kNearestTol, "tau->0 nearest row");
  o.require(worst_mean <= kMeanTol, "tau->inf mean");
  RewardConfig cfg;
  const auto e = random_unit(32, r);
  const double self = reward_agg(e, AggregateEmbedding{e.values, "i", 0.05}, cfg);
  o.require(std::abs(self - 1.0) <= kAggSelfTol, "r_agg(e, e) = 1");
  const bool schedule = ramp_weight(0, cfg) == 0.0 && ramp_weight(150, cfg) == 0.0 && ramp_weight(1325, cfg) == 0.5 &&
                        ramp_weight(2500, cfg) == 1.0 && combined_reward(0.25, 0.5, 1325, cfg).total == 0.5;
  o.require(schedule, "lambda schedule at 0/150/1325/2500");
  o.detail << "sum_err=" << worst_sum << " near_err=" << worst_near << " mean_err=" << worst_mean
           << " r_agg_self=" << self;
}

void discriminator_fixtures(Outcome& o) {
  const double zero = discriminator_loss(std::vector<double>{0.0}, std::vector<double>{0.0});
  const double sep = discriminator_loss(std::vector<double>{30.0}, std::vector<double>{-30.0});
  const double unit = discriminator_loss(std::vector<double>{1.0}, std::vector<double>{-1.0});
  auto sigm = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  const double oracle = -std::log(sigm(1.0)) - std::log(1.0 - sigm(-1.0));
  o.require(std::abs(zero - 2 * std::log(2.0)) <= kLossFixtureTol, "(0,0) -> 2 ln 2");
  o.require(sep <= kSeparatedLossMax, "(+30,-30) -> ~0");
  o.require(std::abs(unit - oracle) <= kLossFixtureTol, "(1,-1) scalar oracle");

  DiscriminatorConfig c;
  c.d = 16;
  c.head_hidden = 12;
  c.buckets = 64;
  c.init_seed = 7;
  Discriminator d(c);
  const std::vector<std::string> real{"a dog runs on the grass .", "two cats sleep ."}, fake{"dog dog .", "a the ."};
  auto params = d.head_parameters();
  for (auto* p : params) p->zero_grad();
  {
    nn::Tape t;
    auto l = d.loss(t, real, fake);
    t.backward(l);
  }
  auto loss = [&] {
    nn::Tape t;
    return t.value(d.loss(t, real, fake))(0, 0);
  };
  double worst = 0;
  for (auto* p : params)
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double x = p->value.data()[i], h = 1e-6;
      p->value.data()[i] = x + h;
      const double up = loss();
      p->value.data()[i] = x - h;
      const double dn = loss();
      p->value.data()[i] = x;
      const double fd = (up - dn) / (2 * h);
      worst = std::max(worst, std::abs(p->grad.data()[i] - fd) / std::max(std::abs(fd), 1e-3));
    }
  o.require(worst <= kHeadGradRelTol, "head gradient vs finite differences");
  o.detail << "loss(0,0)=" << zero << " loss(30,-30)=" << sep << " loss(1,-1)=" << unit << " grad_rel_err=" << worst;
}

void scst_oracle(Outcome& o) {
  const double err = test::scst_enumeration_error();
  o.require(err <= kScstTol, "estimator expectation vs analytic gradient");
  // zero-advantage batch on a real trainer
  const auto dir = test::temp_dir("acc-scst");
  auto cfg = test::tiny_run(dir);
  write_toy_world(cfg, dir);
  const auto data = load_training_data(cfg);
  Trainer tr(cfg, corpus_vocab(data.data.corpus, cfg.generator.eos_token));
  const auto r = tr.rollout(data.data);
  RolloutRewards rw;
  for (std::size_t i = 0; i < r.images.size(); ++i) {
    rw.greedy.push_back(test::total(0.4));
    rw.samples.emplace_back(r.samples[i].size(), test::total(0.4));
  }
  const auto before = tr.snapshot("x");
  tr.scst_update(r, rw);
  const auto after = tr.snapshot("x");
  o.require(before == after, "zero advantage leaves parameters unchanged");
  o.detail << "max_grad_err=" << err;
}

void metric_oracle(Outcome& o) {
  const auto j = io::json::parse(io::read_file(source_dir() / "tests" / "fixtures" / "metric_fixture.json"));
  const auto cands = j.at("candidates").get<metrics::Captions>();
  const auto refs = j.at("references").get<metrics::References>();
  const auto& ex = j.at("expected");
  const double b4 = metrics::bleu4(cands, refs), rl = metrics::rouge_l(cands, refs).corpus,
               cd = metrics::cider(cands, refs).corpus;
  const double eb = std::abs(b4 - ex.at("BLEU-4").get<double>()), er = std::abs(rl - ex.at("ROUGE-L").get<double>()),
               ec = std::abs(cd - ex.at("CIDEr").get<double>());
  o.require(eb <= kMetricTol, "BLEU-4");
  o.require(er <= kMetricTol, "ROUGE-L");
  o.require(ec <= kMetricTol, "CIDEr");
  o.detail << "BLEU-4 err=" << eb << " ROUGE-L err=" << er << " CIDEr err=" << ec;
}

void baseline_exactness(Outcome& o) {
  toy::ToyWorldSpec spec;
  spec.image_noise = 0.3;
  const ToyBackend be(spec);
  const auto world = toy::generate(toy::Vocabulary::make(spec.vocab_size), 500, 50, 5);
  std::vector<SentenceRecord> corpus;
  for (const auto& [id, t] : world.corpus) corpus.push_back({id, t});
  const auto table = build_corpus_table(be, corpus);
  ImageEmbeddings imgs;
  for (const auto& im : world.images) imgs.emplace_back(im.id, be.encode_image({im.id, ToyImagePayload{im.hidden_caption, im.noise_seed}}));
  const auto got = clip_retrieval_baseline(imgs, table, be);
  int agree = 0;
  for (const auto& [id, e] : imgs) {
    std::size_t best = 0;
    double bc = -2;
    for (std::size_t j = 0; j < table.rows.size(); ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < e.values.size(); ++k) dot += static_cast<double>(e.values[k]) * table.rows[j].embedding.values[k];
      if (dot > bc) {
        bc = dot;
        best = j;
      }
    }
    agree += got.at(id) == table.rows[best].text;
  }
  o.require(agree == 50, "retrieval equals brute force");

  spec.image_noise = 0.0;
  const ToyBackend clean(spec);
  std::vector<SentenceRecord> hidden;
  ImageEmbeddings cimgs;
  for (const auto& im : world.images) {
    hidden.push_back({im.id, im.hidden_caption});
    cimgs.emplace_back(im.id, clean.encode_image({im.id, ToyImagePayload{im.hidden_caption, im.noise_seed}}));
  }
  const auto htable = build_corpus_table(clean, hidden);
  int self = 0;
  for (const auto& im : world.images) {
    const auto cap = clip_retrieval_baseline(cimgs, htable, clean).at(im.id);
    // texts with the same token bag embed identically; either counts as the hidden caption
    self += cosine(clean.encode_text({"a", cap}).values, clean.encode_text({"b", im.hidden_caption}).values) >= 1 - 1e-6;
  }
  o.require(self == 50, "noiseless self-retrieval");
  o.detail << "brute_force_agree=" << agree << "/50 self_retrieval=" << self << "/50";
}

struct ToyRuns {
  fs::path root;
  RunConfig cfg;
  RunSummary first;
};

ToyRuns& toy_runs() {
  static ToyRuns r = [] {
    ToyRuns t;
    t.root = test::temp_dir("acc-e2e");
    t.cfg = load_config(source_dir() / "configs" / "toy.ini");
    for (const char* k : {"corpus", "images", "refs"})
      set_config_value(t.cfg, std::string("data.") + k,
                       (t.root / "world" / (std::string(k) + (std::string(k) == "refs" ? ".json" : ".jsonl"))).string());
    t.cfg.eval_external = false;
    write_toy_world(t.cfg, t.root / "world");
    return t;
  }();
  return r;
}

void end_to_end(Outcome& o) {
  auto& t = toy_runs();
  const auto& c = t.cfg;
  o.require(c.backend.toy.vocab_size == 50 && c.backend.toy.d1 == 64 && c.world.num_images == 500 &&
                c.world.corpus_size == 500 && c.generator.layers == 2 && c.init.steps == 2000 && c.train.steps == 1000 &&
                c.reward.strategy == RewardStrategy::agg,
            "configs/toy.ini matches the required setup");
  RunOptions opt;
  opt.out_dir = t.root / "run-a";
  t.first = run_pipeline(t.cfg, opt);
  const auto& s = t.first;
  const double c0 = s.init_report.scores.at("CIDEr"), c1 = s.report.scores.at("CIDEr");
  o.require(s.init_loss < kInitLossMax, "init reconstruction loss < 0.05");
  o.require(s.final_cos > s.init_cos + kCosMargin, "mean cos improves by the pinned margin");
  o.require(c1 > c0 + kCiderMargin, "CIDEr improves by the pinned margin");
  o.detail << "init_loss=" << s.init_loss << " cos " << s.init_cos << "->" << s.final_cos << " CIDEr " << c0 << "->"
           << c1;
}

void reproducibility(Outcome& o) {
  auto& t = toy_runs();
  if (t.first.final_checkpoint.tag.empty()) {
    RunOptions opt;
    opt.out_dir = t.root / "run-a";
    t.first = run_pipeline(t.cfg, opt);
  }
  RunOptions b;
  b.out_dir = t.root / "run-b";
  run_pipeline(t.cfg, b);
  RunOptions c;
  c.out_dir = t.root / "run-c";
  c.resume_at = kResumeStep;
  run_pipeline(t.cfg, c);
  auto same = [&](const char* dir, const char* file) {
    return io::read_file(t.root / "run-a" / file) == io::read_file(t.root / dir / file);
  };
  for (const char* f : {"init.ckpt", "final.ckpt", "report.json", "report.csv", "candidates.jsonl", "train_log.jsonl"})
    o.require(same("run-b", f), std::string("same seed ") + f);
  for (const char* f : {"final.ckpt", "report.json"}) o.require(same("run-c", f), std::string("resume ") + f);
  o.detail << "two runs and a resume at step " << kResumeStep << " compared byte-wise";
}

void ablation_harness(Outcome& o) {
  auto& t = toy_runs();
  RunConfig base = t.cfg;
  // shortened schedule: the harness is under test here, not the converged numbers
  set_config_value(base, "init.steps", "300");
  set_config_value(base, "train.steps", "60");
  set_config_value(base, "reward.warmup_d_only_steps", "10");
  set_config_value(base, "reward.ramp_steps", "30");
  std::size_t rows = 0, ok = 0;
  std::map<std::string, double> combo_cider;
  for (const char* preset : {"combos", "strategies", "agg-terms"}) {
    const auto dir = t.root / (std::string("sweep-") + preset);
    const auto res = run_sweep(base, preset_points(preset), dir);
    for (const auto& r : res) {
      ++rows;
      ok += r.status == "ok";
      if (r.status == "ok" && std::string(preset) == "combos") combo_cider[r.keys.at("point")] = r.summary->report.scores.at("CIDEr");
    }
    o.require(fs::exists(dir / "sweep.csv"), std::string(preset) + " CSV");
  }
  o.require(rows == 11 && ok == 11, "all 11 configurations complete");
  // recorded, not asserted
  o.detail << "rows_ok=" << ok << "/" << rows << " combos CIDEr:";
  for (const auto& [k, v] : combo_cider) o.detail << " " << k << "=" << v;
}

}  // namespace

int main() {
  criterion("reward-math", 5, reward_math);
  criterion("discriminator-loss-fixtures", 30, discriminator_fixtures);
  criterion("scst-oracle", 30, scst_oracle);
  criterion("metric-oracle", 60, metric_oracle);
  criterion("baseline-exactness", 10, baseline_exactness);
  criterion("end-to-end-toy", 600, end_to_end);
  criterion("reproducibility", 1200, reproducibility);
  criterion("ablation-harness", 1200, ablation_harness);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
