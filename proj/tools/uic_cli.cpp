// uic: command-line entry point for the captioning toolkit.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "uic/pipeline.hpp"

namespace {

using namespace uic;

constexpr int kUsageExit = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// --config / --set shared by every config-driven subcommand.
struct ConfigFlags {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", path, "Run config (INI key-value text)")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "Override a config key: section.key=value (repeatable)");
  }

  RunConfig resolve(const std::vector<std::string>& extra = {}) const {
    RunConfig cfg;
    if (!path.empty()) cfg = load_config(path);
    for (const auto& o : extra) apply_override(cfg, o);
    for (const auto& o : overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
  }
};

void print_error(const std::string& kind, const std::string& msg) {
  std::cerr << io::json{{"error", kind}, {"message", msg}}.dump() << "\n";
}

void write_log_line(std::ofstream* out, const io::json& j) {
  if (out) *out << j.dump() << '\n';
}

std::unique_ptr<std::ofstream> open_log(const std::string& path) {
  if (path.empty()) return nullptr;
  auto f = std::make_unique<std::ofstream>(path);
  if (!*f) throw InputError("cannot open log file " + path);
  return f;
}

void print_summary(const io::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised image captioning toolkit: adversarial generator training with contrastive-embedding rewards"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // make-toy-world
  ConfigFlags world_cfg;
  std::string world_out;
  auto* world = app.add_subcommand("make-toy-world", "Write a synthetic corpus, image set and hidden references");
  world_cfg.attach(world);
  world->add_option("--out", world_out, "Output directory")->required();

  // embed-corpus
  std::string ec_corpus, ec_out, ec_backend = "toy", ec_url;
  int ec_d1 = 0;
  unsigned ec_workers = 1;
  ConfigFlags ec_cfg;
  auto* embed = app.add_subcommand("embed-corpus", "Encode a text corpus into an embedding table");
  ec_cfg.attach(embed);
  embed->add_option("--corpus", ec_corpus, "Corpus file (plain text or JSONL {id,text})")->required()->check(CLI::ExistingFile);
  embed->add_option("--out", ec_out, "Table path")->required();
  embed->add_option("--backend", ec_backend, "toy or pretrained:<model-id>");
  embed->add_option("--d1", ec_d1, "Toy embedding width");
  embed->add_option("--encoder-url", ec_url, "Encoder service for pretrained backends");
  embed->add_option("--workers", ec_workers, "Encoding threads");

  // aggregate
  std::string ag_images, ag_table, ag_out;
  double ag_tau = 0.05;
  ConfigFlags ag_cfg;
  auto* aggregate_cmd = app.add_subcommand("aggregate", "Precompute corpus aggregate embeddings for each image");
  ag_cfg.attach(aggregate_cmd);
  aggregate_cmd->add_option("--images", ag_images, "Images JSONL")->required()->check(CLI::ExistingFile);
  aggregate_cmd->add_option("--corpus-table", ag_table, "Embedding table from embed-corpus")->required()->check(CLI::ExistingFile);
  aggregate_cmd->add_option("--tau", ag_tau, "Softmax temperature");
  aggregate_cmd->add_option("--out", ag_out, "Aggregate cache path")->required();

  // init-train
  ConfigFlags it_cfg;
  std::string it_out, it_log;
  auto* init_train = app.add_subcommand("init-train", "Reconstruction initialization of the generator on the corpus");
  it_cfg.attach(init_train);
  init_train->add_option("--out", it_out, "Checkpoint to write")->required();
  init_train->add_option("--log", it_log, "Per-step JSONL log");

  // train
  ConfigFlags tr_cfg;
  std::string tr_from, tr_out, tr_log;
  auto* train = app.add_subcommand("train", "Adversarial training (or pseudo-label training) from a checkpoint");
  tr_cfg.attach(train);
  train->add_option("--from", tr_from, "Checkpoint to start or resume from (init-train output or a partial run)")
      ->check(CLI::ExistingFile);
  train->add_option("--out", tr_out, "Checkpoint to write")->required();
  train->add_option("--log", tr_log, "Per-step JSONL log");

  // infer
  std::string in_ckpt, in_images, in_out;
  auto* infer = app.add_subcommand("infer", "Greedy captions for every image");
  infer->add_option("--checkpoint", in_ckpt, "Generator checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--images", in_images, "Images JSONL (default: data.images from the checkpoint config)");
  infer->add_option("--out", in_out, "Candidates JSONL")->required();

  // eval
  std::string ev_cands, ev_refs, ev_out, ev_ckpt;
  bool ev_no_external = false;
  auto* eval = app.add_subcommand("eval", "Score candidate captions against references");
  eval->add_option("--candidates", ev_cands, "Candidates JSONL {image_id, caption}")->required()->check(CLI::ExistingFile);
  eval->add_option("--refs", ev_refs, "References JSON {id: [captions]}")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", ev_out, "Report JSON (a CSV is written alongside)")->required();
  eval->add_option("--checkpoint", ev_ckpt, "Checkpoint the candidates came from (recorded in the report)");
  eval->add_flag("--no-external", ev_no_external, "Skip the METEOR/SPICE adapters");

  // baseline
  ConfigFlags bl_cfg;
  std::string bl_mode, bl_out;
  auto* baseline = app.add_subcommand("baseline", "Retrieval or pseudo-label baselines");
  bl_cfg.attach(baseline);
  baseline->add_option("--mode", bl_mode, "retrieval or pseudo")->required()->check(CLI::IsMember({"retrieval", "pseudo"}));
  baseline->add_option("--out", bl_out, "Output directory")->required();

  // explain
  std::string ex_ckpt, ex_image, ex_images;
  auto* explain = app.add_subcommand("explain", "Nearest vocabulary tokens for an image's visual prompts");
  explain->add_option("--checkpoint", ex_ckpt, "Generator checkpoint")->required()->check(CLI::ExistingFile);
  explain->add_option("--image", ex_image, "Image id")->required();
  explain->add_option("--images", ex_images, "Images JSONL (default: data.images from the checkpoint config)");

  // sweep
  ConfigFlags sw_cfg;
  std::vector<std::string> sw_grid;
  std::string sw_preset, sw_out;
  auto* sweep = app.add_subcommand("sweep", "One run per grid point, collated into sweep.csv");
  sw_cfg.attach(sweep);
  sweep->add_option("--grid", sw_grid, "Axis key=v1,v2,... (repeatable; cartesian product)");
  sweep->add_option("--preset", sw_preset, "combos, strategies or agg-terms")->check(CLI::IsMember({"combos", "strategies", "agg-terms"}));
  sweep->add_option("--out", sw_out, "Output directory")->required();

  // run
  ConfigFlags run_cfg;
  std::string run_out;
  auto* run = app.add_subcommand("run", "Initialization, training, inference and evaluation in one go");
  run_cfg.attach(run);
  run->add_option("--out", run_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const CLI::App* failed = &app;
    for (auto* sub : app.get_subcommands()) failed = sub;
    std::cerr << failed->help() << "\n";
    print_error("usage", e.what());
    return kUsageExit;
  }

  try {
    if (*world) {
      const auto cfg = world_cfg.resolve();
      const auto f = write_toy_world(cfg, world_out);
      print_summary({{"corpus", f.corpus.string()}, {"images", f.images.string()}, {"refs", f.refs.string()}});
    } else if (*embed) {
      std::vector<std::string> extra{"backend.kind=" + ec_backend};
      if (ec_d1 > 0) extra.push_back("backend.d1=" + std::to_string(ec_d1));
      if (!ec_url.empty()) extra.push_back("backend.encoder_url=" + ec_url);
      const auto cfg = ec_cfg.resolve(extra);
      const auto backend = make_backend(cfg);
      const auto corpus = load_corpus(ec_corpus);
      const auto table = build_corpus_table(*backend, corpus, ec_workers);
      save_table(table, ec_out, config_to_json(cfg));
      print_summary({{"table", ec_out}, {"rows", table.rows.size()}, {"dim", table.dim}, {"fingerprint", table.fingerprint}});
    } else if (*aggregate_cmd) {
      const auto table = load_table(ag_table);
      RunConfig cfg = ag_cfg.resolve({"reward.tau=" + config_detail::fmt(ag_tau)});
      const auto backend = make_backend(cfg);
      table.require_backend(*backend);
      const auto images = encode_images(*backend, load_images(ag_images));
      const auto set = compute_aggregates(images, table, ag_tau);
      save_aggregates(set, ag_out, {{"config", config_to_json(cfg)}, {"image_fingerprint", backend->image_fingerprint()}});
      print_summary({{"aggregates", ag_out}, {"count", set.rows.size()}, {"tau", ag_tau}});
    } else if (*init_train) {
      const auto cfg = it_cfg.resolve();
      const auto d = load_training_data(cfg);
      Trainer tr(cfg, corpus_vocab(d.data.corpus, cfg.generator.eos_token));
      auto log = open_log(it_log);
      const auto b = run_initialization(tr, d.data, cfg.init.enabled ? cfg.init.steps : 0,
                                        [&](const InitLog& l) { write_log_line(log.get(), to_json(l)); });
      save_checkpoint(b, it_out);
      print_summary({{"checkpoint", it_out}, {"reconstruction_loss", tr.mean_reconstruction_loss(d.data)}});
    } else if (*train) {
      auto cfg = tr_cfg.resolve();
      const auto d = load_training_data(cfg);
      std::unique_ptr<Trainer> tr;
      if (tr_from.empty()) {
        tr = std::make_unique<Trainer>(cfg, corpus_vocab(d.data.corpus, cfg.generator.eos_token));
      } else {
        tr = Trainer::from_bundle(load_checkpoint(tr_from), cfg);
      }
      const long remaining = std::max(0L, cfg.train.steps - tr->step());
      auto log = open_log(tr_log);
      CheckpointBundle b;
      if (cfg.train.mode == "pseudo") {
        b = run_pseudo(*tr, d.data, remaining, [&](const InitLog& l) { write_log_line(log.get(), to_json(l)); });
      } else {
        b = run_adversarial(*tr, d.data, remaining, [&](const StepLog& l) { write_log_line(log.get(), to_json(l)); });
      }
      save_checkpoint(b, tr_out);
      print_summary({{"checkpoint", tr_out},
                     {"steps", b.state.step},
                     {"skipped_generator_updates", b.state.skipped_generator_updates}});
    } else if (*infer || *explain) {
      const auto b = load_checkpoint(*infer ? in_ckpt : ex_ckpt);
      const auto tr = Trainer::from_bundle(b);
      const auto& cfg = tr->config();
      std::string images_path = *infer ? in_images : ex_images;
      if (images_path.empty()) images_path = cfg.data.images;
      if (images_path.empty()) throw InputError("no --images given and the checkpoint config has no data.images");
      const auto backend = make_backend(cfg);
      auto images = encode_images(*backend, load_images(images_path));
      if (*infer) {
        const auto rows = infer_captions(tr->generator(), images);
        save_candidates(rows, in_out);
        print_summary({{"candidates", in_out}, {"count", rows.size()}});
      } else {
        auto it = std::find_if(images.begin(), images.end(), [&](const auto& p) { return p.first == ex_image; });
        if (it == images.end()) throw InputError("image '" + ex_image + "' not found in " + images_path);
        const auto& gen = tr->generator();
        std::cout << to_json(explain_prompts(gen.map_prompts(it->second), gen.decoder().token_embeddings(), gen.vocab(),
                                             ex_image))
                         .dump(2)
                  << "\n";
      }
    } else if (*eval) {
      auto rep = evaluate(load_candidates(ev_cands), load_references(ev_refs), !ev_no_external);
      if (!ev_ckpt.empty()) {
        const auto b = load_checkpoint(ev_ckpt);
        rep.metadata["checkpoint"] = ev_ckpt;
        rep.config = b.config;
        rep.metadata["seed"] = b.config.value("run.seed", "");
      }
      rep.metadata["split"] = "candidates";
      emit_report(rep, ev_out);
      for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
      print_summary({{"report", ev_out}, {"scores", rep.scores}});
    } else if (*baseline) {
      auto cfg = bl_cfg.resolve();
      fs::create_directories(bl_out);
      const auto d = load_training_data(cfg);
      const auto labels = clip_retrieval(d.image_embeddings, d.table, *d.backend);
      if (bl_mode == "retrieval") {
        const fs::path out(bl_out);
        save_candidates(labels, out / "candidates.jsonl");
        if (cfg.data.refs.empty()) throw InputError("data.refs is needed to score the retrieval baseline");
        auto rep = evaluate(to_candidates(labels), load_references(cfg.data.refs), cfg.eval_external);
        rep.config = config_to_json(cfg);
        rep.metadata["seed"] = std::to_string(cfg.seed);
        rep.metadata["baseline"] = "retrieval";
        rep.metadata["mean_cos"] = format_number(mean_caption_cosine(*d.backend, d.image_embeddings, labels));
        emit_report(rep, out / "report.json");
        print_summary({{"report", (out / "report.json").string()}, {"scores", rep.scores}});
      } else {
        const fs::path out(bl_out);
        save_candidates(labels, out / "pseudo_labels.jsonl");
        apply_override(cfg, "train.mode=pseudo");
        apply_override(cfg, "data.pseudo_labels=" + (out / "pseudo_labels.jsonl").string());
        RunOptions opt;
        opt.out_dir = out;
        opt.evaluate_init = false;
        const auto s = run_pipeline(cfg, opt);
        print_summary({{"report", (out / "report.json").string()}, {"scores", s.report.scores}});
      }
    } else if (*sweep) {
      if (sw_grid.empty() == sw_preset.empty()) throw UsageError("sweep needs exactly one of --grid or --preset");
      const auto cfg = sw_cfg.resolve();
      const auto pts = sw_preset.empty() ? grid_points(sw_grid) : preset_points(sw_preset);
      const auto rows = run_sweep(cfg, pts, sw_out, [](const SweepRow& r) {
        io::json keys = r.keys;
        std::cerr << "sweep point " << keys.dump() << ": " << r.status << "\n";
      });
      std::size_t failed = 0;
      for (const auto& r : rows) failed += r.status != "ok";
      print_summary({{"csv", (fs::path(sw_out) / "sweep.csv").string()}, {"rows", rows.size()}, {"failed", failed}});
    } else if (*run) {
      const auto cfg = run_cfg.resolve();
      RunOptions opt;
      opt.out_dir = run_out;
      const auto s = run_pipeline(cfg, opt);
      print_summary({{"out", run_out},
                     {"init_loss", s.init_loss},
                     {"init_cos", s.init_cos},
                     {"final_cos", s.final_cos},
                     {"init_scores", s.init_report.scores},
                     {"scores", s.report.scores}});
    }
  } catch (const UsageError& e) {
    print_error("usage", e.what());
    return kUsageExit;
  } catch (const Error& e) {
    print_error(to_string(e.kind()), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
