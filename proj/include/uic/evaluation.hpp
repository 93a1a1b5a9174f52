#pragma once

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uic/binary_io.hpp"
#include "uic/embeddings.hpp"
#include "uic/error.hpp"
#include "uic/metrics.hpp"

namespace uic {

using ReferenceSet = metrics::References;
using CandidateSet = metrics::Captions;

inline ReferenceSet load_references(const std::filesystem::path& path) {
  io::json j;
  try {
    j = io::json::parse(io::read_file(path));
  } catch (const io::json::parse_error&) {
    throw InputError("reference file " + path.string() + " is not valid JSON");
  }
  if (!j.is_object()) throw InputError("reference file must be a JSON object of id -> [captions]");
  ReferenceSet refs;
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto list = it.value().get<std::vector<std::string>>();
    if (list.empty()) throw InputError("image '" + it.key() + "' has an empty reference list");
    refs.emplace(it.key(), std::move(list));
  }
  return refs;
}

inline void save_references(const ReferenceSet& refs, const std::filesystem::path& path) {
  io::json j = io::json::object();
  for (const auto& [id, list] : refs) j[id] = list;
  io::write_file_atomic(path, j.dump(1) + "\n");
}

/// JSONL of {image_id, caption}.
inline CandidateSet load_candidates(const std::filesystem::path& path) {
  CandidateSet c;
  for (const auto& row : io::read_jsonl(path)) {
    auto id = row.at("image_id").get<std::string>();
    if (!c.emplace(id, row.at("caption").get<std::string>()).second)
      throw InputError("duplicate candidate for image '" + id + "'");
  }
  return c;
}

inline void save_candidates(const std::vector<std::pair<std::string, std::string>>& rows,
                            const std::filesystem::path& path) {
  std::vector<io::json> out;
  for (const auto& [id, cap] : rows) out.push_back({{"image_id", id}, {"caption", cap}});
  io::write_file_atomic(path, io::to_jsonl(out));
}

// ---------------------------------------------------------------------------
// external METEOR / SPICE

/// Runs the official Java scorers when their jars are configured (UIC_METEOR_JAR,
/// UIC_SPICE_JAR) and a JVM is on PATH; otherwise reports them unavailable.
class ExternalScorers {
 public:
  ExternalScorers() {
    if (const char* m = std::getenv("UIC_METEOR_JAR")) meteor_jar_ = m;
    if (const char* s = std::getenv("UIC_SPICE_JAR")) spice_jar_ = s;
  }

  static bool java_available() { return std::system("java -version >/dev/null 2>&1") == 0; }

  std::optional<double> meteor(const CandidateSet& cands, const ReferenceSet& refs) const {
    if (meteor_jar_.empty() || !std::filesystem::exists(meteor_jar_) || !java_available()) return std::nullopt;
    std::size_t max_refs = 0;
    for (const auto& [id, c] : cands) max_refs = std::max(max_refs, refs.at(id).size());
    const auto dir = scratch();
    std::ofstream test(dir / "test.txt"), ref(dir / "ref.txt");
    for (const auto& [id, c] : cands) {
      test << join(metrics::ptb_tokenize(c)) << "\n";
      const auto& rs = refs.at(id);
      for (std::size_t i = 0; i < max_refs; ++i) ref << join(metrics::ptb_tokenize(rs[i % rs.size()])) << "\n";
    }
    test.close();
    ref.close();
    const auto out = run("java -Xmx2G -jar '" + meteor_jar_ + "' '" + (dir / "test.txt").string() + "' '" +
                         (dir / "ref.txt").string() + "' -l en -norm -r " + std::to_string(max_refs));
    std::filesystem::remove_all(dir);
    if (!out) return std::nullopt;
    const auto pos = out->rfind("Final score:");
    if (pos == std::string::npos) return std::nullopt;
    return std::strtod(out->c_str() + pos + 12, nullptr);
  }

  std::optional<double> spice(const CandidateSet& cands, const ReferenceSet& refs) const {
    if (spice_jar_.empty() || !std::filesystem::exists(spice_jar_) || !java_available()) return std::nullopt;
    const auto dir = scratch();
    io::json in = io::json::array();
    for (const auto& [id, c] : cands) in.push_back({{"image_id", id}, {"test", c}, {"refs", refs.at(id)}});
    std::ofstream(dir / "in.json") << in.dump();
    const auto out = run("java -Xmx8G -jar '" + spice_jar_ + "' '" + (dir / "in.json").string() + "' -out '" +
                         (dir / "out.json").string() + "' -silent");
    std::optional<double> score;
    if (out && std::filesystem::exists(dir / "out.json")) {
      try {
        const auto res = io::json::parse(io::read_file(dir / "out.json"));
        double s = 0.0;
        for (const auto& r : res) s += r.at("scores").at("All").at("f").get<double>();
        if (!res.empty()) score = s / static_cast<double>(res.size());
      } catch (const std::exception&) {
      }
    }
    std::filesystem::remove_all(dir);
    return score;
  }

 private:
  static std::string join(const std::vector<std::string>& t) {
    std::string s;
    for (const auto& w : t) s += (s.empty() ? "" : " ") + w;
    return s;
  }
  static std::filesystem::path scratch() {
    auto d = std::filesystem::temp_directory_path() / ("uic-ext-" + std::to_string(::getpid()));
    std::filesystem::create_directories(d);
    return d;
  }
  static std::optional<std::string> run(const std::string& cmd) {
    FILE* p = ::popen((cmd + " 2>/dev/null").c_str(), "r");
    if (!p) return std::nullopt;
    std::string out;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
    if (::pclose(p) != 0) return std::nullopt;
    return out;
  }

  std::string meteor_jar_, spice_jar_;
};

// ---------------------------------------------------------------------------
// reports

struct MetricReport {
  std::map<std::string, double> scores;                  // BLEU-4, ROUGE-L, CIDEr
  std::map<std::string, std::optional<double>> external;  // METEOR, SPICE (nullopt = unavailable)
  std::map<std::string, double> per_image_cider;
  std::map<std::string, std::string> metadata;           // checkpoint, split, timestamp
  std::map<std::string, std::string> row_keys;           // sweep grid values
  io::json config = nullptr;
  std::vector<std::string> warnings;

  bool operator==(const MetricReport&) const = default;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline MetricReport evaluate(const CandidateSet& cands, const ReferenceSet& refs, bool run_external = true) {
  if (cands.empty()) throw InputError("no candidate captions to evaluate");
  // restrict references to candidate ids; every candidate must have references
  MetricReport r;
  r.scores["BLEU-4"] = metrics::bleu4(cands, refs);
  r.scores["ROUGE-L"] = metrics::rouge_l(cands, refs).corpus;
  if (cands.size() < 2) r.warnings.push_back("CIDEr over a single image: document frequencies are degenerate");
  auto c = metrics::cider(cands, refs);
  r.scores["CIDEr"] = c.corpus;
  r.per_image_cider = std::move(c.per_image);
  ExternalScorers ext;
  r.external["METEOR"] = run_external ? ext.meteor(cands, refs) : std::nullopt;
  r.external["SPICE"] = run_external ? ext.spice(cands, refs) : std::nullopt;
  return r;
}

inline io::json report_to_json(const MetricReport& r) {
  io::json ext = io::json::object();
  for (const auto& [k, v] : r.external) ext[k] = v ? io::json(*v) : io::json("unavailable");
  return {{"format", "uic-metric-report"}, {"version", 1},         {"scores", r.scores},
          {"external", ext},               {"per_image_cider", r.per_image_cider},
          {"metadata", r.metadata},        {"row_keys", r.row_keys}, {"config", r.config},
          {"warnings", r.warnings}};
}

inline MetricReport report_from_json(const io::json& j) {
  if (j.value("format", "") != "uic-metric-report") throw FormatError("not a metric report");
  MetricReport r;
  r.scores = j.at("scores").get<std::map<std::string, double>>();
  for (auto it = j.at("external").begin(); it != j.at("external").end(); ++it)
    r.external[it.key()] = it.value().is_number() ? std::optional<double>(it.value().get<double>()) : std::nullopt;
  r.per_image_cider = j.at("per_image_cider").get<std::map<std::string, double>>();
  r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
  r.row_keys = j.at("row_keys").get<std::map<std::string, std::string>>();
  r.config = j.at("config");
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

inline const std::vector<std::string>& report_metric_columns() {
  static const std::vector<std::string> cols = {"BLEU-4", "ROUGE-L", "CIDEr", "METEOR", "SPICE"};
  return cols;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char c : s) {
    if (c == '"') o += '"';
    o += c;
  }
  return o + "\"";
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

/// CSV header + row: row keys (sorted), then the metric columns, then status.
inline std::pair<std::string, std::string> report_csv(const MetricReport& r, const std::string& status = "ok") {
  std::string head, row;
  for (const auto& [k, v] : r.row_keys) {
    head += csv_escape(k) + ",";
    row += csv_escape(v) + ",";
  }
  for (const auto& m : report_metric_columns()) {
    head += m + ",";
    if (auto it = r.scores.find(m); it != r.scores.end()) {
      row += format_number(it->second);
    } else if (auto e = r.external.find(m); e != r.external.end() && e->second) {
      row += format_number(*e->second);
    } else {
      row += "unavailable";
    }
    row += ",";
  }
  head += "status";
  row += csv_escape(status);
  return {head, row};
}

/// Writes the JSON report to `path` and a one-row CSV next to it (`path` with .csv).
inline void emit_report(MetricReport report, const std::filesystem::path& path) {
  if (report.per_image_cider.empty() || report.scores.empty())
    throw InputError("refusing to emit a report with no evaluated candidates");
  if (!report.metadata.count("timestamp")) report.metadata["timestamp"] = utc_timestamp();
  io::write_file_atomic(path, report_to_json(report).dump(2) + "\n");
  auto csv = path;
  csv.replace_extension(".csv");
  const auto [h, r] = report_csv(report);
  io::write_file_atomic(csv, h + "\n" + r + "\n");
}

inline MetricReport read_report(const std::filesystem::path& path) {
  return report_from_json(io::json::parse(io::read_file(path)));
}

// ---------------------------------------------------------------------------
// simpler CLIP baselines

using ImageEmbeddings = std::vector<std::pair<std::string, EmbeddingVector>>;

/// Corpus sentence with maximal cosine to each image; ties go to the lowest row.
inline std::vector<std::pair<std::string, std::string>> clip_retrieval(const ImageEmbeddings& images,
                                                                       const CorpusEmbeddingTable& table,
                                                                       const EmbeddingBackend& backend) {
  table.require_backend(backend);
  if (table.rows.empty()) throw InputError("retrieval needs a nonempty corpus table");
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [id, e] : images) {
    std::size_t best = 0;
    double best_cos = -2.0;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const double c = cosine(table.rows[i].embedding.values, e.values);
      if (c > best_cos) {
        best_cos = c;
        best = i;
      }
    }
    out.emplace_back(id, table.rows[best].text);
  }
  return out;
}

inline CandidateSet clip_retrieval_baseline(const ImageEmbeddings& images, const CorpusEmbeddingTable& table,
                                            const EmbeddingBackend& backend) {
  CandidateSet c;
  for (auto& [id, cap] : clip_retrieval(images, table, backend)) c.emplace(id, cap);
  return c;
}

/// Retrieval applied to the training images, as supervised-style (image id, caption) pairs.
inline std::vector<std::pair<std::string, std::string>> clip_pseudo_labels(const ImageEmbeddings& train_images,
                                                                           const CorpusEmbeddingTable& table,
                                                                           const EmbeddingBackend& backend) {
  return clip_retrieval(train_images, table, backend);
}

}  // namespace uic
