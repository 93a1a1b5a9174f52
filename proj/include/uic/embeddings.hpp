#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

#include "uic/binary_io.hpp"
#include "uic/error.hpp"
#include "uic/rng.hpp"
#include "uic/text.hpp"
#include "uic/toy_world.hpp"

namespace uic {

/// A vector in the shared contrastive space. Stored as float32, which is also the on-disk precision.
struct EmbeddingVector {
  std::vector<float> values;
  bool normalized = false;

  std::size_t dim() const { return values.size(); }
  bool operator==(const EmbeddingVector&) const = default;
};

inline double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw InputError("dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

inline double l2_norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

inline double cosine(std::span<const float> a, std::span<const float> b) {
  const double d = dot(a, b);
  const double na = l2_norm(a), nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return d / (na * nb);
}

inline EmbeddingVector normalize(const std::vector<double>& raw) {
  double n2 = 0.0;
  for (double x : raw) n2 += x * x;
  if (!(n2 > 0.0) || !std::isfinite(n2)) throw StateError("cannot normalize a zero or non-finite embedding");
  const double inv = 1.0 / std::sqrt(n2);
  EmbeddingVector v;
  v.values.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) v.values[i] = static_cast<float>(raw[i] * inv);
  v.normalized = true;
  return v;
}

struct ToyImagePayload {
  std::string hidden_caption;
  std::uint64_t noise_seed = 0;
};

struct ImageFilePayload {
  std::filesystem::path path;
};

struct ImageRecord {
  std::string id;
  std::variant<ToyImagePayload, ImageFilePayload> payload;
};

struct SentenceRecord {
  std::string id;
  std::string text;
};

/// Uniform encoder interface. Implementations are immutable after construction.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  /// Identifies the text encoder; tables built by a different encoder are rejected.
  virtual std::string fingerprint() const = 0;
  /// Identifies the image encoder (including any image-side parameters).
  virtual std::string image_fingerprint() const { return fingerprint(); }
  virtual std::size_t dim() const = 0;
  virtual EmbeddingVector encode_text(const SentenceRecord& sentence) const = 0;
  virtual EmbeddingVector encode_image(const ImageRecord& image) const = 0;

  /// Batch text encoding; the default loops, remote backends override to batch requests.
  virtual std::vector<EmbeddingVector> encode_texts(std::span<const std::string> texts) const {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(encode_text({"", t}));
    return out;
  }

  EmbeddingVector encode_text(std::string_view s) const { return encode_text(SentenceRecord{"", std::string(s)}); }
};

/// Seeded random projection of token counts. Vocabulary words index fixed rows;
/// out-of-vocabulary tokens get rows seeded by their hash.
class ToyBackend final : public EmbeddingBackend {
 public:
  explicit ToyBackend(toy::ToyWorldSpec spec) : spec_(spec), vocab_(toy::Vocabulary::make(spec.vocab_size)) {
    spec_.validate();
    const auto d = static_cast<std::size_t>(spec_.d1);
    Rng rng(derive_seed(spec_.projection_seed, "toy-projection"));
    rows_.resize(vocab_.words.size(), std::vector<double>(d));
    for (auto& row : rows_)
      for (auto& x : row) x = rng.normal();
    if (spec_.orthogonal_rows) orthonormalize();
    for (std::size_t i = 0; i < vocab_.words.size(); ++i) index_.emplace(vocab_.words[i], i);
  }

  const toy::ToyWorldSpec& spec() const { return spec_; }
  const toy::Vocabulary& vocabulary() const { return vocab_; }

  std::string fingerprint() const override {
    return "toy-v1:V=" + std::to_string(spec_.vocab_size) + ":d1=" + std::to_string(spec_.d1) +
           ":seed=" + std::to_string(spec_.projection_seed) + ":orth=" + (spec_.orthogonal_rows ? "1" : "0");
  }

  std::string image_fingerprint() const override {
    std::ostringstream os;
    os.precision(17);
    os << fingerprint() << ":noise=" << spec_.image_noise;
    return os.str();
  }

  std::size_t dim() const override { return static_cast<std::size_t>(spec_.d1); }

  std::vector<double> projection_row(const std::string& token) const {
    if (auto it = index_.find(token); it != index_.end()) return rows_[it->second];
    Rng rng(derive_seed(spec_.projection_seed, "oov:" + token));
    std::vector<double> row(dim());
    for (auto& x : row) x = rng.normal();
    return row;
  }

  EmbeddingVector encode_text(const SentenceRecord& sentence) const override {
    return normalize(raw_text(sentence.text));
  }
  using EmbeddingBackend::encode_text;

  EmbeddingVector encode_image(const ImageRecord& image) const override {
    const auto* toy = std::get_if<ToyImagePayload>(&image.payload);
    if (!toy) throw InputError("toy backend cannot resolve image '" + image.id + "': not a toy payload");
    EmbeddingVector text = encode_text(SentenceRecord{image.id, toy->hidden_caption});
    if (spec_.image_noise == 0.0) return text;
    // Per-component scale noise/sqrt(d1) gives the noise vector an expected norm of about `noise`.
    Rng rng(derive_seed(toy->noise_seed, "toy-image-noise"));
    const double sd = spec_.image_noise / std::sqrt(static_cast<double>(dim()));
    std::vector<double> raw(dim());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<double>(text.values[i]) + sd * rng.normal();
    return normalize(raw);
  }

 private:
  std::vector<double> raw_text(const std::string& s) const {
    const auto tokens = text::word_tokens(s);
    if (tokens.empty()) throw InputError("cannot encode empty text");
    std::map<std::string, int> counts;
    for (const auto& t : tokens) ++counts[t];
    std::vector<double> acc(dim(), 0.0);
    for (const auto& [tok, c] : counts) {
      const auto row = projection_row(tok);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += c * row[i];
    }
    return acc;
  }

  void orthonormalize() {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        double p = 0.0;
        for (std::size_t t = 0; t < dim(); ++t) p += rows_[i][t] * rows_[j][t];
        for (std::size_t t = 0; t < dim(); ++t) rows_[i][t] -= p * rows_[j][t];
      }
      double n = 0.0;
      for (double x : rows_[i]) n += x * x;
      n = std::sqrt(n);
      for (double& x : rows_[i]) x /= n;
    }
  }

  toy::ToyWorldSpec spec_;
  toy::Vocabulary vocab_;
  std::vector<std::vector<double>> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct CorpusRow {
  std::string id;
  std::string text;
  EmbeddingVector embedding;
  bool operator==(const CorpusRow&) const = default;
};

struct CorpusEmbeddingTable {
  std::string fingerprint;
  std::size_t dim = 0;
  std::vector<CorpusRow> rows;

  std::size_t size() const { return rows.size(); }
  bool operator==(const CorpusEmbeddingTable&) const = default;

  void require_backend(const EmbeddingBackend& backend) const {
    if (fingerprint != backend.fingerprint())
      throw StateError("corpus table fingerprint '" + fingerprint + "' does not match backend '" +
                       backend.fingerprint() + "'");
    if (dim != backend.dim()) throw StateError("corpus table dimension does not match backend");
  }

  /// Digest of fingerprint, ids and vector bits; keys derived caches.
  std::uint64_t content_digest() const {
    std::uint64_t h = fnv1a64(fingerprint);
    for (const auto& r : rows) {
      h = fnv1a64(r.id, h);
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(r.embedding.values.data()),
                                   r.embedding.values.size() * sizeof(float)),
                  h);
    }
    return h;
  }
};

/// Encodes the corpus in input order; `workers` > 1 splits rows across threads writing disjoint slots.
inline CorpusEmbeddingTable build_corpus_table(const EmbeddingBackend& backend,
                                               const std::vector<SentenceRecord>& corpus,
                                               unsigned workers = 1) {
  if (corpus.empty()) throw InputError("corpus is empty");
  CorpusEmbeddingTable table;
  table.fingerprint = backend.fingerprint();
  table.dim = backend.dim();
  table.rows.resize(corpus.size());
  std::vector<std::string> failures(corpus.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < corpus.size(); i += stride) {
      try {
        table.rows[i] = CorpusRow{corpus[i].id, corpus[i].text, backend.encode_text(corpus[i])};
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(corpus.size())));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (!failures[i].empty()) throw InputError("failed to encode sentence '" + corpus[i].id + "': " + failures[i]);
  return table;
}

inline constexpr std::string_view kTableFormat = "uic-embedding-table";

inline std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".jsonl";
  return p;
}

/// Binary vectors plus a JSONL sidecar of (id, text).
inline void save_table(const CorpusEmbeddingTable& table, const std::filesystem::path& path,
                       const io::json& provenance = nullptr) {
  io::ByteWriter w;
  std::vector<io::json> side;
  for (const auto& r : table.rows) {
    for (float x : r.embedding.values) w.f32(x);
    side.push_back({{"id", r.id}, {"text", r.text}});
  }
  io::json header = {{"format", kTableFormat}, {"version", 1}, {"fingerprint", table.fingerprint},
                     {"d1", table.dim}, {"count", table.rows.size()}};
  if (!provenance.is_null()) header["provenance"] = provenance;
  io::write_file_atomic(sidecar_path(path), io::to_jsonl(side));
  io::write_container(path, header, w.bytes());
}

inline CorpusEmbeddingTable load_table(const std::filesystem::path& path) {
  const auto c = io::read_container(path, kTableFormat);
  const auto& h = c.header;
  if (h.value("version", 0) != 1) throw FormatError("unsupported embedding table version");
  CorpusEmbeddingTable t;
  t.fingerprint = h.at("fingerprint").get<std::string>();
  t.dim = h.at("d1").get<std::size_t>();
  const auto count = h.at("count").get<std::size_t>();
  if (c.payload.size() != count * t.dim * sizeof(float)) throw FormatError("embedding table payload size mismatch");
  const auto side = io::read_jsonl(sidecar_path(path));
  if (side.size() != count) throw FormatError("embedding table sidecar row count mismatch");
  io::ByteReader r(c.payload);
  t.rows.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& row = t.rows[i];
    row.id = side[i].at("id").get<std::string>();
    row.text = side[i].at("text").get<std::string>();
    row.embedding.values.resize(t.dim);
    for (auto& x : row.embedding.values) x = r.f32();
    row.embedding.normalized = true;
  }
  return t;
}

/// One sentence per line (ids "line-N", 1-based), or JSONL with {id, text} when the path ends in .jsonl.
inline std::vector<SentenceRecord> load_corpus(const std::filesystem::path& path) {
  std::vector<SentenceRecord> out;
  if (path.extension() == ".jsonl") {
    for (const auto& row : io::read_jsonl(path)) {
      if (!row.contains("id") || !row.contains("text")) throw InputError("corpus JSONL rows need id and text");
      out.push_back({row["id"].get<std::string>(), row["text"].get<std::string>()});
    }
  } else {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      auto t = text::trim(line);
      if (!t.empty()) out.push_back({"line-" + std::to_string(n), t});
    }
  }
  std::set<std::string> seen;
  for (const auto& s : out) {
    if (text::word_tokens(s.text).empty()) throw InputError("sentence '" + s.id + "' has no tokens");
    if (!seen.insert(s.id).second) throw InputError("duplicate sentence id '" + s.id + "'");
  }
  return out;
}

inline io::json image_to_json(const ImageRecord& img) {
  if (const auto* t = std::get_if<ToyImagePayload>(&img.payload))
    return {{"id", img.id}, {"toy", {{"caption", t->hidden_caption}, {"noise_seed", t->noise_seed}}}};
  return {{"id", img.id}, {"path", std::get<ImageFilePayload>(img.payload).path.string()}};
}

/// JSONL of {id, toy: {caption, noise_seed}} or {id, path}.
inline std::vector<ImageRecord> load_images(const std::filesystem::path& path) {
  std::vector<ImageRecord> out;
  std::set<std::string> seen;
  for (const auto& row : io::read_jsonl(path)) {
    ImageRecord img;
    img.id = row.at("id").get<std::string>();
    if (row.contains("toy")) {
      img.payload = ToyImagePayload{row["toy"].at("caption").get<std::string>(),
                                    row["toy"].at("noise_seed").get<std::uint64_t>()};
    } else if (row.contains("path")) {
      img.payload = ImageFilePayload{row["path"].get<std::string>()};
    } else {
      throw InputError("image '" + img.id + "' has neither a toy payload nor a path");
    }
    if (!seen.insert(img.id).second) throw InputError("duplicate image id '" + img.id + "'");
    out.push_back(std::move(img));
  }
  return out;
}

inline void save_images(const std::vector<ImageRecord>& images, const std::filesystem::path& path) {
  std::vector<io::json> rows;
  for (const auto& i : images) rows.push_back(image_to_json(i));
  io::write_file_atomic(path, io::to_jsonl(rows));
}

}  // namespace uic
