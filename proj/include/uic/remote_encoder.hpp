#pragma once

// Adapter for a pretrained contrastive encoder served over HTTP.
//   GET  /info    -> {"model": str, "dim": int, "version": str}
//   POST /encode  {"model": str, "kind": "text"|"image", "inputs": [str]} -> {"embeddings": [[float]]}
// Image inputs are file paths resolved by the server.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <httplib.h>

#include "uic/embeddings.hpp"
#include "uic/error.hpp"

namespace uic {

class RemoteBackend final : public EmbeddingBackend {
 public:
  RemoteBackend(std::string url, std::string model) : url_(std::move(url)), model_(std::move(model)) {
    const auto info = request_json("GET", "/info", nullptr);
    try {
      dim_ = info.at("dim").get<std::size_t>();
      version_ = info.value("version", std::string("unknown"));
      if (info.value("model", model_) != model_)
        throw StateError("encoder server at " + url_ + " serves '" + info.value("model", "") + "', not '" + model_ + "'");
    } catch (const io::json::exception& e) {
      throw StateError("encoder server at " + url_ + " returned malformed /info: " + e.what());
    }
    if (dim_ == 0) throw StateError("encoder server reported dimension 0");
  }

  std::string fingerprint() const override { return "pretrained:" + model_ + ":" + version_; }
  std::size_t dim() const override { return dim_; }

  EmbeddingVector encode_text(const SentenceRecord& s) const override {
    return encode("text", std::vector<std::string>{s.text}).at(0);
  }
  using EmbeddingBackend::encode_text;

  EmbeddingVector encode_image(const ImageRecord& image) const override {
    const auto* file = std::get_if<ImageFilePayload>(&image.payload);
    if (!file) throw InputError("pretrained backend needs an image path for '" + image.id + "'");
    return encode("image", std::vector<std::string>{file->path.string()}).at(0);
  }

  std::vector<EmbeddingVector> encode_texts(std::span<const std::string> texts) const override {
    return encode("text", std::vector<std::string>(texts.begin(), texts.end()));
  }

 private:
  std::vector<EmbeddingVector> encode(const char* kind, const std::vector<std::string>& inputs) const {
    if (inputs.empty()) return {};
    io::json body = {{"model", model_}, {"kind", kind}, {"inputs", inputs}};
    const auto j = request_json("POST", "/encode", &body);
    std::vector<EmbeddingVector> out;
    try {
      const auto& rows = j.at("embeddings");
      if (rows.size() != inputs.size()) throw StateError("encoder server returned the wrong number of embeddings");
      for (const auto& row : rows) {
        auto raw = row.get<std::vector<double>>();
        if (raw.size() != dim_) throw StateError("encoder server returned an embedding of the wrong dimension");
        out.push_back(normalize(raw));
      }
    } catch (const io::json::exception& e) {
      throw StateError(std::string("encoder server returned a malformed /encode response: ") + e.what());
    }
    return out;
  }

  io::json request_json(const char* method, const char* path, const io::json* body) const {
    httplib::Client cli(url_);
    cli.set_connection_timeout(5);
    cli.set_read_timeout(120);
    auto res = body ? cli.Post(path, body->dump(), "application/json") : cli.Get(path);
    if (!res) throw StateError("encoder server " + url_ + " is unreachable (" + httplib::to_string(res.error()) + ")");
    if (res->status != 200)
      throw StateError(std::string(method) + " " + path + " on " + url_ + " failed with HTTP " + std::to_string(res->status));
    try {
      return io::json::parse(res->body);
    } catch (const io::json::parse_error&) {
      throw StateError(std::string("encoder server returned non-JSON from ") + path);
    }
  }

  std::string url_, model_, version_;
  std::size_t dim_ = 0;
};

}  // namespace uic
