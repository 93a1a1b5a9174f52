#pragma once

// Binary container shared by embedding tables, aggregate caches and
// checkpoints: an 8-byte magic, a little-endian u64 header length, a JSON
// header, then a raw little-endian payload whose size the header records.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "uic/error.hpp"
#include "uic/rng.hpp"

namespace uic::io {

using json = nlohmann::json;

inline constexpr std::string_view kMagic = "UICBIN01";

class ByteWriter {
 public:
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { bytes_.append(s); }

  const std::string& bytes() const { return bytes_; }
  std::string take() { return std::move(bytes_); }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("unexpected end of binary payload");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

/// Writes via a sibling temporary and rename, so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("short write to " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

struct Container {
  json header;
  std::string payload;
};

inline std::string encode_container(json header, std::string_view payload) {
  header["payload_bytes"] = payload.size();
  const std::string h = header.dump();
  ByteWriter w;
  w.raw(kMagic);
  w.u64(h.size());
  w.raw(h);
  w.raw(payload);
  return w.take();
}

inline Container decode_container(std::string_view data, std::string_view expected_format) {
  ByteReader r(data);
  if (data.size() < kMagic.size() || r.raw(kMagic.size()) != kMagic)
    throw FormatError("bad magic; not a uic container");
  const auto hlen = r.u64();
  if (hlen > r.remaining()) throw FormatError("truncated container header");
  Container c;
  try {
    c.header = json::parse(r.raw(hlen));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed container header: ") + e.what());
  }
  if (!c.header.is_object() || c.header.value("format", "") != expected_format)
    throw FormatError("container format is not " + std::string(expected_format));
  const auto plen = c.header.value("payload_bytes", std::uint64_t{0});
  if (r.remaining() != plen) throw FormatError("container payload size mismatch (truncated or padded file)");
  c.payload = std::string(r.raw(plen));
  return c;
}

inline void write_container(const std::filesystem::path& path, json header, std::string_view payload) {
  write_file_atomic(path, encode_container(std::move(header), payload));
}

inline Container read_container(const std::filesystem::path& path, std::string_view expected_format) {
  return decode_container(read_file(path), expected_format);
}

/// Reads a JSONL file; blank lines are skipped.
inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception&) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON line");
    }
  }
  return rows;
}

inline std::string to_jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace uic::io
