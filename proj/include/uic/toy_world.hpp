#pragma once

// A synthetic captioning world: a small vocabulary with disjoint word
// classes, a three-template grammar, and images that are latent draws of a
// hidden grammatical caption. Every sentence is recoverable from its bag of
// words, so a bag-of-tokens encoder carries all of its content.

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uic/error.hpp"
#include "uic/rng.hpp"
#include "uic/text.hpp"

namespace uic::toy {

struct ToyWorldSpec {
  int vocab_size = 50;
  int d1 = 64;
  std::uint64_t projection_seed = 7;
  double image_noise = 0.1;
  bool orthogonal_rows = false;

  void validate() const {
    if (vocab_size < 2) throw InputError("toy vocabulary size must be >= 2");
    if (d1 < 4) throw InputError("toy embedding dimension must be >= 4");
    if (image_noise < 0.0) throw InputError("toy image noise scale must be nonnegative");
    if (orthogonal_rows && d1 < vocab_size)
      throw InputError("orthogonal toy projection needs d1 >= vocabulary size");
  }
};

enum class WordClass : int { adjective = 0, subject, verb, preposition, object, count };

namespace detail {
inline const std::array<std::vector<std::string>, 5>& word_lists() {
  static const std::array<std::vector<std::string>, 5> lists = {{
      {"red", "small", "old", "young", "happy", "brown", "large", "white", "black", "wet",
       "tall", "tiny", "green", "fast", "quiet"},
      {"dog", "cat", "man", "woman", "child", "horse", "bird", "boy", "girl", "cow", "sheep",
       "bear", "duck", "goat", "fox"},
      {"runs", "sits", "stands", "walks", "sleeps", "plays", "waits", "jumps", "eats", "rests",
       "looks", "lies", "swims", "reads", "rides"},
      {"in", "on", "near", "under", "behind", "beside", "across", "through", "over", "along",
       "inside", "above", "past", "around", "toward"},
      {"park", "street", "field", "beach", "kitchen", "room", "lake", "road", "garden", "forest",
       "table", "bench", "hill", "river", "yard"},
  }};
  return lists;
}
}  // namespace detail

/// Deterministic vocabulary: ".", "a", "the", then content words dealt round-robin over the classes.
struct Vocabulary {
  std::vector<std::string> words;
  std::array<std::vector<int>, 5> classes;

  static Vocabulary make(int size) {
    if (size < 2) throw InputError("toy vocabulary size must be >= 2");
    Vocabulary v;
    v.words = {".", "a", "the"};
    v.words.resize(std::min<std::size_t>(v.words.size(), static_cast<std::size_t>(size)));
    std::array<std::size_t, 5> used{};
    int cls = 0;
    while (static_cast<int>(v.words.size()) < size) {
      const auto& list = detail::word_lists()[static_cast<std::size_t>(cls)];
      std::size_t i = used[static_cast<std::size_t>(cls)]++;
      std::string w = i < list.size() ? list[i] : list[i % list.size()] + std::to_string(i / list.size());
      v.classes[static_cast<std::size_t>(cls)].push_back(static_cast<int>(v.words.size()));
      v.words.push_back(std::move(w));
      cls = (cls + 1) % 5;
    }
    return v;
  }

  bool supports_grammar() const {
    for (const auto& c : classes)
      if (c.empty()) return false;
    return words.size() >= 3;
  }
};

/// Samples a grammatical sentence as word indices (terminated by ".").
inline std::vector<int> sample_sentence(const Vocabulary& v, Rng& rng) {
  if (!v.supports_grammar()) throw InputError("toy vocabulary too small for the grammar (need >= 8 words)");
  auto pick = [&](WordClass c) {
    const auto& ids = v.classes[static_cast<std::size_t>(c)];
    return ids[rng.below(ids.size())];
  };
  constexpr int kDot = 0, kA = 1, kThe = 2;
  const std::size_t tmpl = rng.below(3);
  std::vector<int> s{kA};
  if (tmpl != 1) s.push_back(pick(WordClass::adjective));
  s.push_back(pick(WordClass::subject));
  s.push_back(pick(WordClass::verb));
  if (tmpl != 2) {
    s.push_back(pick(WordClass::preposition));
    s.push_back(kThe);
    s.push_back(pick(WordClass::object));
  }
  s.push_back(kDot);
  return s;
}

inline std::string render(const Vocabulary& v, const std::vector<int>& ids) {
  std::vector<std::string> toks;
  toks.reserve(ids.size());
  for (int i : ids) toks.push_back(v.words.at(static_cast<std::size_t>(i)));
  return text::detokenize(toks);
}

struct ToyImage {
  std::string id;
  std::string hidden_caption;
  std::uint64_t noise_seed = 0;
};

struct ToyData {
  std::vector<std::pair<std::string, std::string>> corpus;  // (id, text)
  std::vector<ToyImage> images;
};

/// Corpus and images are drawn from independent streams, so the pairing is never observed.
inline ToyData generate(const Vocabulary& v, int corpus_size, int num_images, std::uint64_t seed) {
  ToyData d;
  Rng corpus_rng(derive_seed(seed, "toy-corpus"));
  Rng image_rng(derive_seed(seed, "toy-images"));
  for (int i = 0; i < corpus_size; ++i)
    d.corpus.emplace_back("s" + std::to_string(i), render(v, sample_sentence(v, corpus_rng)));
  for (int i = 0; i < num_images; ++i) {
    ToyImage img;
    img.id = "img" + std::to_string(i);
    img.hidden_caption = render(v, sample_sentence(v, image_rng));
    img.noise_seed = image_rng.next_u64();
    d.images.push_back(std::move(img));
  }
  return d;
}

}  // namespace uic::toy
