#pragma once

// Corpus caption metrics following the COCO caption evaluation toolkit:
// BLEU-4 (closest reference length, corpus-level), ROUGE-L (β = 1.2) and
// CIDEr-D (σ = 6, clipped tf-idf, ×10). Inputs are tokenized first with a
// PTB-style tokenizer that lowercases and drops punctuation.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "uic/error.hpp"

namespace uic::metrics {

using Captions = std::map<std::string, std::string>;                // image id → caption
using References = std::map<std::string, std::vector<std::string>>;  // image id → references

/// Lowercase, split punctuation and clitics, then drop punctuation tokens.
inline std::vector<std::string> ptb_tokenize(std::string_view s) {
  std::string low;
  low.reserve(s.size());
  for (char c : s) low.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  std::vector<std::string> raw;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) raw.push_back(cur);
    cur.clear();
  };
  auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  for (std::size_t i = 0; i < low.size(); ++i) {
    const char c = low[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (std::string_view(",;:!?()[]{}\"`").find(c) != std::string_view::npos) {
      flush();
      raw.emplace_back(1, c);
    } else if (c == '.') {
      // keep decimal points and internal periods ("3.5", "u.s"), split the rest
      if (!cur.empty() && i + 1 < low.size() && alnum(low[i + 1]) && alnum(cur.back())) {
        cur.push_back(c);
      } else {
        flush();
        raw.emplace_back(1, c);
      }
    } else if (c == '\'') {
      // clitics: 's 're 've 'll 'm 'd and n't
      if (!cur.empty() && cur.back() == 'n' && i + 1 < low.size() && low[i + 1] == 't') {
        cur.pop_back();
        flush();
        cur = "n'";
      } else {
        flush();
        cur.push_back(c);
      }
    } else if (c == '-' && (cur.empty() || i + 1 >= low.size() || !alnum(low[i + 1]))) {
      flush();
      raw.emplace_back(1, c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  static const std::set<std::string> punct = {"''", "'", "``", "`", "-lrb-", "-rrb-", "-lcb-", "-rcb-", ".", "?",
                                              "!", ",", ":", "-", "--", "...", ";", "(", ")", "[", "]", "{",
                                              "}", "\""};
  std::vector<std::string> out;
  for (auto& t : raw) {
    if (punct.count(t)) continue;
    if (std::all_of(t.begin(), t.end(), [](char c) { return c == '.' || c == '-'; })) continue;
    out.push_back(std::move(t));
  }
  return out;
}

namespace detail {

using Ngram = std::string;  // tokens joined by a single space
using NgramCounts = std::map<Ngram, int>;

inline NgramCounts ngram_counts(const std::vector<std::string>& w, int n = 4) {
  NgramCounts c;
  for (int k = 1; k <= n; ++k)
    for (std::size_t i = 0; i + static_cast<std::size_t>(k) <= w.size(); ++i) {
      std::string g = w[i];
      for (int j = 1; j < k; ++j) g += ' ' + w[i + static_cast<std::size_t>(j)];
      ++c[g];
    }
  return c;
}

inline int order(const Ngram& g) { return 1 + static_cast<int>(std::count(g.begin(), g.end(), ' ')); }

struct Tokenized {
  std::vector<std::string> ids;
  std::vector<std::vector<std::string>> cand;
  std::vector<std::vector<std::vector<std::string>>> refs;
};

inline Tokenized prepare(const Captions& candidates, const References& refs) {
  if (candidates.empty()) throw InputError("no candidate captions to evaluate");
  Tokenized t;
  for (const auto& [id, c] : candidates) {
    auto it = refs.find(id);
    if (it == refs.end() || it->second.empty()) throw InputError("missing references for image '" + id + "'");
    t.ids.push_back(id);
    t.cand.push_back(ptb_tokenize(c));
    auto& r = t.refs.emplace_back();
    for (const auto& s : it->second) r.push_back(ptb_tokenize(s));
  }
  return t;
}

inline int lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

struct BleuResult {
  std::vector<double> bleu;  // BLEU-1..4
  double testlen = 0, reflen = 0;
};

/// Corpus-level BLEU-1..4 with closest-reference brevity penalty.
inline BleuResult bleu(const Captions& candidates, const References& refs) {
  const auto t = detail::prepare(candidates, refs);
  constexpr int n = 4;
  constexpr double tiny = 1e-15, small = 1e-9;
  std::vector<double> guess(n, 0.0), correct(n, 0.0);
  double testlen = 0.0, reflen = 0.0;
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    std::map<std::string, int> maxcounts;
    std::vector<int> lens;
    for (const auto& r : t.refs[i]) {
      lens.push_back(static_cast<int>(r.size()));
      for (const auto& [g, c] : detail::ngram_counts(r)) maxcounts[g] = std::max(maxcounts[g], c);
    }
    const int tl = static_cast<int>(t.cand[i].size());
    int best = lens[0];
    for (int l : lens)
      if (std::abs(l - tl) < std::abs(best - tl) || (std::abs(l - tl) == std::abs(best - tl) && l < best)) best = l;
    testlen += tl;
    reflen += best;
    for (int k = 1; k <= n; ++k) guess[static_cast<std::size_t>(k - 1)] += std::max(0, tl - k + 1);
    for (const auto& [g, c] : detail::ngram_counts(t.cand[i])) {
      auto it = maxcounts.find(g);
      correct[static_cast<std::size_t>(detail::order(g) - 1)] += std::min(it == maxcounts.end() ? 0 : it->second, c);
    }
  }
  BleuResult res;
  res.testlen = testlen;
  res.reflen = reflen;
  double b = 1.0;
  for (int k = 0; k < n; ++k) {
    b *= (correct[static_cast<std::size_t>(k)] + tiny) / (guess[static_cast<std::size_t>(k)] + small);
    res.bleu.push_back(std::pow(b, 1.0 / (k + 1)));
  }
  const double ratio = (testlen + tiny) / (reflen + small);
  if (ratio < 1.0)
    for (auto& x : res.bleu) x *= std::exp(1.0 - 1.0 / ratio);
  return res;
}

inline double bleu4(const Captions& candidates, const References& refs) { return bleu(candidates, refs).bleu[3]; }

struct PerImage {
  double corpus = 0.0;
  std::map<std::string, double> per_image;
};

/// Mean over images of the best-precision/best-recall LCS F-measure.
inline PerImage rouge_l(const Captions& candidates, const References& refs, double beta = 1.2) {
  const auto t = detail::prepare(candidates, refs);
  PerImage out;
  double total = 0.0;
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    double pmax = 0.0, rmax = 0.0;
    const auto& c = t.cand[i];
    const double clen = std::max<std::size_t>(c.size(), 1);
    for (const auto& r : t.refs[i]) {
      const double l = detail::lcs(r, c);
      pmax = std::max(pmax, l / clen);
      rmax = std::max(rmax, l / static_cast<double>(std::max<std::size_t>(r.size(), 1)));
    }
    double s = 0.0;
    if (pmax != 0.0 && rmax != 0.0) s = ((1 + beta * beta) * pmax * rmax) / (rmax + beta * beta * pmax);
    out.per_image[t.ids[i]] = s;
    total += s;
  }
  out.corpus = total / static_cast<double>(t.ids.size());
  return out;
}

/// CIDEr-D. With a single image every idf weight collapses to zero; callers should warn.
inline PerImage cider(const Captions& candidates, const References& refs, double sigma = 6.0) {
  const auto t = detail::prepare(candidates, refs);
  constexpr int n = 4;
  std::vector<std::vector<detail::NgramCounts>> ref_counts(t.ids.size());
  std::unordered_map<std::string, double> df;
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    std::set<std::string> seen;
    for (const auto& r : t.refs[i]) {
      ref_counts[i].push_back(detail::ngram_counts(r));
      for (const auto& [g, c] : ref_counts[i].back()) seen.insert(g);
    }
    for (const auto& g : seen) df[g] += 1.0;
  }
  const double ref_len = std::log(static_cast<double>(t.ids.size()));

  struct Vec {
    std::vector<std::map<std::string, double>> v = std::vector<std::map<std::string, double>>(n);
    std::vector<double> norm = std::vector<double>(n, 0.0);
    int length = 0;
  };
  auto to_vec = [&](const detail::NgramCounts& cnts) {
    Vec out;
    for (const auto& [g, tf] : cnts) {
      auto it = df.find(g);
      const double d = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
      const int k = detail::order(g) - 1;
      const double w = tf * (ref_len - d);
      out.v[static_cast<std::size_t>(k)][g] = w;
      out.norm[static_cast<std::size_t>(k)] += w * w;
      if (k == 1) out.length += tf;  // the reference toolkit measures length in bigrams
    }
    for (auto& x : out.norm) x = std::sqrt(x);
    return out;
  };

  PerImage out;
  double total = 0.0;
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    const Vec hyp = to_vec(detail::ngram_counts(t.cand[i]));
    std::vector<double> score(n, 0.0);
    for (const auto& rc : ref_counts[i]) {
      const Vec ref = to_vec(rc);
      const double delta = static_cast<double>(hyp.length - ref.length);
      for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) {
        double val = 0.0;
        for (const auto& [g, w] : hyp.v[k]) {
          auto it = ref.v[k].find(g);
          const double rw = it == ref.v[k].end() ? 0.0 : it->second;
          val += std::min(w, rw) * rw;
        }
        if (hyp.norm[k] != 0.0 && ref.norm[k] != 0.0) val /= hyp.norm[k] * ref.norm[k];
        val *= std::exp(-(delta * delta) / (2.0 * sigma * sigma));
        score[k] += val;
      }
    }
    double avg = 0.0;
    for (double s : score) avg += s;
    avg /= n;
    avg /= static_cast<double>(t.refs[i].size());
    avg *= 10.0;
    out.per_image[t.ids[i]] = avg;
    total += avg;
  }
  out.corpus = total / static_cast<double>(t.ids.size());
  return out;
}

}  // namespace uic::metrics
