#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "uic/binary_io.hpp"
#include "uic/generator.hpp"

namespace uic {

struct PromptToken {
  int prompt_index = 0;
  int token_id = 0;
  std::string token;
  bool word_internal = false;
  double cosine = 0.0;
};

struct PromptExplanation {
  std::string image_id;
  std::vector<PromptToken> prompts;
};

/// Nearest vocabulary token (cosine, ties to lowest id) for every prompt vector.
inline PromptExplanation explain_prompts(const VisualPromptSet& prompts, const Matrix& token_embeddings,
                                         const TokenVocab& vocab, std::string image_id = {}) {
  if (prompts.vectors.cols() != token_embeddings.cols())
    throw InputError("prompt width " + std::to_string(prompts.vectors.cols()) + " does not match token embedding width " +
                     std::to_string(token_embeddings.cols()));
  if (token_embeddings.rows() != vocab.size()) throw InputError("token table and vocabulary sizes differ");
  const Eigen::VectorXd row_norms = token_embeddings.rowwise().norm();
  PromptExplanation out{std::move(image_id), {}};
  for (Eigen::Index p = 0; p < prompts.vectors.rows(); ++p) {
    const auto v = prompts.vectors.row(p);
    const double vn = v.norm();
    int best = 0;
    double best_cos = -2.0;
    for (Eigen::Index t = 0; t < token_embeddings.rows(); ++t) {
      const double denom = vn * row_norms(t);
      const double c = denom > 0.0 ? v.dot(token_embeddings.row(t)) / denom : 0.0;
      if (c > best_cos) {
        best_cos = c;
        best = static_cast<int>(t);
      }
    }
    out.prompts.push_back({static_cast<int>(p), best, vocab.token(best), vocab.is_word_internal(best),
                           std::clamp(best_cos, -1.0, 1.0)});
  }
  return out;
}

inline io::json to_json(const PromptExplanation& e) {
  io::json list = io::json::array();
  for (const auto& p : e.prompts)
    list.push_back({{"prompt", p.prompt_index},
                    {"token_id", p.token_id},
                    {"token", p.token},
                    {"word_internal", p.word_internal},
                    {"cosine", p.cosine}});
  return {{"image_id", e.image_id}, {"prompts", list}};
}

}  // namespace uic
