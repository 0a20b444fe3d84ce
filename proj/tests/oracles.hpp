#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "artistembed/eval.hpp"
#include "artistembed/nn/losses.hpp"

// Independent reference implementations used to freeze expected values.
namespace oracle {

namespace ae = artistembed;

/// Average precision by the literal definition: the mean over relevant
/// positions k of precision@k, divided by the number of relevant items.
inline std::optional<double> literal_ap(const std::vector<int>& relevance) {
  std::size_t n_relevant = 0;
  for (int r : relevance) n_relevant += r != 0;
  if (n_relevant == 0) return std::nullopt;
  double sum = 0.0;
  for (std::size_t k = 1; k <= relevance.size(); ++k) {
    if (relevance[k - 1] == 0) continue;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < k; ++i) hits += relevance[i] != 0;
    sum += static_cast<double>(hits) / static_cast<double>(k);
  }
  return sum / static_cast<double>(n_relevant);
}

/// MAP over every song as a query. The ranking is built by repeated
/// quadratic selection of the best remaining candidate; scores come from the
/// shared cosine primitive, ties go to the smaller song id.
inline double brute_force_map(const ae::eval::EmbeddingMatrix& emb) {
  const std::size_t n = emb.size();
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t q = 0; q < n; ++q) {
    std::vector<double> score(n);
    for (std::size_t j = 0; j < n; ++j) {
      score[j] = ae::nn::cosine_relevance<double>(emb.rows.row(static_cast<Eigen::Index>(j)).transpose(),
                                                  emb.rows.row(static_cast<Eigen::Index>(q)).transpose());
    }
    std::vector<bool> used(n, false);
    used[q] = true;
    std::vector<int> relevance;
    for (std::size_t step = 0; step + 1 < n; ++step) {
      std::size_t pick = n;
      for (std::size_t j = 0; j < n; ++j) {
        if (used[j]) continue;
        if (pick == n || score[j] > score[pick] || (score[j] == score[pick] && emb.ids[j] < emb.ids[pick])) pick = j;
      }
      used[pick] = true;
      relevance.push_back(emb.labels[pick] == emb.labels[q] ? 1 : 0);
    }
    if (const auto ap = literal_ap(relevance)) {
      total += *ap;
      ++counted;
    }
  }
  return total / static_cast<double>(counted);
}

}  // namespace oracle
