#pragma once

// Brute-force retrieval metrics straight from the definitions: each gallery
// item's rank is counted directly (O(Q * G^2)). Used to cross-check evaluate().

#include <random>
#include <utility>
#include <vector>

#include "cgclip/eval/retrieval.hpp"

namespace cgclip::eval {

struct OracleMetrics {
  double map = 0;
  std::vector<double> cmc;
  std::size_t num_queries = 0;
};

OracleMetrics brute_force_metrics(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                                  const std::vector<std::size_t>& ks);

// Random query/gallery sets (1..max_queries queries, 1..max_gallery gallery
// rows, width 2..8, up to 6 identities). Coordinates come from a small grid,
// so exact similarity ties occur and exercise the tie rule.
std::pair<EmbeddingSet, EmbeddingSet> random_instance(std::mt19937_64& gen, std::size_t max_queries,
                                                      std::size_t max_gallery);

}  // namespace cgclip::eval
