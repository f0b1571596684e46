#include "cgclip/eval/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace cgclip::eval {

namespace {

double similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::max(std::sqrt(na), 1e-12) * std::max(std::sqrt(nb), 1e-12));
}

}  // namespace

OracleMetrics brute_force_metrics(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                                  const std::vector<std::size_t>& ks) {
  OracleMetrics out;
  std::vector<std::size_t> hits_at(ks.size(), 0);
  double ap_sum = 0;
  const std::size_t g_count = gallery.size();
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<double> sim(g_count);
    for (std::size_t g = 0; g < g_count; ++g) sim[g] = similarity(queries.row(q), gallery.row(g));
    // rank(g) = 1 + number of items placed before g.
    std::vector<std::size_t> positive_ranks;
    for (std::size_t g = 0; g < g_count; ++g) {
      if (gallery.labels[g] != queries.labels[q]) continue;
      std::size_t rank = 1;
      for (std::size_t h = 0; h < g_count; ++h) {
        if (h == g) continue;
        if (sim[h] > sim[g] || (sim[h] == sim[g] && gallery.ids[h] < gallery.ids[g])) ++rank;
      }
      positive_ranks.push_back(rank);
    }
    if (positive_ranks.empty()) continue;
    std::sort(positive_ranks.begin(), positive_ranks.end());
    double precision_sum = 0;
    for (std::size_t i = 0; i < positive_ranks.size(); ++i) {
      std::size_t within = 0;
      for (std::size_t r : positive_ranks)
        if (r <= positive_ranks[i]) ++within;
      precision_sum += static_cast<double>(within) / static_cast<double>(positive_ranks[i]);
    }
    ap_sum += precision_sum / static_cast<double>(positive_ranks.size());
    for (std::size_t k = 0; k < ks.size(); ++k)
      if (positive_ranks.front() <= ks[k]) ++hits_at[k];
    ++out.num_queries;
  }
  if (out.num_queries > 0) out.map = ap_sum / static_cast<double>(out.num_queries);
  for (std::size_t h : hits_at)
    out.cmc.push_back(out.num_queries == 0 ? 0.0 : static_cast<double>(h) / static_cast<double>(out.num_queries));
  return out;
}

std::pair<EmbeddingSet, EmbeddingSet> random_instance(std::mt19937_64& gen, std::size_t max_queries,
                                                      std::size_t max_gallery) {
  std::uniform_int_distribution<std::size_t> qd(1, max_queries), gd(1, max_gallery), dd(2, 8);
  std::uniform_int_distribution<int> level(-2, 2);
  const std::size_t q = qd(gen), g = gd(gen), dim = dd(gen);
  std::uniform_int_distribution<int> label(0, std::uniform_int_distribution<int>(1, 6)(gen) - 1);
  auto fill = [&](std::size_t n, int first) {
    EmbeddingSet s;
    s.dim = dim;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t e = 0; e < dim; ++e) s.rows.push_back(static_cast<double>(level(gen)) + 0.1);
      s.ids.push_back(first + static_cast<int>(i));
      s.labels.push_back(label(gen));
    }
    return s;
  };
  auto qs = fill(q, 0);
  auto gs = fill(g, 1000);
  // Id order differs from storage order.
  std::shuffle(gs.ids.begin(), gs.ids.end(), gen);
  return {std::move(qs), std::move(gs)};
}

}  // namespace cgclip::eval
