#pragma once

// Query/gallery retrieval with cosine similarity, mAP and CMC.

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "cgclip/data/synthetic.hpp"

namespace cgclip::eval {

struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<double> rows;  // [size, dim]
  std::vector<int> ids;      // tracklet ids
  std::vector<int> labels;   // identity labels

  std::size_t size() const { return ids.size(); }
  std::span<const double> row(std::size_t i) const { return {rows.data() + i * dim, dim}; }
  void validate() const;
};

struct Splits {
  std::vector<std::size_t> query;    // indices into Dataset::tracklets
  std::vector<std::size_t> gallery;
};

// The lowest-id tracklet of each identity is its query; the rest is gallery.
// Identities with a single tracklet contribute no query (warning) and keep
// their tracklet in the gallery.
Splits make_splits(const data::Dataset& ds);

// Gallery positions by descending cosine similarity, ties by tracklet id.
std::vector<std::size_t> rank_gallery(std::span<const double> query, const EmbeddingSet& gallery);

struct QueryResult {
  int query_id = 0;
  int label = 0;
  std::vector<int> ranked_ids;
  std::size_t positives = 0;
  double ap = 0;
  std::size_t first_hit = 0;  // 1-based rank of the first positive, 0 if none
};

// Precision at each hit, averaged over the hits; summed in rank order.
// 0 when there is no hit.
double average_precision(const std::vector<bool>& hits_in_rank_order);

struct RetrievalReport {
  std::vector<QueryResult> results;  // queries with at least one positive
  std::vector<std::size_t> ks{1, 5, 10, 20};
  double map = 0;
  std::vector<double> cmc;  // one value per k
  std::size_t num_queries = 0;
  std::size_t num_gallery = 0;
  std::size_t excluded_queries = 0;
};

double compute_map(const std::vector<QueryResult>& results);
std::vector<double> compute_cmc(const std::vector<QueryResult>& results, const std::vector<std::size_t>& ks);

// Queries without gallery positives are excluded with a warning.
RetrievalReport evaluate(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                         std::vector<std::size_t> ks = {1, 5, 10, 20});

// {mAP, CMC@[k...], num_queries, num_gallery, excluded_queries}
void write_metrics_json(const std::filesystem::path& path, const RetrievalReport& r);
// query_id,label,ap,first_hit
void write_per_query_csv(const std::filesystem::path& path, const RetrievalReport& r);

}  // namespace cgclip::eval
