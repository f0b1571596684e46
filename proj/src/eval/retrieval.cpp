#include "cgclip/eval/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>

#include <json.hpp>

#include "cgclip/error.hpp"
#include "cgclip/log.hpp"

namespace cgclip::eval {

void EmbeddingSet::validate() const {
  if (labels.size() != ids.size() || rows.size() != ids.size() * dim)
    throw DimensionError("embedding set: " + std::to_string(rows.size()) + " values for " +
                         std::to_string(ids.size()) + " rows of width " + std::to_string(dim));
}

Splits make_splits(const data::Dataset& ds) {
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < ds.tracklets.size(); ++i) by_label[ds.tracklets[i].label].push_back(i);
  Splits s;
  for (auto& [label, members] : by_label) {
    std::sort(members.begin(), members.end(),
              [&](std::size_t a, std::size_t b) { return ds.tracklets[a].id < ds.tracklets[b].id; });
    if (members.size() < 2) {
      warn("identity " + std::to_string(label) + " has a single tracklet; it is not used as a query");
      s.gallery.push_back(members[0]);
      continue;
    }
    s.query.push_back(members[0]);
    s.gallery.insert(s.gallery.end(), members.begin() + 1, members.end());
  }
  std::sort(s.gallery.begin(), s.gallery.end());
  return s;
}

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::max(std::sqrt(na), 1e-12) * std::max(std::sqrt(nb), 1e-12));
}

}  // namespace

std::vector<std::size_t> rank_gallery(std::span<const double> query, const EmbeddingSet& gallery) {
  if (query.size() != gallery.dim)
    throw DimensionError("rank_gallery: query width " + std::to_string(query.size()) + " vs gallery " +
                         std::to_string(gallery.dim));
  std::vector<double> sim(gallery.size());
  for (std::size_t g = 0; g < gallery.size(); ++g) sim[g] = cosine(query, gallery.row(g));
  std::vector<std::size_t> order(gallery.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sim[a] != sim[b]) return sim[a] > sim[b];
    return gallery.ids[a] < gallery.ids[b];
  });
  return order;
}

double average_precision(const std::vector<bool>& hits) {
  double sum = 0;
  std::size_t found = 0;
  for (std::size_t r = 0; r < hits.size(); ++r) {
    if (!hits[r]) continue;
    ++found;
    sum += static_cast<double>(found) / static_cast<double>(r + 1);
  }
  return found == 0 ? 0.0 : sum / static_cast<double>(found);
}

double compute_map(const std::vector<QueryResult>& results) {
  if (results.empty()) return 0.0;
  double s = 0;
  for (const auto& r : results) s += r.ap;
  return s / static_cast<double>(results.size());
}

std::vector<double> compute_cmc(const std::vector<QueryResult>& results, const std::vector<std::size_t>& ks) {
  std::vector<double> cmc;
  for (std::size_t k : ks) {
    std::size_t hit = 0;
    for (const auto& r : results)
      if (r.first_hit != 0 && r.first_hit <= k) ++hit;
    cmc.push_back(results.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(results.size()));
  }
  return cmc;
}

RetrievalReport evaluate(const EmbeddingSet& queries, const EmbeddingSet& gallery, std::vector<std::size_t> ks) {
  queries.validate();
  gallery.validate();
  if (queries.dim != gallery.dim) throw DimensionError("query and gallery widths differ");
  RetrievalReport rep;
  rep.ks = std::move(ks);
  rep.num_gallery = gallery.size();
  for (std::size_t q = 0; q < queries.size(); ++q) {
    QueryResult r;
    r.query_id = queries.ids[q];
    r.label = queries.labels[q];
    const auto order = rank_gallery(queries.row(q), gallery);
    std::vector<bool> hits;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const std::size_t g = order[pos];
      r.ranked_ids.push_back(gallery.ids[g]);
      hits.push_back(gallery.labels[g] == r.label);
      if (hits.back()) {
        ++r.positives;
        if (r.first_hit == 0) r.first_hit = pos + 1;
      }
    }
    if (r.positives == 0) {
      ++rep.excluded_queries;
      continue;
    }
    r.ap = average_precision(hits);
    rep.results.push_back(std::move(r));
  }
  if (rep.excluded_queries > 0)
    warn(std::to_string(rep.excluded_queries) + " queries have no gallery positive and were excluded");
  rep.num_queries = rep.results.size();
  rep.map = compute_map(rep.results);
  rep.cmc = compute_cmc(rep.results, rep.ks);
  return rep;
}

void write_metrics_json(const std::filesystem::path& path, const RetrievalReport& r) {
  nlohmann::json j;
  j["mAP"] = r.map;
  nlohmann::json cmc = nlohmann::json::object();
  for (std::size_t i = 0; i < r.ks.size(); ++i) cmc[std::to_string(r.ks[i])] = r.cmc[i];
  j["CMC"] = cmc;
  j["num_queries"] = r.num_queries;
  j["num_gallery"] = r.num_gallery;
  j["excluded_queries"] = r.excluded_queries;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void write_per_query_csv(const std::filesystem::path& path, const RetrievalReport& r) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  os << "query_id,label,ap,first_hit\n" << std::setprecision(9);
  for (const auto& q : r.results) os << q.query_id << ',' << q.label << ',' << q.ap << ',' << q.first_hit << '\n';
}

}  // namespace cgclip::eval
