#include "cgclip/data/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "cgclip/data/synthetic.hpp"
#include "cgclip/error.hpp"

namespace cgclip::data {

std::vector<Chunk> split_tracklets(std::size_t frames, std::size_t max_len) {
  if (max_len == 0) throw ContractError("split_tracklets: max_len must be positive");
  std::vector<Chunk> out;
  for (std::size_t off = 0; off < frames; off += max_len)
    out.push_back({off, std::min(max_len, frames - off)});
  return out;
}

std::vector<std::size_t> sample_frames(std::size_t length, std::size_t target,
                                       std::mt19937_64* rng) {
  if (length == 0) throw ContractError("sample_frames: empty tracklet");
  if (target == 0) throw ContractError("sample_frames: target must be positive");
  std::vector<std::size_t> out(target);
  if (length < target) {
    for (std::size_t i = 0; i < target; ++i) out[i] = i % length;
    return out;
  }
  for (std::size_t i = 0; i < target; ++i) {
    const std::size_t lo = i * length / target;
    const std::size_t hi = (i + 1) * length / target;
    out[i] = rng ? lo + std::uniform_int_distribution<std::size_t>(0, hi - lo - 1)(*rng) : lo;
  }
  return out;
}

PKSampler::PKSampler(const Dataset& dataset, std::size_t p, std::size_t k, std::uint64_t seed)
    : p_(p), k_(k), gen_(seed) {
  if (p == 0 || k == 0) throw ConfigError("PK sampler needs P >= 1 and K >= 1");
  const int y = dataset.identity_count();
  if (static_cast<std::size_t>(y) < p)
    throw DataError("PK sampling needs " + std::to_string(p) + " identities, dataset has " +
                    std::to_string(y));
  by_label_.resize(static_cast<std::size_t>(y));
  for (std::size_t i = 0; i < dataset.tracklets.size(); ++i)
    by_label_.at(static_cast<std::size_t>(dataset.tracklets[i].label)).push_back(i);
  for (int l = 0; l < y; ++l)
    if (by_label_[static_cast<std::size_t>(l)].empty())
      throw DataError("identity " + std::to_string(l) + " has no tracklets");
  tracklet_queues_.resize(by_label_.size());
}

void PKSampler::refill_labels() {
  std::vector<int> order(by_label_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), gen_);
  label_queue_.insert(label_queue_.end(), order.begin(), order.end());
}

std::size_t PKSampler::take_tracklet(int label) {
  auto& q = tracklet_queues_[static_cast<std::size_t>(label)];
  if (q.empty()) {
    auto all = by_label_[static_cast<std::size_t>(label)];
    std::shuffle(all.begin(), all.end(), gen_);
    q.assign(all.begin(), all.end());
  }
  const std::size_t t = q.front();
  q.pop_front();
  return t;
}

Batch PKSampler::next() {
  std::vector<int> chosen;
  std::set<int> in_batch;
  while (chosen.size() < p_) {
    // Skip labels already in this batch; they stay queued for the next one.
    auto it = std::find_if(label_queue_.begin(), label_queue_.end(),
                           [&](int l) { return !in_batch.count(l); });
    if (it == label_queue_.end()) {
      refill_labels();
      continue;
    }
    const int l = *it;
    label_queue_.erase(it);
    chosen.push_back(l);
    in_batch.insert(l);
  }
  Batch b;
  for (int l : chosen) {
    const auto& pool = by_label_[static_cast<std::size_t>(l)];
    std::set<std::size_t> used;
    for (std::size_t i = 0; i < k_; ++i) {
      std::size_t t = take_tracklet(l);
      if (pool.size() >= k_) {
        // Avoid repeating a tracklet inside one identity's K slots.
        while (used.count(t)) t = take_tracklet(l);
      }
      used.insert(t);
      b.tracklets.push_back(t);
      b.labels.push_back(l);
    }
  }
  return b;
}

Dataset subsample_identities(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("subsample fraction must be in (0, 1]");
  const auto y = static_cast<std::size_t>(dataset.identity_count());
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(y) - 1e-9)));
  std::vector<int> labels(y);
  std::iota(labels.begin(), labels.end(), 0);
  std::mt19937_64 gen(seed);
  std::shuffle(labels.begin(), labels.end(), gen);
  labels.resize(keep);
  std::sort(labels.begin(), labels.end());
  std::map<int, int> relabel;
  for (std::size_t i = 0; i < labels.size(); ++i) relabel[labels[i]] = static_cast<int>(i);

  Dataset out;
  out.config = dataset.config;
  out.config.identities = static_cast<int>(keep);
  for (const auto& ident : dataset.identities)
    if (auto it = relabel.find(ident.label); it != relabel.end())
      out.identities.push_back({it->second, ident.attributes});
  for (const auto& t : dataset.tracklets)
    if (auto it = relabel.find(t.label); it != relabel.end()) {
      Tracklet copy = t;
      copy.label = it->second;
      out.tracklets.push_back(std::move(copy));
    }
  for (const auto& c : dataset.captions)
    if (auto it = relabel.find(c.label); it != relabel.end())
      out.captions.push_back({it->second, c.tokens});
  return out;
}

}  // namespace cgclip::data
