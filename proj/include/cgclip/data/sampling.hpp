#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <random>
#include <vector>

namespace cgclip::data {

struct Dataset;

struct Chunk {
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Greedy consecutive chunks of at most max_len frames; nothing is dropped.
std::vector<Chunk> split_tracklets(std::size_t frames, std::size_t max_len);

// Stratified frame choice: the tracklet is cut into `target` equal spans and
// one frame is drawn per span. Without an rng the first frame of each span is
// taken. Shorter tracklets repeat cyclically.
std::vector<std::size_t> sample_frames(std::size_t length, std::size_t target,
                                       std::mt19937_64* rng);

struct Batch {
  std::vector<std::size_t> tracklets;  // indices into Dataset::tracklets
  std::vector<int> labels;
};

// P identities x K tracklets per batch. Identities are drawn from a shuffled
// queue so every identity appears once before any repeats; tracklets of an
// identity likewise cycle through a shuffled queue and are reused only when
// an identity has fewer than K.
class PKSampler {
 public:
  PKSampler(const Dataset& dataset, std::size_t p, std::size_t k, std::uint64_t seed);

  Batch next();
  std::size_t p() const { return p_; }
  std::size_t k() const { return k_; }

 private:
  std::size_t p_, k_;
  std::mt19937_64 gen_;
  std::vector<std::vector<std::size_t>> by_label_;
  std::deque<int> label_queue_;
  std::vector<std::deque<std::size_t>> tracklet_queues_;

  void refill_labels();
  std::size_t take_tracklet(int label);
};

// Keeps ceil(fraction * Y) identities (all of their tracklets and captions)
// and relabels them 0..n-1 in ascending original-label order.
Dataset subsample_identities(const Dataset& dataset, double fraction, std::uint64_t seed);

}  // namespace cgclip::data
