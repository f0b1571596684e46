#pragma once

// Training objectives: video-to-memory contrastive loss, batch-hard triplet
// loss on cosine distance, label-smoothed cross-entropy and their weighted sum.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cgclip/numerics/tensor.hpp"

namespace cgclip::obj {

using num::Real;
using num::Tensor;

struct LossConfig {
  double w_v2m = 1.0;
  double w_tri = 1.0;
  double w_ce = 0.25;
  double margin = 0.3;
  double smoothing = 0.1;
  double temperature = 1.0;

  void validate() const;
};

// Per distinct batch identity y (ascending):
//   -(1/|D(y)|) sum_{p in D(y)} log softmax_j(s(b_j, M_y) / tau)[p]
// with s the cosine similarity. features [B, D], memory [Y, D] -> [U].
template <Real T>
Tensor<T> v2m_terms(const Tensor<T>& features, const std::vector<int>& labels, const Tensor<T>& memory,
                    double temperature);

// Mean of v2m_terms over the distinct identities.
template <Real T>
Tensor<T> v2m_loss(const Tensor<T>& features, const std::vector<int>& labels, const Tensor<T>& memory,
                   double temperature);

// Batch-hard triplet loss on a precomputed distance matrix [B, B]:
// mean over anchors of relu(max_pos d - min_neg d + margin). Ties pick the
// lowest index. Throws ContractError if an anchor has no positive or no negative.
template <Real T>
Tensor<T> triplet_from_distances(const Tensor<T>& distances, const std::vector<int>& labels, double margin);

// Cosine distance 1 - cos between the rows of `features`.
template <Real T>
Tensor<T> triplet_loss(const Tensor<T>& features, const std::vector<int>& labels, double margin);

// Target (1 - eps) on the label, eps / (Y - 1) elsewhere; mean over rows.
template <Real T>
Tensor<T> ce_label_smooth(const Tensor<T>& logits, const std::vector<int>& labels, double epsilon);

struct LossReport {
  double v2m = 0, tri = 0, ce = 0;                      // raw terms
  double weighted_v2m = 0, weighted_tri = 0, weighted_ce = 0;
  double ce_b = 0, ce_bhat = 0;                          // per head
  double total = 0;
};

template <Real T>
struct LossInputs {
  Tensor<T> b;          // [B, D] sequence feature
  Tensor<T> b_hat;      // [B, D] token feature, undefined when the extractor is off
  Tensor<T> target;     // [Y, D] contrastive memory target
  Tensor<T> logits_b;   // [B, Y]
  Tensor<T> logits_bhat;  // [B, Y], undefined when the extractor is off
  std::vector<int> labels;
};

template <Real T>
struct LossOutput {
  Tensor<T> total;
  LossReport report;
};

// L = w_v2m * L_v2m(b, target) + w_tri * L_tri(final representation)
//   + w_ce * mean of the per-head CE terms.
template <Real T>
LossOutput<T> total_loss(const LossInputs<T>& in, const LossConfig& cfg);

// Per-step CSV: step,l_v2m,l_tri,l_ce,total,lr
class TrainingLog {
 public:
  explicit TrainingLog(const std::filesystem::path& path);
  void append(std::size_t step, const LossReport& r, double lr);

 private:
  std::ofstream os_;
};

}  // namespace cgclip::obj
