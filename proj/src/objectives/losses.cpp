#include "cgclip/objectives/losses.hpp"

#include <algorithm>
#include <iomanip>

#include "cgclip/error.hpp"
#include "cgclip/eval/representation.hpp"
#include "cgclip/numerics/ops.hpp"

namespace cgclip::obj {

void LossConfig::validate() const {
  if (w_v2m < 0 || w_tri < 0 || w_ce < 0) throw ConfigError("loss weights must be nonnegative");
  if (margin < 0) throw ConfigError("triplet margin must be nonnegative");
  if (smoothing < 0 || smoothing >= 1) throw ConfigError("label smoothing must be in [0, 1)");
  if (temperature <= 0) throw ConfigError("temperature must be positive");
}

template <Real T>
Tensor<T> v2m_terms(const Tensor<T>& features, const std::vector<int>& labels, const Tensor<T>& memory,
                    double temperature) {
  if (features.rank() != 2 || features.dim(0) != labels.size() || labels.empty())
    throw DimensionError("v2m_loss: " + num::shape_string(features.shape()) + " features for " +
                         std::to_string(labels.size()) + " labels");
  if (memory.rank() != 2 || memory.dim(1) != features.dim(1))
    throw DimensionError("v2m_loss: memory " + num::shape_string(memory.shape()));
  std::vector<int> ids(labels);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::vector<std::size_t> rows;
  for (int y : ids) {
    if (y < 0 || static_cast<std::size_t>(y) >= memory.dim(0))
      throw ContractError("v2m_loss: identity " + std::to_string(y) + " has no memory row");
    rows.push_back(static_cast<std::size_t>(y));
  }
  const std::size_t b = labels.size();
  const Tensor<T> logits =
      num::scale(num::cosine_similarity(num::index_select(memory, rows), features), T(1.0 / temperature));
  const Tensor<T> lp = num::log_softmax(logits, 1);  // [U, B], normalized over the batch

  // Row u of `pick` averages identity u's positives with a minus sign.
  std::vector<std::size_t> flat;
  for (std::size_t u = 0; u < ids.size(); ++u)
    for (std::size_t p = 0; p < b; ++p)
      if (labels[p] == ids[u]) flat.push_back(u * b + p);
  std::vector<T> pick(ids.size() * flat.size(), T(0));
  for (std::size_t k = 0; k < flat.size(); ++k) {
    const std::size_t u = flat[k] / b;
    const auto positives = std::count(labels.begin(), labels.end(), ids[u]);
    pick[u * flat.size() + k] = static_cast<T>(-1.0 / static_cast<double>(positives));
  }
  const auto pick_t = Tensor<T>::from_data({ids.size(), flat.size()}, std::move(pick));
  return num::reshape(num::matmul(pick_t, num::reshape(num::gather(lp, flat), {flat.size(), 1})), {ids.size()});
}

template <Real T>
Tensor<T> v2m_loss(const Tensor<T>& features, const std::vector<int>& labels, const Tensor<T>& memory,
                   double temperature) {
  return num::mean(v2m_terms(features, labels, memory, temperature));
}

template <Real T>
Tensor<T> triplet_from_distances(const Tensor<T>& distances, const std::vector<int>& labels, double margin) {
  const std::size_t b = labels.size();
  if (distances.rank() != 2 || distances.dim(0) != b || distances.dim(1) != b)
    throw DimensionError("triplet: distance matrix " + num::shape_string(distances.shape()) + " for " +
                         std::to_string(b) + " labels");
  const auto d = distances.data();
  std::vector<std::size_t> ap, an;
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t pos = b, neg = b;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        if (pos == b || d[i * b + j] > d[i * b + pos]) pos = j;
      } else if (neg == b || d[i * b + j] < d[i * b + neg]) {
        neg = j;
      }
    }
    if (pos == b) throw ContractError("triplet: identity " + std::to_string(labels[i]) + " has a single sample");
    if (neg == b) throw ContractError("triplet: batch has a single identity");
    ap.push_back(i * b + pos);
    an.push_back(i * b + neg);
  }
  const Tensor<T> hinge =
      num::relu(num::add_scalar(num::sub(num::gather(distances, ap), num::gather(distances, an)), T(margin)));
  return num::mean(hinge);
}

template <Real T>
Tensor<T> triplet_loss(const Tensor<T>& features, const std::vector<int>& labels, double margin) {
  const Tensor<T> dist = num::add_scalar(num::scale(num::cosine_similarity(features, features), T(-1)), T(1));
  return triplet_from_distances(dist, labels, margin);
}

template <Real T>
Tensor<T> ce_label_smooth(const Tensor<T>& logits, const std::vector<int>& labels, double epsilon) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty())
    throw DimensionError("ce_label_smooth: logits " + num::shape_string(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t b = logits.dim(0), y = logits.dim(1);
  const double off = y > 1 ? epsilon / static_cast<double>(y - 1) : 0.0;
  const double on = y > 1 ? 1.0 - epsilon : 1.0;
  std::vector<T> target(b * y, static_cast<T>(off));
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= y)
      throw ContractError("ce_label_smooth: label " + std::to_string(labels[i]) + " outside [0, " +
                          std::to_string(y) + ")");
    target[i * y + static_cast<std::size_t>(labels[i])] = static_cast<T>(on);
  }
  const auto q = Tensor<T>::from_data({b, y}, std::move(target));
  return num::scale(num::sum(num::mul(num::log_softmax(logits, 1), q)), T(-1.0 / static_cast<double>(b)));
}

template <Real T>
LossOutput<T> total_loss(const LossInputs<T>& in, const LossConfig& cfg) {
  cfg.validate();
  LossOutput<T> out;
  auto& r = out.report;

  const Tensor<T> v2m = v2m_loss(in.b, in.labels, in.target, cfg.temperature);
  const Tensor<T> tri = triplet_loss(eval::final_representation(in.b, in.b_hat), in.labels, cfg.margin);
  const Tensor<T> ce_b = ce_label_smooth(in.logits_b, in.labels, cfg.smoothing);
  Tensor<T> ce = ce_b;
  r.ce_b = ce_b.item();
  if (in.logits_bhat.defined()) {
    const Tensor<T> ce_bhat = ce_label_smooth(in.logits_bhat, in.labels, cfg.smoothing);
    r.ce_bhat = ce_bhat.item();
    ce = num::scale(num::add(ce_b, ce_bhat), T(0.5));
  }

  const Tensor<T> wv = num::scale(v2m, T(cfg.w_v2m));
  const Tensor<T> wt = num::scale(tri, T(cfg.w_tri));
  const Tensor<T> wc = num::scale(ce, T(cfg.w_ce));
  out.total = num::add(num::add(wv, wt), wc);

  r.v2m = v2m.item();
  r.tri = tri.item();
  r.ce = ce.item();
  r.weighted_v2m = wv.item();
  r.weighted_tri = wt.item();
  r.weighted_ce = wc.item();
  r.total = out.total.item();
  return out;
}

TrainingLog::TrainingLog(const std::filesystem::path& path) : os_(path, std::ios::trunc) {
  if (!os_) throw InputError("cannot write " + path.string());
  os_ << "step,l_v2m,l_tri,l_ce,total,lr\n" << std::setprecision(9);
}

void TrainingLog::append(std::size_t step, const LossReport& r, double lr) {
  os_ << step << ',' << r.v2m << ',' << r.tri << ',' << r.ce << ',' << r.total << ',' << lr << '\n';
  os_.flush();
}

#define CGCLIP_INSTANTIATE(T)                                                                      \
  template Tensor<T> v2m_terms(const Tensor<T>&, const std::vector<int>&, const Tensor<T>&, double); \
  template Tensor<T> v2m_loss(const Tensor<T>&, const std::vector<int>&, const Tensor<T>&, double); \
  template Tensor<T> triplet_from_distances(const Tensor<T>&, const std::vector<int>&, double);    \
  template Tensor<T> triplet_loss(const Tensor<T>&, const std::vector<int>&, double);              \
  template Tensor<T> ce_label_smooth(const Tensor<T>&, const std::vector<int>&, double);           \
  template LossOutput<T> total_loss(const LossInputs<T>&, const LossConfig&);

CGCLIP_INSTANTIATE(float)
CGCLIP_INSTANTIATE(double)

}  // namespace cgclip::obj
