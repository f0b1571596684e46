#include "cgclip/cmr/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cgclip/error.hpp"
#include "cgclip/numerics/ops.hpp"

namespace cgclip::cmr {

IdStrategy parse_id_strategy(const std::string& s) {
  if (s == "none") return IdStrategy::kNone;
  if (s == "id-text" || s == "id_text") return IdStrategy::kIdText;
  if (s == "id-emb" || s == "id_emb") return IdStrategy::kIdEmb;
  throw ConfigError("unknown id strategy '" + s + "' (expected none, id-text or id-emb)");
}

std::string to_string(IdStrategy s) {
  switch (s) {
    case IdStrategy::kNone: return "none";
    case IdStrategy::kIdText: return "id-text";
    case IdStrategy::kIdEmb: return "id-emb";
  }
  return "?";
}

MemoryMode parse_memory_mode(const std::string& s) {
  if (s == "image") return MemoryMode::kImage;
  if (s == "text") return MemoryMode::kText;
  if (s == "naive-sum" || s == "naive_sum") return MemoryMode::kNaiveSum;
  if (s == "refined") return MemoryMode::kRefined;
  throw ConfigError("unknown memory mode '" + s + "' (expected image, text, naive-sum or refined)");
}

std::string to_string(MemoryMode m) {
  switch (m) {
    case MemoryMode::kImage: return "image";
    case MemoryMode::kText: return "text";
    case MemoryMode::kNaiveSum: return "naive-sum";
    case MemoryMode::kRefined: return "refined";
  }
  return "?";
}

namespace {

template <Real T>
std::uint64_t fnv(const Tensor<T>& t) {
  std::uint64_t h = 1469598103934665603ULL;
  if (!t.defined()) return h;
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.data().data());
  for (std::size_t i = 0; i < t.numel() * sizeof(T); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

template <Real T>
std::uint64_t MemoryBank<T>::text_checksum() const {
  return fnv(text);
}

template <Real T>
std::uint64_t MemoryBank<T>::image_checksum() const {
  return fnv(image);
}

template <Real T>
Tensor<T> identity_means(const Tensor<T>& features, const std::vector<int>& labels, std::size_t y) {
  if (features.rank() != 2 || features.dim(0) != labels.size())
    throw DimensionError("identity_means: " + num::shape_string(features.shape()) + " features for " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t d = features.dim(1);
  std::vector<double> acc(y * d, 0.0);
  std::vector<std::size_t> count(y, 0);
  const auto f = features.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= y)
      throw ContractError("identity_means: label out of range");
    const auto l = static_cast<std::size_t>(labels[i]);
    ++count[l];
    for (std::size_t e = 0; e < d; ++e) acc[l * d + e] += f[i * d + e];
  }
  std::vector<T> out(y * d);
  for (std::size_t l = 0; l < y; ++l) {
    if (count[l] == 0) throw DataError("identity " + std::to_string(l) + " has no samples");
    for (std::size_t e = 0; e < d; ++e)
      out[l * d + e] = static_cast<T>(acc[l * d + e] / static_cast<double>(count[l]));
  }
  return Tensor<T>::from_data({y, d}, std::move(out));
}

template <Real T>
Tensor<T> normalize_rows(const Tensor<T>& m) {
  num::NoGradGuard no_grad;
  return num::l2_normalize(m.detach());
}

template <Real T>
Tensor<T> frozen_sequence_features(const data::Dataset& ds, const std::vector<std::size_t>& tracklets,
                                   const model::ImageEncoder<T>& encoder, std::size_t frames) {
  num::NoGradGuard no_grad;
  constexpr std::size_t kChunk = 64;
  std::vector<Tensor<T>> parts;
  for (std::size_t start = 0; start < tracklets.size(); start += kChunk) {
    const std::vector<std::size_t> chunk(
        tracklets.begin() + static_cast<long>(start),
        tracklets.begin() + static_cast<long>(std::min(tracklets.size(), start + kChunk)));
    const auto patches = model::tracklet_patches<T>(ds, chunk, encoder.dims, frames, nullptr);
    parts.push_back(model::sequence_feature(encoder.project(encoder.encode(patches)), frames));
  }
  return parts.size() == 1 ? parts[0] : num::concat(parts, 0);
}

template <Real T>
Tensor<T> init_image_memory(const data::Dataset& ds, const model::ImageEncoder<T>& frozen,
                            std::size_t frames) {
  std::vector<std::size_t> all(ds.tracklets.size());
  std::vector<int> labels(ds.tracklets.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    all[i] = i;
    labels[i] = ds.tracklets[i].label;
  }
  if (all.empty()) throw DataError("image memory needs at least one tracklet");
  const auto b = frozen_sequence_features(ds, all, frozen, frames);
  return normalize_rows(identity_means(b, labels, static_cast<std::size_t>(ds.identity_count())));
}

std::vector<int> caption_for_strategy(const std::vector<int>& tokens, int label, IdStrategy strategy) {
  if (strategy != IdStrategy::kIdText) return tokens;
  std::vector<int> out;
  for (int t : tokens) {
    if (t == data::vocab::kEos) {
      out.push_back(data::vocab::kIdIs);
      out.push_back(data::vocab::id_token(label));
    }
    out.push_back(t);
  }
  return out;
}

template <Real T>
Tensor<T> init_text_memory(const data::Dataset& ds, const model::TextEncoder<T>& frozen,
                           IdStrategy strategy) {
  num::NoGradGuard no_grad;
  if (ds.captions.empty()) throw DataError("text memory needs captions");
  std::vector<std::vector<int>> captions;
  std::vector<int> labels;
  for (const auto& c : ds.captions) {
    captions.push_back(caption_for_strategy(c.tokens, c.label, strategy));
    labels.push_back(c.label);
  }
  const auto eos = frozen.encode(captions).eos;
  return identity_means(eos, labels, static_cast<std::size_t>(ds.identity_count()));
}

template <Real T>
Tensor<T> text_memory_with_ids(const Tensor<T>& base, const Tensor<T>& id_table, IdStrategy strategy) {
  if (strategy != IdStrategy::kIdEmb) return base;
  if (!id_table.defined() || id_table.shape() != base.shape())
    throw ConfigError("id-emb strategy needs a [Y, D] identity table");
  return num::add(base, id_table);
}

template <Real T>
Tensor<T> refine_memory(const Tensor<T>& fused_text, const Tensor<T>& image_memory) {
  if (fused_text.shape() != image_memory.shape())
    throw DimensionError("refine_memory: " + num::shape_string(fused_text.shape()) + " vs " +
                         num::shape_string(image_memory.shape()));
  return num::add(fused_text, image_memory);
}

template <Real T>
std::vector<std::pair<int, std::size_t>> momentum_update_hard(Tensor<T>& image_memory,
                                                              const Tensor<T>& features,
                                                              const std::vector<int>& labels,
                                                              const std::vector<int>& tracklet_ids,
                                                              double momentum) {
  num::NoGradGuard no_grad;
  if (features.rank() != 2 || features.dim(0) != labels.size() || labels.size() != tracklet_ids.size() ||
      features.dim(1) != image_memory.dim(1))
    throw DimensionError("momentum_update_hard: inconsistent batch");
  if (momentum < 0 || momentum > 1) throw ConfigError("momentum must be in [0, 1]");
  const std::size_t d = features.dim(1);
  const std::size_t y = image_memory.dim(0);
  const auto f = features.data();
  auto mem = image_memory.mutable_data();

  std::vector<int> ids(labels.begin(), labels.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::vector<std::pair<int, std::size_t>> chosen;
  for (int label : ids) {
    if (label < 0 || static_cast<std::size_t>(label) >= y)
      throw ContractError("momentum_update_hard: label " + std::to_string(label) + " has no memory row");
    const T* row = mem.data() + static_cast<std::size_t>(label) * d;
    double row_norm = 0;
    for (std::size_t e = 0; e < d; ++e) row_norm += static_cast<double>(row[e]) * row[e];
    row_norm = std::max(std::sqrt(row_norm), 1e-12);
    std::size_t best = labels.size();
    double best_sim = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != label) continue;
      double dot = 0, nn = 0;
      for (std::size_t e = 0; e < d; ++e) {
        dot += static_cast<double>(f[i * d + e]) * row[e];
        nn += static_cast<double>(f[i * d + e]) * f[i * d + e];
      }
      const double sim = dot / (row_norm * std::max(std::sqrt(nn), 1e-12));
      if (sim < best_sim || (sim == best_sim && tracklet_ids[i] < tracklet_ids[best])) {
        best_sim = sim;
        best = i;
      }
    }
    chosen.emplace_back(label, best);
    if (momentum == 1.0) continue;  // the row is kept as is
    std::vector<double> upd(d);
    double norm = 0;
    for (std::size_t e = 0; e < d; ++e) {
      upd[e] = momentum * row[e] + (1.0 - momentum) * f[best * d + e];
      norm += upd[e] * upd[e];
    }
    norm = std::max(std::sqrt(norm), 1e-12);
    T* out = mem.data() + static_cast<std::size_t>(label) * d;
    for (std::size_t e = 0; e < d; ++e) out[e] = static_cast<T>(upd[e] / norm);
  }
  return chosen;
}

template <Real T>
Tensor<T> memory_target(MemoryMode mode, const MemoryBank<T>& bank, const Tensor<T>& text_memory,
                        const FusionEncoder<T>* fusion, const Tensor<T>& tokens) {
  // Memories are stored as leaves without requires_grad, so they act as constants.
  switch (mode) {
    case MemoryMode::kImage: return bank.image;
    case MemoryMode::kText: return text_memory;
    case MemoryMode::kNaiveSum: return refine_memory(text_memory, bank.image);
    case MemoryMode::kRefined:
      if (!fusion) throw ConfigError("refined memory needs a fusion encoder");
      return refine_memory((*fusion)(text_memory, tokens), bank.image);
  }
  throw ConfigError("unknown memory mode");
}

#define CGCLIP_INSTANTIATE(T)                                                                     \
  template struct MemoryBank<T>;                                                                  \
  template Tensor<T> identity_means(const Tensor<T>&, const std::vector<int>&, std::size_t);      \
  template Tensor<T> normalize_rows(const Tensor<T>&);                                            \
  template Tensor<T> frozen_sequence_features(const data::Dataset&, const std::vector<std::size_t>&, \
                                              const model::ImageEncoder<T>&, std::size_t);        \
  template Tensor<T> init_image_memory(const data::Dataset&, const model::ImageEncoder<T>&,       \
                                       std::size_t);                                              \
  template Tensor<T> init_text_memory(const data::Dataset&, const model::TextEncoder<T>&, IdStrategy); \
  template Tensor<T> text_memory_with_ids(const Tensor<T>&, const Tensor<T>&, IdStrategy);        \
  template Tensor<T> refine_memory(const Tensor<T>&, const Tensor<T>&);                           \
  template std::vector<std::pair<int, std::size_t>> momentum_update_hard(                         \
      Tensor<T>&, const Tensor<T>&, const std::vector<int>&, const std::vector<int>&, double);    \
  template Tensor<T> memory_target(MemoryMode, const MemoryBank<T>&, const Tensor<T>&,            \
                                   const FusionEncoder<T>*, const Tensor<T>&);

CGCLIP_INSTANTIATE(float)
CGCLIP_INSTANTIATE(double)

}  // namespace cgclip::cmr
