#pragma once

// Everything a training run owns: the trainable image encoder, the frozen
// encoder pair, the token feature extractor, the fusion encoder, the id
// table, two classifier heads and the memory bank.

#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "cgclip/cmr/fusion.hpp"
#include "cgclip/cmr/memory.hpp"
#include "cgclip/data/synthetic.hpp"
#include "cgclip/eval/retrieval.hpp"
#include "cgclip/model/checkpoint.hpp"
#include "cgclip/model/encoders.hpp"
#include "cgclip/objectives/losses.hpp"
#include "cgclip/tfe/tfe.hpp"

namespace cgclip::pipeline {

using num::Real;
using num::Tensor;

struct ModelSpec {
  model::EncoderDims dims;
  std::size_t identities = 16;
  std::size_t frames = 4;
  bool use_tfe = true;
  cmr::MemoryMode memory = cmr::MemoryMode::kRefined;
  cmr::FusionVariant fusion_variant = cmr::FusionVariant::kCrossThenSelf;
  std::size_t fusion_blocks = 2;
  cmr::IdStrategy id_strategy = cmr::IdStrategy::kNone;
  std::size_t num_tokens = 4;
  double momentum = 0.2;
};

nlohmann::json to_json(const ModelSpec& s);
ModelSpec model_spec_from_json(const nlohmann::json& j);

template <Real T>
struct ModelState {
  ModelSpec spec;
  model::ImageEncoder<T> image;
  model::ImageEncoder<T> frozen_image;
  model::TextEncoder<T> frozen_text;
  tfe::TokenFeatureExtractor<T> tfe;
  cmr::FusionEncoder<T> fusion;
  Tensor<T> id_table;  // [Y, D], zero init
  num::LinearLayer<T> head_b;
  num::LinearLayer<T> head_bhat;
  cmr::MemoryBank<T> bank;  // bank.text holds the cached base M^T

  // Random initialization of every module; the trainable image encoder starts
  // as a copy of the frozen one.
  static ModelState init(const ModelSpec& spec, num::Rng& rng);

  // Parameters that receive gradients under the spec's switches.
  void collect_trainable(num::ParamList<T>& out);
  void collect_frozen(num::ParamList<T>& out);
  // Every parameter, trainable or not; the checkpoint layout.
  void collect_all(num::ParamList<T>& out);

  // Builds M^I from the frozen image encoder and M^T from the frozen text
  // encoder over the given corpus.
  void init_memories(const data::Dataset& ds);

  std::uint64_t frozen_checksum();
};

template <Real T>
struct BatchOutputs {
  Tensor<T> projected;  // [B*L, 1+N, D]
  Tensor<T> b;          // [B, D]
  Tensor<T> b_hat;      // [B, D] or undefined
  Tensor<T> token_set;  // F, [B*(1+N), D]
  Tensor<T> target;     // [Y, D]
  obj::LossOutput<T> loss;
};

// Patches [B*L, N, patch_pixels] for the batch's tracklets. Frames are drawn
// by stratified sampling when rng is given.
template <Real T>
Tensor<T> batch_patches(const ModelState<T>& state, const data::Dataset& ds,
                        const std::vector<std::size_t>& tracklets, std::mt19937_64* rng);

template <Real T>
BatchOutputs<T> forward_batch(const ModelState<T>& state, const Tensor<T>& patches,
                              const std::vector<int>& labels, const obj::LossConfig& loss);

// b and b_hat for the given patches without recording gradients.
template <Real T>
std::pair<Tensor<T>, Tensor<T>> sequence_features(const ModelState<T>& state, const Tensor<T>& patches);

// Final representations of the listed tracklets (deterministic frame choice).
eval::EmbeddingSet embed_tracklets(const ModelState<float>& state, const data::Dataset& ds,
                                   const std::vector<std::size_t>& tracklets);

// Query/gallery evaluation of a model on a corpus.
eval::RetrievalReport evaluate_model(const ModelState<float>& state, const data::Dataset& ds,
                                     const std::vector<std::size_t>& ks);

model::Checkpoint to_checkpoint(ModelState<float>& state);
ModelState<float> from_checkpoint(const model::Checkpoint& ckpt);

}  // namespace cgclip::pipeline
