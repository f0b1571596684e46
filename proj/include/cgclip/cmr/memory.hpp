#pragma once

// Identity memories: Image Memory (frozen-encoder prototypes, momentum
// updated), Text Memory (caption prototypes, fixed) and the Refined Memory
// that combines them through the fusion encoder.

#include <cstdint>
#include <string>
#include <vector>

#include "cgclip/cmr/fusion.hpp"
#include "cgclip/data/synthetic.hpp"
#include "cgclip/model/encoders.hpp"
#include "cgclip/numerics/nn.hpp"

namespace cgclip::cmr {

enum class IdStrategy { kNone, kIdText, kIdEmb };
IdStrategy parse_id_strategy(const std::string& s);  // none | id-text | id-emb
std::string to_string(IdStrategy s);

// Contrastive target used by the video-to-memory loss.
enum class MemoryMode {
  kImage,     // M^I
  kText,      // M^T
  kNaiveSum,  // M^T + M^I, fusion bypassed
  kRefined,   // Fusion(M^T, F) + M^I
};
MemoryMode parse_memory_mode(const std::string& s);  // image | text | naive-sum | refined
std::string to_string(MemoryMode m);

template <Real T>
struct MemoryBank {
  Tensor<T> image;  // [Y, D], unit-norm rows
  Tensor<T> text;   // [Y, D], fixed after init
  double momentum = 0.2;

  std::size_t identities() const { return image.defined() ? image.dim(0) : 0; }
  std::uint64_t text_checksum() const;
  std::uint64_t image_checksum() const;
};

// Per-identity mean of feature rows: features [n, D], labels in [0, Y).
// Throws DataError if an identity has no rows.
template <Real T>
Tensor<T> identity_means(const Tensor<T>& features, const std::vector<int>& labels, std::size_t y);

// Rows of `m` scaled to unit L2 norm (no gradient).
template <Real T>
Tensor<T> normalize_rows(const Tensor<T>& m);

// Frozen-encoder sequence features b* for the given tracklets, using the
// deterministic stratified choice of `frames` frames per tracklet.
template <Real T>
Tensor<T> frozen_sequence_features(const data::Dataset& ds, const std::vector<std::size_t>& tracklets,
                                   const model::ImageEncoder<T>& encoder, std::size_t frames);

template <Real T>
Tensor<T> init_image_memory(const data::Dataset& ds, const model::ImageEncoder<T>& frozen,
                            std::size_t frames);

// Captions as fed to the text encoder under a strategy. For id-text the
// identity phrase "ID_IS <id>" is inserted before EOS.
std::vector<int> caption_for_strategy(const std::vector<int>& tokens, int label, IdStrategy strategy);

// M^T_y = mean of the projected EOS features of y's captions. For id-emb the
// learned table row is added separately (see text_memory_with_ids), so the
// returned base is the same as for strategy none.
template <Real T>
Tensor<T> init_text_memory(const data::Dataset& ds, const model::TextEncoder<T>& frozen,
                           IdStrategy strategy);

// base + table for id-emb, base otherwise.
template <Real T>
Tensor<T> text_memory_with_ids(const Tensor<T>& base, const Tensor<T>& id_table, IdStrategy strategy);

// M^R = fused + image (plain sum).
template <Real T>
Tensor<T> refine_memory(const Tensor<T>& fused_text, const Tensor<T>& image_memory);

// For each identity in the batch, the positive least similar to its memory
// row (ties: lowest tracklet id) replaces the row with
// normalize(m * row + (1 - m) * b_hard). Runs without gradient recording.
// Returns the batch index chosen per updated identity.
template <Real T>
std::vector<std::pair<int, std::size_t>> momentum_update_hard(Tensor<T>& image_memory,
                                                              const Tensor<T>& features,
                                                              const std::vector<int>& labels,
                                                              const std::vector<int>& tracklet_ids,
                                                              double momentum);

// Contrastive target for a step. `tokens` is the batch token set F [K, D];
// memories enter as constants so no gradient reaches them.
template <Real T>
Tensor<T> memory_target(MemoryMode mode, const MemoryBank<T>& bank, const Tensor<T>& text_memory,
                        const FusionEncoder<T>* fusion, const Tensor<T>& tokens);

}  // namespace cgclip::cmr
