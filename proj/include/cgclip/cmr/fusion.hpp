#pragma once

// Fusion encoder of caption-guided memory refinement: Text Memory rows are the
// queries, the batch's projected image tokens are the keys and values.
//
// Layout: LN + Linear on the queries, LN + Linear on the key/value tokens,
// `blocks` attention blocks, then LN + Linear on the output.

#include <string>
#include <vector>

#include "cgclip/numerics/nn.hpp"

namespace cgclip::cmr {

using num::Real;
using num::Tensor;

enum class FusionVariant {
  kCrossThenSelf,  // (c) default
  kSelfThenCross,  // (b)
  kConcatSelf,     // (a) self-attention over [queries; tokens]
};

FusionVariant parse_fusion_variant(const std::string& s);  // "a" | "b" | "c" or the long names
std::string to_string(FusionVariant v);

template <Real T>
struct FusionBlock {
  num::LayerNormLayer<T> ln_cross;
  num::MultiHeadAttention<T> cross;
  num::LayerNormLayer<T> ln_self;
  num::MultiHeadAttention<T> self;
  num::LayerNormLayer<T> ln_ffn;
  num::FeedForward<T> ffn;
};

template <Real T>
struct FusionEncoder {
  FusionVariant variant = FusionVariant::kCrossThenSelf;
  num::LayerNormLayer<T> ln_query;
  num::LinearLayer<T> in_query;
  num::LayerNormLayer<T> ln_tokens;
  num::LinearLayer<T> in_tokens;
  std::vector<FusionBlock<T>> blocks;
  num::LayerNormLayer<T> ln_out;
  num::LinearLayer<T> out;

  static FusionEncoder init(std::size_t width, std::size_t heads, std::size_t blocks,
                            FusionVariant variant, num::Rng& rng);

  // text_memory [Y, D], tokens [K, D] -> [Y, D]
  Tensor<T> operator()(const Tensor<T>& text_memory, const Tensor<T>& tokens) const;

  // Zeroes every attention and FFN output projection inside the blocks; the
  // blocks then pass their input through unchanged.
  void zero_block_outputs();
  // Zeroes the final projection, making the encoder output identically zero.
  void zero_output();

  void collect(num::ParamList<T>& out, const std::string& prefix);
};

}  // namespace cgclip::cmr
