#pragma once

// Token-based feature extraction. A fixed set of learnable tokens first reads
// the per-frame summaries (temporal step), then reads each frame's tokens
// (spatial step); the result is averaged over tokens and frames.
//
// Inputs are projected frame tokens laid out [B*L, 1+N, D], frames of one
// tracklet contiguous.

#include <filesystem>
#include <string>
#include <vector>

#include "cgclip/numerics/nn.hpp"

namespace cgclip::tfe {

using num::Real;
using num::Tensor;

template <Real T>
struct TokenFeatureExtractor {
  std::size_t num_tokens = 4;
  std::size_t width = 32;
  Tensor<T> queries;  // Q_a [N^Q, D]
  num::LinearLayer<T> temporal;
  num::LayerNormLayer<T> ln_temporal;
  num::MultiHeadAttention<T> temporal_attn;
  num::LayerNormLayer<T> ln_cross;
  num::MultiHeadAttention<T> cross;
  num::LayerNormLayer<T> ln_self;
  num::MultiHeadAttention<T> self;
  num::LayerNormLayer<T> ln_ffn;
  num::FeedForward<T> ffn;

  static TokenFeatureExtractor init(std::size_t width, std::size_t heads, std::size_t num_tokens,
                                    num::Rng& rng);

  // z_l = Linear(mean over the frame's tokens): [B*L, 1+N, D] -> [B, L, D].
  Tensor<T> temporal_compress(const Tensor<T>& tokens, std::size_t frames) const;
  // Q_b = Q_a + CrossAttn(LN(Q_a), Z, Z): [B, L, D] -> [B, N^Q, D].
  Tensor<T> token_cross_attend(const Tensor<T>& z, num::AttentionCapture<T>* capture = nullptr) const;
  // Per frame: q += CrossAttn(LN(q), F_l); q += SelfAttn(LN(q)); q += FFN(LN(q)),
  // with q starting from the tracklet's Q_b: -> [B*L, N^Q, D].
  Tensor<T> spatial_encode(const Tensor<T>& q_b, const Tensor<T>& tokens, std::size_t frames,
                           num::AttentionCapture<T>* cross_capture = nullptr) const;
  // Mean over the N^Q tokens, then over frames: [B*L, N^Q, D] -> [B, D].
  Tensor<T> aggregate(const Tensor<T>& per_frame, std::size_t frames) const;

  Tensor<T> forward(const Tensor<T>& tokens, std::size_t frames,
                    num::AttentionCapture<T>* temporal_capture = nullptr) const;

  // Zeroes the temporal linear map and every attention/FFN output projection.
  // forward() then returns mean(Q_a) for every input.
  void zero_output_projections();

  void collect(num::ParamList<T>& out, const std::string& prefix);
};

// Head-averaged temporal attention of one tracklet from a capture:
// [N^Q, L], row 0 is the first learnable token's weight per frame.
template <Real T>
Tensor<T> temporal_attention_from_capture(const num::AttentionCapture<T>& capture, std::size_t tracklet);

template <Real T>
Tensor<T> dump_temporal_attention(const Tensor<T>& tokens, std::size_t frames,
                                  const TokenFeatureExtractor<T>& tfe);

// CSV rows: tracklet_id,token,frame,weight
void write_temporal_attention_csv(const std::filesystem::path& path, int tracklet_id,
                                  const Tensor<float>& weights);

}  // namespace cgclip::tfe
