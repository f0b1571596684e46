#pragma once

// Miniature CLIP-style encoder pair. Both encoders are pre-norm transformers
// with learned absolute positional embeddings; each ends in a linear
// projection into the shared embedding space of width `embed_dim`.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "cgclip/data/synthetic.hpp"
#include "cgclip/numerics/nn.hpp"
#include "cgclip/numerics/tensor.hpp"

namespace cgclip::model {

using num::Real;
using num::Shape;
using num::Tensor;

struct EncoderDims {
  std::size_t height = 32;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::size_t patch = 8;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t depth = 2;
  std::size_t embed_dim = 32;
  std::size_t caption_max = 16;
  std::size_t vocab = 0;  // set from the identity count

  std::size_t patches() const;  // N^I
  std::size_t tokens() const { return patches() + 1; }
  std::size_t patch_pixels() const { return patch * patch * channels; }
  void validate() const;
};

// Rows of (H/patch)*(W/patch) flattened patches in raster order; each row is
// patch x patch x C in (row, col, channel) order.
template <Real T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch);

// Same layout for raw frames: `count` images of HxWxC -> [count, N, patch_pixels].
template <Real T>
Tensor<T> patchify_frames(std::span<const float> pixels, std::size_t count, std::size_t height,
                          std::size_t width, std::size_t channels, std::size_t patch);

// Patches of `frames` frames per tracklet, chosen by stratified sampling
// (deterministic when rng is null): [tracklets * frames, N, patch_pixels].
template <Real T>
Tensor<T> tracklet_patches(const data::Dataset& ds, const std::vector<std::size_t>& tracklets,
                           const EncoderDims& dims, std::size_t frames, std::mt19937_64* rng);

template <Real T>
struct ImageEncoder {
  EncoderDims dims;
  num::LinearLayer<T> patch_embed;
  Tensor<T> cls;        // [d_model]
  Tensor<T> positions;  // [1+N, d_model]
  num::LayerNormLayer<T> ln_pre;
  std::vector<num::TransformerBlock<T>> blocks;
  num::LayerNormLayer<T> ln_post;
  num::LinearLayer<T> proj;  // d_model -> embed_dim, no bias

  static ImageEncoder init(const EncoderDims& dims, num::Rng& rng);

  // patches [G, N, patch_pixels] -> tokens [G, 1+N, d_model] after ln_post.
  // `last_capture` receives the final block's attention probabilities.
  Tensor<T> encode(const Tensor<T>& patches, num::AttentionCapture<T>* last_capture = nullptr) const;
  // Visual projection of every token: [..., d_model] -> [..., embed_dim].
  Tensor<T> project(const Tensor<T>& tokens) const { return proj(tokens); }

  void collect(num::ParamList<T>& out, const std::string& prefix);
};

template <Real T>
struct TextEncoder {
  EncoderDims dims;
  Tensor<T> token_embed;  // [vocab, d_model]
  Tensor<T> positions;    // [caption_max, d_model]
  std::vector<num::TransformerBlock<T>> blocks;
  num::LayerNormLayer<T> ln_final;
  num::LinearLayer<T> proj;  // d_model -> embed_dim, no bias

  static TextEncoder init(const EncoderDims& dims, num::Rng& rng);

  struct Output {
    std::vector<Tensor<T>> tokens;  // per caption [len, d_model]
    Tensor<T> eos;                  // [captions, embed_dim], projected EOS features
  };

  // Captions of equal length are encoded together; attention is bidirectional.
  Output encode(const std::vector<std::vector<int>>& captions, bool keep_tokens = false) const;

  void collect(num::ParamList<T>& out, const std::string& prefix);
};

// Exactly one EOS is required. Captions longer than `max_len` keep their first
// max_len-1 non-EOS tokens followed by EOS, with a warning.
std::vector<int> prepare_caption(const std::vector<int>& tokens, std::size_t max_len);

// Row 0 of each frame (the CLS token): [G, 1+N, E] -> [G, E].
template <Real T>
Tensor<T> cls_rows(const Tensor<T>& tokens);

// b: mean over frames of the projected CLS tokens. projected [B*L, 1+N, D] -> [B, D].
template <Real T>
Tensor<T> sequence_feature(const Tensor<T>& projected, std::size_t frames);

// Per-tracklet token average over frames: [B*L, 1+N, D] -> [B, 1+N, D].
template <Real T>
Tensor<T> token_tap(const Tensor<T>& projected, std::size_t frames);

// CLS -> patch attention of the final block, per head: [heads, N]. Each row
// equals the CLS softmax row without its self-attention entry.
template <Real T>
Tensor<T> cls_attention_from_capture(const num::AttentionCapture<T>& capture);

template <Real T>
Tensor<T> dump_cls_attention(std::span<const float> frame, const ImageEncoder<T>& encoder);

}  // namespace cgclip::model
