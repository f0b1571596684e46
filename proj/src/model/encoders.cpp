#include "cgclip/model/encoders.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <string>

#include "cgclip/data/sampling.hpp"
#include "cgclip/data/synthetic.hpp"
#include "cgclip/error.hpp"
#include "cgclip/log.hpp"
#include "cgclip/numerics/ops.hpp"

namespace cgclip::model {

using num::AttentionCapture;
using num::LayerNormLayer;
using num::LinearLayer;
using num::ParamList;
using num::Rng;
using num::TransformerBlock;

std::size_t EncoderDims::patches() const { return (height / patch) * (width / patch); }

void EncoderDims::validate() const {
  if (patch == 0 || height % patch != 0 || width % patch != 0)
    throw ConfigError("patch size " + std::to_string(patch) + " does not divide image " +
                      std::to_string(height) + "x" + std::to_string(width));
  if (heads == 0 || d_model % heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  if (embed_dim == 0 || depth == 0 || caption_max < 2)
    throw ConfigError("encoder dimensions must be positive and caption_max >= 2");
}

namespace {

std::vector<std::size_t> patch_index(std::size_t height, std::size_t width, std::size_t channels,
                                     std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0)
    throw ConfigError("patch size " + std::to_string(patch) + " does not divide image " +
                      std::to_string(height) + "x" + std::to_string(width));
  std::vector<std::size_t> idx;
  idx.reserve(height * width * channels);
  for (std::size_t py = 0; py < height / patch; ++py)
    for (std::size_t px = 0; px < width / patch; ++px)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t c = 0; c < channels; ++c)
            idx.push_back(((py * patch + y) * width + px * patch + x) * channels + c);
  return idx;
}

}  // namespace

template <Real T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch) {
  if (image.rank() != 3) throw DimensionError("patchify expects [H, W, C], got " +
                                              num::shape_string(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const auto idx = patch_index(h, w, c, patch);
  return num::reshape(num::gather(image, idx), {(h / patch) * (w / patch), patch * patch * c});
}

template <Real T>
Tensor<T> patchify_frames(std::span<const float> pixels, std::size_t count, std::size_t height,
                          std::size_t width, std::size_t channels, std::size_t patch) {
  const std::size_t frame = height * width * channels;
  if (pixels.size() != count * frame)
    throw DimensionError("patchify_frames: pixel buffer does not hold " + std::to_string(count) +
                         " frames");
  const auto idx = patch_index(height, width, channels, patch);
  std::vector<T> out(count * frame);
  for (std::size_t f = 0; f < count; ++f)
    for (std::size_t i = 0; i < frame; ++i)
      out[f * frame + i] = static_cast<T>(pixels[f * frame + idx[i]]);
  const std::size_t n = (height / patch) * (width / patch);
  return Tensor<T>::from_data({count, n, patch * patch * channels}, std::move(out));
}

template <Real T>
Tensor<T> tracklet_patches(const data::Dataset& ds, const std::vector<std::size_t>& tracklets,
                           const EncoderDims& dims, std::size_t frames, std::mt19937_64* rng) {
  if (tracklets.empty()) throw ContractError("tracklet_patches: no tracklets");
  const std::size_t frame_size = dims.height * dims.width * dims.channels;
  std::vector<float> pixels;
  pixels.reserve(tracklets.size() * frames * frame_size);
  for (std::size_t t : tracklets) {
    const auto& tr = ds.tracklets.at(t);
    if (static_cast<std::size_t>(tr.height) != dims.height || static_cast<std::size_t>(tr.width) != dims.width)
      throw DimensionError("tracklet " + std::to_string(tr.id) + " frame size differs from the encoder's");
    for (std::size_t f : data::sample_frames(static_cast<std::size_t>(tr.length), frames, rng)) {
      const auto px = tr.frame(static_cast<int>(f));
      pixels.insert(pixels.end(), px.begin(), px.end());
    }
  }
  return patchify_frames<T>(pixels, tracklets.size() * frames, dims.height, dims.width, dims.channels,
                            dims.patch);
}

template <Real T>
ImageEncoder<T> ImageEncoder<T>::init(const EncoderDims& dims, Rng& rng) {
  dims.validate();
  ImageEncoder e;
  e.dims = dims;
  e.patch_embed = LinearLayer<T>::init(dims.patch_pixels(), dims.d_model, rng);
  e.cls = num::normal_parameter<T>({dims.d_model}, rng, 0.02);
  e.positions = num::normal_parameter<T>({dims.tokens(), dims.d_model}, rng, 0.02);
  e.ln_pre = LayerNormLayer<T>::init(dims.d_model);
  for (std::size_t i = 0; i < dims.depth; ++i)
    e.blocks.push_back(TransformerBlock<T>::init(dims.d_model, dims.heads, rng));
  e.ln_post = LayerNormLayer<T>::init(dims.d_model);
  e.proj = LinearLayer<T>::init(dims.d_model, dims.embed_dim, rng, false,
                                1.0 / std::sqrt(static_cast<double>(dims.d_model)));
  return e;
}

template <Real T>
Tensor<T> ImageEncoder<T>::encode(const Tensor<T>& patches, AttentionCapture<T>* last_capture) const {
  if (patches.rank() != 3 || patches.dim(1) != dims.patches() || patches.dim(2) != dims.patch_pixels())
    throw DimensionError("image encoder expects [G, " + std::to_string(dims.patches()) + ", " +
                         std::to_string(dims.patch_pixels()) + "] patches, got " +
                         num::shape_string(patches.shape()));
  const std::size_t g = patches.dim(0);
  const Tensor<T> emb = patch_embed(patches);
  const Tensor<T> cls_rows = num::repeat_interleave(num::reshape(cls, {1, 1, dims.d_model}), g);
  Tensor<T> x = num::add(num::concat<T>({cls_rows, emb}, 1), positions);
  x = ln_pre(x);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    x = blocks[b](x, b + 1 == blocks.size() ? last_capture : nullptr);
  return ln_post(x);
}

template <Real T>
void ImageEncoder<T>::collect(ParamList<T>& out, const std::string& prefix) {
  patch_embed.collect(out, prefix + ".patch_embed");
  out.add(prefix + ".cls", cls);
  out.add(prefix + ".positions", positions);
  ln_pre.collect(out, prefix + ".ln_pre");
  for (std::size_t b = 0; b < blocks.size(); ++b)
    blocks[b].collect(out, prefix + ".block" + std::to_string(b));
  ln_post.collect(out, prefix + ".ln_post");
  proj.collect(out, prefix + ".proj");
}

template <Real T>
TextEncoder<T> TextEncoder<T>::init(const EncoderDims& dims, Rng& rng) {
  dims.validate();
  if (dims.vocab == 0) throw ConfigError("text encoder vocabulary size is unset");
  TextEncoder e;
  e.dims = dims;
  e.token_embed = num::normal_parameter<T>({dims.vocab, dims.d_model}, rng, 0.02);
  e.positions = num::normal_parameter<T>({dims.caption_max, dims.d_model}, rng, 0.01);
  for (std::size_t i = 0; i < dims.depth; ++i)
    e.blocks.push_back(TransformerBlock<T>::init(dims.d_model, dims.heads, rng));
  e.ln_final = LayerNormLayer<T>::init(dims.d_model);
  e.proj = LinearLayer<T>::init(dims.d_model, dims.embed_dim, rng, false,
                                1.0 / std::sqrt(static_cast<double>(dims.d_model)));
  return e;
}

std::vector<int> prepare_caption(const std::vector<int>& tokens, std::size_t max_len) {
  const auto eos = std::count(tokens.begin(), tokens.end(), data::vocab::kEos);
  if (eos == 0) throw InputError("caption has no EOS token");
  if (eos > 1) throw InputError("caption has " + std::to_string(eos) + " EOS tokens");
  if (tokens.size() <= max_len) return tokens;
  warn("caption of " + std::to_string(tokens.size()) + " tokens truncated to " +
       std::to_string(max_len));
  std::vector<int> out;
  for (int t : tokens) {
    if (out.size() + 1 == max_len) break;
    if (t != data::vocab::kEos) out.push_back(t);
  }
  out.push_back(data::vocab::kEos);
  return out;
}

template <Real T>
typename TextEncoder<T>::Output TextEncoder<T>::encode(const std::vector<std::vector<int>>& captions,
                                                       bool keep_tokens) const {
  if (captions.empty()) throw ContractError("text encoder called with no captions");
  std::vector<std::vector<int>> prepared;
  prepared.reserve(captions.size());
  for (const auto& c : captions) {
    prepared.push_back(prepare_caption(c, dims.caption_max));
    for (int t : prepared.back())
      if (t < 0 || static_cast<std::size_t>(t) >= dims.vocab)
        throw InputError("caption token " + std::to_string(t) + " outside vocabulary");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_len;
  for (std::size_t i = 0; i < prepared.size(); ++i) by_len[prepared[i].size()].push_back(i);

  Output out;
  if (keep_tokens) out.tokens.resize(captions.size());
  std::vector<Tensor<T>> eos_parts;
  std::vector<std::size_t> order;  // caption index of each stacked row
  const std::size_t d = dims.d_model;
  for (const auto& [len, members] : by_len) {
    const std::size_t g = members.size();
    std::vector<std::size_t> ids;
    std::vector<std::size_t> eos_flat;
    ids.reserve(g * len);
    for (std::size_t m = 0; m < g; ++m) {
      const auto& cap = prepared[members[m]];
      const auto eos_pos = static_cast<std::size_t>(
          std::find(cap.begin(), cap.end(), data::vocab::kEos) - cap.begin());
      for (int t : cap) ids.push_back(static_cast<std::size_t>(t));
      for (std::size_t e = 0; e < d; ++e) eos_flat.push_back((m * len + eos_pos) * d + e);
    }
    std::vector<std::size_t> pos_rows(len);
    std::iota(pos_rows.begin(), pos_rows.end(), 0);
    Tensor<T> x = num::reshape(num::embedding_lookup(token_embed, ids), {g, len, d});
    x = num::add(x, num::index_select(positions, pos_rows));
    for (const auto& block : blocks) x = block(x);
    x = ln_final(x);
    if (keep_tokens)
      for (std::size_t m = 0; m < g; ++m) {
        std::vector<std::size_t> flat(len * d);
        std::iota(flat.begin(), flat.end(), m * len * d);
        out.tokens[members[m]] = num::reshape(num::gather(x, flat), {len, d});
      }
    eos_parts.push_back(proj(num::reshape(num::gather(x, eos_flat), {g, d})));
    order.insert(order.end(), members.begin(), members.end());
  }
  Tensor<T> stacked = eos_parts.size() == 1 ? eos_parts[0] : num::concat(eos_parts, 0);
  std::vector<std::size_t> inverse(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) inverse[order[r]] = r;
  bool identity = true;
  for (std::size_t i = 0; i < inverse.size(); ++i) identity = identity && inverse[i] == i;
  out.eos = identity ? stacked : num::index_select(stacked, inverse);
  return out;
}

template <Real T>
void TextEncoder<T>::collect(ParamList<T>& out, const std::string& prefix) {
  out.add(prefix + ".token_embed", token_embed);
  out.add(prefix + ".positions", positions);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    blocks[b].collect(out, prefix + ".block" + std::to_string(b));
  ln_final.collect(out, prefix + ".ln_final");
  proj.collect(out, prefix + ".proj");
}

template <Real T>
Tensor<T> cls_rows(const Tensor<T>& tokens) {
  if (tokens.rank() != 3) throw DimensionError("cls_rows expects [G, tokens, width]");
  const std::size_t g = tokens.dim(0), n = tokens.dim(1), e = tokens.dim(2);
  std::vector<std::size_t> flat;
  flat.reserve(g * e);
  for (std::size_t i = 0; i < g; ++i)
    for (std::size_t j = 0; j < e; ++j) flat.push_back(i * n * e + j);
  return num::reshape(num::gather(tokens, flat), {g, e});
}

template <Real T>
Tensor<T> sequence_feature(const Tensor<T>& projected, std::size_t frames) {
  if (frames == 0) throw ContractError("sequence_feature: empty tracklet");
  if (projected.rank() != 3 || projected.dim(0) % frames != 0)
    throw DimensionError("sequence_feature: " + num::shape_string(projected.shape()) +
                         " is not a whole number of " + std::to_string(frames) + "-frame tracklets");
  const std::size_t b = projected.dim(0) / frames, e = projected.dim(2);
  return num::mean_axis(num::reshape(cls_rows(projected), {b, frames, e}), 1);
}

template <Real T>
Tensor<T> token_tap(const Tensor<T>& projected, std::size_t frames) {
  if (frames == 0) throw ContractError("token_tap: empty tracklet");
  if (projected.rank() != 3 || projected.dim(0) % frames != 0)
    throw DimensionError("token_tap: " + num::shape_string(projected.shape()) +
                         " is not a whole number of " + std::to_string(frames) + "-frame tracklets");
  const std::size_t b = projected.dim(0) / frames;
  return num::mean_axis(
      num::reshape(projected, {b, frames, projected.dim(1), projected.dim(2)}), 1);
}

template <Real T>
Tensor<T> cls_attention_from_capture(const AttentionCapture<T>& cap) {
  if (cap.probs.empty() || cap.groups == 0)
    throw ContractError("attention capture was not enabled for this forward pass");
  if (cap.queries != cap.keys || cap.keys < 2)
    throw ContractError("capture is not a self-attention map over CLS + patches");
  const std::size_t n = cap.keys - 1;
  std::vector<T> out(cap.heads * n);
  // Group 0 only; CLS is query row 0.
  for (std::size_t h = 0; h < cap.heads; ++h) {
    const T* row = cap.probs.data() + h * cap.queries * cap.keys;
    std::copy(row + 1, row + cap.keys, out.begin() + static_cast<long>(h * n));
  }
  return Tensor<T>::from_data({cap.heads, n}, std::move(out));
}

template <Real T>
Tensor<T> dump_cls_attention(std::span<const float> frame, const ImageEncoder<T>& encoder) {
  const auto& d = encoder.dims;
  num::NoGradGuard no_grad;
  AttentionCapture<T> cap;
  encoder.encode(patchify_frames<T>(frame, 1, d.height, d.width, d.channels, d.patch), &cap);
  return cls_attention_from_capture(cap);
}

#define CGCLIP_INSTANTIATE(T)                                                                  \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> patchify_frames<T>(std::span<const float>, std::size_t, std::size_t,      \
                                        std::size_t, std::size_t, std::size_t);                \
  template Tensor<T> tracklet_patches<T>(const data::Dataset&, const std::vector<std::size_t>&, \
                                         const EncoderDims&, std::size_t, std::mt19937_64*);   \
  template struct ImageEncoder<T>;                                                             \
  template struct TextEncoder<T>;                                                              \
  template Tensor<T> cls_rows(const Tensor<T>&);                                               \
  template Tensor<T> sequence_feature(const Tensor<T>&, std::size_t);                          \
  template Tensor<T> token_tap(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> cls_attention_from_capture(const AttentionCapture<T>&);                   \
  template Tensor<T> dump_cls_attention(std::span<const float>, const ImageEncoder<T>&);

CGCLIP_INSTANTIATE(float)
CGCLIP_INSTANTIATE(double)

}  // namespace cgclip::model
