#include "cgclip/tfe/tfe.hpp"

#include <fstream>
#include <iomanip>

#include "cgclip/error.hpp"
#include "cgclip/numerics/ops.hpp"

namespace cgclip::tfe {

template <Real T>
TokenFeatureExtractor<T> TokenFeatureExtractor<T>::init(std::size_t width, std::size_t heads,
                                                        std::size_t num_tokens, num::Rng& rng) {
  if (num_tokens == 0) throw ConfigError("TFE needs at least one learnable token");
  TokenFeatureExtractor t;
  t.num_tokens = num_tokens;
  t.width = width;
  t.queries = num::normal_parameter<T>({num_tokens, width}, rng, 0.02);
  t.temporal = num::LinearLayer<T>::init(width, width, rng);
  t.ln_temporal = num::LayerNormLayer<T>::init(width);
  t.temporal_attn = num::MultiHeadAttention<T>::init(width, heads, rng);
  t.ln_cross = num::LayerNormLayer<T>::init(width);
  t.cross = num::MultiHeadAttention<T>::init(width, heads, rng);
  t.ln_self = num::LayerNormLayer<T>::init(width);
  t.self = num::MultiHeadAttention<T>::init(width, heads, rng);
  t.ln_ffn = num::LayerNormLayer<T>::init(width);
  t.ffn = num::FeedForward<T>::init(width, 4, rng);
  return t;
}

namespace {

template <Real T>
void check_tokens(const Tensor<T>& tokens, std::size_t frames, std::size_t width) {
  if (frames == 0) throw ContractError("TFE: empty tracklet");
  if (tokens.rank() != 3 || tokens.dim(2) != width || tokens.dim(0) % frames != 0)
    throw DimensionError("TFE expects [B*L, 1+N, " + std::to_string(width) + "] tokens with L = " +
                         std::to_string(frames) + ", got " + num::shape_string(tokens.shape()));
}

}  // namespace

template <Real T>
Tensor<T> TokenFeatureExtractor<T>::temporal_compress(const Tensor<T>& tokens, std::size_t frames) const {
  check_tokens(tokens, frames, width);
  const std::size_t b = tokens.dim(0) / frames;
  return num::reshape(temporal(num::mean_axis(tokens, 1)), {b, frames, width});
}

template <Real T>
Tensor<T> TokenFeatureExtractor<T>::token_cross_attend(const Tensor<T>& z,
                                                       num::AttentionCapture<T>* capture) const {
  if (z.rank() != 3 || z.dim(2) != width)
    throw DimensionError("token_cross_attend expects [B, L, D], got " + num::shape_string(z.shape()));
  const Tensor<T> q_a =
      num::repeat_interleave(num::reshape(queries, {1, num_tokens, width}), z.dim(0));
  return num::add(q_a, temporal_attn(ln_temporal(q_a), z, z, capture));
}

template <Real T>
Tensor<T> TokenFeatureExtractor<T>::spatial_encode(const Tensor<T>& q_b, const Tensor<T>& tokens,
                                                   std::size_t frames,
                                                   num::AttentionCapture<T>* cross_capture) const {
  check_tokens(tokens, frames, width);
  if (q_b.rank() != 3 || q_b.dim(0) * frames != tokens.dim(0))
    throw DimensionError("spatial_encode: Q_b " + num::shape_string(q_b.shape()) + " vs tokens " +
                         num::shape_string(tokens.shape()));
  // Q_b is shared by every frame of its tracklet; gradients from all frames sum.
  Tensor<T> q = num::repeat_interleave(q_b, frames);
  q = num::add(q, cross(ln_cross(q), tokens, tokens, cross_capture));
  const Tensor<T> h = ln_self(q);
  q = num::add(q, self(h, h, h));
  return num::add(q, ffn(ln_ffn(q)));
}

template <Real T>
Tensor<T> TokenFeatureExtractor<T>::aggregate(const Tensor<T>& per_frame, std::size_t frames) const {
  if (frames == 0) throw ContractError("TFE: empty tracklet");
  if (per_frame.rank() != 3 || per_frame.dim(0) % frames != 0)
    throw DimensionError("aggregate: " + num::shape_string(per_frame.shape()));
  const std::size_t b = per_frame.dim(0) / frames;
  const Tensor<T> z_hat = num::mean_axis(per_frame, 1);  // [B*L, D]
  return num::mean_axis(num::reshape(z_hat, {b, frames, per_frame.dim(2)}), 1);
}

template <Real T>
Tensor<T> TokenFeatureExtractor<T>::forward(const Tensor<T>& tokens, std::size_t frames,
                                            num::AttentionCapture<T>* temporal_capture) const {
  const Tensor<T> z = temporal_compress(tokens, frames);
  const Tensor<T> q_b = token_cross_attend(z, temporal_capture);
  return aggregate(spatial_encode(q_b, tokens, frames), frames);
}

template <Real T>
void TokenFeatureExtractor<T>::zero_output_projections() {
  temporal.zero_out();
  temporal_attn.o.zero_out();
  cross.o.zero_out();
  self.o.zero_out();
  ffn.fc2.zero_out();
}

template <Real T>
void TokenFeatureExtractor<T>::collect(num::ParamList<T>& out, const std::string& prefix) {
  out.add(prefix + ".queries", queries);
  temporal.collect(out, prefix + ".temporal");
  ln_temporal.collect(out, prefix + ".ln_temporal");
  temporal_attn.collect(out, prefix + ".temporal_attn");
  ln_cross.collect(out, prefix + ".ln_cross");
  cross.collect(out, prefix + ".cross");
  ln_self.collect(out, prefix + ".ln_self");
  self.collect(out, prefix + ".self");
  ln_ffn.collect(out, prefix + ".ln_ffn");
  ffn.collect(out, prefix + ".ffn");
}

template <Real T>
Tensor<T> temporal_attention_from_capture(const num::AttentionCapture<T>& cap, std::size_t tracklet) {
  if (cap.probs.empty() || cap.groups == 0)
    throw ContractError("temporal attention capture was not enabled");
  if (tracklet >= cap.groups) throw ContractError("tracklet index outside the captured batch");
  std::vector<T> out(cap.queries * cap.keys, T(0));
  for (std::size_t h = 0; h < cap.heads; ++h) {
    const T* block = cap.probs.data() + ((tracklet * cap.heads + h) * cap.queries) * cap.keys;
    for (std::size_t i = 0; i < cap.queries * cap.keys; ++i) out[i] += block[i];
  }
  for (T& v : out) v /= static_cast<T>(cap.heads);
  return Tensor<T>::from_data({cap.queries, cap.keys}, std::move(out));
}

template <Real T>
Tensor<T> dump_temporal_attention(const Tensor<T>& tokens, std::size_t frames,
                                  const TokenFeatureExtractor<T>& tfe) {
  num::NoGradGuard no_grad;
  num::AttentionCapture<T> cap;
  tfe.token_cross_attend(tfe.temporal_compress(tokens, frames), &cap);
  return temporal_attention_from_capture(cap, 0);
}

void write_temporal_attention_csv(const std::filesystem::path& path, int tracklet_id,
                                  const Tensor<float>& weights) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  os << "tracklet_id,token,frame,weight\n" << std::setprecision(9);
  for (std::size_t q = 0; q < weights.dim(0); ++q)
    for (std::size_t l = 0; l < weights.dim(1); ++l)
      os << tracklet_id << ',' << q << ',' << l << ',' << weights.data()[q * weights.dim(1) + l] << '\n';
}

#define CGCLIP_INSTANTIATE(T)                                                                    \
  template struct TokenFeatureExtractor<T>;                                                      \
  template Tensor<T> temporal_attention_from_capture(const num::AttentionCapture<T>&, std::size_t); \
  template Tensor<T> dump_temporal_attention(const Tensor<T>&, std::size_t,                      \
                                             const TokenFeatureExtractor<T>&);

CGCLIP_INSTANTIATE(float)
CGCLIP_INSTANTIATE(double)

}  // namespace cgclip::tfe
