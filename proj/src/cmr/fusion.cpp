#include "cgclip/cmr/fusion.hpp"

#include "cgclip/error.hpp"
#include "cgclip/numerics/ops.hpp"

namespace cgclip::cmr {

FusionVariant parse_fusion_variant(const std::string& s) {
  if (s == "a" || s == "concat_self") return FusionVariant::kConcatSelf;
  if (s == "b" || s == "self_then_cross") return FusionVariant::kSelfThenCross;
  if (s == "c" || s == "cross_then_self") return FusionVariant::kCrossThenSelf;
  throw ConfigError("unknown fusion variant '" + s + "' (expected a, b or c)");
}

std::string to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::kConcatSelf: return "concat_self";
    case FusionVariant::kSelfThenCross: return "self_then_cross";
    case FusionVariant::kCrossThenSelf: return "cross_then_self";
  }
  return "?";
}

template <Real T>
FusionEncoder<T> FusionEncoder<T>::init(std::size_t width, std::size_t heads, std::size_t nblocks,
                                        FusionVariant variant, num::Rng& rng) {
  if (nblocks == 0) throw ConfigError("fusion encoder needs at least one block");
  FusionEncoder f;
  f.variant = variant;
  f.ln_query = num::LayerNormLayer<T>::init(width);
  f.in_query = num::LinearLayer<T>::init(width, width, rng);
  f.ln_tokens = num::LayerNormLayer<T>::init(width);
  f.in_tokens = num::LinearLayer<T>::init(width, width, rng);
  for (std::size_t b = 0; b < nblocks; ++b) {
    FusionBlock<T> blk{num::LayerNormLayer<T>::init(width),
                       num::MultiHeadAttention<T>::init(width, heads, rng),
                       num::LayerNormLayer<T>::init(width),
                       num::MultiHeadAttention<T>::init(width, heads, rng),
                       num::LayerNormLayer<T>::init(width),
                       num::FeedForward<T>::init(width, 4, rng)};
    f.blocks.push_back(std::move(blk));
  }
  f.ln_out = num::LayerNormLayer<T>::init(width);
  f.out = num::LinearLayer<T>::init(width, width, rng);
  return f;
}

template <Real T>
Tensor<T> FusionEncoder<T>::operator()(const Tensor<T>& text_memory, const Tensor<T>& tokens) const {
  if (text_memory.rank() != 2 || tokens.rank() != 2 || text_memory.dim(1) != tokens.dim(1))
    throw DimensionError("fusion encoder: queries " + num::shape_string(text_memory.shape()) +
                         " vs tokens " + num::shape_string(tokens.shape()));
  const std::size_t y = text_memory.dim(0);
  Tensor<T> q = in_query(ln_query(text_memory));
  const Tensor<T> kv = in_tokens(ln_tokens(tokens));
  if (variant == FusionVariant::kConcatSelf) {
    Tensor<T> x = num::concat<T>({q, kv}, 0);
    for (const auto& blk : blocks) {
      const Tensor<T> h = blk.ln_self(x);
      x = num::add(x, blk.self(h, h, h));
      x = num::add(x, blk.ffn(blk.ln_ffn(x)));
    }
    std::vector<std::size_t> rows(y);
    for (std::size_t i = 0; i < y; ++i) rows[i] = i;
    q = num::index_select(x, rows);
  } else {
    for (const auto& blk : blocks) {
      auto cross = [&](const Tensor<T>& x) { return num::add(x, blk.cross(blk.ln_cross(x), kv, kv)); };
      auto self = [&](const Tensor<T>& x) {
        const Tensor<T> h = blk.ln_self(x);
        return num::add(x, blk.self(h, h, h));
      };
      q = variant == FusionVariant::kCrossThenSelf ? self(cross(q)) : cross(self(q));
      q = num::add(q, blk.ffn(blk.ln_ffn(q)));
    }
  }
  return out(ln_out(q));
}

template <Real T>
void FusionEncoder<T>::zero_block_outputs() {
  for (auto& blk : blocks) {
    blk.cross.o.zero_out();
    blk.self.o.zero_out();
    blk.ffn.fc2.zero_out();
  }
}

template <Real T>
void FusionEncoder<T>::zero_output() {
  out.zero_out();
}

template <Real T>
void FusionEncoder<T>::collect(num::ParamList<T>& params, const std::string& prefix) {
  ln_query.collect(params, prefix + ".ln_query");
  in_query.collect(params, prefix + ".in_query");
  ln_tokens.collect(params, prefix + ".ln_tokens");
  in_tokens.collect(params, prefix + ".in_tokens");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string p = prefix + ".block" + std::to_string(b);
    // Concat-self has no cross-attention; its unused weights stay out of the list.
    if (variant != FusionVariant::kConcatSelf) {
      blocks[b].ln_cross.collect(params, p + ".ln_cross");
      blocks[b].cross.collect(params, p + ".cross");
    }
    blocks[b].ln_self.collect(params, p + ".ln_self");
    blocks[b].self.collect(params, p + ".self");
    blocks[b].ln_ffn.collect(params, p + ".ln_ffn");
    blocks[b].ffn.collect(params, p + ".ffn");
  }
  ln_out.collect(params, prefix + ".ln_out");
  out.collect(params, prefix + ".out");
}

template struct FusionEncoder<float>;
template struct FusionEncoder<double>;

}  // namespace cgclip::cmr
