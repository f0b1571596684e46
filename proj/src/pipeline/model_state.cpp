#include "cgclip/pipeline/model_state.hpp"

#include <numeric>

#include "cgclip/error.hpp"
#include "cgclip/eval/representation.hpp"
#include "cgclip/model/snapshot.hpp"
#include "cgclip/numerics/ops.hpp"

namespace cgclip::pipeline {

using nlohmann::json;

json to_json(const ModelSpec& s) {
  return {{"dims",
           {{"height", s.dims.height},
            {"width", s.dims.width},
            {"channels", s.dims.channels},
            {"patch", s.dims.patch},
            {"d_model", s.dims.d_model},
            {"heads", s.dims.heads},
            {"depth", s.dims.depth},
            {"embed_dim", s.dims.embed_dim},
            {"caption_max", s.dims.caption_max},
            {"vocab", s.dims.vocab}}},
          {"identities", s.identities},
          {"frames", s.frames},
          {"use_tfe", s.use_tfe},
          {"memory", cmr::to_string(s.memory)},
          {"fusion_variant", cmr::to_string(s.fusion_variant)},
          {"fusion_blocks", s.fusion_blocks},
          {"id_strategy", cmr::to_string(s.id_strategy)},
          {"num_tokens", s.num_tokens},
          {"momentum", s.momentum}};
}

ModelSpec model_spec_from_json(const json& j) {
  ModelSpec s;
  try {
    const auto& d = j.at("dims");
    s.dims.height = d.at("height").get<std::size_t>();
    s.dims.width = d.at("width").get<std::size_t>();
    s.dims.channels = d.at("channels").get<std::size_t>();
    s.dims.patch = d.at("patch").get<std::size_t>();
    s.dims.d_model = d.at("d_model").get<std::size_t>();
    s.dims.heads = d.at("heads").get<std::size_t>();
    s.dims.depth = d.at("depth").get<std::size_t>();
    s.dims.embed_dim = d.at("embed_dim").get<std::size_t>();
    s.dims.caption_max = d.at("caption_max").get<std::size_t>();
    s.dims.vocab = d.at("vocab").get<std::size_t>();
    s.identities = j.at("identities").get<std::size_t>();
    s.frames = j.at("frames").get<std::size_t>();
    s.use_tfe = j.at("use_tfe").get<bool>();
    s.memory = cmr::parse_memory_mode(j.at("memory").get<std::string>());
    s.fusion_variant = cmr::parse_fusion_variant(j.at("fusion_variant").get<std::string>());
    s.fusion_blocks = j.at("fusion_blocks").get<std::size_t>();
    s.id_strategy = cmr::parse_id_strategy(j.at("id_strategy").get<std::string>());
    s.num_tokens = j.at("num_tokens").get<std::size_t>();
    s.momentum = j.at("momentum").get<double>();
  } catch (const json::exception& e) {
    throw InputError(std::string("model spec: ") + e.what());
  }
  s.dims.validate();
  return s;
}

namespace {

bool memory_uses_text(cmr::MemoryMode m) { return m != cmr::MemoryMode::kImage; }

}  // namespace

template <Real T>
ModelState<T> ModelState<T>::init(const ModelSpec& spec, num::Rng& rng) {
  spec.dims.validate();
  if (spec.identities < 2) throw ConfigError("a model needs at least two identities");
  ModelState s;
  s.spec = spec;
  const std::size_t d = spec.dims.embed_dim, heads = spec.dims.heads;
  s.frozen_image = model::ImageEncoder<T>::init(spec.dims, rng);
  s.frozen_text = model::TextEncoder<T>::init(spec.dims, rng);
  s.frozen_image = model::snapshot<T>(s.frozen_image, false);
  s.frozen_text = model::snapshot<T>(s.frozen_text, false);
  s.image = model::snapshot<T>(s.frozen_image, true);
  s.tfe = tfe::TokenFeatureExtractor<T>::init(d, heads, spec.num_tokens, rng);
  s.fusion = cmr::FusionEncoder<T>::init(d, heads, spec.fusion_blocks, spec.fusion_variant, rng);
  s.id_table = Tensor<T>::zeros({spec.identities, d}, true);
  s.head_b = num::LinearLayer<T>::init(d, spec.identities, rng);
  s.head_bhat = num::LinearLayer<T>::init(d, spec.identities, rng);
  s.bank.momentum = spec.momentum;
  return s;
}

template <Real T>
void ModelState<T>::collect_trainable(num::ParamList<T>& out) {
  image.collect(out, "image");
  head_b.collect(out, "head_b");
  if (spec.use_tfe) {
    tfe.collect(out, "tfe");
    head_bhat.collect(out, "head_bhat");
  }
  if (spec.memory == cmr::MemoryMode::kRefined) fusion.collect(out, "fusion");
  if (spec.id_strategy == cmr::IdStrategy::kIdEmb && memory_uses_text(spec.memory))
    out.add("id_table", id_table);
}

template <Real T>
void ModelState<T>::collect_frozen(num::ParamList<T>& out) {
  frozen_image.collect(out, "frozen_image");
  frozen_text.collect(out, "frozen_text");
}

template <Real T>
void ModelState<T>::collect_all(num::ParamList<T>& out) {
  image.collect(out, "image");
  collect_frozen(out);
  tfe.collect(out, "tfe");
  fusion.collect(out, "fusion");
  out.add("id_table", id_table);
  head_b.collect(out, "head_b");
  head_bhat.collect(out, "head_bhat");
}

template <Real T>
void ModelState<T>::init_memories(const data::Dataset& ds) {
  if (static_cast<std::size_t>(ds.identity_count()) != spec.identities)
    throw DataError("corpus has " + std::to_string(ds.identity_count()) + " identities, model expects " +
                    std::to_string(spec.identities));
  bank.image = cmr::init_image_memory(ds, frozen_image, spec.frames);
  bank.text = cmr::init_text_memory(ds, frozen_text, spec.id_strategy);
  bank.momentum = spec.momentum;
}

template <Real T>
std::uint64_t ModelState<T>::frozen_checksum() {
  num::ParamList<T> p;
  collect_frozen(p);
  return p.checksum();
}

template <Real T>
Tensor<T> batch_patches(const ModelState<T>& state, const data::Dataset& ds,
                        const std::vector<std::size_t>& tracklets, std::mt19937_64* rng) {
  return model::tracklet_patches<T>(ds, tracklets, state.spec.dims, state.spec.frames, rng);
}

template <Real T>
BatchOutputs<T> forward_batch(const ModelState<T>& state, const Tensor<T>& patches,
                              const std::vector<int>& labels, const obj::LossConfig& loss) {
  const auto& spec = state.spec;
  const std::size_t frames = spec.frames;
  if (patches.rank() != 3 || patches.dim(0) != labels.size() * frames)
    throw DimensionError("forward_batch: patches " + num::shape_string(patches.shape()) + " for " +
                         std::to_string(labels.size()) + " tracklets of " + std::to_string(frames) + " frames");
  if (!state.bank.image.defined()) throw ContractError("forward_batch: memories are not initialized");
  BatchOutputs<T> out;
  out.projected = state.image.project(state.image.encode(patches));
  out.b = model::sequence_feature(out.projected, frames);
  if (spec.use_tfe) out.b_hat = state.tfe.forward(out.projected, frames);
  const auto tap = model::token_tap(out.projected, frames);
  out.token_set = num::reshape(tap, {tap.dim(0) * tap.dim(1), tap.dim(2)});
  const auto text = cmr::text_memory_with_ids(state.bank.text, state.id_table, spec.id_strategy);
  out.target = cmr::memory_target(spec.memory, state.bank, text, &state.fusion, out.token_set);

  obj::LossInputs<T> in;
  in.b = out.b;
  in.b_hat = out.b_hat;
  in.target = out.target;
  in.logits_b = state.head_b(out.b);
  if (spec.use_tfe) in.logits_bhat = state.head_bhat(out.b_hat);
  in.labels = labels;
  out.loss = obj::total_loss(in, loss);
  return out;
}

template <Real T>
std::pair<Tensor<T>, Tensor<T>> sequence_features(const ModelState<T>& state, const Tensor<T>& patches) {
  num::NoGradGuard no_grad;
  const auto projected = state.image.project(state.image.encode(patches));
  Tensor<T> b = model::sequence_feature(projected, state.spec.frames);
  Tensor<T> b_hat;
  if (state.spec.use_tfe) b_hat = state.tfe.forward(projected, state.spec.frames);
  return {b, b_hat};
}

eval::EmbeddingSet embed_tracklets(const ModelState<float>& state, const data::Dataset& ds,
                                   const std::vector<std::size_t>& tracklets) {
  constexpr std::size_t kChunk = 32;
  eval::EmbeddingSet set;
  for (std::size_t start = 0; start < tracklets.size(); start += kChunk) {
    const std::vector<std::size_t> chunk(
        tracklets.begin() + static_cast<long>(start),
        tracklets.begin() + static_cast<long>(std::min(tracklets.size(), start + kChunk)));
    const auto [b, b_hat] = sequence_features(state, batch_patches(state, ds, chunk, nullptr));
    Tensor<float> rep;
    {
      num::NoGradGuard no_grad;
      rep = eval::final_representation(b, b_hat);
    }
    set.dim = rep.dim(1);
    for (float v : rep.data()) set.rows.push_back(static_cast<double>(v));
    for (std::size_t t : chunk) {
      set.ids.push_back(ds.tracklets[t].id);
      set.labels.push_back(ds.tracklets[t].label);
    }
  }
  return set;
}

eval::RetrievalReport evaluate_model(const ModelState<float>& state, const data::Dataset& ds,
                                     const std::vector<std::size_t>& ks) {
  const auto splits = eval::make_splits(ds);
  return eval::evaluate(embed_tracklets(state, ds, splits.query), embed_tracklets(state, ds, splits.gallery), ks);
}

model::Checkpoint to_checkpoint(ModelState<float>& state) {
  model::Checkpoint ckpt;
  num::ParamList<float> all;
  state.collect_all(all);
  ckpt.store(all);
  if (state.bank.image.defined()) ckpt.put("memory.image", state.bank.image);
  if (state.bank.text.defined()) ckpt.put("memory.text", state.bank.text);
  ckpt.meta["model"] = to_json(state.spec);
  return ckpt;
}

ModelState<float> from_checkpoint(const model::Checkpoint& ckpt) {
  if (!ckpt.meta.contains("model")) throw InputError("checkpoint has no model spec");
  const ModelSpec spec = model_spec_from_json(ckpt.meta.at("model"));
  num::Rng rng(0);
  auto state = ModelState<float>::init(spec, rng);
  num::ParamList<float> all;
  state.collect_all(all);
  ckpt.load_into(all);
  num::ParamList<float> frozen;
  state.collect_frozen(frozen);
  frozen.set_requires_grad(false);
  if (ckpt.contains("memory.image")) state.bank.image = ckpt.get("memory.image");
  if (ckpt.contains("memory.text")) state.bank.text = ckpt.get("memory.text");
  return state;
}

#define CGCLIP_INSTANTIATE(T)                                                                          \
  template struct ModelState<T>;                                                                       \
  template Tensor<T> batch_patches(const ModelState<T>&, const data::Dataset&,                        \
                                   const std::vector<std::size_t>&, std::mt19937_64*);                 \
  template BatchOutputs<T> forward_batch(const ModelState<T>&, const Tensor<T>&, const std::vector<int>&, \
                                         const obj::LossConfig&);                                      \
  template std::pair<Tensor<T>, Tensor<T>> sequence_features(const ModelState<T>&, const Tensor<T>&);

CGCLIP_INSTANTIATE(float)
CGCLIP_INSTANTIATE(double)

}  // namespace cgclip::pipeline
