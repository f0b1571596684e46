#include "cgclip/model/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cgclip/error.hpp"
#include "cgclip/model/snapshot.hpp"
#include "cgclip/numerics/ops.hpp"

namespace cgclip::model {

using num::ParamList;

EncoderDims dims_for(const data::Dataset& dataset, EncoderDims base) {
  base.height = static_cast<std::size_t>(dataset.config.height);
  base.width = static_cast<std::size_t>(dataset.config.width);
  base.channels = 3;
  base.vocab = static_cast<std::size_t>(data::vocab::vocab_size(dataset.identity_count()));
  base.validate();
  return base;
}

template <Real T>
Tensor<T> symmetric_info_nce(const Tensor<T>& image, const Tensor<T>& text,
                             const Tensor<T>& logit_scale) {
  if (image.rank() != 2 || image.shape() != text.shape())
    throw DimensionError("info_nce: image " + num::shape_string(image.shape()) + " vs text " +
                         num::shape_string(text.shape()));
  const std::size_t n = image.dim(0);
  const Tensor<T> cos = num::cosine_similarity(image, text);
  const Tensor<T> scale_full = num::gather(num::exp(logit_scale), std::vector<std::size_t>(n * n, 0));
  const Tensor<T> logits = num::reshape(num::mul(num::reshape(cos, {n * n}), scale_full), {n, n});
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i * n + i;
  const Tensor<T> i2t = num::mean(num::gather(num::log_softmax(logits, 1), diag));
  const Tensor<T> t2i = num::mean(num::gather(num::log_softmax(logits, 0), diag));
  return num::scale(num::add(i2t, t2i), T(-0.5));
}

std::vector<std::size_t> pretrain_holdout(const data::Dataset& ds, double fraction) {
  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(ds.identity_count()));
  for (std::size_t i = 0; i < ds.tracklets.size(); ++i)
    by_label.at(static_cast<std::size_t>(ds.tracklets[i].label)).push_back(i);
  std::vector<std::size_t> held;
  for (auto& members : by_label) {
    std::sort(members.begin(), members.end(),
              [&](std::size_t a, std::size_t b) { return ds.tracklets[a].id < ds.tracklets[b].id; });
    if (members.size() < 2) continue;
    auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(members.size())));
    k = std::min(k, members.size() - 1);
    held.insert(held.end(), members.end() - static_cast<long>(k), members.end());
  }
  std::sort(held.begin(), held.end());
  return held;
}

double image_to_caption_top1(const data::Dataset& ds, const std::vector<std::size_t>& tracklets,
                             const ImageEncoder<float>& image, const TextEncoder<float>& text) {
  if (tracklets.empty()) return 0.0;
  num::NoGradGuard no_grad;
  std::vector<std::vector<int>> captions;
  for (const auto& c : ds.captions) captions.push_back(c.tokens);
  const Tensor<float> txt = text.encode(captions).eos;
  const auto& d = image.dims;
  std::size_t correct = 0, total = 0;
  for (std::size_t t : tracklets) {
    const auto& tr = ds.tracklets[t];
    const auto patches = patchify_frames<float>(tr.frames, static_cast<std::size_t>(tr.length),
                                                d.height, d.width, d.channels, d.patch);
    const auto img = image.project(cls_rows(image.encode(patches)));
    const auto sim = num::cosine_similarity(img, txt);
    const std::size_t nc = captions.size();
    for (std::size_t f = 0; f < img.dim(0); ++f) {
      const auto row = sim.data().subspan(f * nc, nc);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += ds.captions[best].label == tr.label;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

PretrainResult pretrain_clip(const data::Dataset& ds, const PretrainConfig& cfg,
                             const EncoderDims& dims) {
  if (!(cfg.init_temperature > 0)) throw ConfigError("pretrain temperature must be positive");
  num::Rng rng(cfg.seed);
  auto image = ImageEncoder<float>::init(dims, rng);
  auto text = TextEncoder<float>::init(dims, rng);
  auto logit_scale = Tensor<float>::scalar(static_cast<float>(std::log(1.0 / cfg.init_temperature)), true);

  ParamList<float> params;
  image.collect(params, "image");
  text.collect(params, "text");
  ParamList<float> scale_params;
  scale_params.add("logit_scale", logit_scale);
  num::Adam<float> opt({0.9, 0.999, 1e-8, cfg.weight_decay});
  num::Adam<float> scale_opt({0.9, 0.999, 1e-8, 0.0});

  const auto held = pretrain_holdout(ds, cfg.holdout_fraction);
  std::vector<std::vector<std::size_t>> train_by_label(static_cast<std::size_t>(ds.identity_count()));
  std::vector<std::vector<std::size_t>> captions_by_label(train_by_label.size());
  for (std::size_t i = 0; i < ds.tracklets.size(); ++i)
    if (!std::binary_search(held.begin(), held.end(), i))
      train_by_label[static_cast<std::size_t>(ds.tracklets[i].label)].push_back(i);
  for (std::size_t i = 0; i < ds.captions.size(); ++i)
    captions_by_label.at(static_cast<std::size_t>(ds.captions[i].label)).push_back(i);
  for (std::size_t y = 0; y < train_by_label.size(); ++y)
    if (train_by_label[y].empty() || captions_by_label[y].empty())
      throw DataError("identity " + std::to_string(y) + " has no pretraining pairs");

  PretrainResult result;
  const std::size_t n = std::min<std::size_t>(cfg.batch, train_by_label.size());
  const std::size_t frame_size = dims.height * dims.width * dims.channels;
  const double max_scale = std::log(100.0);
  const std::size_t warmup = std::max<std::size_t>(1, cfg.steps / 10);
  std::vector<std::size_t> labels(train_by_label.size());
  std::iota(labels.begin(), labels.end(), 0);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::shuffle(labels.begin(), labels.end(), rng.engine());
    std::vector<float> pixels;
    pixels.reserve(n * frame_size);
    std::vector<std::vector<int>> captions;
    for (std::size_t i = 0; i < n; ++i) {
      const auto y = labels[i];
      const auto& tr = ds.tracklets[train_by_label[y][rng.index(train_by_label[y].size())]];
      const auto f = tr.frame(static_cast<int>(rng.index(static_cast<std::size_t>(tr.length))));
      pixels.insert(pixels.end(), f.begin(), f.end());
      captions.push_back(ds.captions[captions_by_label[y][rng.index(captions_by_label[y].size())]].tokens);
    }
    const auto patches = patchify_frames<float>(pixels, n, dims.height, dims.width, dims.channels, dims.patch);
    const auto img = image.project(cls_rows(image.encode(patches)));
    const auto txt = text.encode(captions).eos;
    const auto loss = symmetric_info_nce(img, txt, logit_scale);
    const double value = loss.item();
    if (!std::isfinite(value))
      throw NumericError("pretraining diverged at step " + std::to_string(step) +
                         (result.losses.empty() ? std::string()
                                                : ", last finite loss " + std::to_string(result.losses.back())));
    result.losses.push_back(value);
    params.zero_grad();
    scale_params.zero_grad();
    num::backward(loss);
    const double lr = cfg.lr * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup));
    opt.step(params, lr);
    scale_opt.step(scale_params, lr);
    auto s = logit_scale.mutable_data();
    s[0] = static_cast<float>(std::clamp<double>(s[0], 0.0, max_scale));
  }

  result.temperature = std::exp(-static_cast<double>(logit_scale.item()));
  result.frozen_image = snapshot<float>(image, false);
  result.trainable_image = snapshot<float>(image, true);
  result.frozen_text = snapshot<float>(text, false);
  result.heldout_top1 = image_to_caption_top1(ds, held, result.frozen_image, result.frozen_text);
  return result;
}

template Tensor<float> symmetric_info_nce(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> symmetric_info_nce(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);

}  // namespace cgclip::model
