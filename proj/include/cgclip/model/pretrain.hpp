#pragma once

// Stage 0: contrastive image/caption pretraining that stands in for a
// pretrained CLIP. Produces the frozen encoder pair and the trainable copy of
// the image encoder used by main training.

#include <cstdint>
#include <vector>

#include "cgclip/data/synthetic.hpp"
#include "cgclip/model/encoders.hpp"

namespace cgclip::model {

struct PretrainConfig {
  std::size_t steps = 400;
  std::size_t batch = 32;  // pairs per step, at most one per identity
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double init_temperature = 0.07;
  double holdout_fraction = 0.25;  // tracklets per identity kept out of pretraining
  std::uint64_t seed = 0;
};

struct PretrainResult {
  ImageEncoder<float> frozen_image;
  ImageEncoder<float> trainable_image;
  TextEncoder<float> frozen_text;
  double heldout_top1 = 0.0;  // image -> caption retrieval on held-out frames
  double temperature = 0.0;
  std::vector<double> losses;
};

EncoderDims dims_for(const data::Dataset& dataset, EncoderDims base = {});

// Symmetric InfoNCE over n pairs: the mean of image->text and text->image
// cross-entropy on logits exp(logit_scale) * cos(image_i, text_j).
// logit_scale is a [1] tensor holding log(1/temperature).
template <Real T>
Tensor<T> symmetric_info_nce(const Tensor<T>& image, const Tensor<T>& text,
                             const Tensor<T>& logit_scale);

// Held-out tracklets: the last ceil(fraction * count) of each identity (by id),
// keeping at least one tracklet per identity for training.
std::vector<std::size_t> pretrain_holdout(const data::Dataset& dataset, double fraction);

// Fraction of frames whose most similar caption (over every caption in the
// corpus) belongs to the frame's identity.
double image_to_caption_top1(const data::Dataset& dataset, const std::vector<std::size_t>& tracklets,
                             const ImageEncoder<float>& image, const TextEncoder<float>& text);

PretrainResult pretrain_clip(const data::Dataset& dataset, const PretrainConfig& config,
                             const EncoderDims& dims);

}  // namespace cgclip::model
