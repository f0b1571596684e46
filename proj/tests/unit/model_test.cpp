#include <cmath>
#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "cgclip/data/synthetic.hpp"
#include "cgclip/error.hpp"
#include "cgclip/log.hpp"
#include "cgclip/model/checkpoint.hpp"
#include "cgclip/model/encoders.hpp"
#include "cgclip/model/pretrain.hpp"
#include "cgclip/model/snapshot.hpp"
#include "cgclip/numerics/ops.hpp"

using namespace cgclip;
using namespace cgclip::model;
using num::Tensor;

namespace {

EncoderDims toy_dims() {
  EncoderDims d;
  d.vocab = static_cast<std::size_t>(data::vocab::vocab_size(16));
  return d;
}

std::vector<float> random_pixels(std::size_t n, std::uint64_t seed) {
  num::Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.uniform(0, 1));
  return v;
}

std::vector<float> slice(const Tensor<float>& t, std::size_t offset, std::size_t n) {
  return {t.data().begin() + static_cast<long>(offset), t.data().begin() + static_cast<long>(offset + n)};
}

}  // namespace

TEST(Patchify, SinglePatchIsFlattenedImage) {
  auto img = Tensor<double>::from_data({4, 4, 3}, std::vector<double>(48));
  std::iota(img.mutable_data().begin(), img.mutable_data().end(), 0.0);
  const auto p = patchify(img, 4);
  ASSERT_EQ(p.shape(), (num::Shape{1, 48}));
  for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(p.data()[i], static_cast<double>(i));
}

TEST(Patchify, PatchCounts) {
  EXPECT_EQ(patchify(Tensor<float>::zeros({32, 16, 3}), 8).dim(0), 8u);
  EXPECT_EQ(patchify(Tensor<float>::zeros({256, 128, 3}), 16).dim(0), 128u);
  EncoderDims paper;
  paper.height = 256;
  paper.width = 128;
  paper.patch = 16;
  EXPECT_EQ(paper.patches(), 128u);
  EXPECT_THROW(patchify(Tensor<float>::zeros({30, 16, 3}), 8), ConfigError);
}

TEST(Patchify, RasterOrderAndFramesAgree) {
  const auto px = random_pixels(2 * 32 * 16 * 3, 1);
  const auto batched = patchify_frames<float>(px, 2, 32, 16, 3, 8);
  ASSERT_EQ(batched.shape(), (num::Shape{2, 8, 192}));
  for (std::size_t f = 0; f < 2; ++f) {
    auto img = Tensor<float>::from_data({32, 16, 3}, slice(Tensor<float>::from_data({px.size()}, px), f * 1536, 1536));
    const auto single = patchify(img, 8);
    EXPECT_EQ(slice(batched, f * 1536, 1536), slice(single, 0, 1536));
  }
  // Patch 1 (raster) starts at row 0, column 8.
  EXPECT_EQ(batched.data()[192], px[8 * 3]);
}

TEST(ImageEncoder, ShapesAndFrameIndependence) {
  num::Rng rng(3);
  const auto enc = ImageEncoder<float>::init(toy_dims(), rng);
  auto px = random_pixels(3 * 1536, 2);
  // Frame 2 duplicates frame 0.
  std::copy(px.begin(), px.begin() + 1536, px.begin() + 3072);
  const auto tok = enc.encode(patchify_frames<float>(px, 3, 32, 16, 3, 8));
  ASSERT_EQ(tok.shape(), (num::Shape{3, 9, 64}));
  EXPECT_EQ(slice(tok, 0, 576), slice(tok, 2 * 576, 576));

  // Editing frame 1 leaves frames 0 and 2 untouched.
  auto edited = px;
  for (std::size_t i = 1536; i < 3072; ++i) edited[i] = 1.0f - edited[i];
  const auto tok2 = enc.encode(patchify_frames<float>(edited, 3, 32, 16, 3, 8));
  EXPECT_EQ(slice(tok, 0, 576), slice(tok2, 0, 576));
  EXPECT_EQ(slice(tok, 1152, 576), slice(tok2, 1152, 576));
  EXPECT_NE(slice(tok, 576, 576), slice(tok2, 576, 576));
  EXPECT_EQ(enc.project(tok).shape(), (num::Shape{3, 9, 32}));
}

TEST(SequenceFeature, MeanOfProjectedCls) {
  num::Rng rng(4);
  const auto enc = ImageEncoder<double>::init(toy_dims(), rng);
  const auto px = random_pixels(4 * 1536, 5);
  const auto proj = enc.project(enc.encode(patchify_frames<double>(px, 4, 32, 16, 3, 8)));
  const auto cls = cls_rows(proj);
  // L = 1: b is the projected CLS.
  const auto b1 = sequence_feature(proj, 1);
  for (std::size_t i = 0; i < cls.numel(); ++i) EXPECT_EQ(b1.data()[i], cls.data()[i]);
  // Two-frame tracklets: (u + v) / 2.
  const auto b2 = sequence_feature(proj, 2);
  ASSERT_EQ(b2.shape(), (num::Shape{2, 32}));
  for (std::size_t e = 0; e < 32; ++e)
    EXPECT_NEAR(b2.data()[e], (cls.data()[e] + cls.data()[32 + e]) / 2, 1e-12);
  // Frame permutation.
  std::vector<float> perm(px.size());
  const std::size_t order[4] = {2, 0, 3, 1};
  for (std::size_t f = 0; f < 4; ++f)
    std::copy(px.begin() + static_cast<long>(order[f] * 1536), px.begin() + static_cast<long>((order[f] + 1) * 1536),
              perm.begin() + static_cast<long>(f * 1536));
  const auto bp = sequence_feature(enc.project(enc.encode(patchify_frames<double>(perm, 4, 32, 16, 3, 8))), 4);
  const auto b4 = sequence_feature(proj, 4);
  for (std::size_t e = 0; e < 32; ++e) EXPECT_NEAR(bp.data()[e], b4.data()[e], 1e-6);
  EXPECT_THROW(sequence_feature(proj, 0), ContractError);
}

TEST(TextEncoder, DeterministicAndShaped) {
  num::Rng rng1(9), rng2(9);
  const auto a = TextEncoder<float>::init(toy_dims(), rng1);
  const auto b = TextEncoder<float>::init(toy_dims(), rng2);
  const std::vector<int> empty{data::vocab::kSos, data::vocab::kEos};
  const auto ea = a.encode({empty}).eos;
  const auto eb = b.encode({empty}).eos;
  ASSERT_EQ(ea.shape(), (num::Shape{1, 32}));
  EXPECT_EQ(slice(ea, 0, 32), slice(eb, 0, 32));
  const std::vector<int> cap{1, 4, 8, 10, 14, 18, 22, 2};
  const auto two = a.encode({cap, cap}).eos;
  EXPECT_EQ(slice(two, 0, 32), slice(two, 32, 32));
}

TEST(TextEncoder, MixedLengthsMatchIndividualEncoding) {
  num::Rng rng(10);
  const auto enc = TextEncoder<double>::init(toy_dims(), rng);
  const std::vector<std::vector<int>> caps{{1, 4, 8, 2}, {1, 4, 8, 10, 14, 18, 22, 2}, {1, 5, 2}, {1, 6, 9, 2}};
  const auto all = enc.encode(caps, true);
  ASSERT_EQ(all.eos.shape(), (num::Shape{4, 32}));
  for (std::size_t i = 0; i < caps.size(); ++i) {
    const auto one = enc.encode({caps[i]}).eos;
    for (std::size_t e = 0; e < 32; ++e) EXPECT_NEAR(all.eos.data()[i * 32 + e], one.data()[e], 1e-12);
    EXPECT_EQ(all.tokens[i].shape(), (num::Shape{caps[i].size(), 64}));
  }
}

TEST(TextEncoder, EosValidationAndTruncation) {
  num::Rng rng(11);
  const auto enc = TextEncoder<float>::init(toy_dims(), rng);
  EXPECT_THROW(enc.encode({{1, 4, 5}}), InputError);
  EXPECT_THROW(enc.encode({{1, 2, 4, 2}}), InputError);
  quiet_warnings() = true;
  std::vector<int> longer{1};
  for (int i = 0; i < 20; ++i) longer.push_back(4 + i % 20);
  longer.push_back(2);
  const auto prepared = prepare_caption(longer, 16);
  ASSERT_EQ(prepared.size(), 16u);
  EXPECT_EQ(prepared.back(), data::vocab::kEos);
  EXPECT_EQ(std::vector<int>(prepared.begin(), prepared.end() - 1),
            std::vector<int>(longer.begin(), longer.begin() + 15));
  EXPECT_EQ(enc.encode({longer}).eos.shape(), (num::Shape{1, 32}));
  quiet_warnings() = false;
}

TEST(ClsAttention, RowsAndLength) {
  num::Rng rng(12);
  const auto enc = ImageEncoder<float>::init(toy_dims(), rng);
  const auto px = random_pixels(1536, 13);
  num::AttentionCapture<float> cap;
  enc.encode(patchify_frames<float>(px, 1, 32, 16, 3, 8), &cap);
  ASSERT_EQ(cap.queries, 9u);
  for (std::size_t h = 0; h < cap.heads; ++h)
    for (std::size_t q = 0; q < 9; ++q) {
      double s = 0;
      for (std::size_t k = 0; k < 9; ++k) s += cap.probs[(h * 9 + q) * 9 + k];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  const auto cls = dump_cls_attention<float>(px, enc);
  ASSERT_EQ(cls.shape(), (num::Shape{4, 8}));
  for (std::size_t h = 0; h < 4; ++h) {
    double s = 0;
    for (std::size_t k = 0; k < 8; ++k) s += cls.data()[h * 8 + k];
    EXPECT_NEAR(s, 1.0 - cap.probs[h * 81], 1e-6);
  }
  EXPECT_THROW(cls_attention_from_capture(num::AttentionCapture<float>{}), ContractError);
}

TEST(ClsAttention, SinglePatchImage) {
  EncoderDims d = toy_dims();
  d.height = 8;
  d.width = 8;
  num::Rng rng(14);
  const auto enc = ImageEncoder<float>::init(d, rng);
  const auto w = dump_cls_attention<float>(random_pixels(192, 15), enc);
  ASSERT_EQ(w.shape(), (num::Shape{4, 1}));
  for (float v : w.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(InfoNce, NearLogNAtRandomInit) {
  num::Rng rng(16);
  const std::size_t n = 32;
  auto img = num::normal_parameter<double>({n, 32}, rng, 1.0);
  auto txt = num::normal_parameter<double>({n, 32}, rng, 1.0);
  const auto scale = Tensor<double>::scalar(0.0);  // temperature 1
  const double loss = symmetric_info_nce(img, txt, scale).item();
  EXPECT_NEAR(loss, std::log(32.0), 0.15 * std::log(32.0));
}

TEST(InfoNce, AlignedOrthogonalTendsToZero) {
  const std::size_t n = 8;
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  const auto e = Tensor<double>::from_data({n, n}, eye);
  double prev = 1e9;
  for (double tau : {1.0, 0.1, 0.01}) {
    const double loss = symmetric_info_nce(e, e, Tensor<double>::scalar(std::log(1.0 / tau))).item();
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-6);
}

TEST(Pretrain, ZeroStepsGivesRandomInitAndEqualCopies) {
  const auto ds = data::generate_synthetic(data::DatasetConfig{});
  PretrainConfig cfg;
  cfg.steps = 0;
  cfg.seed = 21;
  const auto dims = dims_for(ds);
  auto res = pretrain_clip(ds, cfg, dims);
  num::Rng rng(21);
  auto init_image = ImageEncoder<float>::init(dims, rng);
  auto init_text = TextEncoder<float>::init(dims, rng);
  EXPECT_EQ(checksum<float>(res.frozen_image), checksum<float>(init_image));
  EXPECT_EQ(checksum<float>(res.frozen_text), checksum<float>(init_text));
  EXPECT_EQ(checksum<float>(res.trainable_image), checksum<float>(res.frozen_image));
  EXPECT_NEAR(res.temperature, 0.07, 1e-6);

  // Snapshots do not share storage.
  res.trainable_image.cls.mutable_data()[0] += 1.0f;
  EXPECT_NE(checksum<float>(res.trainable_image), checksum<float>(res.frozen_image));
  EXPECT_FALSE(res.frozen_image.cls.requires_grad());
  EXPECT_TRUE(res.trainable_image.cls.requires_grad());
}

TEST(Pretrain, HoldoutKeepsTrainingTracklets) {
  const auto ds = data::generate_synthetic(data::DatasetConfig{});
  const auto held = pretrain_holdout(ds, 0.25);
  EXPECT_EQ(held.size(), 32u);
  for (std::size_t t : held) EXPECT_GE(ds.tracklets[t].id % 8, 6);
}

TEST(Pretrain, ReachesHeldOutRetrieval) {
  const auto ds = data::generate_synthetic(data::DatasetConfig{});
  PretrainConfig cfg;
  cfg.seed = 1;
  const auto res = pretrain_clip(ds, cfg, dims_for(ds));
  EXPECT_GE(res.heldout_top1, 0.8);
  EXPECT_LT(res.losses.back(), res.losses.front());
}

TEST(Checkpoint, RoundTripReproducesForwardBitExactly) {
  num::Rng rng(31);
  auto enc = ImageEncoder<float>::init(toy_dims(), rng);
  num::ParamList<float> params;
  enc.collect(params, "image");
  Checkpoint ckpt;
  ckpt.meta = {{"seed", 31}};
  ckpt.store(params);
  const auto path = std::filesystem::temp_directory_path() / "cgclip_model_test.ckpt";
  write_checkpoint(path, ckpt);

  num::Rng other(99);
  auto loaded = ImageEncoder<float>::init(toy_dims(), other);
  num::ParamList<float> loaded_params;
  loaded.collect(loaded_params, "image");
  const auto back = read_checkpoint(path);
  back.load_into(loaded_params);
  EXPECT_EQ(back.meta["seed"], 31);
  const auto px = random_pixels(2 * 1536, 32);
  const auto a = enc.project(enc.encode(patchify_frames<float>(px, 2, 32, 16, 3, 8)));
  const auto b = loaded.project(loaded.encode(patchify_frames<float>(px, 2, 32, 16, 3, 8)));
  EXPECT_EQ(slice(a, 0, a.numel()), slice(b, 0, b.numel()));
  std::filesystem::remove(path);

  Checkpoint bad;
  bad.put("image.cls", Tensor<float>::zeros({3}));
  EXPECT_THROW(bad.load_into(loaded_params), InputError);
}
