#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>
#include <json.hpp>

#include "cgclip/error.hpp"
#include "cgclip/log.hpp"
#include "cgclip/numerics/ops.hpp"
#include "cgclip/pipeline/config.hpp"
#include "cgclip/pipeline/grad_suite.hpp"
#include "cgclip/pipeline/model_state.hpp"
#include "cgclip/pipeline/train.hpp"

using namespace cgclip;
using namespace cgclip::pipeline;

namespace {

data::Dataset small_corpus(std::uint64_t seed = 0) {
  data::DatasetConfig c;
  c.identities = 4;
  c.tracklets_per_id = 4;
  c.frames_per_tracklet = 2;
  c.seed = seed;
  return data::generate_synthetic(c);
}

ModelSpec small_spec(const data::Dataset& ds) {
  ModelSpec s;
  s.dims = model::dims_for(ds);
  s.identities = static_cast<std::size_t>(ds.identity_count());
  s.frames = 2;
  return s;
}

template <class T>
ModelState<T> small_state(const data::Dataset& ds, ModelSpec spec, std::uint64_t seed = 3) {
  num::Rng rng(seed);
  auto s = ModelState<T>::init(spec, rng);
  s.init_memories(ds);
  return s;
}

std::vector<std::size_t> first_tracklets(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::vector<int> labels_of(const data::Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<int> l;
  for (auto i : idx) l.push_back(ds.tracklets[i].label);
  return l;
}

TrainConfig short_train() {
  TrainConfig t;
  t.epochs = 2;
  t.p = 4;
  t.k = 2;
  t.frames = 2;
  return t;
}

RunConfig small_run(std::uint64_t seed) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.data.identities = 4;
  cfg.data.tracklets_per_id = 4;
  cfg.data.frames_per_tracklet = 2;
  cfg.pretrain.steps = 3;
  cfg.train = short_train();
  return cfg.resolved();
}

}  // namespace

TEST(RunConfig, JsonRoundTrip) {
  RunConfig cfg;
  cfg.seed = 9;
  cfg.train.memory = cmr::MemoryMode::kNaiveSum;
  cfg.train.fusion_variant = cmr::FusionVariant::kConcatSelf;
  cfg.train.id_strategy = cmr::IdStrategy::kIdText;
  cfg.train.loss.temperature = 0.07;
  cfg.bench.patch_points = {4, 8, 16, 32};
  const auto j = to_json(cfg.resolved());
  const auto back = run_config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.data.seed, 9u);
  EXPECT_EQ(back.pretrain.seed, 9u);
  EXPECT_EQ(back.train.memory, cmr::MemoryMode::kNaiveSum);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(run_config_from_json({{"train", {{"epoch", 3}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"trian", nlohmann::json::object()}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"memory", "bogus"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"k", 1}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"lr", "fast"}}}}), ConfigError);
  EXPECT_NO_THROW(run_config_from_json(nlohmann::json::object()));
}

TEST(RunConfig, NoCmrForcesImageMemory) {
  TrainConfig t;
  t.memory = cmr::MemoryMode::kRefined;
  t.use_cmr = false;
  EXPECT_EQ(t.effective_memory(), cmr::MemoryMode::kImage);
}

TEST(Schedule, WarmupThenStepDecay) {
  TrainConfig t;
  t.lr = 1.0;
  const std::size_t total = 100;
  EXPECT_DOUBLE_EQ(scheduled_lr(t, 0, total), 0.1);
  EXPECT_DOUBLE_EQ(scheduled_lr(t, 9, total), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(t, 10, total), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(t, 49, total), 1.0);
  EXPECT_NEAR(scheduled_lr(t, 50, total), 0.1, 1e-15);
  EXPECT_NEAR(scheduled_lr(t, 80, total), 0.01, 1e-15);
  EXPECT_NEAR(scheduled_lr(t, 99, total), 0.01, 1e-15);
}

TEST(ModelStateTest, TrainableSetFollowsSwitches) {
  const auto ds = small_corpus();
  auto has = [](ModelState<float>& s, const std::string& prefix) {
    num::ParamList<float> p;
    s.collect_trainable(p);
    return std::any_of(p.entries().begin(), p.entries().end(),
                       [&](const auto& e) { return e.name.rfind(prefix, 0) == 0; });
  };
  auto spec = small_spec(ds);
  auto full = small_state<float>(ds, spec);
  EXPECT_TRUE(has(full, "tfe."));
  EXPECT_TRUE(has(full, "fusion."));
  EXPECT_FALSE(has(full, "frozen_"));
  EXPECT_FALSE(has(full, "id_table"));
  spec.use_tfe = false;
  spec.memory = cmr::MemoryMode::kImage;
  spec.id_strategy = cmr::IdStrategy::kIdEmb;
  auto bare = small_state<float>(ds, spec);
  EXPECT_FALSE(has(bare, "tfe."));
  EXPECT_FALSE(has(bare, "head_bhat"));
  EXPECT_FALSE(has(bare, "fusion."));
  EXPECT_FALSE(has(bare, "id_table"));  // the image memory never reads the table
}

TEST(ModelStateTest, ForwardShapesAndFrozenStartEqualsTrainable) {
  const auto ds = small_corpus();
  auto state = small_state<float>(ds, small_spec(ds));
  num::ParamList<float> a, b;
  state.image.collect(a, "");
  state.frozen_image.collect(b, "");
  EXPECT_EQ(a.checksum(), b.checksum());
  const auto idx = first_tracklets(8);
  const auto out = forward_batch(state, batch_patches(state, ds, idx, nullptr), labels_of(ds, idx), obj::LossConfig{});
  EXPECT_EQ(out.b.shape(), (num::Shape{8, 32}));
  EXPECT_EQ(out.b_hat.shape(), (num::Shape{8, 32}));
  EXPECT_EQ(out.token_set.shape(), (num::Shape{8 * 9, 32}));
  EXPECT_EQ(out.target.shape(), (num::Shape{4, 32}));
  EXPECT_TRUE(std::isfinite(out.loss.report.total));
}

TEST(ModelStateTest, FramePermutationInvariance) {
  const auto ds = small_corpus();
  auto state = small_state<float>(ds, small_spec(ds));
  const auto idx = first_tracklets(4);
  const auto patches = batch_patches(state, ds, idx, nullptr);
  // Swap the two frames of every tracklet.
  const std::size_t per_frame = patches.numel() / patches.dim(0);
  std::vector<float> swapped(patches.data().begin(), patches.data().end());
  for (std::size_t t = 0; t < 4; ++t)
    std::swap_ranges(swapped.begin() + static_cast<long>((2 * t) * per_frame),
                     swapped.begin() + static_cast<long>((2 * t + 1) * per_frame),
                     swapped.begin() + static_cast<long>((2 * t + 1) * per_frame));
  const auto [b0, h0] = sequence_features(state, patches);
  const auto [b1, h1] = sequence_features(state, num::Tensor<float>::from_data(patches.shape(), swapped));
  for (std::size_t i = 0; i < b0.numel(); ++i) {
    EXPECT_NEAR(b0.data()[i], b1.data()[i], 1e-6);
    EXPECT_NEAR(h0.data()[i], h1.data()[i], 1e-6);
  }
}

TEST(ModelStateTest, ZeroedFusionGivesImageMemoryLossBitForBit) {
  const auto ds = small_corpus();
  auto spec = small_spec(ds);
  auto refined = small_state<float>(ds, spec);
  refined.fusion.zero_output();
  auto image = refined;
  image.spec.memory = cmr::MemoryMode::kImage;
  const auto idx = first_tracklets(8);
  const auto patches = batch_patches(refined, ds, idx, nullptr);
  const auto a = forward_batch(refined, patches, labels_of(ds, idx), obj::LossConfig{});
  const auto b = forward_batch(image, patches, labels_of(ds, idx), obj::LossConfig{});
  ASSERT_EQ(a.target.numel(), b.target.numel());
  EXPECT_TRUE(std::equal(a.target.data().begin(), a.target.data().end(), b.target.data().begin()));
  EXPECT_EQ(a.loss.report.v2m, b.loss.report.v2m);
  EXPECT_EQ(a.loss.report.total, b.loss.report.total);
}

TEST(ModelStateTest, CheckpointRoundTripReproducesForward) {
  const auto ds = small_corpus();
  auto spec = small_spec(ds);
  spec.id_strategy = cmr::IdStrategy::kIdEmb;
  auto state = small_state<float>(ds, spec);
  for (float& v : state.id_table.mutable_data()) v = 0.25f;
  const auto path = std::filesystem::temp_directory_path() / "cgclip_pipeline_ckpt.bin";
  model::write_checkpoint(path, to_checkpoint(state));
  const auto back = from_checkpoint(model::read_checkpoint(path));
  std::filesystem::remove(path);
  EXPECT_EQ(back.spec.id_strategy, cmr::IdStrategy::kIdEmb);
  const auto idx = first_tracklets(8);
  const auto patches = batch_patches(state, ds, idx, nullptr);
  const auto a = forward_batch(state, patches, labels_of(ds, idx), obj::LossConfig{});
  const auto b = forward_batch(back, patches, labels_of(ds, idx), obj::LossConfig{});
  EXPECT_EQ(a.loss.report.total, b.loss.report.total);
  EXPECT_TRUE(std::equal(a.b_hat.data().begin(), a.b_hat.data().end(), b.b_hat.data().begin()));
}

TEST(Training, ShortRunKeepsFrozenPartsAndUnitMemory) {
  const auto ds = small_corpus();
  auto state = small_state<float>(ds, small_spec(ds));
  const auto image_before = state.bank.image_checksum();
  const auto result = train_model(state, ds, &ds, short_train(), EvalConfig{}, 5);
  EXPECT_EQ(result.steps, 4u);
  EXPECT_EQ(result.frozen_checksum_before, result.frozen_checksum_after);
  EXPECT_EQ(result.text_checksum_before, result.text_checksum_after);
  EXPECT_NE(state.bank.image_checksum(), image_before);
  for (std::size_t y = 0; y < 4; ++y) {
    double n = 0;
    for (std::size_t e = 0; e < 32; ++e) n += std::pow(state.bank.image.data()[y * 32 + e], 2);
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
  for (const auto& r : result.losses) EXPECT_TRUE(std::isfinite(r.total));
  ASSERT_TRUE(result.final_report.has_value());
  EXPECT_EQ(result.final_report->num_queries, 4u);
}

TEST(Training, NonFiniteLossAbortsWithLastGoodCheckpoint) {
  const auto ds = small_corpus();
  auto state = small_state<float>(ds, small_spec(ds));
  state.head_b.bias.mutable_data()[0] = NAN;
  const auto dir = std::filesystem::temp_directory_path() / "cgclip_nan_run";
  std::filesystem::remove_all(dir);
  EXPECT_THROW(train_model(state, ds, nullptr, short_train(), EvalConfig{}, 1, dir), NumericError);
  EXPECT_TRUE(std::filesystem::exists(dir / "last_good.ckpt"));
  EXPECT_NO_THROW(from_checkpoint(model::read_checkpoint(dir / "last_good.ckpt")));
  std::filesystem::remove_all(dir);
}

TEST(Training, SameSeedSameMetrics) {
  quiet_warnings() = true;
  const auto a = run_pipeline(small_run(4));
  const auto b = run_pipeline(small_run(4));
  quiet_warnings() = false;
  EXPECT_EQ(a.report.map, b.report.map);
  EXPECT_EQ(a.report.cmc, b.report.cmc);
  ASSERT_EQ(a.train.losses.size(), b.train.losses.size());
  for (std::size_t i = 0; i < a.train.losses.size(); ++i) EXPECT_EQ(a.train.losses[i].total, b.train.losses[i].total);
}

TEST(Training, RunDirectoryIsComplete) {
  const auto dir = std::filesystem::temp_directory_path() / "cgclip_run_dir";
  std::filesystem::remove_all(dir);
  const auto r = run_pipeline(small_run(2), {}, dir);
  for (const char* f : {"config.json", "training_log.csv", "model.ckpt", "metrics.json", "per_query.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  // The echoed config reproduces the run.
  std::ifstream is(dir / "config.json");
  const auto echoed = run_config_from_json(nlohmann::json::parse(is));
  EXPECT_EQ(to_json(echoed), to_json(small_run(2)));
  // The checkpoint evaluates to the same metrics.
  const auto state = from_checkpoint(model::read_checkpoint(dir / "model.ckpt"));
  const auto eval_set = data::generate_synthetic(eval_dataset_config(echoed));
  EXPECT_EQ(evaluate_model(state, eval_set, echoed.eval.ks).map, r.report.map);
  std::filesystem::remove_all(dir);
}

TEST(Training, UntrainedModelStillEvaluates) {
  const auto ds = small_corpus();
  const auto state = small_state<float>(ds, small_spec(ds));
  const auto report = evaluate_model(state, ds, {1, 5, 10, 20});
  EXPECT_EQ(report.num_queries, 4u);
  EXPECT_EQ(report.num_gallery, 12u);
  EXPECT_EQ(report.cmc.size(), 4u);
  EXPECT_GE(report.map, 0.0);
  EXPECT_LE(report.map, 1.0);
}

TEST(Pretrained, RoundTrip) {
  const auto ds = small_corpus();
  model::PretrainConfig pc;
  pc.steps = 2;
  const auto pre = model::pretrain_clip(ds, pc, model::dims_for(ds));
  const auto path = std::filesystem::temp_directory_path() / "cgclip_pretrained.ckpt";
  write_pretrained(path, pre);
  auto back = read_pretrained(path);
  std::filesystem::remove(path);
  auto a = pre;
  auto sum = [](model::PretrainResult& r) {
    num::ParamList<float> p;
    r.frozen_image.collect(p, "fi");
    r.trainable_image.collect(p, "ti");
    r.frozen_text.collect(p, "ft");
    return p.checksum();
  };
  EXPECT_EQ(sum(a), sum(back));
  EXPECT_EQ(back.heldout_top1, pre.heldout_top1);
}

TEST(GradSuite, FullModelLossOnMicroBatch) {
  const auto e = total_loss_grad_check(0, 3);
  EXPECT_LE(e.max_rel_err, 1e-3) << e.worst;
  EXPECT_GT(e.coordinates, 100u);
}
