#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "cgclip/cmr/fusion.hpp"
#include "cgclip/cmr/memory.hpp"
#include "cgclip/error.hpp"
#include "cgclip/numerics/grad_check.hpp"
#include "cgclip/numerics/ops.hpp"

using namespace cgclip;
using namespace cgclip::cmr;
using num::Tensor;

namespace {

Tensor<double> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, bool grad = false) {
  num::Rng rng(seed);
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.normal(0.0, 1.0);
  return Tensor<double>::from_data({r, c}, std::move(v), grad);
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double row_norm(const Tensor<double>& m, std::size_t r) {
  double s = 0;
  for (std::size_t e = 0; e < m.dim(1); ++e) s += m.data()[r * m.dim(1) + e] * m.data()[r * m.dim(1) + e];
  return std::sqrt(s);
}

model::EncoderDims text_dims(int identities) {
  model::EncoderDims d;
  d.vocab = static_cast<std::size_t>(data::vocab::vocab_size(identities));
  return d;
}

}  // namespace

TEST(ImageMemory, MeanOfTwoFeatures) {
  const auto f = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  const auto m = identity_means(f, {0, 0}, 1);
  EXPECT_DOUBLE_EQ(m.data()[0], 0.5);
  EXPECT_DOUBLE_EQ(m.data()[1], 0.5);
  const auto n = normalize_rows(m);
  EXPECT_NEAR(n.data()[0], std::sqrt(0.5), 1e-15);
}

TEST(ImageMemory, SingleTrackletRowIsNormalizedFeature) {
  const auto f = Tensor<double>::from_data({1, 2}, {3, 4});
  const auto n = normalize_rows(identity_means(f, {0}, 1));
  EXPECT_DOUBLE_EQ(n.data()[0], 0.6);
  EXPECT_DOUBLE_EQ(n.data()[1], 0.8);
}

TEST(ImageMemory, EmptyIdentityIsDataError) {
  EXPECT_THROW(identity_means(random_matrix(2, 3, 1), {0, 0}, 2), DataError);
}

TEST(ImageMemory, FromFrozenEncoderIsUnitNormAndOrderFree) {
  data::DatasetConfig cfg;
  cfg.identities = 4;
  cfg.tracklets_per_id = 3;
  const auto ds = data::generate_synthetic(cfg);
  num::Rng rng(7);
  const auto enc = model::ImageEncoder<double>::init(text_dims(4), rng);
  const auto mem = init_image_memory(ds, enc, 4);
  ASSERT_EQ(mem.shape(), (num::Shape{4, 32}));
  for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(row_norm(mem, r), 1.0, 1e-6);

  data::Dataset shuffled = ds;
  std::reverse(shuffled.tracklets.begin(), shuffled.tracklets.end());
  EXPECT_LE(max_abs_diff(mem, init_image_memory(shuffled, enc, 4)), 1e-6);
}

TEST(TextMemory, IdStrategies) {
  // Two identities with the same caption: only the identity phrase separates them.
  data::Dataset ds;
  ds.identities = {data::Identity{0, {}}, data::Identity{1, {}}};
  const std::vector<int> caption{data::vocab::kSos, data::vocab::kFirstAttribute, data::vocab::kEos};
  ds.captions = {{0, caption}, {1, caption}};
  num::Rng rng(11);
  const auto enc = model::TextEncoder<double>::init(text_dims(2), rng);

  const auto plain = init_text_memory(ds, enc, IdStrategy::kNone);
  ASSERT_EQ(plain.shape(), (num::Shape{2, 32}));
  EXPECT_EQ(max_abs_diff(num::index_select(plain, {0}), num::index_select(plain, {1})), 0.0);

  const auto with_text = init_text_memory(ds, enc, IdStrategy::kIdText);
  EXPECT_GT(max_abs_diff(num::index_select(with_text, {0}), num::index_select(with_text, {1})), 1e-6);

  // One caption per identity: the row is that caption's EOS feature.
  const auto eos = enc.encode({caption}).eos;
  EXPECT_LE(max_abs_diff(num::index_select(plain, {0}), eos), 1e-12);

  const auto base = init_text_memory(ds, enc, IdStrategy::kIdEmb);
  const auto zero_table = Tensor<double>::zeros({2, 32});
  EXPECT_EQ(max_abs_diff(text_memory_with_ids(base, zero_table, IdStrategy::kIdEmb), plain), 0.0);
  EXPECT_THROW(text_memory_with_ids(base, Tensor<double>::zeros({3, 32}), IdStrategy::kIdEmb), ConfigError);
}

TEST(TextMemory, IdTextInsertsPhraseBeforeEos) {
  const std::vector<int> c{data::vocab::kSos, 7, data::vocab::kEos};
  const auto out = caption_for_strategy(c, 5, IdStrategy::kIdText);
  ASSERT_EQ(out.size(), 5u);
  EXPECT_EQ(out[2], data::vocab::kIdIs);
  EXPECT_EQ(out[3], data::vocab::id_token(5));
  EXPECT_EQ(out[4], data::vocab::kEos);
  EXPECT_EQ(caption_for_strategy(c, 5, IdStrategy::kIdEmb), c);
}

TEST(Strategies, ParseRoundTrip) {
  for (auto s : {IdStrategy::kNone, IdStrategy::kIdText, IdStrategy::kIdEmb})
    EXPECT_EQ(parse_id_strategy(to_string(s)), s);
  for (auto m : {MemoryMode::kImage, MemoryMode::kText, MemoryMode::kNaiveSum, MemoryMode::kRefined})
    EXPECT_EQ(parse_memory_mode(to_string(m)), m);
  for (auto v : {FusionVariant::kConcatSelf, FusionVariant::kSelfThenCross, FusionVariant::kCrossThenSelf})
    EXPECT_EQ(parse_fusion_variant(to_string(v)), v);
  EXPECT_EQ(parse_fusion_variant("c"), FusionVariant::kCrossThenSelf);
  EXPECT_THROW(parse_fusion_variant("d"), ConfigError);
  EXPECT_THROW(parse_id_strategy("id"), ConfigError);
}

class FusionTest : public ::testing::TestWithParam<FusionVariant> {};

TEST_P(FusionTest, ShapeIndependentOfBatch) {
  num::Rng rng(2);
  const auto fusion = FusionEncoder<double>::init(32, 4, 2, GetParam(), rng);
  const auto mt = random_matrix(16, 32, 3);
  EXPECT_EQ(fusion(mt, random_matrix(9, 32, 4)).shape(), (num::Shape{16, 32}));
  EXPECT_EQ(fusion(mt, random_matrix(72, 32, 5)).shape(), (num::Shape{16, 32}));
}

TEST_P(FusionTest, KeyPermutationInvariance) {
  num::Rng rng(2);
  const auto fusion = FusionEncoder<double>::init(32, 4, 2, GetParam(), rng);
  const auto mt = random_matrix(6, 32, 3);
  const auto tokens = random_matrix(18, 32, 4);
  std::vector<std::size_t> perm(18);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[0], perm[7]);
  EXPECT_LE(max_abs_diff(fusion(mt, tokens), fusion(mt, num::index_select(tokens, perm))), 1e-6);
}

TEST_P(FusionTest, ZeroBlockOutputsLeaveProjectionPath) {
  num::Rng rng(2);
  auto fusion = FusionEncoder<double>::init(32, 4, 2, GetParam(), rng);
  fusion.zero_block_outputs();
  const auto mt = random_matrix(5, 32, 3);
  const auto expected = fusion.out(fusion.ln_out(fusion.in_query(fusion.ln_query(mt))));
  EXPECT_EQ(max_abs_diff(fusion(mt, random_matrix(9, 32, 4)), expected), 0.0);
}

INSTANTIATE_TEST_SUITE_P(Variants, FusionTest,
                         ::testing::Values(FusionVariant::kCrossThenSelf, FusionVariant::kSelfThenCross,
                                           FusionVariant::kConcatSelf));

TEST(Fusion, ConcatVariantCollectsNoCrossAttention) {
  num::Rng rng(2);
  auto a = FusionEncoder<double>::init(32, 4, 2, FusionVariant::kConcatSelf, rng);
  auto c = FusionEncoder<double>::init(32, 4, 2, FusionVariant::kCrossThenSelf, rng);
  num::ParamList<double> pa, pc;
  a.collect(pa, "f");
  c.collect(pc, "f");
  EXPECT_LT(pa.scalar_count(), pc.scalar_count());
}

TEST(RefineMemory, SumAndReductions) {
  const auto mi = normalize_rows(random_matrix(4, 8, 1));
  const auto mt = random_matrix(4, 8, 2);
  EXPECT_EQ(max_abs_diff(refine_memory(Tensor<double>::zeros({4, 8}), mi), mi), 0.0);
  EXPECT_EQ(max_abs_diff(refine_memory(mt, Tensor<double>::zeros({4, 8})), mt), 0.0);
  EXPECT_THROW(refine_memory(mt, random_matrix(3, 8, 1)), DimensionError);

  MemoryBank<double> bank{mi, mt};
  EXPECT_EQ(max_abs_diff(memory_target<double>(MemoryMode::kNaiveSum, bank, mt, nullptr, {}),
                         num::add(mt, mi)),
            0.0);
  EXPECT_THROW(memory_target<double>(MemoryMode::kRefined, bank, mt, nullptr, {}), ConfigError);

  num::Rng rng(5);
  auto fusion = FusionEncoder<double>::init(8, 2, 2, FusionVariant::kCrossThenSelf, rng);
  fusion.zero_output();
  const auto refined = memory_target(MemoryMode::kRefined, bank, mt, &fusion, random_matrix(9, 8, 3));
  EXPECT_EQ(max_abs_diff(refined, mi), 0.0);
}

TEST(Momentum, UnchangedAtOne) {
  auto mem = normalize_rows(random_matrix(3, 4, 1));
  const auto before = mem.detach();
  momentum_update_hard(mem, random_matrix(2, 4, 2), {1, 1}, {0, 1}, 1.0);
  EXPECT_EQ(max_abs_diff(mem, before), 0.0);
}

TEST(Momentum, ZeroCopiesNormalizedFeature) {
  auto mem = normalize_rows(random_matrix(3, 2, 1));
  momentum_update_hard(mem, Tensor<double>::from_data({1, 2}, {3, 4}), {2}, {9}, 0.0);
  EXPECT_NEAR(mem.data()[4], 0.6, 1e-15);
  EXPECT_NEAR(mem.data()[5], 0.8, 1e-15);
}

TEST(Momentum, SelectsLeastSimilarPositive) {
  // Memory row e0; unit features whose cosine to e0 is 0.9, 0.8, 0.2, 0.7.
  auto mem = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  std::vector<double> f;
  const std::vector<double> sims{0.9, 0.8, 0.2, 0.7};
  for (double s : sims) {
    f.push_back(s);
    f.push_back(std::sqrt(1 - s * s));
  }
  const auto chosen =
      momentum_update_hard(mem, Tensor<double>::from_data({4, 2}, f), {0, 0, 0, 0}, {10, 11, 12, 13}, 0.2);
  ASSERT_EQ(chosen.size(), 1u);
  EXPECT_EQ(chosen[0].second, 2u);
  // Oracle: normalize(0.2 * e0 + 0.8 * f2).
  const double x = 0.2 + 0.8 * 0.2, y = 0.8 * std::sqrt(1 - 0.04), n = std::hypot(x, y);
  EXPECT_NEAR(mem.data()[0], x / n, 1e-12);
  EXPECT_NEAR(mem.data()[1], y / n, 1e-12);
  // Row 1 is not in the batch.
  EXPECT_EQ(mem.data()[2], 0.0);
  EXPECT_EQ(mem.data()[3], 1.0);
}

TEST(Momentum, TiesGoToLowestTrackletId) {
  auto mem = Tensor<double>::from_data({1, 2}, {1, 0});
  const auto f = Tensor<double>::from_data({2, 2}, {0, 1, 0, 1});
  const auto chosen = momentum_update_hard(mem, f, {0, 0}, {8, 3}, 0.5);
  EXPECT_EQ(chosen[0].second, 1u);
}

TEST(Momentum, OnlyBatchRowsChangeAndStayUnitNorm) {
  auto mem = normalize_rows(random_matrix(6, 8, 1));
  const auto before = mem.detach();
  momentum_update_hard(mem, random_matrix(4, 8, 2), {1, 1, 4, 4}, {0, 1, 2, 3}, 0.2);
  for (std::size_t r = 0; r < 6; ++r) {
    EXPECT_NEAR(row_norm(mem, r), 1.0, 1e-6);
    const bool changed =
        max_abs_diff(num::index_select(mem, {r}), num::index_select(before, {r})) > 0.0;
    EXPECT_EQ(changed, r == 1 || r == 4) << r;
  }
}

TEST(RefinedStep, GradientReachesFusionButNotMemories) {
  num::Rng rng(4);
  auto fusion = FusionEncoder<double>::init(8, 2, 2, FusionVariant::kCrossThenSelf, rng);
  MemoryBank<double> bank{normalize_rows(random_matrix(3, 8, 1)), random_matrix(3, 8, 2)};
  auto tokens = random_matrix(6, 8, 3, true);
  auto b = random_matrix(2, 8, 5, true);
  const auto target = memory_target(MemoryMode::kRefined, bank, bank.text, &fusion, tokens);
  const auto loss = num::sum(num::cosine_similarity(b, target));
  num::backward(loss);
  EXPECT_FALSE(bank.image.has_grad());
  EXPECT_FALSE(bank.text.has_grad());
  EXPECT_TRUE(tokens.has_grad());
  num::ParamList<double> params;
  fusion.collect(params, "fusion");
  double total = 0;
  for (const auto& e : params.entries())
    if (e.tensor->has_grad())
      for (double g : e.tensor->grad()) total += std::abs(g);
  EXPECT_GT(total, 0.0);
}

TEST(RefinedStep, FusionGradientMatchesFiniteDifferences) {
  num::Rng rng(4);
  auto fusion = FusionEncoder<double>::init(8, 2, 1, FusionVariant::kCrossThenSelf, rng);
  MemoryBank<double> bank{normalize_rows(random_matrix(3, 8, 1)), random_matrix(3, 8, 2)};
  const auto tokens = random_matrix(6, 8, 3);
  const auto b = random_matrix(2, 8, 5);
  auto loss = [&] {
    const auto target = memory_target(MemoryMode::kRefined, bank, bank.text, &fusion, tokens);
    return num::mean(num::log_softmax(num::cosine_similarity(b, target), 1));
  };
  num::ParamList<double> params;
  fusion.collect(params, "fusion");
  std::vector<num::NamedTensorRef> refs;
  for (const auto& e : params.entries()) refs.push_back({e.name, e.tensor});
  const auto report = num::grad_check_params(loss, refs, 1e-4, 6);
  EXPECT_LE(report.max_rel_err, 1e-3) << report.worst;
}

TEST(TextMemory, ChecksumIsStable) {
  MemoryBank<double> bank{normalize_rows(random_matrix(3, 8, 1)), random_matrix(3, 8, 2)};
  const auto before = bank.text_checksum();
  momentum_update_hard(bank.image, random_matrix(1, 8, 3), {0}, {0}, 0.2);
  EXPECT_EQ(bank.text_checksum(), before);
}
