#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cgclip/numerics/grad_check.hpp"
#include "cgclip/numerics/kernels.hpp"
#include "cgclip/numerics/nn.hpp"
#include "cgclip/numerics/ops.hpp"
#include "cgclip/numerics/primitive_suite.hpp"

namespace cgclip::num {
namespace {

using TensorD = Tensor<double>;

TensorD random_tensor(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(gen);
  return TensorD::from_data(std::move(shape), std::move(v));
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  TensorD eye = TensorD::from_data({2, 2}, {1, 0, 0, 1});
  TensorD x = TensorD::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  TensorD y = matmul(eye, x);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
}

TEST(Matmul, HandExpansion) {
  TensorD y = matmul(TensorD::from_data({1, 2}, {1, 2}), TensorD::from_data({2, 1}, {3, 4}));
  ASSERT_EQ(y.shape(), (Shape{1, 1}));
  EXPECT_EQ(y.item(), 11.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(TensorD::zeros({2, 3}), TensorD::zeros({2, 3})), DimensionError);
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  std::mt19937_64 gen(7);
  TensorD b = random_tensor({4, 3}, gen);
  auto f = [b](const TensorD& a) { return sum(matmul(a, b)); };
  auto report = grad_check<double>(f, random_tensor({5, 4}, gen), 1e-4);
  EXPECT_LE(report.max_rel_err, 1e-4);
}

TEST(Softmax, UniformLogits) {
  TensorD y = softmax(TensorD::from_data({2}, {0, 0}), 0);
  EXPECT_DOUBLE_EQ(y.data()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.data()[1], 0.5);
}

TEST(Softmax, ThreeLogits) {
  TensorD y = softmax(TensorD::from_data({3}, {1, 2, 3}), 0);
  // exp(k) / (e + e^2 + e^3) evaluated in high precision.
  EXPECT_NEAR(y.data()[0], 0.09003057, 1e-5);
  EXPECT_NEAR(y.data()[1], 0.24472847, 1e-5);
  EXPECT_NEAR(y.data()[2], 0.66524096, 1e-5);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Tensor<float> y = softmax(Tensor<float>::from_data({2}, {1000.f, 1000.f}), 0);
  EXPECT_FLOAT_EQ(y.data()[0], 0.5f);
  EXPECT_FLOAT_EQ(y.data()[1], 0.5f);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 1 + trial % 5, cols = 2 + trial % 7;
    TensorD x = random_tensor({rows, cols}, gen, -5, 5);
    TensorD y = softmax(x, 1);
    TensorD y_shift = softmax(add_scalar(x, 3.7), 1);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        s += y.at({r, c});
        EXPECT_NEAR(y.at({r, c}), y_shift.at({r, c}), 1e-6);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(LayerNorm, ConstantRowBecomesZero) {
  TensorD y = layer_norm(TensorD::full({1, 4}, 3.0), TensorD::full({4}, 1.0),
                         TensorD::zeros({4}), 1e-5);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, TwoElementRow) {
  TensorD y = layer_norm(TensorD::from_data({1, 2}, {1, 3}), TensorD::full({2}, 1.0),
                         TensorD::zeros({2}), 0.0);
  EXPECT_DOUBLE_EQ(y.data()[0], -1.0);
  EXPECT_DOUBLE_EQ(y.data()[1], 1.0);
}

TEST(LayerNorm, ZeroGammaCollapsesToBeta) {
  std::mt19937_64 gen(3);
  TensorD y = layer_norm(random_tensor({3, 5}, gen), TensorD::zeros({5}), TensorD::full({5}, 2.5),
                         1e-5);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
  std::mt19937_64 gen(5);
  TensorD y = layer_norm(random_tensor({6, 16}, gen, -3, 3), TensorD::full({16}, 1.0),
                         TensorD::zeros({16}), 0.0);
  for (std::size_t r = 0; r < 6; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mu += y.at({r, c});
    mu /= 16;
    for (std::size_t c = 0; c < 16; ++c) var += (y.at({r, c}) - mu) * (y.at({r, c}) - mu);
    EXPECT_NEAR(mu, 0.0, 1e-6);
    EXPECT_NEAR(var / 16, 1.0, 1e-6);
  }
}

TEST(LayerNorm, GammaLengthMismatchThrows) {
  EXPECT_THROW(layer_norm(TensorD::zeros({2, 3}), TensorD::zeros({2}), TensorD::zeros({3}), 1e-5),
               DimensionError);
}

class AttentionTest : public ::testing::Test {
 protected:
  Rng rng{42};
  MultiHeadAttention<double> mha = MultiHeadAttention<double>::init(8, 2, rng);
  std::mt19937_64 gen{9};
};

TEST_F(AttentionTest, SingleKeyGetsFullWeight) {
  TensorD v = random_tensor({1, 8}, gen);
  AttentionCapture<double> cap;
  TensorD out = mha(random_tensor({3, 8}, gen), v, v, &cap);
  TensorD expected = mha.o(mha.v(v));
  for (double p : cap.probs) EXPECT_EQ(p, 1.0);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(out.at({r, c}), expected.at({0, c}), 1e-12);
}

TEST_F(AttentionTest, ZeroValuePathGivesZeroOutput) {
  mha.v.zero_out();
  mha.o.bias = TensorD::zeros({8}, true);
  TensorD kv = random_tensor({5, 8}, gen);
  TensorD out = mha(random_tensor({3, 8}, gen), kv, kv);
  for (double x : out.data()) EXPECT_EQ(x, 0.0);
}

TEST_F(AttentionTest, KeyPermutationInvariance) {
  TensorD q = random_tensor({4, 8}, gen);
  TensorD kv = random_tensor({6, 8}, gen);
  TensorD kv_perm = index_select(kv, {3, 0, 5, 1, 4, 2});
  TensorD a = mha(q, kv, kv);
  TensorD b = mha(q, kv_perm, kv_perm);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST_F(AttentionTest, HeadCountMustDivideWidth) {
  Rng r(1);
  EXPECT_THROW(MultiHeadAttention<double>::init(10, 3, r), ConfigError);
  TensorD x = random_tensor({2, 10}, gen);
  EXPECT_THROW(scaled_dot_attention(x, x, x, 4), ConfigError);
}

TEST_F(AttentionTest, CoreMatchesComposedReference) {
  // Per-head softmax(q k^T / sqrt(dh)) v built from primitive ops.
  TensorD q = random_tensor({3, 8}, gen), k = random_tensor({5, 8}, gen),
          v = random_tensor({5, 8}, gen);
  TensorD fused = scaled_dot_attention(q, k, v, 2);
  for (std::size_t h = 0; h < 2; ++h) {
    auto cols = [h](const TensorD& t) {
      std::vector<double> out;
      for (std::size_t r = 0; r < t.dim(0); ++r)
        for (std::size_t c = 0; c < 4; ++c) out.push_back(t.at({r, h * 4 + c}));
      return TensorD::from_data({t.dim(0), 4}, out);
    };
    TensorD p = softmax(scale(matmul(cols(q), transpose(cols(k))), 0.5), 1);
    TensorD o = matmul(p, cols(v));
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c)
        EXPECT_NEAR(fused.at({r, h * 4 + c}), o.at({r, c}), 1e-12);
  }
}

TEST(Backward, SumGivesOnes) {
  TensorD x = TensorD::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceInput) {
  TensorD x = TensorD::from_data({4}, {1, -2, 0.5, 3}, true);
  backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], 2.0 * x.data()[i]);
}

TEST(Backward, NonScalarRootThrows) {
  TensorD x = TensorD::from_data({3}, {1, 2, 3}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, ReplayIsDeterministic) {
  std::mt19937_64 gen(2);
  TensorD x = random_tensor({3, 4}, gen);
  x.set_requires_grad(true);
  TensorD loss = sum(gelu(layer_norm(x, TensorD::full({4}, 1.0), TensorD::zeros({4}), 1e-5)));
  auto record = ComputationRecord<double>::trace(loss);
  record.backward();
  std::vector<double> first(x.grad().begin(), x.grad().end());
  x.zero_grad();
  record.backward();
  EXPECT_EQ(first, std::vector<double>(x.grad().begin(), x.grad().end()));
}

TEST(Backward, RecordIsTopologicallyOrdered) {
  TensorD x = TensorD::from_data({2}, {1, 2}, true);
  TensorD y = mul(x, x);
  TensorD z = add(y, x);
  auto record = ComputationRecord<double>::trace(sum(z));
  const auto& order = record.order();
  for (std::size_t i = 0; i < order.size(); ++i)
    for (const auto& in : order[i]->inputs) {
      auto pos = std::find(order.begin(), order.end(), in.get());
      ASSERT_NE(pos, order.end());
      EXPECT_LT(static_cast<std::size_t>(pos - order.begin()), i);
    }
  EXPECT_EQ(record.size(), 4u);  // x, y, z, sum
}

TEST(Backward, NoGradGuardSkipsRecording) {
  TensorD x = TensorD::from_data({2}, {1, 2}, true);
  NoGradGuard guard;
  TensorD y = sum(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(GradCheck, SumIsExact) {
  std::mt19937_64 gen(1);
  auto report = grad_check<double>([](const TensorD& x) { return sum(x); },
                                   random_tensor({3, 5}, gen), 1e-4);
  EXPECT_LE(report.max_rel_err, 1e-10);
  EXPECT_EQ(report.coordinates, 15u);
}

TEST(GradCheck, CrossEntropyOfSoftmax) {
  std::mt19937_64 gen(4);
  auto f = [](const TensorD& logits) {
    TensorD lp = log_softmax(logits, 1);
    return scale(sum(gather(lp, {1, 5, 8})), -1.0 / 3);
  };
  auto report = grad_check<double>(f, random_tensor({3, 3}, gen, -3, 3), 1e-4);
  EXPECT_LE(report.max_rel_err, 1e-4);
}

// Every primitive's adjoint matches central differences over 20 random
// shapes and seeds (float64, eps 1e-4, rtol 1e-4).
TEST(GradCheck, EveryPrimitiveOverRandomShapes) {
  const auto checks = check_primitives(20, 1e-4);
  EXPECT_GE(checks.size(), 20u * 30u);
  for (const auto& c : checks)
    EXPECT_LE(c.report.max_rel_err, 1e-4) << c.name << " seed " << c.seed << " at " << c.report.worst;
}

TEST(L2Normalize, UnitNormForNonTinyInputs) {
  std::mt19937_64 gen(8);
  for (double s : {1e-8, 1e-3, 1.0, 1e6}) {
    TensorD x = scale(random_tensor({4, 6}, gen), s);
    TensorD y = l2_normalize(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double n = 0;
      for (std::size_t c = 0; c < 6; ++c) n += y.at({r, c}) * y.at({r, c});
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6) << "scale " << s;
    }
  }
}

TEST(CosineSimilarity, SelfSimilarityAndScaleInvariance) {
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 20; ++trial) {
    TensorD x = random_tensor({1, 7}, gen);
    TensorD y = random_tensor({1, 7}, gen);
    EXPECT_NEAR(cosine_similarity(x, x).item(), 1.0, 1e-6);
    const double alpha = 0.01 + trial * 3.3;
    EXPECT_NEAR(cosine_similarity(scale(x, alpha), y).item(), cosine_similarity(x, y).item(),
                1e-6);
  }
}

TEST(CheckedMode, NonFiniteOutputThrows) {
  set_checked_mode(true);
  EXPECT_THROW(log(TensorD::from_data({1}, {-1.0})), NumericError);
  set_checked_mode(false);
  EXPECT_NO_THROW(log(TensorD::from_data({1}, {-1.0})));
}

TEST(TensorContract, ShapeMustMatchData) {
  EXPECT_THROW(TensorD::from_data({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(TensorD::zeros({0, 2}), DimensionError);
}

TEST(Kernels, GemmMatchesReferenceBitExactly) {
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<float> dist(-1, 1);
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {7, 13, 5}, {64, 32, 48}, {3, 200, 9}}) {
    std::vector<float> a(m * k), b(k * n), c0(m * n, 0.5f), c1(m * n, 0.5f), c2(m * n, 0.5f);
    for (float& v : a) v = dist(gen);
    for (float& v : b) v = dist(gen);
    kernels::gemm_reference<float>(m, k, n, a.data(), b.data(), c0.data(), true);
    {
      kernels::ScopedBackend serial(kernels::Backend::kSerial);
      kernels::gemm_nn<float>(m, k, n, a.data(), b.data(), c1.data(), true);
    }
    {
      kernels::ScopedBackend omp(kernels::Backend::kOpenMP);
      kernels::gemm_nn<float>(m, k, n, a.data(), b.data(), c2.data(), true);
    }
    EXPECT_EQ(c0, c1);
    EXPECT_EQ(c0, c2);
  }
}

TEST(Kernels, AttentionBackendsAgreeBitExactly) {
  std::mt19937_64 gen(22);
  kernels::AttentionDims d{3, 4, 6, 8, 2};
  std::uniform_real_distribution<double> dist(-1, 1);
  std::vector<double> q(3 * 4 * 8), k(3 * 6 * 8), v(3 * 6 * 8), dout(q.size());
  for (auto* vec : {&q, &k, &v, &dout})
    for (double& x : *vec) x = dist(gen);
  auto run = [&](kernels::Backend b) {
    kernels::ScopedBackend scoped(b);
    std::vector<double> out(q.size()), probs(3 * 2 * 4 * 6), dq(q.size()), dk(k.size()),
        dv(v.size());
    kernels::attention_forward(d, 0.5, q.data(), k.data(), v.data(), out.data(), probs.data());
    kernels::attention_backward(d, 0.5, q.data(), k.data(), v.data(), probs.data(), dout.data(),
                                dq.data(), dk.data(), dv.data());
    out.insert(out.end(), dq.begin(), dq.end());
    out.insert(out.end(), dk.begin(), dk.end());
    out.insert(out.end(), dv.begin(), dv.end());
    return out;
  };
  EXPECT_EQ(run(kernels::Backend::kSerial), run(kernels::Backend::kOpenMP));
}

TEST(Kernels, MacCounterCountsGemm) {
  kernels::set_mac_counting(true);
  kernels::reset_mac_count();
  matmul(TensorD::zeros({3, 4}), TensorD::zeros({4, 5}));
  EXPECT_EQ(kernels::mac_count(), 60u);
  kernels::set_mac_counting(false);
}

TEST(Adam, MovesAgainstGradient) {
  ParamList<double> params;
  TensorD p = TensorD::from_data({2}, {1.0, -1.0}, true);
  params.add("p", p);
  Adam<double> opt(AdamConfig{0.9, 0.999, 1e-8, 0.0});
  backward(sum(mul(p, p)));
  opt.step(params, 0.1);
  EXPECT_NEAR(p.data()[0], 0.9, 1e-9);
  EXPECT_NEAR(p.data()[1], -0.9, 1e-9);
}

}  // namespace
}  // namespace cgclip::num
