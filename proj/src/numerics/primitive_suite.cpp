#include "cgclip/numerics/primitive_suite.hpp"

#include <functional>
#include <random>

#include "cgclip/numerics/ops.hpp"

namespace cgclip::num {

namespace {

using TensorD = Tensor<double>;

TensorD random_tensor(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(gen);
  return TensorD::from_data(std::move(shape), std::move(v));
}

std::function<TensorD(const TensorD&)> weighted(std::function<TensorD(const TensorD&)> op,
                                                std::uint64_t seed) {
  return [op, seed](const TensorD& x) {
    TensorD y = op(x);
    std::mt19937_64 gen(seed);
    TensorD w = random_tensor(y.shape(), gen);
    return sum(mul(y, w));
  };
}

struct PrimitiveCase {
  std::string name;
  std::function<TensorD(const TensorD&)> op;
  double lo = -1.0, hi = 1.0;
};

std::vector<PrimitiveCase> primitive_cases(std::mt19937_64& gen, std::size_t rows,
                                           std::size_t cols) {
  TensorD w = random_tensor({cols, 3}, gen);
  TensorD bias = random_tensor({3}, gen);
  TensorD other = random_tensor({rows, cols}, gen);
  TensorD gamma = random_tensor({cols}, gen), beta = random_tensor({cols}, gen);
  TensorD table_rows = random_tensor({2, cols}, gen);
  std::vector<std::size_t> ids{rows - 1, 0, rows - 1};
  return {
      {"matmul", [w](const TensorD& x) { return matmul(x, w); }},
      {"linear", [w, bias](const TensorD& x) { return linear(x, w, bias); }},
      {"transpose", [](const TensorD& x) { return transpose(x); }},
      {"add", [other](const TensorD& x) { return add(x, other); }},
      {"add_broadcast", [gamma](const TensorD& x) { return add(x, gamma); }},
      {"broadcast_operand", [other](const TensorD& x) {
         return add(other, reshape(mean_axis(x, 0), {x.dim(1)}));
       }},
      {"sub", [other](const TensorD& x) { return sub(other, x); }},
      {"mul", [other](const TensorD& x) { return mul(x, other); }},
      {"scale", [](const TensorD& x) { return scale(x, -2.5); }},
      {"mean_axis0", [](const TensorD& x) { return mean_axis(x, 0); }},
      {"mean_axis1", [](const TensorD& x) { return mean_axis(x, 1); }},
      {"concat0", [other](const TensorD& x) { return concat<double>({x, other, x}, 0); }},
      {"concat1", [other](const TensorD& x) { return concat<double>({other, x}, 1); }},
      {"index_select", [ids](const TensorD& x) { return index_select(x, ids); }},
      {"embedding_lookup", [ids](const TensorD& x) { return embedding_lookup(x, ids); }},
      {"repeat_interleave", [](const TensorD& x) { return repeat_interleave(x, 3); }},
      {"softmax0", [](const TensorD& x) { return softmax(x, 0); }},
      {"softmax1", [](const TensorD& x) { return softmax(x, 1); }},
      {"log_softmax", [](const TensorD& x) { return log_softmax(x, 1); }},
      {"layer_norm", [gamma, beta](const TensorD& x) { return layer_norm(x, gamma, beta, 1e-5); }},
      {"gelu", [](const TensorD& x) { return gelu(x); }, -3, 3},
      {"relu", [](const TensorD& x) { return relu(x); }, 0.05, 1},
      {"exp", [](const TensorD& x) { return exp(x); }},
      {"log", [](const TensorD& x) { return log(x); }, 0.5, 2},
      {"l2_normalize", [](const TensorD& x) { return l2_normalize(x); }},
      {"cosine_similarity", [other](const TensorD& x) { return cosine_similarity(x, other); }},
      {"cosine_self", [](const TensorD& x) { return cosine_similarity(x, x); }},
      {"attention_self", [](const TensorD& x) {
         return scaled_dot_attention(x, x, x, 1);
       }},
      {"attention_grouped", [other](const TensorD& x) {
         const std::size_t r = x.dim(0), c = x.dim(1);
         TensorD q = reshape(x, {1, r, c});
         TensorD kv = reshape(other, {1, r, c});
         return scaled_dot_attention(q, kv, reshape(mul(x, other), {1, r, c}), 1);
       }},
      {"table_rows_attention", [table_rows](const TensorD& x) {
         return scaled_dot_attention(x, table_rows, table_rows, 1);
       }},
  };
}

// Every primitive's adjoint matches central differences over 20 random
// shapes and seeds (float64, eps 1e-4, rtol 1e-4).
}  // namespace

std::vector<PrimitiveCheck> check_primitives(std::size_t seeds, double eps) {
  std::vector<PrimitiveCheck> out;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 gen(1000 + seed);
    const std::size_t rows = 2 + seed % 4, cols = 2 + (seed * 3) % 5;
    for (const auto& c : primitive_cases(gen, rows, cols)) {
      TensorD x = random_tensor({rows, cols}, gen, c.lo, c.hi);
      out.push_back({c.name, seed, grad_check<double>(weighted(c.op, seed), x, eps)});
    }
  }
  return out;
}

}  // namespace cgclip::num
