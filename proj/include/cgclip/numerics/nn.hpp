#pragma once

// Parameterized building blocks shared by the encoders, the fusion encoder
// and the token-based aggregator.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cgclip/numerics/ops.hpp"
#include "cgclip/numerics/tensor.hpp"

namespace cgclip::num {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

template <Real T>
Tensor<T> normal_parameter(Shape shape, Rng& rng, double stddev) {
  std::vector<T> data(shape_numel(shape));
  for (T& v : data) v = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>::from_data(std::move(shape), std::move(data), true);
}

// Non-owning view over the parameters of a module tree, in a fixed order.
template <Real T>
class ParamList {
 public:
  struct Entry {
    std::string name;
    Tensor<T>* tensor;
  };

  void add(std::string name, Tensor<T>& t) {
    if (t.defined()) entries_.push_back({std::move(name), &t});
  }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor->numel();
    return n;
  }
  void zero_grad() {
    for (auto& e : entries_) e.tensor->zero_grad();
  }
  void set_requires_grad(bool on) {
    for (auto& e : entries_) e.tensor->set_requires_grad(on);
  }
  // Replaces every referenced tensor with a private copy of its values.
  void detach_in_place() {
    for (auto& e : entries_) {
      const bool rg = e.tensor->requires_grad();
      *e.tensor = Tensor<T>::from_data(e.tensor->shape(),
                                       {e.tensor->data().begin(), e.tensor->data().end()}, rg);
    }
  }
  // FNV-1a over the raw bytes of every value.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& e : entries_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(e.tensor->data().data());
      for (std::size_t i = 0; i < e.tensor->numel() * sizeof(T); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    }
    return h;
  }

 private:
  std::vector<Entry> entries_;
};

template <Real T>
struct LinearLayer {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out], may be undefined

  static LinearLayer init(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true,
                          double stddev = 0.02) {
    LinearLayer l;
    l.weight = normal_parameter<T>({in, out}, rng, stddev);
    if (with_bias) l.bias = Tensor<T>::zeros({out}, true);
    return l;
  }
  static LinearLayer identity(std::size_t width) {
    std::vector<T> w(width * width, T(0));
    for (std::size_t i = 0; i < width; ++i) w[i * width + i] = T(1);
    LinearLayer l;
    l.weight = Tensor<T>::from_data({width, width}, std::move(w), true);
    l.bias = Tensor<T>::zeros({width}, true);
    return l;
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void zero_out() {
    for (T& v : weight.mutable_data()) v = T(0);
    if (bias.defined())
      for (T& v : bias.mutable_data()) v = T(0);
  }
  void collect(ParamList<T>& out, const std::string& prefix) {
    out.add(prefix + ".weight", weight);
    out.add(prefix + ".bias", bias);
  }
};

template <Real T>
struct LayerNormLayer {
  Tensor<T> gamma, beta;
  T eps = T(1e-5);

  static LayerNormLayer init(std::size_t width) {
    return {Tensor<T>::full({width}, T(1), true), Tensor<T>::zeros({width}, true), T(1e-5)};
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }
  void collect(ParamList<T>& out, const std::string& prefix) {
    out.add(prefix + ".gamma", gamma);
    out.add(prefix + ".beta", beta);
  }
};

// Projections around the attention core: out = W_o * Attn(W_q q, W_k k, W_v v).
template <Real T>
struct MultiHeadAttention {
  LinearLayer<T> q, k, v, o;
  std::size_t heads = 1;

  static MultiHeadAttention init(std::size_t width, std::size_t heads, Rng& rng) {
    if (heads == 0 || width % heads != 0)
      throw ConfigError("attention width " + std::to_string(width) +
                        " is not divisible by head count " + std::to_string(heads));
    MultiHeadAttention a;
    a.q = LinearLayer<T>::init(width, width, rng);
    a.k = LinearLayer<T>::init(width, width, rng);
    a.v = LinearLayer<T>::init(width, width, rng);
    a.o = LinearLayer<T>::init(width, width, rng);
    a.heads = heads;
    return a;
  }
  Tensor<T> operator()(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& value,
                       AttentionCapture<T>* capture = nullptr) const {
    return o(scaled_dot_attention(q(query), k(key), v(value), heads, capture));
  }
  void collect(ParamList<T>& out, const std::string& prefix) {
    q.collect(out, prefix + ".q");
    k.collect(out, prefix + ".k");
    v.collect(out, prefix + ".v");
    o.collect(out, prefix + ".o");
  }
};

template <Real T>
struct FeedForward {
  LinearLayer<T> fc1, fc2;

  static FeedForward init(std::size_t width, std::size_t expansion, Rng& rng) {
    return {LinearLayer<T>::init(width, width * expansion, rng),
            LinearLayer<T>::init(width * expansion, width, rng)};
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }
  void collect(ParamList<T>& out, const std::string& prefix) {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

// Pre-norm self-attention block: x += Attn(LN(x)); x += FFN(LN(x)).
template <Real T>
struct TransformerBlock {
  LayerNormLayer<T> ln_attn;
  MultiHeadAttention<T> attn;
  LayerNormLayer<T> ln_ffn;
  FeedForward<T> ffn;

  static TransformerBlock init(std::size_t width, std::size_t heads, Rng& rng) {
    return {LayerNormLayer<T>::init(width), MultiHeadAttention<T>::init(width, heads, rng),
            LayerNormLayer<T>::init(width), FeedForward<T>::init(width, 4, rng)};
  }
  Tensor<T> operator()(const Tensor<T>& x, AttentionCapture<T>* capture = nullptr) const {
    const Tensor<T> h = ln_attn(x);
    Tensor<T> y = add(x, attn(h, h, h, capture));
    return add(y, ffn(ln_ffn(y)));
  }
  void collect(ParamList<T>& out, const std::string& prefix) {
    ln_attn.collect(out, prefix + ".ln_attn");
    attn.collect(out, prefix + ".attn");
    ln_ffn.collect(out, prefix + ".ln_ffn");
    ffn.collect(out, prefix + ".ffn");
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Adam with L2 weight decay folded into the gradient.
template <Real T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamList<T>& params, double lr) {
    const auto& entries = params.entries();
    if (m_.empty()) {
      for (const auto& e : entries) {
        m_.emplace_back(e.tensor->numel(), 0.0);
        v_.emplace_back(e.tensor->numel(), 0.0);
      }
    }
    if (m_.size() != entries.size()) throw ContractError("Adam: parameter list changed size");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < entries.size(); ++pi) {
      Tensor<T>& p = *entries[pi].tensor;
      if (!p.has_grad()) continue;
      auto values = p.mutable_data();
      const auto grad = p.grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = static_cast<double>(grad[i]) + cfg_.weight_decay * values[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        values[i] = static_cast<T>(values[i] - lr * update);
      }
    }
  }
  std::uint64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace cgclip::num
