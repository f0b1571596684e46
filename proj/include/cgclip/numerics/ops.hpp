#pragma once

#include <cstddef>
#include <vector>

#include "cgclip/numerics/tensor.hpp"

namespace cgclip::num {

// All ops record their adjoint when gradient recording is on and any input
// requires a gradient. Axis arguments index into the tensor shape.

template <Real T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> transpose(const Tensor<T>& a);

// x [..., in] * w [in, out] (+ bias [out]); leading axes are kept.
template <Real T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);
template <Real T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w);

// b must have the same shape as a or equal a trailing part of it (broadcast
// over the leading axes).
template <Real T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <Real T> Tensor<T> add_scalar(const Tensor<T>& a, T value);

template <Real T> Tensor<T> sum(const Tensor<T>& a);
template <Real T> Tensor<T> mean(const Tensor<T>& a);
// Removes `axis`.
template <Real T> Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis);

template <Real T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <Real T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
// Rows along axis 0.
template <Real T> Tensor<T> index_select(const Tensor<T>& a, const std::vector<std::size_t>& rows);
// Flat element gather; output shape [indices.size()].
template <Real T> Tensor<T> gather(const Tensor<T>& a, const std::vector<std::size_t>& flat);
// Repeats each slice along axis 0 `times` times consecutively.
template <Real T> Tensor<T> repeat_interleave(const Tensor<T>& a, std::size_t times);

template <Real T> Tensor<T> softmax(const Tensor<T>& a, std::size_t axis);
template <Real T> Tensor<T> log_softmax(const Tensor<T>& a, std::size_t axis);
// Normalizes over the last axis.
template <Real T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);
template <Real T> Tensor<T> gelu(const Tensor<T>& a);
template <Real T> Tensor<T> relu(const Tensor<T>& a);
template <Real T> Tensor<T> exp(const Tensor<T>& a);
template <Real T> Tensor<T> log(const Tensor<T>& a);

// Divides each last-axis vector by max(norm, 1e-12).
template <Real T> Tensor<T> l2_normalize(const Tensor<T>& a);
// Pairwise cosine similarity of the rows of a [m, d] and b [n, d] -> [m, n].
template <Real T> Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b);
template <Real T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<std::size_t>& ids);

// Optional sink for attention probabilities, laid out
// [groups, heads, queries, keys].
template <Real T>
struct AttentionCapture {
  std::size_t groups = 0, heads = 0, queries = 0, keys = 0;
  std::vector<T> probs;
};

// Grouped multi-head scaled dot-product attention core (no projections).
// q [G, q, D], k/v [G, k, D] (rank-2 inputs are treated as G = 1).
template <Real T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::size_t heads, AttentionCapture<T>* capture = nullptr);

}  // namespace cgclip::num
