#pragma once

#include "cgclip/numerics/tensor.hpp"

namespace cgclip::eval {

using num::Real;
using num::Tensor;

// concat(b, b_hat) with each half L2-normalized: [B, D] x [B, D] -> [B, 2D].
// With b_hat undefined (extractor disabled) this is the normalized b.
template <Real T>
Tensor<T> final_representation(const Tensor<T>& b, const Tensor<T>& b_hat);

}  // namespace cgclip::eval
