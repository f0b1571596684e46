#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cgclip/numerics/tensor.hpp"

namespace cgclip::num {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<tensor>[<index>]" of the largest error
};

// Relative error with denominator max(|analytic|, |numeric|, 1e-8).
double relative_error(double analytic, double numeric);

// Central differences of a scalar function of x against backward().
template <Real T>
GradCheckReport grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                           const Tensor<T>& x, T eps);

struct NamedTensorRef {
  std::string name;
  Tensor<double>* tensor;
};

// Checks d loss / d p for a set of leaf tensors that the loss closure reads.
// At most `max_coords_per_tensor` coordinates are probed per tensor, chosen
// with a fixed stride so the whole tensor is sampled.
GradCheckReport grad_check_params(const std::function<Tensor<double>()>& loss,
                                  const std::vector<NamedTensorRef>& params, double eps,
                                  std::size_t max_coords_per_tensor);

}  // namespace cgclip::num
