#include "cgclip/eval/representation.hpp"

#include "cgclip/error.hpp"
#include "cgclip/numerics/ops.hpp"

namespace cgclip::eval {

template <Real T>
Tensor<T> final_representation(const Tensor<T>& b, const Tensor<T>& b_hat) {
  if (!b_hat.defined()) return num::l2_normalize(b);
  if (b.shape() != b_hat.shape())
    throw DimensionError("final_representation: " + num::shape_string(b.shape()) + " vs " +
                         num::shape_string(b_hat.shape()));
  return num::concat(std::vector<Tensor<T>>{num::l2_normalize(b), num::l2_normalize(b_hat)}, b.rank() - 1);
}

template Tensor<float> final_representation(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> final_representation(const Tensor<double>&, const Tensor<double>&);

}  // namespace cgclip::eval
