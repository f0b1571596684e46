#pragma once

#include <cstdint>

#include "cgclip/numerics/nn.hpp"

namespace cgclip::model {

// Deep copy of a parameterized module: the result shares no storage with the
// source. `trainable` sets requires_grad on every copied parameter.
template <num::Real T, class Module>
Module snapshot(const Module& source, bool trainable) {
  Module copy = source;
  num::ParamList<T> params;
  copy.collect(params, "");
  params.detach_in_place();
  params.set_requires_grad(trainable);
  return copy;
}

template <num::Real T, class Module>
std::uint64_t checksum(Module& module) {
  num::ParamList<T> params;
  module.collect(params, "");
  return params.checksum();
}

}  // namespace cgclip::model
