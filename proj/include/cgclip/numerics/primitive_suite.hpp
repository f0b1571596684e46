#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgclip/numerics/grad_check.hpp"

namespace cgclip::num {

struct PrimitiveCheck {
  std::string name;
  std::uint64_t seed = 0;
  GradCheckReport report;
};

// Grad-checks every differentiable primitive on `seeds` random shapes in
// float64. Each op output is contracted with fixed random weights so every
// output coordinate contributes to the scalar.
std::vector<PrimitiveCheck> check_primitives(std::size_t seeds, double eps);

}  // namespace cgclip::num
