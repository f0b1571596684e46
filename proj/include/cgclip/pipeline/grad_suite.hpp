#pragma once

// Gradient soundness checks: every primitive op, and the full training loss
// of a model on a two-identity micro-batch, all in float64.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace cgclip::pipeline {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0;
  double tolerance = 0;
  std::size_t coordinates = 0;
  std::string worst;

  bool passed() const { return max_rel_err <= tolerance; }
};

// One entry per primitive (worst case over `seeds` random shapes), tolerance 1e-4.
std::vector<GradCheckEntry> primitive_grad_checks(std::size_t seeds = 20);

// Total loss of a randomly initialized model (all components on) on a batch
// of 2 identities x 2 tracklets x 2 frames, tolerance 1e-3. At most
// `coords_per_tensor` coordinates are probed per parameter tensor.
GradCheckEntry total_loss_grad_check(std::uint64_t seed = 0, std::size_t coords_per_tensor = 4);

nlohmann::json to_json(const std::vector<GradCheckEntry>& entries);

}  // namespace cgclip::pipeline
