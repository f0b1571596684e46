#pragma once

// Run configuration. Every section round-trips through JSON; unknown keys are
// rejected so a typo cannot silently fall back to a default.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgclip/bench/cost.hpp"
#include "cgclip/cmr/memory.hpp"
#include "cgclip/data/synthetic.hpp"
#include "cgclip/model/encoders.hpp"
#include "cgclip/model/pretrain.hpp"
#include "cgclip/objectives/losses.hpp"

namespace cgclip::pipeline {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t p = 8;  // identities per batch
  std::size_t k = 4;  // tracklets per identity
  std::size_t frames = 4;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double warmup_fraction = 0.1;
  std::vector<double> milestones{0.5, 0.8};  // fractions of the total step count
  double decay = 0.1;
  double momentum = 0.2;
  obj::LossConfig loss;
  bool use_cmr = true;
  bool use_tfe = true;
  cmr::MemoryMode memory = cmr::MemoryMode::kRefined;
  cmr::FusionVariant fusion_variant = cmr::FusionVariant::kCrossThenSelf;
  std::size_t fusion_blocks = 2;
  cmr::IdStrategy id_strategy = cmr::IdStrategy::kNone;
  std::size_t num_tokens = 4;
  std::size_t eval_every = 0;  // epochs between evaluations; 0 evaluates at the end only

  // --no-cmr forces the image-memory target whatever `memory` says.
  cmr::MemoryMode effective_memory() const { return use_cmr ? memory : cmr::MemoryMode::kImage; }
  std::size_t steps_per_epoch(std::size_t tracklets) const;
  void validate() const;
};

struct EvalConfig {
  // The evaluation corpus re-renders the training identities with
  // render_seed = seed + render_seed_offset.
  std::uint64_t render_seed_offset = 7919;
  std::vector<std::size_t> ks{1, 5, 10, 20};
};

struct BenchConfig {
  std::vector<std::string> modules{"tfe", "baseline"};
  std::vector<std::string> axes{"frames", "patch_tokens"};
  std::vector<std::uint64_t> frame_points{16, 32, 48, 64, 96, 128, 192, 256};
  std::vector<std::uint64_t> patch_points{64, 128, 192, 256, 384, 512, 768, 1024};
  std::uint64_t frames = 4;     // L held fixed during the patch sweep
  std::uint64_t patches = 8;    // N held fixed during the frame sweep
  std::uint64_t width = 32;
  std::uint64_t tokens = 4;
  std::uint64_t heads = 4;
  std::size_t repeats = 20;
  std::size_t warmup = 2;
  int threads = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  data::DatasetConfig data;
  model::EncoderDims model;
  model::PretrainConfig pretrain;
  TrainConfig train;
  EvalConfig eval;
  BenchConfig bench;

  // Copies the run seed into the sections that carry their own seed.
  RunConfig resolved() const;
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

data::DatasetConfig eval_dataset_config(const RunConfig& cfg);

}  // namespace cgclip::pipeline
