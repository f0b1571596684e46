#pragma once

// Main training loop and the end-to-end run used by the CLI and the
// acceptance runner.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "cgclip/data/synthetic.hpp"
#include "cgclip/eval/retrieval.hpp"
#include "cgclip/model/pretrain.hpp"
#include "cgclip/pipeline/config.hpp"
#include "cgclip/pipeline/model_state.hpp"

namespace cgclip::pipeline {

// Linear warmup over the first warmup_fraction of steps, then x decay at each
// milestone.
double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

ModelSpec spec_for(const TrainConfig& cfg, const data::Dataset& ds, const model::EncoderDims& dims);

// Fresh trainable modules around a pretrained encoder pair, with memories
// initialized from the corpus.
ModelState<float> build_state(const TrainConfig& cfg, const data::Dataset& ds,
                              const model::PretrainResult& pretrained, std::uint64_t seed);

struct TrainResult {
  std::vector<obj::LossReport> losses;
  std::vector<double> lrs;
  std::vector<std::pair<std::size_t, double>> map_history;  // (epoch, mAP)
  std::optional<eval::RetrievalReport> final_report;
  std::uint64_t frozen_checksum_before = 0, frozen_checksum_after = 0;
  std::uint64_t text_checksum_before = 0, text_checksum_after = 0;
  std::size_t steps = 0;
  double seconds = 0;
};

// Trains in place. With a non-empty out_dir the per-step log is written to
// out_dir/training_log.csv, and on a non-finite loss the last good state is
// written to out_dir/last_good.ckpt before a NumericError is thrown.
TrainResult train_model(ModelState<float>& state, const data::Dataset& train_set,
                        const data::Dataset* eval_set, const TrainConfig& cfg, const EvalConfig& eval_cfg,
                        std::uint64_t seed, const std::filesystem::path& out_dir = {});

// Pretrained encoder pair on disk: a checkpoint with frozen_image.*,
// trainable_image.* and frozen_text.* tensors and the encoder dims in meta.
void write_pretrained(const std::filesystem::path& path, const model::PretrainResult& result,
                      nlohmann::json meta = nlohmann::json::object());
model::PretrainResult read_pretrained(const std::filesystem::path& path);

struct RunResult {
  ModelState<float> state;
  TrainResult train;
  eval::RetrievalReport report;
  double pretrain_top1 = 0;
};

// Inputs a run would otherwise build itself from the config.
struct RunInputs {
  const data::Dataset* train_set = nullptr;
  const data::Dataset* eval_set = nullptr;
  const model::PretrainResult* pretrained = nullptr;
};

// gen-data -> pretrain -> train -> eval on the re-rendered corpus, skipping
// whatever `inputs` supplies. Writes config.json, training_log.csv,
// model.ckpt, metrics.json and per_query.csv under out_dir when it is
// non-empty.
RunResult run_pipeline(const RunConfig& cfg, const RunInputs& inputs = {},
                       const std::filesystem::path& out_dir = {});

}  // namespace cgclip::pipeline
