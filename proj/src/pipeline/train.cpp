#include "cgclip/pipeline/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include "cgclip/data/sampling.hpp"
#include "cgclip/error.hpp"
#include "cgclip/model/snapshot.hpp"

namespace cgclip::pipeline {

double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  const auto warmup = static_cast<std::size_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps)));
  double lr = cfg.lr;
  if (step < warmup) lr *= static_cast<double>(step + 1) / static_cast<double>(warmup);
  for (double m : cfg.milestones)
    if (static_cast<double>(step) >= m * static_cast<double>(total_steps)) lr *= cfg.decay;
  return lr;
}

ModelSpec spec_for(const TrainConfig& cfg, const data::Dataset& ds, const model::EncoderDims& dims) {
  ModelSpec s;
  s.dims = model::dims_for(ds, dims);
  s.identities = static_cast<std::size_t>(ds.identity_count());
  s.frames = cfg.frames;
  s.use_tfe = cfg.use_tfe;
  s.memory = cfg.effective_memory();
  s.fusion_variant = cfg.fusion_variant;
  s.fusion_blocks = cfg.fusion_blocks;
  s.id_strategy = cfg.id_strategy;
  s.num_tokens = cfg.num_tokens;
  s.momentum = cfg.momentum;
  return s;
}

ModelState<float> build_state(const TrainConfig& cfg, const data::Dataset& ds,
                              const model::PretrainResult& pretrained, std::uint64_t seed) {
  num::Rng rng(seed ^ 0x5bd1e995ULL);
  ModelSpec spec = spec_for(cfg, ds, pretrained.frozen_image.dims);
  auto state = ModelState<float>::init(spec, rng);
  state.frozen_image = model::snapshot<float>(pretrained.frozen_image, false);
  state.frozen_text = model::snapshot<float>(pretrained.frozen_text, false);
  state.image = model::snapshot<float>(pretrained.trainable_image, true);
  state.init_memories(ds);
  return state;
}

TrainResult train_model(ModelState<float>& state, const data::Dataset& train_set, const data::Dataset* eval_set,
                        const TrainConfig& cfg, const EvalConfig& eval_cfg, std::uint64_t seed,
                        const std::filesystem::path& out_dir) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  result.frozen_checksum_before = state.frozen_checksum();
  result.text_checksum_before = state.bank.text_checksum();

  num::ParamList<float> params;
  state.collect_trainable(params);
  num::Adam<float> opt({0.9, 0.999, 1e-8, cfg.weight_decay});
  data::PKSampler sampler(train_set, cfg.p, cfg.k, seed);
  std::mt19937_64 frame_rng(seed + 17);

  std::optional<obj::TrainingLog> log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log.emplace(out_dir / "training_log.csv");
  }

  const std::size_t per_epoch = cfg.steps_per_epoch(train_set.tracklets.size());
  const std::size_t total = cfg.epochs * per_epoch;
  model::Checkpoint last_good = to_checkpoint(state);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < per_epoch; ++i, ++step) {
      const auto batch = sampler.next();
      const auto patches = batch_patches(state, train_set, batch.tracklets, &frame_rng);
      double value = NAN;
      BatchOutputs<float> out;
      try {
        out = forward_batch(state, patches, batch.labels, cfg.loss);
        value = out.loss.report.total;
      } catch (const NumericError&) {
        value = NAN;
      }
      if (!std::isfinite(value)) {
        if (!out_dir.empty()) model::write_checkpoint(out_dir / "last_good.ckpt", last_good);
        throw NumericError("non-finite loss at step " + std::to_string(step) +
                           (out_dir.empty() ? std::string()
                                            : "; last good state written to " +
                                                  (out_dir / "last_good.ckpt").string()));
      }
      const double lr = scheduled_lr(cfg, step, total);
      params.zero_grad();
      num::backward(out.loss.total);
      opt.step(params, lr);

      std::vector<int> ids;
      for (std::size_t t : batch.tracklets) ids.push_back(train_set.tracklets[t].id);
      cmr::momentum_update_hard(state.bank.image, out.b.detach(), batch.labels, ids, state.bank.momentum);

      result.losses.push_back(out.loss.report);
      result.lrs.push_back(lr);
      if (log) log->append(step, out.loss.report, lr);
    }
    last_good = to_checkpoint(state);
    if (eval_set && cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 && epoch + 1 < cfg.epochs)
      result.map_history.emplace_back(epoch + 1, evaluate_model(state, *eval_set, eval_cfg.ks).map);
  }
  result.steps = step;
  if (eval_set) {
    result.final_report = evaluate_model(state, *eval_set, eval_cfg.ks);
    result.map_history.emplace_back(cfg.epochs, result.final_report->map);
  }
  result.frozen_checksum_after = state.frozen_checksum();
  result.text_checksum_after = state.bank.text_checksum();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

namespace {

nlohmann::json dims_to_json(const model::EncoderDims& d) {
  ModelSpec s;
  s.dims = d;
  return to_json(s).at("dims");
}

model::EncoderDims dims_from_json(const nlohmann::json& j) {
  auto spec = to_json(ModelSpec{});
  spec["dims"] = j;
  return model_spec_from_json(spec).dims;
}

}  // namespace

void write_pretrained(const std::filesystem::path& path, const model::PretrainResult& result,
                      nlohmann::json meta) {
  auto r = result;
  num::ParamList<float> params;
  r.frozen_image.collect(params, "frozen_image");
  r.trainable_image.collect(params, "trainable_image");
  r.frozen_text.collect(params, "frozen_text");
  model::Checkpoint ckpt;
  ckpt.store(params);
  meta["dims"] = dims_to_json(result.frozen_image.dims);
  meta["heldout_top1"] = result.heldout_top1;
  meta["temperature"] = result.temperature;
  ckpt.meta = std::move(meta);
  model::write_checkpoint(path, ckpt);
}

model::PretrainResult read_pretrained(const std::filesystem::path& path) {
  const auto ckpt = model::read_checkpoint(path);
  if (!ckpt.meta.contains("dims")) throw InputError(path.string() + " is not a pretrained encoder checkpoint");
  const auto dims = dims_from_json(ckpt.meta.at("dims"));
  num::Rng rng(0);
  model::PretrainResult r;
  r.frozen_image = model::ImageEncoder<float>::init(dims, rng);
  r.trainable_image = model::ImageEncoder<float>::init(dims, rng);
  r.frozen_text = model::TextEncoder<float>::init(dims, rng);
  num::ParamList<float> params;
  r.frozen_image.collect(params, "frozen_image");
  r.trainable_image.collect(params, "trainable_image");
  r.frozen_text.collect(params, "frozen_text");
  ckpt.load_into(params);
  r.frozen_image = model::snapshot<float>(r.frozen_image, false);
  r.frozen_text = model::snapshot<float>(r.frozen_text, false);
  r.trainable_image = model::snapshot<float>(r.trainable_image, true);
  r.heldout_top1 = ckpt.meta.value("heldout_top1", 0.0);
  r.temperature = ckpt.meta.value("temperature", 0.0);
  return r;
}

RunResult run_pipeline(const RunConfig& raw, const RunInputs& inputs, const std::filesystem::path& out_dir) {
  const RunConfig cfg = raw.resolved();
  cfg.validate();
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir / "config.json") << to_json(cfg).dump(2) << '\n';
  }
  std::optional<data::Dataset> own_train, own_eval;
  const data::Dataset* train_set = inputs.train_set;
  const data::Dataset* eval_set = inputs.eval_set;
  if (!train_set) train_set = &own_train.emplace(data::generate_synthetic(cfg.data));
  if (!eval_set) eval_set = &own_eval.emplace(data::generate_synthetic(eval_dataset_config(cfg)));

  std::optional<model::PretrainResult> own_pre;
  const model::PretrainResult* pretrained = inputs.pretrained;
  if (!pretrained)
    pretrained = &own_pre.emplace(model::pretrain_clip(*train_set, cfg.pretrain, model::dims_for(*train_set, cfg.model)));

  auto state = build_state(cfg.train, *train_set, *pretrained, cfg.seed);
  auto train = train_model(state, *train_set, eval_set, cfg.train, cfg.eval, cfg.seed, out_dir);
  RunResult r{std::move(state), std::move(train), {}, pretrained->heldout_top1};
  r.report = *r.train.final_report;
  if (!out_dir.empty()) {
    auto ckpt = to_checkpoint(r.state);
    ckpt.meta["config"] = to_json(cfg);
    ckpt.meta["seed"] = cfg.seed;
    model::write_checkpoint(out_dir / "model.ckpt", ckpt);
    eval::write_metrics_json(out_dir / "metrics.json", r.report);
    eval::write_per_query_csv(out_dir / "per_query.csv", r.report);
  }
  return r;
}

}  // namespace cgclip::pipeline
