#include "cgclip/pipeline/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "cgclip/data/io.hpp"
#include "cgclip/error.hpp"

namespace cgclip::pipeline {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  const std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& item : j.items())
    if (!known.count(item.key()))
      throw ConfigError("unknown key '" + item.key() + "' in config section '" + section + "'");
}

template <class V>
void read(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

json loss_to_json(const obj::LossConfig& c) {
  return {{"w_v2m", c.w_v2m},         {"w_tri", c.w_tri},         {"w_ce", c.w_ce},
          {"margin", c.margin},       {"smoothing", c.smoothing}, {"temperature", c.temperature}};
}

obj::LossConfig loss_from_json(const json& j) {
  reject_unknown(j, "train.loss", {"w_v2m", "w_tri", "w_ce", "margin", "smoothing", "temperature"});
  obj::LossConfig c;
  read(j, "w_v2m", c.w_v2m);
  read(j, "w_tri", c.w_tri);
  read(j, "w_ce", c.w_ce);
  read(j, "margin", c.margin);
  read(j, "smoothing", c.smoothing);
  read(j, "temperature", c.temperature);
  return c;
}

json train_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"p", c.p},
          {"k", c.k},
          {"frames", c.frames},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"warmup_fraction", c.warmup_fraction},
          {"milestones", c.milestones},
          {"decay", c.decay},
          {"momentum", c.momentum},
          {"loss", loss_to_json(c.loss)},
          {"use_cmr", c.use_cmr},
          {"use_tfe", c.use_tfe},
          {"memory", cmr::to_string(c.memory)},
          {"fusion_variant", cmr::to_string(c.fusion_variant)},
          {"fusion_blocks", c.fusion_blocks},
          {"id_strategy", cmr::to_string(c.id_strategy)},
          {"num_tokens", c.num_tokens},
          {"eval_every", c.eval_every}};
}

TrainConfig train_from_json(const json& j) {
  reject_unknown(j, "train",
                 {"epochs", "p", "k", "frames", "lr", "weight_decay", "warmup_fraction", "milestones",
                  "decay", "momentum", "loss", "use_cmr", "use_tfe", "memory", "fusion_variant",
                  "fusion_blocks", "id_strategy", "num_tokens", "eval_every"});
  TrainConfig c;
  read(j, "epochs", c.epochs);
  read(j, "p", c.p);
  read(j, "k", c.k);
  read(j, "frames", c.frames);
  read(j, "lr", c.lr);
  read(j, "weight_decay", c.weight_decay);
  read(j, "warmup_fraction", c.warmup_fraction);
  read(j, "milestones", c.milestones);
  read(j, "decay", c.decay);
  read(j, "momentum", c.momentum);
  if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"));
  read(j, "use_cmr", c.use_cmr);
  read(j, "use_tfe", c.use_tfe);
  if (j.contains("memory")) c.memory = cmr::parse_memory_mode(j.at("memory").get<std::string>());
  if (j.contains("fusion_variant"))
    c.fusion_variant = cmr::parse_fusion_variant(j.at("fusion_variant").get<std::string>());
  read(j, "fusion_blocks", c.fusion_blocks);
  if (j.contains("id_strategy")) c.id_strategy = cmr::parse_id_strategy(j.at("id_strategy").get<std::string>());
  read(j, "num_tokens", c.num_tokens);
  read(j, "eval_every", c.eval_every);
  return c;
}

json model_to_json(const model::EncoderDims& d) {
  return {{"patch", d.patch},   {"d_model", d.d_model},     {"heads", d.heads},
          {"depth", d.depth},   {"embed_dim", d.embed_dim}, {"caption_max", d.caption_max}};
}

model::EncoderDims model_from_json(const json& j) {
  reject_unknown(j, "model", {"patch", "d_model", "heads", "depth", "embed_dim", "caption_max"});
  model::EncoderDims d;
  read(j, "patch", d.patch);
  read(j, "d_model", d.d_model);
  read(j, "heads", d.heads);
  read(j, "depth", d.depth);
  read(j, "embed_dim", d.embed_dim);
  read(j, "caption_max", d.caption_max);
  return d;
}

json pretrain_to_json(const model::PretrainConfig& c) {
  return {{"steps", c.steps},
          {"batch", c.batch},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"init_temperature", c.init_temperature},
          {"holdout_fraction", c.holdout_fraction},
          {"seed", c.seed}};
}

model::PretrainConfig pretrain_from_json(const json& j) {
  reject_unknown(j, "pretrain",
                 {"steps", "batch", "lr", "weight_decay", "init_temperature", "holdout_fraction", "seed"});
  model::PretrainConfig c;
  read(j, "steps", c.steps);
  read(j, "batch", c.batch);
  read(j, "lr", c.lr);
  read(j, "weight_decay", c.weight_decay);
  read(j, "init_temperature", c.init_temperature);
  read(j, "holdout_fraction", c.holdout_fraction);
  read(j, "seed", c.seed);
  return c;
}

json eval_to_json(const EvalConfig& c) { return {{"render_seed_offset", c.render_seed_offset}, {"ks", c.ks}}; }

EvalConfig eval_from_json(const json& j) {
  reject_unknown(j, "eval", {"render_seed_offset", "ks"});
  EvalConfig c;
  read(j, "render_seed_offset", c.render_seed_offset);
  read(j, "ks", c.ks);
  return c;
}

json bench_to_json(const BenchConfig& c) {
  return {{"modules", c.modules}, {"axes", c.axes},       {"frame_points", c.frame_points},
          {"patch_points", c.patch_points}, {"frames", c.frames}, {"patches", c.patches},
          {"width", c.width},     {"tokens", c.tokens},   {"heads", c.heads},
          {"repeats", c.repeats}, {"warmup", c.warmup},   {"threads", c.threads}};
}

BenchConfig bench_from_json(const json& j) {
  reject_unknown(j, "bench",
                 {"modules", "axes", "frame_points", "patch_points", "frames", "patches", "width", "tokens",
                  "heads", "repeats", "warmup", "threads"});
  BenchConfig c;
  read(j, "modules", c.modules);
  read(j, "axes", c.axes);
  read(j, "frame_points", c.frame_points);
  read(j, "patch_points", c.patch_points);
  read(j, "frames", c.frames);
  read(j, "patches", c.patches);
  read(j, "width", c.width);
  read(j, "tokens", c.tokens);
  read(j, "heads", c.heads);
  read(j, "repeats", c.repeats);
  read(j, "warmup", c.warmup);
  read(j, "threads", c.threads);
  return c;
}

}  // namespace

std::size_t TrainConfig::steps_per_epoch(std::size_t tracklets) const {
  const std::size_t batch = p * k;
  return std::max<std::size_t>(1, (tracklets + batch - 1) / batch);
}

void TrainConfig::validate() const {
  if (p < 2 || k < 2) throw ConfigError("PK batches need p >= 2 and k >= 2 for the triplet loss");
  if (frames == 0 || num_tokens == 0) throw ConfigError("frames and num_tokens must be positive");
  if (!(lr > 0) || weight_decay < 0) throw ConfigError("learning rate must be positive");
  if (warmup_fraction < 0 || warmup_fraction >= 1) throw ConfigError("warmup_fraction must be in [0, 1)");
  for (double m : milestones)
    if (m <= 0 || m >= 1) throw ConfigError("decay milestones are fractions in (0, 1)");
  if (!(decay > 0) || decay > 1) throw ConfigError("decay factor must be in (0, 1]");
  if (momentum < 0 || momentum > 1) throw ConfigError("momentum must be in [0, 1]");
  if (fusion_blocks == 0) throw ConfigError("fusion encoder needs at least one block");
  loss.validate();
}

RunConfig RunConfig::resolved() const {
  RunConfig r = *this;
  r.data.seed = seed;
  r.pretrain.seed = seed;
  return r;
}

void RunConfig::validate() const {
  train.validate();
  if (eval.ks.empty()) throw ConfigError("eval.ks must not be empty");
  for (auto k : eval.ks)
    if (k == 0) throw ConfigError("CMC ranks start at 1");
  if (bench.repeats == 0 || bench.threads < 1) throw ConfigError("bench repeats and threads must be positive");
  for (const auto& m : bench.modules) bench::parse_module(m);
  for (const auto& a : bench.axes) bench::parse_axis(a);
}

json to_json(const RunConfig& cfg) {
  return {{"seed", cfg.seed},
          {"data", data::config_to_json(cfg.data)},
          {"model", model_to_json(cfg.model)},
          {"pretrain", pretrain_to_json(cfg.pretrain)},
          {"train", train_to_json(cfg.train)},
          {"eval", eval_to_json(cfg.eval)},
          {"bench", bench_to_json(cfg.bench)}};
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, "root", {"seed", "data", "model", "pretrain", "train", "eval", "bench"});
  RunConfig cfg;
  try {
    read(j, "seed", cfg.seed);
    if (j.contains("data")) {
      reject_unknown(j.at("data"), "data",
                     {"identities", "tracklets_per_id", "frames_per_tracklet", "hard_split", "noise", "seed",
                      "captions_per_id", "max_tracklet_len", "height", "width", "render_seed"});
      cfg.data = data::config_from_json(j.at("data"));
    }
    if (j.contains("model")) cfg.model = model_from_json(j.at("model"));
    if (j.contains("pretrain")) cfg.pretrain = pretrain_from_json(j.at("pretrain"));
    if (j.contains("train")) cfg.train = train_from_json(j.at("train"));
    if (j.contains("eval")) cfg.eval = eval_from_json(j.at("eval"));
    if (j.contains("bench")) cfg.bench = bench_from_json(j.at("bench"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg = cfg.resolved();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw InputError("config file " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

data::DatasetConfig eval_dataset_config(const RunConfig& cfg) {
  data::DatasetConfig d = cfg.data;
  d.seed = cfg.seed;
  d.render_seed = cfg.seed + cfg.eval.render_seed_offset;
  return d;
}

}  // namespace cgclip::pipeline
