// cgclip: command-line driver for data generation, pretraining, training,
// evaluation, benchmarking, gradient checks and attention inspection.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cgclip/bench/cost.hpp"
#include "cgclip/data/io.hpp"
#include "cgclip/error.hpp"
#include "cgclip/eval/retrieval.hpp"
#include "cgclip/model/checkpoint.hpp"
#include "cgclip/numerics/kernels.hpp"
#include "cgclip/pipeline/config.hpp"
#include "cgclip/pipeline/grad_suite.hpp"
#include "cgclip/pipeline/model_state.hpp"
#include "cgclip/pipeline/train.hpp"
#include "cgclip/tfe/tfe.hpp"

namespace fs = std::filesystem;
using namespace cgclip;
using nlohmann::json;

namespace {

constexpr int kAssertFailed = 1;
constexpr int kError = 2;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool assert_mode = false;
  bool force = false;
  int threads = 1;
};

pipeline::RunConfig resolve_config(const Common& c) {
  pipeline::RunConfig cfg;
  if (!c.config_path.empty()) cfg = pipeline::load_run_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  cfg = cfg.resolved();
  cfg.validate();
  return cfg;
}

// Creates the run directory; an existing non-empty directory is an error
// unless --force, which clears it.
fs::path prepare_out(const Common& c, const std::string& fallback) {
  const fs::path dir = c.out.empty() ? fs::path(fallback) : fs::path(c.out);
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!c.force) throw InputError(dir.string() + " exists and is not empty (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  return dir;
}

void echo_config(const fs::path& dir, const pipeline::RunConfig& cfg) {
  std::ofstream(dir / "config.json") << pipeline::to_json(cfg).dump(2) << '\n';
}

int verdict(bool ok, const std::string& what) {
  std::printf("%s: %s\n", what.c_str(), ok ? "PASS" : "FAIL");
  return ok ? 0 : kAssertFailed;
}

data::Dataset dataset_or_generate(const std::string& dir, const data::DatasetConfig& fallback) {
  return dir.empty() ? data::generate_synthetic(fallback) : data::read_dataset(dir);
}

// --- gen-data ---------------------------------------------------------------

struct GenDataOptions {
  bool hard_split = false;
  std::optional<std::uint64_t> render_seed;
  bool eval_corpus = false;
};

int cmd_gen_data(const Common& c, const GenDataOptions& o) {
  auto cfg = resolve_config(c);
  if (o.hard_split) cfg.data.hard_split = true;
  auto dc = o.eval_corpus ? pipeline::eval_dataset_config(cfg) : cfg.data;
  if (o.render_seed) dc.render_seed = *o.render_seed;
  const auto dir = prepare_out(c, "runs/data");
  const auto ds = data::generate_synthetic(dc);
  data::write_dataset(dir, ds);
  std::printf("wrote %zu tracklets of %d identities to %s\n", ds.tracklets.size(), ds.identity_count(),
              dir.string().c_str());
  return 0;
}

// --- pretrain ---------------------------------------------------------------

int cmd_pretrain(const Common& c, const std::string& data_dir) {
  const auto cfg = resolve_config(c);
  const auto dir = prepare_out(c, "runs/pretrain");
  echo_config(dir, cfg);
  const auto ds = dataset_or_generate(data_dir, cfg.data);
  const auto result = model::pretrain_clip(ds, cfg.pretrain, model::dims_for(ds, cfg.model));
  pipeline::write_pretrained(dir / "pretrained.ckpt", result, {{"config", pipeline::to_json(cfg)}});
  json summary{{"heldout_top1", result.heldout_top1},
               {"temperature", result.temperature},
               {"steps", result.losses.size()},
               {"final_loss", result.losses.empty() ? 0.0 : result.losses.back()}};
  std::ofstream(dir / "pretrain.json") << summary.dump(2) << '\n';
  std::printf("held-out image->caption top-1 %.4f, temperature %.4f\n", result.heldout_top1, result.temperature);
  return c.assert_mode ? verdict(result.heldout_top1 >= 0.8, "held-out top-1 >= 0.8") : 0;
}

// --- train ------------------------------------------------------------------

struct TrainOptions {
  std::string data_dir, eval_dir, pretrained;
  bool no_cmr = false, no_tfe = false;
  std::string fusion_variant, memory, id_strategy;
  std::optional<std::size_t> epochs;
};

int cmd_train(const Common& c, const TrainOptions& o) {
  auto cfg = resolve_config(c);
  if (o.no_cmr) cfg.train.use_cmr = false;
  if (o.no_tfe) cfg.train.use_tfe = false;
  if (!o.fusion_variant.empty()) cfg.train.fusion_variant = cmr::parse_fusion_variant(o.fusion_variant);
  if (!o.memory.empty()) cfg.train.memory = cmr::parse_memory_mode(o.memory);
  if (!o.id_strategy.empty()) cfg.train.id_strategy = cmr::parse_id_strategy(o.id_strategy);
  if (o.epochs) cfg.train.epochs = *o.epochs;
  cfg.validate();
  const auto dir = prepare_out(c, "runs/train");

  std::optional<data::Dataset> train_set, eval_set;
  std::optional<model::PretrainResult> pre;
  pipeline::RunInputs inputs;
  if (!o.data_dir.empty()) inputs.train_set = &train_set.emplace(data::read_dataset(o.data_dir));
  if (!o.eval_dir.empty()) inputs.eval_set = &eval_set.emplace(data::read_dataset(o.eval_dir));
  if (!o.pretrained.empty()) inputs.pretrained = &pre.emplace(pipeline::read_pretrained(o.pretrained));

  const auto r = pipeline::run_pipeline(cfg, inputs, dir);
  std::printf("trained %zu steps in %.1f s; mAP %.4f CMC@1 %.4f\n", r.train.steps, r.train.seconds, r.report.map,
              r.report.cmc.empty() ? 0.0 : r.report.cmc[0]);
  if (!c.assert_mode) return 0;
  int rc = 0;
  rc |= verdict(r.report.map >= 0.90, "mAP >= 0.90");
  rc |= verdict(r.train.frozen_checksum_before == r.train.frozen_checksum_after, "frozen encoders unchanged");
  rc |= verdict(r.train.text_checksum_before == r.train.text_checksum_after, "text memory unchanged");
  return rc;
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& data_dir) {
  const auto ckpt = model::read_checkpoint(checkpoint);
  const auto state = pipeline::from_checkpoint(ckpt);
  pipeline::RunConfig cfg;
  if (ckpt.meta.contains("config")) cfg = pipeline::run_config_from_json(ckpt.meta.at("config"));
  if (!c.config_path.empty() || c.seed) cfg = resolve_config(c);
  const auto dir = prepare_out(c, "runs/eval");
  echo_config(dir, cfg);
  const auto ds = dataset_or_generate(data_dir, pipeline::eval_dataset_config(cfg));
  const auto report = pipeline::evaluate_model(state, ds, cfg.eval.ks);
  eval::write_metrics_json(dir / "metrics.json", report);
  eval::write_per_query_csv(dir / "per_query.csv", report);
  std::printf("mAP %.4f over %zu queries, %zu gallery\n", report.map, report.num_queries, report.num_gallery);
  return c.assert_mode ? verdict(report.map >= 0.90, "mAP >= 0.90") : 0;
}

// --- bench ------------------------------------------------------------------

struct BenchOptions {
  std::string module, axis;
  std::optional<std::size_t> repeats;
};

int cmd_bench(const Common& c, const BenchOptions& o) {
  auto cfg = resolve_config(c);
  if (!o.module.empty()) cfg.bench.modules = {o.module};
  if (!o.axis.empty()) cfg.bench.axes = {o.axis};
  if (o.repeats) cfg.bench.repeats = *o.repeats;
  cfg.validate();
  kernels::set_num_threads(cfg.bench.threads);
  const auto dir = prepare_out(c, "runs/bench");
  echo_config(dir, cfg);

  const bench::CostPoint base{cfg.bench.frames, cfg.bench.patches, cfg.bench.width, cfg.bench.tokens,
                              cfg.bench.heads};
  std::vector<bench::ScalingReport> reports;
  int rc = 0;
  for (const auto& axis_name : cfg.bench.axes) {
    const auto axis = bench::parse_axis(axis_name);
    std::vector<bench::ScalingReport> per_axis;
    for (const auto& module_name : cfg.bench.modules) {
      bench::SweepConfig sweep;
      sweep.module = bench::parse_module(module_name);
      sweep.axis = axis;
      sweep.points = axis == bench::Axis::kFrames ? cfg.bench.frame_points : cfg.bench.patch_points;
      sweep.base = base;
      sweep.repeats = cfg.bench.repeats;
      sweep.warmup = cfg.bench.warmup;
      sweep.seed = cfg.seed;
      const auto r = bench::measure_scaling(sweep);
      bench::write_scaling_csv(dir / ("scaling_" + module_name + "_" + bench::to_string(axis) + ".csv"), r);
      std::printf("%-8s %-12s time slope %.3f +- %.3f, MAC slope %.3f\n", module_name.c_str(),
                  bench::to_string(axis).c_str(), r.time_slope.slope, r.time_slope.stderr_, r.mac_slope.slope);
      if (c.assert_mode) {
        const bool tfe = sweep.module == bench::Module::kTfe;
        const double lo = tfe ? 0.8 : 1.7, hi = tfe ? 1.2 : 2.3;
        char what[128];
        std::snprintf(what, sizeof what, "%s %s slope in [%.1f, %.1f]", module_name.c_str(),
                      bench::to_string(axis).c_str(), lo, hi);
        rc |= verdict(r.time_slope.slope >= lo && r.time_slope.slope <= hi, what);
      }
      per_axis.push_back(r);
      reports.push_back(r);
    }
    bench::write_loglog_svg(dir / ("scaling_" + bench::to_string(axis) + ".svg"), per_axis,
                            "median forward time vs " + bench::to_string(axis));
  }
  bench::write_markdown_report(dir / "report.md", reports);
  return rc;
}

// --- grad-check -------------------------------------------------------------

int cmd_grad_check(const Common& c, std::size_t seeds, std::size_t coords) {
  const auto cfg = resolve_config(c);
  const auto dir = prepare_out(c, "runs/grad_check");
  echo_config(dir, cfg);
  auto entries = pipeline::primitive_grad_checks(seeds);
  entries.push_back(pipeline::total_loss_grad_check(cfg.seed, coords));
  std::ofstream(dir / "grad_check.json") << pipeline::to_json(entries).dump(2) << '\n';
  bool ok = true;
  for (const auto& e : entries) {
    std::printf("%-22s max_rel_err %.3e (tol %.0e) %s\n", e.name.c_str(), e.max_rel_err, e.tolerance,
                e.passed() ? "ok" : "FAIL");
    ok = ok && e.passed();
  }
  // A gradient failure is always an error exit, with or without --assert.
  return ok ? 0 : kAssertFailed;
}

// --- inspect-attn -----------------------------------------------------------

int cmd_inspect_attn(const Common& c, const std::string& checkpoint, const std::string& data_dir, int tracklet_id) {
  const auto ckpt = model::read_checkpoint(checkpoint);
  const auto state = pipeline::from_checkpoint(ckpt);
  pipeline::RunConfig cfg;
  if (ckpt.meta.contains("config")) cfg = pipeline::run_config_from_json(ckpt.meta.at("config"));
  const auto ds = dataset_or_generate(data_dir, pipeline::eval_dataset_config(cfg));
  const auto it = std::find_if(ds.tracklets.begin(), ds.tracklets.end(),
                               [&](const data::Tracklet& t) { return t.id == tracklet_id; });
  if (it == ds.tracklets.end()) throw InputError("no tracklet with id " + std::to_string(tracklet_id));
  const auto index = static_cast<std::size_t>(it - ds.tracklets.begin());
  const auto dir = prepare_out(c, "runs/inspect");
  echo_config(dir, cfg);

  const auto& dims = state.spec.dims;
  const std::size_t grid_cols = dims.width / dims.patch;
  std::ofstream cls(dir / "cls_attention.csv");
  cls << "tracklet_id,frame,head,patch,row,col,weight\n";
  for (int f = 0; f < it->length; ++f) {
    const auto att = model::dump_cls_attention(it->frame(f), state.image);
    for (std::size_t h = 0; h < att.dim(0); ++h)
      for (std::size_t p = 0; p < att.dim(1); ++p)
        cls << tracklet_id << ',' << f << ',' << h << ',' << p << ',' << p / grid_cols << ',' << p % grid_cols
            << ',' << att.data()[h * att.dim(1) + p] << '\n';
  }
  if (state.spec.use_tfe) {
    num::NoGradGuard no_grad;
    const auto patches = pipeline::batch_patches(state, ds, {index}, nullptr);
    const auto tokens = state.image.project(state.image.encode(patches));
    tfe::write_temporal_attention_csv(dir / "temporal_attention.csv", tracklet_id,
                                      tfe::dump_temporal_attention(tokens, state.spec.frames, state.tfe));
  } else {
    std::printf("model trained without the token feature extractor; no temporal attention to dump\n");
  }
  std::printf("attention dumps for tracklet %d written to %s\n", tracklet_id, dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cgclip: caption-guided video re-identification toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_path, "run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "run seed (overrides the config)");
  app.add_option("--out", common.out, "output directory");
  app.add_flag("--assert", common.assert_mode, "exit nonzero when an acceptance threshold fails");
  app.add_flag("--force", common.force, "overwrite a non-empty output directory");
  app.add_option("--threads", common.threads, "kernel threads")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  GenDataOptions gen_opts;
  gen->add_flag("--hard-split", gen_opts.hard_split, "paired identities differing in one fine attribute");
  gen->add_option("--render-seed", gen_opts.render_seed, "seed for frame jitter and noise");
  gen->add_flag("--eval-corpus", gen_opts.eval_corpus, "render the evaluation corpus of this config");

  auto* pre = app.add_subcommand("pretrain", "contrastive pretraining of the frozen encoder pair");
  std::string pre_data;
  pre->add_option("--data", pre_data, "dataset directory (default: generate from the config)");

  auto* train = app.add_subcommand("train", "train and evaluate");
  TrainOptions train_opts;
  train->add_option("--data", train_opts.data_dir, "training dataset directory");
  train->add_option("--eval-data", train_opts.eval_dir, "evaluation dataset directory");
  train->add_option("--pretrained", train_opts.pretrained, "pretrained encoder checkpoint");
  train->add_flag("--no-cmr", train_opts.no_cmr, "contrast against the image memory only");
  train->add_flag("--no-tfe", train_opts.no_tfe, "sequence feature only");
  train->add_option("--fusion-variant", train_opts.fusion_variant, "a | b | c");
  train->add_option("--memory", train_opts.memory, "image | text | naive-sum | refined");
  train->add_option("--id-strategy", train_opts.id_strategy, "none | id-text | id-emb");
  train->add_option("--epochs", train_opts.epochs, "override train.epochs");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "dataset directory (default: the checkpoint's evaluation corpus)");

  auto* bn = app.add_subcommand("bench", "cost models and wall-clock scaling sweeps");
  BenchOptions bench_opts;
  bn->add_option("--module", bench_opts.module, "tfe | baseline");
  bn->add_option("--axis", bench_opts.axis, "frames | patch_tokens");
  bn->add_option("--repeats", bench_opts.repeats, "timed repeats per point");

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient checks");
  std::size_t gc_seeds = 20, gc_coords = 4;
  gc->add_option("--shapes", gc_seeds, "random shapes per primitive");
  gc->add_option("--coords", gc_coords, "coordinates probed per parameter tensor of the full model");

  auto* ia = app.add_subcommand("inspect-attn", "dump CLS and temporal attention of one tracklet");
  std::string ia_ckpt, ia_data;
  int ia_tracklet = 0;
  ia->add_option("--checkpoint", ia_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  ia->add_option("--data", ia_data, "dataset directory (default: the checkpoint's evaluation corpus)");
  ia->add_option("--tracklet", ia_tracklet, "tracklet id")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    kernels::set_num_threads(common.threads);
    if (*gen) return cmd_gen_data(common, gen_opts);
    if (*pre) return cmd_pretrain(common, pre_data);
    if (*train) return cmd_train(common, train_opts);
    if (*ev) return cmd_eval(common, ev_ckpt, ev_data);
    if (*bn) return cmd_bench(common, bench_opts);
    if (*gc) return cmd_grad_check(common, gc_seeds, gc_coords);
    if (*ia) return cmd_inspect_attn(common, ia_ckpt, ia_data, ia_tracklet);
  } catch (const cgclip::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kError;
  }
  return 0;
}
