#include "cgclip/pipeline/grad_suite.hpp"

#include <map>
#include <numeric>

#include "cgclip/data/synthetic.hpp"
#include "cgclip/model/pretrain.hpp"
#include "cgclip/numerics/grad_check.hpp"
#include "cgclip/numerics/primitive_suite.hpp"
#include "cgclip/pipeline/model_state.hpp"

namespace cgclip::pipeline {

namespace {

class CheckedScope {
 public:
  CheckedScope() : previous_(num::checked_mode()) { num::set_checked_mode(true); }
  ~CheckedScope() { num::set_checked_mode(previous_); }

 private:
  bool previous_;
};

}  // namespace

std::vector<GradCheckEntry> primitive_grad_checks(std::size_t seeds) {
  CheckedScope checked;
  std::map<std::string, GradCheckEntry> by_name;
  std::vector<std::string> order;
  for (const auto& c : num::check_primitives(seeds, 1e-4)) {
    auto [it, fresh] = by_name.try_emplace(c.name);
    if (fresh) {
      order.push_back(c.name);
      it->second.name = c.name;
      it->second.tolerance = 1e-4;
    }
    auto& e = it->second;
    e.coordinates += c.report.coordinates;
    if (c.report.max_rel_err >= e.max_rel_err) {
      e.max_rel_err = c.report.max_rel_err;
      e.worst = "seed " + std::to_string(c.seed) + " " + c.report.worst;
    }
  }
  std::vector<GradCheckEntry> out;
  for (const auto& n : order) out.push_back(by_name.at(n));
  return out;
}

GradCheckEntry total_loss_grad_check(std::uint64_t seed, std::size_t coords_per_tensor) {
  CheckedScope checked;
  data::DatasetConfig dc;
  dc.identities = 2;
  dc.tracklets_per_id = 2;
  dc.frames_per_tracklet = 2;
  dc.seed = seed;
  const auto ds = data::generate_synthetic(dc);

  ModelSpec spec;
  spec.dims = model::dims_for(ds);
  spec.identities = 2;
  spec.frames = 2;
  spec.id_strategy = cmr::IdStrategy::kIdEmb;
  num::Rng rng(seed + 101);
  auto state = ModelState<double>::init(spec, rng);
  state.init_memories(ds);
  // Probe the id table away from its zero initialization.
  for (double& v : state.id_table.mutable_data()) v = rng.normal(0.0, 0.1);

  std::vector<std::size_t> tracklets(ds.tracklets.size());
  std::iota(tracklets.begin(), tracklets.end(), 0);
  std::vector<int> labels;
  for (const auto& t : ds.tracklets) labels.push_back(t.label);
  const auto patches = batch_patches(state, ds, tracklets, nullptr);

  num::ParamList<double> params;
  state.collect_trainable(params);
  std::vector<num::NamedTensorRef> refs;
  for (const auto& e : params.entries()) refs.push_back({e.name, e.tensor});
  const obj::LossConfig loss_cfg;
  auto loss = [&] { return forward_batch(state, patches, labels, loss_cfg).loss.total; };
  const auto report = num::grad_check_params(loss, refs, 1e-4, coords_per_tensor);
  return {"total_loss", report.max_rel_err, 1e-3, report.coordinates, report.worst};
}

nlohmann::json to_json(const std::vector<GradCheckEntry>& entries) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries)
    j.push_back({{"name", e.name},
                 {"max_rel_err", e.max_rel_err},
                 {"tolerance", e.tolerance},
                 {"coordinates", e.coordinates},
                 {"worst", e.worst},
                 {"passed", e.passed()}});
  return j;
}

}  // namespace cgclip::pipeline
