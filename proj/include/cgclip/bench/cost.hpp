#pragma once

// Cost models for the token feature extractor and a joint spatiotemporal
// self-attention baseline, plus wall-clock scaling sweeps.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cgclip::bench {

struct CostPoint {
  std::uint64_t frames = 4;   // L
  std::uint64_t patches = 8;  // N (the frame also carries one CLS token)
  std::uint64_t width = 32;   // D
  std::uint64_t tokens = 4;   // N^Q
  std::uint64_t heads = 4;
};

// Per tracklet:
//   temporal linear       L D^2
//   temporal cross-attn   (N^Q + 2L) D^2 + N^Q D^2 + 2 N^Q L D
//   per frame, L times:
//     cross-attn          (N^Q + 2(1+N)) D^2 + N^Q D^2 + 2 N^Q (1+N) D
//     self-attn           4 N^Q D^2 + 2 N^Q^2 D
//     FFN (x4)            8 N^Q D^2
std::uint64_t count_macs_tfe(const CostPoint& p);

// One pre-norm self-attention block + FFN over T = L (1+N) tokens:
//   4 T D^2 + 2 T^2 D + 8 T D^2
std::uint64_t count_macs_selfattn_baseline(const CostPoint& p);

// Runs the reference forward passes with the kernel MAC counter enabled.
std::uint64_t instrumented_macs_tfe(const CostPoint& p, std::uint64_t seed = 1);
std::uint64_t instrumented_macs_baseline(const CostPoint& p, std::uint64_t seed = 1);

enum class Module { kTfe, kBaseline };
enum class Axis { kFrames, kPatchTokens };
Module parse_module(const std::string& s);  // tfe | baseline
Axis parse_axis(const std::string& s);      // frames | patch_tokens (or patches)
std::string to_string(Module m);
std::string to_string(Axis a);

struct SweepConfig {
  Module module = Module::kTfe;
  Axis axis = Axis::kFrames;
  std::vector<std::uint64_t> points;  // values of the swept axis
  CostPoint base;                     // the other dimensions
  std::size_t repeats = 20;
  std::size_t warmup = 2;
  std::uint64_t seed = 1;
  double min_time_ns = 2000;     // points faster than this are dropped
  double min_sample_ns = 5e6;    // forward calls are batched up to this per sample
};

struct ScalingRecord {
  std::uint64_t axis_value = 0;
  std::uint64_t macs = 0;
  double median_ns = 0, p25_ns = 0, p75_ns = 0;
};

struct SlopeFit {
  double slope = 0;
  double stderr_ = 0;
  std::size_t points = 0;
};

// Least-squares slope of log(y) on log(x) with its standard error.
SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y);

struct ScalingReport {
  Module module = Module::kTfe;
  Axis axis = Axis::kFrames;
  CostPoint base;
  int threads = 1;
  std::vector<ScalingRecord> records;
  std::size_t dropped = 0;
  SlopeFit time_slope;  // over the upper half of the sweep
  SlopeFit mac_slope;   // same points, analytic counts
  // Sorting the points by MACs and by median time gives the same order.
  bool mac_order_matches_time() const;
};

ScalingReport measure_scaling(const SweepConfig& cfg);

// CSV columns: axis,macs,median_ns,p25,p75
void write_scaling_csv(const std::filesystem::path& path, const ScalingReport& r);
// Log-log plot of median time against the axis, one polyline per report.
void write_loglog_svg(const std::filesystem::path& path, const std::vector<ScalingReport>& reports,
                      const std::string& title);
// Markdown with the cost formulas, fitted slopes and the per-point tables.
void write_markdown_report(const std::filesystem::path& path, const std::vector<ScalingReport>& reports);

}  // namespace cgclip::bench
