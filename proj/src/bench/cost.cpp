#include "cgclip/bench/cost.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "cgclip/error.hpp"
#include "cgclip/log.hpp"
#include "cgclip/numerics/kernels.hpp"
#include "cgclip/numerics/nn.hpp"
#include "cgclip/numerics/ops.hpp"
#include "cgclip/tfe/tfe.hpp"

namespace cgclip::bench {

namespace {

void check_point(const CostPoint& p) {
  if (p.frames == 0 || p.patches == 0 || p.width == 0 || p.tokens == 0 || p.heads == 0)
    throw ConfigError("cost model arguments must be positive");
  if (p.width % p.heads != 0) throw ConfigError("width must be divisible by heads");
}

num::Tensor<float> random_tokens(const CostPoint& p, std::uint64_t seed) {
  num::Rng rng(seed);
  return num::normal_parameter<float>({p.frames, p.patches + 1, p.width}, rng, 1.0).detach();
}

num::Tensor<float> random_sequence(const CostPoint& p, std::uint64_t seed) {
  num::Rng rng(seed);
  return num::normal_parameter<float>({1, p.frames * (p.patches + 1), p.width}, rng, 1.0).detach();
}

tfe::TokenFeatureExtractor<float> make_tfe(const CostPoint& p, std::uint64_t seed) {
  num::Rng rng(seed);
  return tfe::TokenFeatureExtractor<float>::init(p.width, p.heads, p.tokens, rng);
}

num::TransformerBlock<float> make_baseline(const CostPoint& p, std::uint64_t seed) {
  num::Rng rng(seed);
  return num::TransformerBlock<float>::init(p.width, p.heads, rng);
}

class MacScope {
 public:
  MacScope() : previous_(kernels::mac_counting()) {
    kernels::reset_mac_count();
    kernels::set_mac_counting(true);
  }
  ~MacScope() { kernels::set_mac_counting(previous_); }
  std::uint64_t count() const { return kernels::mac_count(); }

 private:
  bool previous_;
};

}  // namespace

std::uint64_t count_macs_tfe(const CostPoint& p) {
  check_point(p);
  const std::uint64_t l = p.frames, n1 = p.patches + 1, d = p.width, q = p.tokens;
  const std::uint64_t temporal_linear = l * d * d;
  const std::uint64_t temporal_attn = (q + 2 * l) * d * d + q * d * d + 2 * q * l * d;
  const std::uint64_t cross = (q + 2 * n1) * d * d + q * d * d + 2 * q * n1 * d;
  const std::uint64_t self = 4 * q * d * d + 2 * q * q * d;
  const std::uint64_t ffn = 8 * q * d * d;
  return temporal_linear + temporal_attn + l * (cross + self + ffn);
}

std::uint64_t count_macs_selfattn_baseline(const CostPoint& p) {
  check_point(p);
  const std::uint64_t t = p.frames * (p.patches + 1), d = p.width;
  return 4 * t * d * d + 2 * t * t * d + 8 * t * d * d;
}

std::uint64_t instrumented_macs_tfe(const CostPoint& p, std::uint64_t seed) {
  check_point(p);
  const auto x = random_tokens(p, seed);
  const auto t = make_tfe(p, seed + 1);
  num::NoGradGuard no_grad;
  MacScope scope;
  t.forward(x, p.frames);
  return scope.count();
}

std::uint64_t instrumented_macs_baseline(const CostPoint& p, std::uint64_t seed) {
  check_point(p);
  const auto x = random_sequence(p, seed);
  const auto block = make_baseline(p, seed + 1);
  num::NoGradGuard no_grad;
  MacScope scope;
  block(x);
  return scope.count();
}

Module parse_module(const std::string& s) {
  if (s == "tfe") return Module::kTfe;
  if (s == "baseline") return Module::kBaseline;
  throw ConfigError("unknown bench module '" + s + "' (expected tfe or baseline)");
}

Axis parse_axis(const std::string& s) {
  if (s == "frames") return Axis::kFrames;
  if (s == "patch_tokens" || s == "patch-tokens" || s == "patches") return Axis::kPatchTokens;
  throw ConfigError("unknown sweep axis '" + s + "' (expected frames or patch_tokens)");
}

std::string to_string(Module m) { return m == Module::kTfe ? "tfe" : "baseline"; }
std::string to_string(Axis a) { return a == Axis::kFrames ? "frames" : "patch_tokens"; }

SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("fit_loglog: size mismatch");
  SlopeFit fit;
  fit.points = x.size();
  if (x.size() < 2) return fit;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  const double n = static_cast<double>(lx.size());
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (sxx == 0) return fit;
  fit.slope = sxy / sxx;
  if (lx.size() > 2) {
    const double intercept = my - fit.slope * mx;
    double sse = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      const double r = ly[i] - (intercept + fit.slope * lx[i]);
      sse += r * r;
    }
    fit.stderr_ = std::sqrt(sse / (n - 2) / sxx);
  }
  return fit;
}

bool ScalingReport::mac_order_matches_time() const {
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t j = 0; j < records.size(); ++j)
      if (records[i].macs < records[j].macs && !(records[i].median_ns < records[j].median_ns)) return false;
  return true;
}

namespace {

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

}  // namespace

ScalingReport measure_scaling(const SweepConfig& cfg) {
  if (cfg.points.size() < 4) throw ConfigError("a scaling sweep needs at least 4 points");
  if (cfg.repeats == 0) throw ConfigError("repeats must be positive");
  ScalingReport rep;
  rep.module = cfg.module;
  rep.axis = cfg.axis;
  rep.base = cfg.base;
  rep.threads = kernels::max_threads();

  num::NoGradGuard no_grad;
  struct Runner {
    CostPoint p;
    bool is_tfe = true;
    tfe::TokenFeatureExtractor<float> t;
    num::TransformerBlock<float> block;
    num::Tensor<float> x;
    std::size_t calls = 1;  // forward passes per timed sample
    std::vector<double> times;
    void run() const {
      if (is_tfe)
        t.forward(x, p.frames);
      else
        block(x);
    }
  };
  std::vector<Runner> runners(cfg.points.size());
  for (std::size_t i = 0; i < cfg.points.size(); ++i) {
    Runner& r = runners[i];
    r.p = cfg.base;
    (cfg.axis == Axis::kFrames ? r.p.frames : r.p.patches) = cfg.points[i];
    check_point(r.p);
    r.is_tfe = cfg.module == Module::kTfe;
    if (r.is_tfe) {
      r.t = make_tfe(r.p, cfg.seed + 1);
      r.x = random_tokens(r.p, cfg.seed);
    } else {
      r.block = make_baseline(r.p, cfg.seed + 1);
      r.x = random_sequence(r.p, cfg.seed);
    }
  }
  using clock = std::chrono::steady_clock;
  auto elapsed_ns = [](clock::time_point a, clock::time_point b) {
    return static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count());
  };
  // Warmup, then size each sample to at least min_sample_ns.
  for (auto& r : runners) {
    for (std::size_t w = 0; w < cfg.warmup; ++w) r.run();
    const auto a = clock::now();
    r.run();
    const double one = std::max(1.0, elapsed_ns(a, clock::now()));
    r.calls = static_cast<std::size_t>(std::clamp(std::ceil(cfg.min_sample_ns / one), 1.0, 1e6));
  }
  // Points are interleaved within each round so slow drift in machine state
  // affects all of them alike.
  for (std::size_t round = 0; round < cfg.repeats; ++round)
    for (auto& r : runners) {
      const auto a = clock::now();
      for (std::size_t c = 0; c < r.calls; ++c) r.run();
      r.times.push_back(elapsed_ns(a, clock::now()) / static_cast<double>(r.calls));
    }

  for (const auto& r : runners) {
    ScalingRecord rec;
    rec.axis_value = cfg.axis == Axis::kFrames ? r.p.frames : r.p.patches;
    rec.macs = cfg.module == Module::kTfe ? count_macs_tfe(r.p) : count_macs_selfattn_baseline(r.p);
    rec.median_ns = percentile(r.times, 0.5);
    rec.p25_ns = percentile(r.times, 0.25);
    rec.p75_ns = percentile(r.times, 0.75);
    if (rec.median_ns < cfg.min_time_ns) {
      warn("sweep point " + std::to_string(rec.axis_value) + " is below the timer threshold; dropped");
      ++rep.dropped;
      continue;
    }
    rep.records.push_back(rec);
  }

  const std::size_t half = rep.records.size() / 2;
  std::vector<double> x, y, m;
  for (std::size_t i = half; i < rep.records.size(); ++i) {
    x.push_back(static_cast<double>(rep.records[i].axis_value));
    y.push_back(rep.records[i].median_ns);
    m.push_back(static_cast<double>(rep.records[i].macs));
  }
  rep.time_slope = fit_loglog(x, y);
  rep.mac_slope = fit_loglog(x, m);
  return rep;
}

void write_scaling_csv(const std::filesystem::path& path, const ScalingReport& r) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  os << "axis,macs,median_ns,p25,p75\n" << std::setprecision(12);
  for (const auto& rec : r.records)
    os << rec.axis_value << ',' << rec.macs << ',' << rec.median_ns << ',' << rec.p25_ns << ',' << rec.p75_ns << '\n';
}

void write_loglog_svg(const std::filesystem::path& path, const std::vector<ScalingReport>& reports,
                      const std::string& title) {
  constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& r : reports)
    for (const auto& rec : r.records) {
      x0 = std::min(x0, std::log10(static_cast<double>(rec.axis_value)));
      x1 = std::max(x1, std::log10(static_cast<double>(rec.axis_value)));
      y0 = std::min(y0, std::log10(rec.median_ns));
      y1 = std::max(y1, std::log10(rec.median_ns));
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  x0 = std::floor(x0), x1 = std::max(std::ceil(x1), x0 + 1);
  y0 = std::floor(y0), y1 = std::max(std::ceil(y1), y0 + 1);
  auto px = [&](double lx) { return kLeft + (lx - x0) / (x1 - x0) * (kW - kLeft - kRight); };
  auto py = [&](double ly) { return kH - kBottom - (ly - y0) / (y1 - y0) * (kH - kTop - kBottom); };

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  os << std::fixed << std::setprecision(1);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kLeft << "\" y=\"22\" font-size=\"14\">" << title << "</text>\n";
  for (double d = x0; d <= x1 + 1e-9; d += 1) {
    os << "<line x1=\"" << px(d) << "\" y1=\"" << kTop << "\" x2=\"" << px(d) << "\" y2=\"" << kH - kBottom
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << px(d) - 10 << "\" y=\"" << kH - kBottom + 16 << "\">1e" << static_cast<int>(d) << "</text>\n";
  }
  for (double d = y0; d <= y1 + 1e-9; d += 1) {
    os << "<line x1=\"" << kLeft << "\" y1=\"" << py(d) << "\" x2=\"" << kW - kRight << "\" y2=\"" << py(d)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << kLeft - 40 << "\" y=\"" << py(d) + 4 << "\">1e" << static_cast<int>(d) << "</text>\n";
  }
  os << "<text x=\"" << (kLeft + kW - kRight) / 2 - 30 << "\" y=\"" << kH - 12 << "\">sweep axis (log)</text>\n";
  os << "<text x=\"14\" y=\"" << kH / 2 << "\" transform=\"rotate(-90 14 " << kH / 2
     << ")\">median time, ns (log)</text>\n";
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const char* c = colors[i % 6];
    os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (const auto& rec : r.records)
      os << px(std::log10(static_cast<double>(rec.axis_value))) << ',' << py(std::log10(rec.median_ns)) << ' ';
    os << "\"/>\n";
    for (const auto& rec : r.records)
      os << "<circle cx=\"" << px(std::log10(static_cast<double>(rec.axis_value))) << "\" cy=\""
         << py(std::log10(rec.median_ns)) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    std::ostringstream label;
    label << std::setprecision(2) << std::fixed << to_string(r.module) << " / " << to_string(r.axis)
          << " slope " << r.time_slope.slope;
    os << "<text x=\"" << kW - kRight + 8 << "\" y=\"" << kTop + 16 * static_cast<double>(i) + 10
       << "\" fill=\"" << c << "\">" << label.str() << "</text>\n";
  }
  os << "</svg>\n";
}

void write_markdown_report(const std::filesystem::path& path, const std::vector<ScalingReport>& reports) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  os << "# Scaling report\n\n";
  os << "## Cost formulas (multiply-accumulates per tracklet)\n\n";
  os << "Token feature extractor, with L frames, N patch tokens plus one CLS token per frame, width D and "
        "N^Q learnable tokens:\n\n";
  os << "- temporal linear: `L*D^2`\n";
  os << "- temporal cross-attention: `(N^Q + 2L)*D^2 + N^Q*D^2 + 2*N^Q*L*D`\n";
  os << "- per frame (times L): cross-attention `(N^Q + 2(1+N))*D^2 + N^Q*D^2 + 2*N^Q*(1+N)*D`, "
        "self-attention `4*N^Q*D^2 + 2*N^Q^2*D`, FFN `8*N^Q*D^2`\n\n";
  os << "Self-attention baseline over T = L(1+N) tokens: `4*T*D^2 + 2*T^2*D + 8*T*D^2`.\n\n";
  os << "Layer norms, softmax and GELU are not counted. Slopes are least-squares fits of log(time) on "
        "log(axis) over the upper half of each sweep.\n\n";
  os << "## Fits\n\n| module | axis | threads | time slope | SE | MAC slope | points | dropped | MAC order = time order |\n";
  os << "|---|---|---|---|---|---|---|---|---|\n" << std::setprecision(4) << std::fixed;
  for (const auto& r : reports)
    os << "| " << to_string(r.module) << " | " << to_string(r.axis) << " | " << r.threads << " | "
       << r.time_slope.slope << " | " << r.time_slope.stderr_ << " | " << r.mac_slope.slope << " | "
       << r.time_slope.points << " | " << r.dropped << " | " << (r.mac_order_matches_time() ? "yes" : "no")
       << " |\n";
  for (const auto& r : reports) {
    os << "\n## " << to_string(r.module) << ", " << to_string(r.axis) << " sweep (L=" << r.base.frames
       << ", N=" << r.base.patches << ", D=" << r.base.width << ", N^Q=" << r.base.tokens
       << ", heads=" << r.base.heads << ")\n\n";
    os << "| axis | MACs | median ns | p25 | p75 |\n|---|---|---|---|---|\n";
    for (const auto& rec : r.records)
      os << "| " << rec.axis_value << " | " << rec.macs << " | " << std::setprecision(0) << rec.median_ns
         << " | " << rec.p25_ns << " | " << rec.p75_ns << " |\n";
  }
}

}  // namespace cgclip::bench
