#include "cgclip/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace cgclip::num {

namespace {

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

template <Real T>
GradCheckReport grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                           const Tensor<T>& x, T eps) {
  Tensor<T> probe = Tensor<T>::from_data(x.shape(), {x.data().begin(), x.data().end()}, true);
  Tensor<T> y = f(probe);
  if (y.numel() != 1) throw ContractError("grad_check: function must be scalar-valued");
  backward(y);
  std::vector<T> analytic(probe.numel(), T(0));
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  GradCheckReport report;
  NoGradGuard no_grad;
  auto values = probe.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    values[i] = saved + eps;
    const double up = static_cast<double>(f(probe).item());
    values[i] = saved - eps;
    const double down = static_cast<double>(f(probe).item());
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
    const double err = relative_error(static_cast<double>(analytic[i]), numeric);
    ++report.coordinates;
    if (report.worst.empty() || err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst = "x[" + std::to_string(i) + "]";
    }
  }
  return report;
}

GradCheckReport grad_check_params(const std::function<Tensor<double>()>& loss,
                                  const std::vector<NamedTensorRef>& params, double eps,
                                  std::size_t max_coords_per_tensor) {
  for (const auto& p : params) p.tensor->zero_grad();
  Tensor<double> y = loss();
  if (y.numel() != 1) throw ContractError("grad_check_params: loss must be scalar");
  backward(y);

  GradCheckReport report;
  NoGradGuard no_grad;
  for (const auto& p : params) {
    Tensor<double>& t = *p.tensor;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    const std::size_t n = t.numel();
    const std::size_t stride =
        max_coords_per_tensor == 0 ? 1 : std::max<std::size_t>(1, n / max_coords_per_tensor);
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = loss().item();
      values[i] = saved - eps;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[i], numeric);
      ++report.coordinates;
      if (report.worst.empty() || err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst = p.name + "[" + std::to_string(i) + "] analytic " + fmt_g(analytic[i]) + " numeric " + fmt_g(numeric);
      }
    }
  }
  return report;
}

template GradCheckReport grad_check<float>(const std::function<Tensor<float>(const Tensor<float>&)>&,
                                           const Tensor<float>&, float);
template GradCheckReport grad_check<double>(
    const std::function<Tensor<double>(const Tensor<double>&)>&, const Tensor<double>&, double);

}  // namespace cgclip::num
