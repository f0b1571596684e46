#include "cgclip/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>

#include "cgclip/numerics/kernels.hpp"

namespace cgclip::num {
namespace {

struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape));
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

template <Real T>
bool wants_grad(const Node<T>& n, std::size_t i) {
  return n.inputs[i]->requires_grad;
}

template <Real T>
std::vector<T>& grad_of(Node<T>& n, std::size_t i) {
  return n.inputs[i]->grad_buffer();
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <Real T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
}

}  // namespace

template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  kernels::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data(), false);
  return Tensor<T>::make_result({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](Node<T>& self) {
    const T* g = self.grad.data();
    if (wants_grad(self, 0))
      kernels::gemm_nt(m, n, k, g, self.inputs[1]->value.data(), grad_of(self, 0).data(), true);
    if (wants_grad(self, 1))
      kernels::gemm_tn(k, m, n, self.inputs[0]->value.data(), g, grad_of(self, 1).data(), true);
  });
}

template <Real T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expects a matrix");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return Tensor<T>::make_result({n, m}, std::move(out), {a}, "transpose", [m, n](Node<T>& self) {
    auto& ga = grad_of(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

template <Real T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (w.rank() != 2 || x.shape().back() != w.dim(0))
    throw DimensionError("linear: input " + shape_string(x.shape()) + " vs weight " +
                         shape_string(w.shape()));
  const bool has_bias = bias.defined();
  const std::size_t in = w.dim(0), out_dim = w.dim(1);
  if (has_bias && (bias.numel() != out_dim))
    throw DimensionError("linear: bias length does not match output width");
  const std::size_t rows = x.numel() / in;
  std::vector<T> out(rows * out_dim);
  kernels::gemm_nn(rows, in, out_dim, x.data().data(), w.data().data(), out.data(), false);
  if (has_bias) {
    const auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += bv[j];
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Tensor<T>::make_result(
      std::move(shape), std::move(out), std::move(inputs), "linear",
      [rows, in, out_dim, has_bias](Node<T>& self) {
        const T* g = self.grad.data();
        if (wants_grad(self, 0))
          kernels::gemm_nt(rows, out_dim, in, g, self.inputs[1]->value.data(),
                           grad_of(self, 0).data(), true);
        if (wants_grad(self, 1))
          kernels::gemm_tn(in, rows, out_dim, self.inputs[0]->value.data(), g,
                           grad_of(self, 1).data(), true);
        if (has_bias && wants_grad(self, 2)) {
          auto& gb = grad_of(self, 2);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
        }
      });
}

template <Real T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  return linear(x, w, Tensor<T>());
}

template <Real T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!is_suffix(b.shape(), a.shape()))
    throw DimensionError("add: cannot broadcast " + shape_string(b.shape()) + " onto " +
                         shape_string(a.shape()));
  const std::size_t n = a.numel(), nb = b.numel();
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] += bv[i % nb];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, "add", [n, nb](Node<T>& self) {
    if (wants_grad(self, 0)) {
      auto& ga = grad_of(self, 0);
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      auto& gb = grad_of(self, 1);
      for (std::size_t i = 0; i < n; ++i) gb[i % nb] += self.grad[i];
    }
  });
}

template <Real T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, "sub", [n](Node<T>& self) {
    if (wants_grad(self, 0)) {
      auto& ga = grad_of(self, 0);
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      auto& gb = grad_of(self, 1);
      for (std::size_t i = 0; i < n; ++i) gb[i] -= self.grad[i];
    }
  });
}

template <Real T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, "mul", [n](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (wants_grad(self, 0)) {
      auto& ga = grad_of(self, 0);
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * bv[i];
    }
    if (wants_grad(self, 1)) {
      auto& gb = grad_of(self, 1);
      for (std::size_t i = 0; i < n; ++i) gb[i] += self.grad[i] * av[i];
    }
  });
}

template <Real T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v *= factor;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, "scale", [factor](Node<T>& self) {
    auto& ga = grad_of(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * factor;
  });
}

template <Real T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v += value;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, "add_scalar", [](Node<T>& self) {
    auto& ga = grad_of(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

template <Real T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return Tensor<T>::make_result({1}, {s}, {a}, "sum", [](Node<T>& self) {
    auto& ga = grad_of(self, 0);
    for (T& g : ga) g += self.grad[0];
  });
}

template <Real T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <Real T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis) {
  const AxisView v = axis_view(a.shape(), axis);
  std::vector<T> out(v.outer * v.inner, T(0));
  const auto x = a.data();
  const T inv = T(1) / static_cast<T>(v.len);
  // Extended-precision sum divided by the count: the mean of identical
  // values is returned exactly.
  std::vector<long double> acc(v.inner);
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::fill(acc.begin(), acc.end(), 0.0L);
    for (std::size_t l = 0; l < v.len; ++l) {
      const T* src = x.data() + (o * v.len + l) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) acc[i] += src[i];
    }
    T* dst = out.data() + o * v.inner;
    for (std::size_t i = 0; i < v.inner; ++i) dst[i] = static_cast<T>(acc[i] / static_cast<long double>(v.len));
  }
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  return Tensor<T>::make_result(std::move(shape), std::move(out), {a}, "mean_axis",
                                [v, inv](Node<T>& self) {
                                  auto& ga = grad_of(self, 0);
                                  for (std::size_t o = 0; o < v.outer; ++o)
                                    for (std::size_t l = 0; l < v.len; ++l)
                                      for (std::size_t i = 0; i < v.inner; ++i)
                                        ga[(o * v.len + l) * v.inner + i] +=
                                            self.grad[o * v.inner + i] * inv;
                                });
}

template <Real T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return Tensor<T>::make_result(std::move(shape), std::move(out), {a}, "reshape",
                                [](Node<T>& self) {
                                  auto& ga = grad_of(self, 0);
                                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                                });
}

template <Real T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d)
      if (d != axis && p.dim(d) != ref[d])
        throw DimensionError("concat: shape mismatch " + shape_string(p.shape()) + " vs " +
                             shape_string(ref));
    lens.push_back(p.shape().at(axis));
    total += lens.back();
  }
  Shape shape = ref;
  shape[axis] = total;
  const AxisView v = axis_view(shape, axis);
  std::vector<T> out(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto x = parts[pi].data();
    for (std::size_t o = 0; o < v.outer; ++o)
      std::copy_n(x.data() + o * lens[pi] * v.inner, lens[pi] * v.inner,
                  out.data() + (o * total + offset) * v.inner);
    offset += lens[pi];
  }
  return Tensor<T>::make_result(std::move(shape), std::move(out), parts, "concat",
                                [v, lens, total](Node<T>& self) {
                                  std::size_t offset = 0;
                                  for (std::size_t pi = 0; pi < lens.size(); ++pi) {
                                    if (wants_grad(self, pi)) {
                                      auto& gp = grad_of(self, pi);
                                      for (std::size_t o = 0; o < v.outer; ++o) {
                                        const T* src =
                                            self.grad.data() + (o * total + offset) * v.inner;
                                        T* dst = gp.data() + o * lens[pi] * v.inner;
                                        for (std::size_t i = 0; i < lens[pi] * v.inner; ++i)
                                          dst[i] += src[i];
                                      }
                                    }
                                    offset += lens[pi];
                                  }
                                });
}

template <Real T>
Tensor<T> index_select(const Tensor<T>& a, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw ContractError("index_select: empty index list");
  const std::size_t n0 = a.dim(0);
  const std::size_t width = a.numel() / n0;
  std::vector<T> out(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n0) throw DimensionError("index_select: row index out of range");
    std::copy_n(a.data().data() + rows[r] * width, width, out.data() + r * width);
  }
  Shape shape = a.shape();
  shape[0] = rows.size();
  return Tensor<T>::make_result(std::move(shape), std::move(out), {a}, "index_select",
                                [rows, width](Node<T>& self) {
                                  auto& ga = grad_of(self, 0);
                                  for (std::size_t r = 0; r < rows.size(); ++r)
                                    for (std::size_t i = 0; i < width; ++i)
                                      ga[rows[r] * width + i] += self.grad[r * width + i];
                                });
}

template <Real T>
Tensor<T> gather(const Tensor<T>& a, const std::vector<std::size_t>& flat) {
  if (flat.empty()) throw ContractError("gather: empty index list");
  std::vector<T> out(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (flat[i] >= a.numel()) throw DimensionError("gather: index out of range");
    out[i] = a.data()[flat[i]];
  }
  return Tensor<T>::make_result({flat.size()}, std::move(out), {a}, "gather",
                                [flat](Node<T>& self) {
                                  auto& ga = grad_of(self, 0);
                                  for (std::size_t i = 0; i < flat.size(); ++i)
                                    ga[flat[i]] += self.grad[i];
                                });
}

template <Real T>
Tensor<T> repeat_interleave(const Tensor<T>& a, std::size_t times) {
  if (times == 0) throw ContractError("repeat_interleave: times must be positive");
  const std::size_t n0 = a.dim(0);
  const std::size_t width = a.numel() / n0;
  std::vector<T> out(a.numel() * times);
  for (std::size_t r = 0; r < n0; ++r)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(a.data().data() + r * width, width, out.data() + (r * times + t) * width);
  Shape shape = a.shape();
  shape[0] *= times;
  return Tensor<T>::make_result(std::move(shape), std::move(out), {a}, "repeat_interleave",
                                [n0, width, times](Node<T>& self) {
                                  auto& ga = grad_of(self, 0);
                                  for (std::size_t r = 0; r < n0; ++r)
                                    for (std::size_t t = 0; t < times; ++t)
                                      for (std::size_t i = 0; i < width; ++i)
                                        ga[r * width + i] +=
                                            self.grad[(r * times + t) * width + i];
                                });
}

template <Real T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  const AxisView v = axis_view(a.shape(), axis);
  std::vector<T> out(a.numel());
  const auto x = a.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      T mx = x[base];
      for (std::size_t l = 1; l < v.len; ++l) mx = std::max(mx, x[base + l * v.inner]);
      T z = 0;
      for (std::size_t l = 0; l < v.len; ++l) {
        const T e = std::exp(x[base + l * v.inner] - mx);
        out[base + l * v.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] /= z;
    }
  }
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, "softmax", [v](Node<T>& self) {
    auto& ga = grad_of(self, 0);
    const auto& y = self.value;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.len * v.inner + i;
        T dot = 0;
        for (std::size_t l = 0; l < v.len; ++l)
          dot += self.grad[base + l * v.inner] * y[base + l * v.inner];
        for (std::size_t l = 0; l < v.len; ++l) {
          const std::size_t idx = base + l * v.inner;
          ga[idx] += y[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

template <Real T>
Tensor<T> log_softmax(const Tensor<T>& a, std::size_t axis) {
  const AxisView v = axis_view(a.shape(), axis);
  std::vector<T> out(a.numel());
  const auto x = a.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      T mx = x[base];
      for (std::size_t l = 1; l < v.len; ++l) mx = std::max(mx, x[base + l * v.inner]);
      T z = 0;
      for (std::size_t l = 0; l < v.len; ++l) z += std::exp(x[base + l * v.inner] - mx);
      const T lse = mx + std::log(z);
      for (std::size_t l = 0; l < v.len; ++l)
        out[base + l * v.inner] = x[base + l * v.inner] - lse;
    }
  }
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, "log_softmax",
                                [v](Node<T>& self) {
                                  auto& ga = grad_of(self, 0);
                                  const auto& y = self.value;
                                  for (std::size_t o = 0; o < v.outer; ++o) {
                                    for (std::size_t i = 0; i < v.inner; ++i) {
                                      const std::size_t base = o * v.len * v.inner + i;
                                      T gs = 0;
                                      for (std::size_t l = 0; l < v.len; ++l)
                                        gs += self.grad[base + l * v.inner];
                                      for (std::size_t l = 0; l < v.len; ++l) {
                                        const std::size_t idx = base + l * v.inner;
                                        ga[idx] += self.grad[idx] - std::exp(y[idx]) * gs;
                                      }
                                    }
                                  }
                                });
}

template <Real T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t width = x.shape().back();
  if (gamma.numel() != width || beta.numel() != width)
    throw DimensionError("layer_norm: gamma/beta must match the last axis (" +
                         std::to_string(width) + ")");
  const std::size_t rows = x.numel() / width;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * width;
    T mu = 0;
    for (std::size_t i = 0; i < width; ++i) mu += row[i];
    mu /= static_cast<T>(width);
    T var = 0;
    for (std::size_t i = 0; i < width; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(width);
    const T denom = var + eps;
    const T rs = denom > T(0) ? T(1) / std::sqrt(denom) : T(0);
    (*rstd)[r] = rs;
    for (std::size_t i = 0; i < width; ++i) {
      const T h = (row[i] - mu) * rs;
      (*xhat)[r * width + i] = h;
      out[r * width + i] = gv[i] * h + bv[i];
    }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
      [rows, width, xhat, rstd](Node<T>& self) {
        const auto& g = self.grad;
        const auto& gam = self.inputs[1]->value;
        if (wants_grad(self, 0)) {
          auto& gx = grad_of(self, 0);
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t i = 0; i < width; ++i) {
              const T dh = g[r * width + i] * gam[i];
              m1 += dh;
              m2 += dh * (*xhat)[r * width + i];
            }
            m1 /= static_cast<T>(width);
            m2 /= static_cast<T>(width);
            for (std::size_t i = 0; i < width; ++i) {
              const T dh = g[r * width + i] * gam[i];
              gx[r * width + i] += (*rstd)[r] * (dh - m1 - (*xhat)[r * width + i] * m2);
            }
          }
        }
        if (wants_grad(self, 1)) {
          auto& gg = grad_of(self, 1);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < width; ++i)
              gg[i] += g[r * width + i] * (*xhat)[r * width + i];
        }
        if (wants_grad(self, 2)) {
          auto& gb = grad_of(self, 2);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < width; ++i) gb[i] += g[r * width + i];
        }
      });
}

template <Real T>
Tensor<T> gelu(const Tensor<T>& a) {
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  std::vector<T> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, "gelu", [inv_sqrt2](Node<T>& self) {
    auto& ga = grad_of(self, 0);
    const auto& x = self.inputs[0]->value;
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x[i] * x[i]);
      ga[i] += self.grad[i] * (cdf + x[i] * pdf);
    }
  });
}

template <Real T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v = std::max(v, T(0));
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, "relu", [](Node<T>& self) {
    auto& ga = grad_of(self, 0);
    const auto& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (x[i] > T(0)) ga[i] += self.grad[i];
  });
}

template <Real T>
Tensor<T> exp(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v = std::exp(v);
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, "exp", [](Node<T>& self) {
    auto& ga = grad_of(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * self.value[i];
  });
}

template <Real T>
Tensor<T> log(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v = std::log(v);
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, "log", [](Node<T>& self) {
    auto& ga = grad_of(self, 0);
    const auto& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] / x[i];
  });
}

template <Real T>
Tensor<T> l2_normalize(const Tensor<T>& a) {
  static constexpr T kFloor = T(1e-12);
  const std::size_t width = a.shape().back();
  const std::size_t rows = a.numel() / width;
  auto norms = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(a.numel());
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = 0;
    for (std::size_t i = 0; i < width; ++i) ss += x[r * width + i] * x[r * width + i];
    const T nrm = std::sqrt(ss);
    (*norms)[r] = nrm;
    const T d = std::max(nrm, kFloor);
    for (std::size_t i = 0; i < width; ++i) out[r * width + i] = x[r * width + i] / d;
  }
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, "l2_normalize",
                                [rows, width, norms](Node<T>& self) {
                                  auto& ga = grad_of(self, 0);
                                  const auto& y = self.value;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const T nrm = (*norms)[r];
                                    const T d = std::max(nrm, kFloor);
                                    T dot = 0;
                                    if (nrm > kFloor)
                                      for (std::size_t i = 0; i < width; ++i)
                                        dot += y[r * width + i] * self.grad[r * width + i];
                                    for (std::size_t i = 0; i < width; ++i)
                                      ga[r * width + i] +=
                                          (self.grad[r * width + i] - y[r * width + i] * dot) / d;
                                  }
                                });
}

template <Real T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("cosine_similarity: expects [m, d] and [n, d], got " +
                         shape_string(a.shape()) + " and " + shape_string(b.shape()));
  return matmul(l2_normalize(a), transpose(l2_normalize(b)));
}

template <Real T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be a matrix");
  return index_select(table, ids);
}

template <Real T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::size_t heads, AttentionCapture<T>* capture) {
  auto dims_of = [](const Tensor<T>& t) -> std::pair<std::size_t, std::size_t> {
    if (t.rank() == 2) return {1, t.dim(0)};
    if (t.rank() == 3) return {t.dim(0), t.dim(1)};
    throw DimensionError("attention: inputs must be rank 2 or 3, got " + shape_string(t.shape()));
  };
  const auto [gq, nq] = dims_of(q);
  const auto [gk, nk] = dims_of(k);
  const std::size_t width = q.shape().back();
  if (gq != gk || k.shape() != v.shape() || k.shape().back() != width)
    throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  if (heads == 0 || width % heads != 0)
    throw ConfigError("attention: width " + std::to_string(width) +
                      " is not divisible by head count " + std::to_string(heads));
  const kernels::AttentionDims dims{gq, nq, nk, width, heads};
  const T scl = T(1) / std::sqrt(static_cast<T>(width / heads));
  auto probs = std::make_shared<std::vector<T>>(gq * heads * nq * nk);
  std::vector<T> out(q.numel());
  kernels::attention_forward(dims, scl, q.data().data(), k.data().data(), v.data().data(),
                             out.data(), probs->data());
  if (capture) {
    capture->groups = gq;
    capture->heads = heads;
    capture->queries = nq;
    capture->keys = nk;
    capture->probs = *probs;
  }
  return Tensor<T>::make_result(
      q.shape(), std::move(out), {q, k, v}, "attention", [dims, scl, probs](Node<T>& self) {
        std::vector<T> dq(self.inputs[0]->value.size(), T(0));
        std::vector<T> dk(self.inputs[1]->value.size(), T(0));
        std::vector<T> dv(self.inputs[2]->value.size(), T(0));
        kernels::attention_backward(dims, scl, self.inputs[0]->value.data(),
                                    self.inputs[1]->value.data(), self.inputs[2]->value.data(),
                                    probs->data(), self.grad.data(), dq.data(), dk.data(),
                                    dv.data());
        const std::vector<T>* parts[3] = {&dq, &dk, &dv};
        for (std::size_t i = 0; i < 3; ++i) {
          if (!wants_grad(self, i)) continue;
          auto& g = grad_of(self, i);
          for (std::size_t j = 0; j < g.size(); ++j) g[j] += (*parts[i])[j];
        }
      });
}

#define CGCLIP_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> transpose(const Tensor<T>&);                                              \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                          \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> mean_axis(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                       \
  template Tensor<T> index_select(const Tensor<T>&, const std::vector<std::size_t>&);          \
  template Tensor<T> gather(const Tensor<T>&, const std::vector<std::size_t>&);                \
  template Tensor<T> repeat_interleave(const Tensor<T>&, std::size_t);                         \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);      \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> exp(const Tensor<T>&);                                                    \
  template Tensor<T> log(const Tensor<T>&);                                                    \
  template Tensor<T> l2_normalize(const Tensor<T>&);                                           \
  template Tensor<T> cosine_similarity(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> embedding_lookup(const Tensor<T>&, const std::vector<std::size_t>&);      \
  template Tensor<T> scaled_dot_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                          std::size_t, AttentionCapture<T>*);

CGCLIP_INSTANTIATE_OPS(float)
CGCLIP_INSTANTIATE_OPS(double)

}  // namespace cgclip::num
