#include "cgclip/numerics/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cgclip::kernels {
namespace {

std::atomic<Backend> g_backend{Backend::kOpenMP};
std::atomic<bool> g_count_macs{false};
std::atomic<std::uint64_t> g_macs{0};

bool use_omp() { return g_backend.load(std::memory_order_relaxed) == Backend::kOpenMP; }

template <typename T>
void gemm_nn_row(std::size_t i, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
                 bool accumulate) {
  T* crow = c + i * n;
  if (!accumulate) std::fill(crow, crow + n, T(0));
  const T* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const T av = arow[p];
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

template <typename T>
void gemm_tn_row(std::size_t i, std::size_t m, std::size_t k, std::size_t n, const T* a,
                 const T* b, T* c, bool accumulate) {
  T* crow = c + i * n;
  if (!accumulate) std::fill(crow, crow + n, T(0));
  for (std::size_t p = 0; p < k; ++p) {
    const T av = a[p * m + i];
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

// One (group, head) slice of the attention forward pass.
template <typename T>
void attend_forward_block(const AttentionDims& d, std::size_t g, std::size_t h, T scale,
                          const T* q, const T* k, const T* v, T* out, T* probs) {
  const std::size_t dh = d.width / d.heads;
  const std::size_t off = h * dh;
  T* p_block = probs + ((g * d.heads + h) * d.queries) * d.keys;
  for (std::size_t i = 0; i < d.queries; ++i) {
    const T* qi = q + (g * d.queries + i) * d.width + off;
    T* pi = p_block + i * d.keys;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < d.keys; ++j) {
      const T* kj = k + (g * d.keys + j) * d.width + off;
      T s = 0;
      for (std::size_t e = 0; e < dh; ++e) s += qi[e] * kj[e];
      s *= scale;
      pi[j] = s;
      mx = std::max(mx, s);
    }
    T z = 0;
    for (std::size_t j = 0; j < d.keys; ++j) {
      pi[j] = std::exp(pi[j] - mx);
      z += pi[j];
    }
    for (std::size_t j = 0; j < d.keys; ++j) pi[j] /= z;
    T* oi = out + (g * d.queries + i) * d.width + off;
    std::fill(oi, oi + dh, T(0));
    for (std::size_t j = 0; j < d.keys; ++j) {
      const T* vj = v + (g * d.keys + j) * d.width + off;
      const T pj = pi[j];
      for (std::size_t e = 0; e < dh; ++e) oi[e] += pj * vj[e];
    }
  }
}

template <typename T>
void attend_backward_block(const AttentionDims& d, std::size_t g, std::size_t h, T scale,
                           const T* q, const T* k, const T* v, const T* probs, const T* d_out,
                           T* dq, T* dk, T* dv, std::vector<T>& scratch) {
  const std::size_t dh = d.width / d.heads;
  const std::size_t off = h * dh;
  const T* p_block = probs + ((g * d.heads + h) * d.queries) * d.keys;
  scratch.resize(d.keys);
  for (std::size_t i = 0; i < d.queries; ++i) {
    const T* pi = p_block + i * d.keys;
    const std::size_t qrow = (g * d.queries + i) * d.width + off;
    const T* doi = d_out + qrow;
    T dot = 0;
    for (std::size_t j = 0; j < d.keys; ++j) {
      const std::size_t krow = (g * d.keys + j) * d.width + off;
      T dp = 0;
      for (std::size_t e = 0; e < dh; ++e) dp += doi[e] * v[krow + e];
      scratch[j] = dp;
      dot += pi[j] * dp;
      for (std::size_t e = 0; e < dh; ++e) dv[krow + e] += pi[j] * doi[e];
    }
    for (std::size_t j = 0; j < d.keys; ++j) {
      const std::size_t krow = (g * d.keys + j) * d.width + off;
      const T ds = pi[j] * (scratch[j] - dot) * scale;
      for (std::size_t e = 0; e < dh; ++e) {
        dq[qrow + e] += ds * k[krow + e];
        dk[krow + e] += ds * q[qrow + e];
      }
    }
  }
}

}  // namespace

Backend backend() { return g_backend.load(); }
void set_backend(Backend b) { g_backend.store(b); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

void set_mac_counting(bool on) { g_count_macs.store(on); }
bool mac_counting() { return g_count_macs.load(); }
void reset_mac_count() { g_macs.store(0); }
std::uint64_t mac_count() { return g_macs.load(); }
void add_macs(std::uint64_t n) {
  if (g_count_macs.load(std::memory_order_relaxed)) g_macs.fetch_add(n);
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate) {
  add_macs(static_cast<std::uint64_t>(m) * k * n);
  if (use_omp()) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
      gemm_nn_row(static_cast<std::size_t>(i), k, n, a, b, c, accumulate);
  } else {
    for (std::size_t i = 0; i < m; ++i) gemm_nn_row(i, k, n, a, b, c, accumulate);
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, k, n, a, bt.data(), c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate) {
  add_macs(static_cast<std::uint64_t>(m) * k * n);
  if (use_omp()) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
      gemm_tn_row(static_cast<std::size_t>(i), m, k, n, a, b, c, accumulate);
  } else {
    for (std::size_t i = 0; i < m; ++i) gemm_tn_row(i, m, k, n, a, b, c, accumulate);
  }
}

template <typename T>
void gemm_reference(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
                    bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void attention_forward(const AttentionDims& d, T scale, const T* q, const T* k, const T* v,
                       T* out, T* probs) {
  add_macs(2ULL * d.groups * d.queries * d.keys * d.width);
  const std::size_t blocks = d.groups * d.heads;
  if (use_omp()) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(blocks); ++b) {
      const auto ub = static_cast<std::size_t>(b);
      attend_forward_block(d, ub / d.heads, ub % d.heads, scale, q, k, v, out, probs);
    }
  } else {
    for (std::size_t b = 0; b < blocks; ++b)
      attend_forward_block(d, b / d.heads, b % d.heads, scale, q, k, v, out, probs);
  }
}

template <typename T>
void attention_backward(const AttentionDims& d, T scale, const T* q, const T* k, const T* v,
                        const T* probs, const T* d_out, T* dq, T* dk, T* dv) {
  add_macs(4ULL * d.groups * d.queries * d.keys * d.width);
  const std::size_t blocks = d.groups * d.heads;
  if (use_omp()) {
#pragma omp parallel
    {
      std::vector<T> scratch;
#pragma omp for schedule(static)
      for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(blocks); ++b) {
        const auto ub = static_cast<std::size_t>(b);
        attend_backward_block(d, ub / d.heads, ub % d.heads, scale, q, k, v, probs, d_out, dq, dk,
                              dv, scratch);
      }
    }
  } else {
    std::vector<T> scratch;
    for (std::size_t b = 0; b < blocks; ++b)
      attend_backward_block(d, b / d.heads, b % d.heads, scale, q, k, v, probs, d_out, dq, dk, dv,
                            scratch);
  }
}

#define CGCLIP_INSTANTIATE_KERNELS(T)                                                          \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,      \
                           bool);                                                              \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,      \
                           bool);                                                              \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,      \
                           bool);                                                              \
  template void gemm_reference<T>(std::size_t, std::size_t, std::size_t, const T*, const T*,   \
                                  T*, bool);                                                   \
  template void attention_forward<T>(const AttentionDims&, T, const T*, const T*, const T*, T*, \
                                     T*);                                                      \
  template void attention_backward<T>(const AttentionDims&, T, const T*, const T*, const T*,   \
                                      const T*, const T*, T*, T*, T*);

CGCLIP_INSTANTIATE_KERNELS(float)
CGCLIP_INSTANTIATE_KERNELS(double)

}  // namespace cgclip::kernels
