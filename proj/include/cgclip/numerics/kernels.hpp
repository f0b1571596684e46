#pragma once

// Dense compute kernels behind the tensor ops. Every kernel has a serial
// reference and an OpenMP version; both accumulate each output element in the
// same order so their results are bit-identical.

#include <cstddef>
#include <cstdint>

namespace cgclip::kernels {

enum class Backend { kSerial, kOpenMP };

Backend backend();
void set_backend(Backend b);

class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : previous_(backend()) { set_backend(b); }
  ~ScopedBackend() { set_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

int max_threads();
void set_num_threads(int n);

// Multiply-accumulate accounting. When enabled, gemm and attention add the
// number of scalar MACs they execute to a process-wide counter.
void set_mac_counting(bool on);
bool mac_counting();
void reset_mac_count();
std::uint64_t mac_count();
void add_macs(std::uint64_t n);

// C[m x n] (+)= A[m x k] * B[k x n], row-major, contiguous.
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate);

// C[m x n] (+)= A[m x k] * B[n x k]^T.
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate);

// C[m x n] (+)= A[k x m]^T * B[k x n].
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate);

// Textbook triple loop, always serial. Used as the oracle for the kernels above.
template <typename T>
void gemm_reference(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
                    bool accumulate);

struct AttentionDims {
  std::size_t groups = 1;   // independent attention problems
  std::size_t queries = 1;  // rows of Q per group
  std::size_t keys = 1;     // rows of K and V per group
  std::size_t width = 1;    // model width (all heads)
  std::size_t heads = 1;
};

// Multi-head scaled dot-product attention over grouped row-major inputs:
// q [groups, queries, width], k/v [groups, keys, width]. Writes out with the same
// layout as q and the softmax probabilities to probs [groups, heads, queries, keys].
template <typename T>
void attention_forward(const AttentionDims& dims, T scale, const T* q, const T* k, const T* v,
                       T* out, T* probs);

// Accumulates into dq, dk, dv given d_out and the forward probabilities.
template <typename T>
void attention_backward(const AttentionDims& dims, T scale, const T* q, const T* k, const T* v,
                        const T* probs, const T* d_out, T* dq, T* dk, T* dv);

}  // namespace cgclip::kernels
