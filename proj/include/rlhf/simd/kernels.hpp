#pragma once

// Dense double-precision kernels used by the model and oracle code.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2/FMA variant. The variant is selected once per process from CPUID and
// can be pinned with the RLHF_SIMD environment variable ("scalar" or "avx2")
// or with force_isa() in tests. Results of the two paths agree to rounding
// (reassociated sums), not bit-for-bit.

#include <cstddef>
#include <span>
#include <string_view>

namespace rlhf::simd {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  void (*scale)(double alpha, double* x, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*max)(const double* x, std::size_t n);
};

namespace scalar {
const KernelTable& table();
}
namespace avx2 {
// Only valid to call when cpu_supports_avx2() is true.
const KernelTable& table();
bool compiled();
}  // namespace avx2

bool cpu_supports_avx2();
Isa active_isa();
std::string_view isa_name(Isa isa);
// Pins the dispatch target. Requesting kAvx2 on a machine without it throws.
void force_isa(Isa isa);
const KernelTable& kernels();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return kernels().dot(a.data(), b.data(), a.size());
}
// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  kernels().axpy(alpha, x.data(), y.data(), x.size());
}
inline void scale(double alpha, std::span<double> x) {
  kernels().scale(alpha, x.data(), x.size());
}
inline double sum(std::span<const double> x) {
  return kernels().sum(x.data(), x.size());
}
inline double max(std::span<const double> x) {
  return kernels().max(x.data(), x.size());
}

// log(sum(exp(x))) with a max shift. Empty input yields -inf.
double log_sum_exp(std::span<const double> x);
// out = x - log_sum_exp(x)
void log_softmax(std::span<const double> x, std::span<double> out);
void softmax(std::span<const double> x, std::span<double> out);

// Row-major W (rows x cols): y = W x (+ y when accumulate).
void matvec(std::span<const double> w, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<double> y,
            bool accumulate = false);
// Row-major W (rows x cols): y += W^T x
void matvec_transposed_acc(std::span<const double> w, std::size_t rows,
                           std::size_t cols, std::span<const double> x,
                           std::span<double> y);
// Row-major dW (rows x cols): dW += a b^T
void outer_acc(std::span<const double> a, std::span<const double> b,
               std::span<double> dw);

}  // namespace rlhf::simd
