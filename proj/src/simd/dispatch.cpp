#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>

#include "rlhf/simd/kernels.hpp"

namespace rlhf::simd {
namespace {

Isa detect() {
  if (const char* env = std::getenv("RLHF_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Isa::kScalar;
    if (v == "avx2" && cpu_supports_avx2()) return Isa::kAvx2;
  }
  return cpu_supports_avx2() ? Isa::kAvx2 : Isa::kScalar;
}

std::atomic<int>& selected() {
  static std::atomic<int> isa{static_cast<int>(detect())};
  return isa;
}

}  // namespace

bool cpu_supports_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  return avx2::compiled() && __builtin_cpu_supports("avx2") &&
         __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() { return static_cast<Isa>(selected().load()); }

std::string_view isa_name(Isa isa) {
  return isa == Isa::kAvx2 ? "avx2" : "scalar";
}

void force_isa(Isa isa) {
  if (isa == Isa::kAvx2 && !cpu_supports_avx2())
    throw std::runtime_error("avx2 kernels requested but not available");
  selected().store(static_cast<int>(isa));
}

const KernelTable& kernels() {
  return active_isa() == Isa::kAvx2 ? avx2::table() : scalar::table();
}

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = max(x);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - m);
  return m + std::log(acc);
}

void log_softmax(std::span<const double> x, std::span<double> out) {
  const double lse = log_sum_exp(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
}

void softmax(std::span<const double> x, std::span<double> out) {
  const double m = max(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - m);
    acc += out[i];
  }
  scale(1.0 / acc, out.first(x.size()));
}

void matvec(std::span<const double> w, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<double> y, bool accumulate) {
  const auto& k = kernels();
  for (std::size_t r = 0; r < rows; ++r) {
    const double v = k.dot(w.data() + r * cols, x.data(), cols);
    y[r] = accumulate ? y[r] + v : v;
  }
}

void matvec_transposed_acc(std::span<const double> w, std::size_t rows,
                           std::size_t cols, std::span<const double> x,
                           std::span<double> y) {
  const auto& k = kernels();
  for (std::size_t r = 0; r < rows; ++r)
    if (x[r] != 0.0) k.axpy(x[r], w.data() + r * cols, y.data(), cols);
}

void outer_acc(std::span<const double> a, std::span<const double> b,
               std::span<double> dw) {
  const auto& k = kernels();
  const std::size_t cols = b.size();
  for (std::size_t r = 0; r < a.size(); ++r)
    if (a[r] != 0.0) k.axpy(a[r], b.data(), dw.data() + r * cols, cols);
}

}  // namespace rlhf::simd
