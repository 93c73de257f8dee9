#include <doctest.h>

#include <cmath>
#include <vector>

#include "rlhf/common/random.hpp"
#include "rlhf/simd/kernels.hpp"

using namespace rlhf;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, 3.0);
  return v;
}

}  // namespace

TEST_CASE("avx2 kernels agree with the scalar reference") {
  if (!simd::cpu_supports_avx2()) {
    MESSAGE("avx2 not available; equivalence test skipped");
    return;
  }
  const auto& ref = simd::scalar::table();
  const auto& vec = simd::avx2::table();
  Rng rng(7);
  for (std::size_t n : {0, 1, 3, 4, 5, 7, 8, 9, 15, 16, 17, 63, 64, 65, 257, 1000}) {
    auto a = random_vec(rng, n);
    auto b = random_vec(rng, n);
    double scale = 1.0;
    for (double x : a) scale += std::abs(x) * 3.0;
    CHECK(vec.dot(a.data(), b.data(), n) == doctest::Approx(ref.dot(a.data(), b.data(), n)).epsilon(1e-12).scale(scale));
    CHECK(vec.sum(a.data(), n) == doctest::Approx(ref.sum(a.data(), n)).epsilon(1e-12).scale(scale));
    CHECK(vec.max(a.data(), n) == ref.max(a.data(), n));

    auto y1 = b, y2 = b;
    ref.axpy(0.37, a.data(), y1.data(), n);
    vec.axpy(0.37, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y2[i] == doctest::Approx(y1[i]).epsilon(1e-14));

    auto s1 = a, s2 = a;
    ref.scale(-1.5, s1.data(), n);
    vec.scale(-1.5, s2.data(), n);
    CHECK(s1 == s2);
  }
}

TEST_CASE("forced dispatch switches the active table") {
  const auto original = simd::active_isa();
  simd::force_isa(simd::Isa::kScalar);
  CHECK(simd::active_isa() == simd::Isa::kScalar);
  CHECK(&simd::kernels() == &simd::scalar::table());
  if (simd::cpu_supports_avx2()) {
    simd::force_isa(simd::Isa::kAvx2);
    CHECK(simd::isa_name(simd::active_isa()) == "avx2");
  } else {
    CHECK_THROWS(simd::force_isa(simd::Isa::kAvx2));
  }
  simd::force_isa(original);
}

TEST_CASE("log_sum_exp and softmax are overflow safe") {
  std::vector<double> big{1000.0, 1000.0};
  CHECK(simd::log_sum_exp(big) == doctest::Approx(1000.0 + std::log(2.0)));
  std::vector<double> out(2);
  simd::softmax(big, out);
  CHECK(out[0] == doctest::Approx(0.5));
  std::vector<double> with_neg_inf{0.0, -INFINITY};
  simd::log_softmax(with_neg_inf, out);
  CHECK(out[0] == 0.0);
  CHECK(std::isinf(out[1]));
  CHECK(std::isinf(simd::log_sum_exp(std::vector<double>{})));
}

TEST_CASE("matvec helpers match naive loops on both dispatch targets") {
  Rng rng(3);
  const std::size_t rows = 5, cols = 11;
  auto w = random_vec(rng, rows * cols);
  auto x = random_vec(rng, cols);
  auto r = random_vec(rng, rows);
  const auto original = simd::active_isa();
  for (auto isa : {simd::Isa::kScalar, simd::Isa::kAvx2}) {
    if (isa == simd::Isa::kAvx2 && !simd::cpu_supports_avx2()) continue;
    simd::force_isa(isa);
    std::vector<double> y(rows);
    simd::matvec(w, rows, cols, x, y);
    for (std::size_t i = 0; i < rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cols; ++j) acc += w[i * cols + j] * x[j];
      CHECK(y[i] == doctest::Approx(acc).epsilon(1e-12));
    }
    std::vector<double> yt(cols, 0.0);
    simd::matvec_transposed_acc(w, rows, cols, r, yt);
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < rows; ++i) acc += w[i * cols + j] * r[i];
      CHECK(yt[j] == doctest::Approx(acc).epsilon(1e-12));
    }
  }
  simd::force_isa(original);
}
