#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "expanet/fft.hpp"
#include "oracle_utils.hpp"

using namespace expanet;
using oracle::cplx;

namespace {

std::vector<cplx> random_complex(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<cplx> x(n);
  for (auto& v : x) v = cplx(u(rng), u(rng));
  return x;
}

double max_err(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("fft matches the naive DFT on power-of-two lengths") {
  std::mt19937_64 rng(11);
  for (int n : {2, 8, 16, 64, 256}) {
    auto x = random_complex(rng, n);
    auto want = oracle::naive_dft(x);
    auto got = x;
    fft::transform(got);
    REQUIRE(max_err(got, want) < 1e-9 * n);
  }
}

TEST_CASE("fft matches the naive DFT on non-power-of-two lengths") {
  std::mt19937_64 rng(12);
  for (int n : {3, 5, 12, 13, 100, 640}) {
    auto x = random_complex(rng, n);
    auto want = oracle::naive_dft(x);
    auto got = x;
    fft::transform(got);
    REQUIRE(max_err(got, want) < 1e-8 * n);
  }
}

TEST_CASE("inverse transform round-trips") {
  std::mt19937_64 rng(13);
  for (int n : {8, 12, 100, 800}) {
    auto x = random_complex(rng, n);
    auto y = x;
    fft::transform(y);
    fft::transform(y, true);
    REQUIRE(max_err(y, x) < 1e-9);
  }
}

TEST_CASE("transform is linear") {
  std::mt19937_64 rng(14);
  const int n = 96;
  auto x = random_complex(rng, n);
  auto y = random_complex(rng, n);
  const cplx a(0.7, -0.3), b(-1.2, 0.4);
  std::vector<cplx> combo(n);
  for (int i = 0; i < n; ++i) combo[i] = a * x[i] + b * y[i];
  fft::transform(combo);
  fft::transform(x);
  fft::transform(y);
  for (int i = 0; i < n; ++i)
    REQUIRE(std::abs(combo[i] - (a * x[i] + b * y[i])) < 1e-9 * n);
}

TEST_CASE("real-input spectrum is conjugate symmetric") {
  std::mt19937_64 rng(15);
  std::vector<double> x(50);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : x) v = u(rng);
  auto spec = fft::forward_real(x);
  REQUIRE(spec.size() == x.size());
  for (size_t k = 1; k < x.size(); ++k)
    REQUIRE(std::abs(spec[k] - std::conj(spec[x.size() - k])) < 1e-9);
}
