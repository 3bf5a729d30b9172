#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <random>
#include <vector>

#include "expanet/matrix.hpp"

namespace oracle {

using cplx = std::complex<double>;

// O(n^2) reference transform, sign/scale conventions matching fft::transform.
inline std::vector<cplx> naive_dft(const std::vector<cplx>& x, bool inverse = false) {
  const int n = static_cast<int>(x.size());
  std::vector<cplx> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (int k = 0; k < n; ++k) {
    cplx acc(0.0, 0.0);
    for (int t = 0; t < n; ++t)
      acc += x[t] * std::polar(1.0, sign * 2.0 * M_PI * k * t / n);
    out[k] = inverse ? acc / static_cast<double>(n) : acc;
  }
  return out;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

inline double rms(const std::vector<double>& x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / x.size());
}

inline std::vector<double> sine(int n, double fs, double freq, double amp = 1.0,
                                double phase = 0.0) {
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i)
    x[i] = amp * std::sin(2.0 * M_PI * freq * i / fs + phase);
  return x;
}

inline std::vector<double> random_signal(std::mt19937_64& rng, int n, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> x(n);
  for (double& v : x) v = u(rng);
  return x;
}

inline std::vector<double> gaussian_signal(std::mt19937_64& rng, int n,
                                           double sigma = 1.0) {
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<double> x(n);
  for (double& v : x) v = g(rng);
  return x;
}

// Amplitude of a single frequency bin via direct correlation (length should be an
// integer number of cycles for exactness; close otherwise).
inline double tone_amplitude(const std::vector<double>& x, double fs, double freq) {
  double re = 0.0, im = 0.0;
  const int n = static_cast<int>(x.size());
  for (int i = 0; i < n; ++i) {
    const double w = 2.0 * M_PI * freq * i / fs;
    re += x[i] * std::cos(w);
    im += x[i] * std::sin(w);
  }
  return 2.0 * std::sqrt(re * re + im * im) / n;
}

// Central-difference derivative of a scalar function of one matrix entry.
inline double fd_grad(expanet::Matrix& m, int r, int c,
                      const std::function<double()>& loss, double h = 1e-5) {
  const double saved = m(r, c);
  m(r, c) = saved + h;
  const double up = loss();
  m(r, c) = saved - h;
  const double down = loss();
  m(r, c) = saved;
  return (up - down) / (2.0 * h);
}

// Adaptive Simpson quadrature.
inline double simpson(const std::function<double(double)>& f, double a, double b,
                      double eps = 1e-10, int depth = 30) {
  std::function<double(double, double, double, double, double, double, int)> rec =
      [&](double lo, double hi, double flo, double fmid, double fhi, double whole,
          int d) -> double {
    const double mid = 0.5 * (lo + hi);
    const double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
    const double flm = f(lm), frm = f(rm);
    const double left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
    const double right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
    if (d <= 0 || std::abs(left + right - whole) < 15.0 * eps)
      return left + right + (left + right - whole) / 15.0;
    return rec(lo, mid, flo, flm, fmid, left, d - 1) +
           rec(mid, hi, fmid, frm, fhi, right, d - 1);
  };
  const double mid = 0.5 * (a + b);
  const double fa = f(a), fm = f(mid), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return rec(a, b, fa, fm, fb, whole, depth);
}

// Two-sided Student-t p value by direct integration of the density.
inline double t_test_p_oracle(double t, int dof) {
  const double v = static_cast<double>(dof);
  const double lognorm =
      std::lgamma((v + 1.0) / 2.0) - std::lgamma(v / 2.0) - 0.5 * std::log(v * M_PI);
  auto pdf = [&](double x) {
    return std::exp(lognorm - (v + 1.0) / 2.0 * std::log1p(x * x / v));
  };
  const double at = std::abs(t);
  const double central = 2.0 * simpson(pdf, 0.0, at, 1e-12);
  return std::max(0.0, 1.0 - central);
}

}  // namespace oracle
