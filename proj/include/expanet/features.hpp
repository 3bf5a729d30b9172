#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "expanet/dsp.hpp"
#include "expanet/errors.hpp"
#include "expanet/matrix.hpp"
#include "expanet/recording.hpp"

namespace expanet {

constexpr int kNumFeatures = 14;

inline const std::array<std::string, kNumFeatures>& feature_names() {
  static const std::array<std::string, kNumFeatures> names = {
      "variance",     "line_length", "mobility", "complexity", "kfd",
      "hfd",          "dfa",         "lzc",      "perm_entropy",
      "bp_delta",     "bp_theta",    "bp_alpha", "bp_beta",    "bp_gamma"};
  return names;
}

struct FeatureConfig {
  int hfd_kmax = 10;
  std::vector<int> dfa_scales = {4, 8, 16, 32, 64};
  int pe_order = 3;
  int pe_delay = 1;
  std::array<BandSpec, 5> bands = canonical_bands();
};

// Per-epoch node attributes. flags(r,c) == 1 marks a degenerate computation whose
// value was replaced by the sentinel 0.
struct FeatureMatrix {
  Matrix values;
  Matrix flags;
  FeatureMatrix() : values(0, 0), flags(0, 0) {}
  FeatureMatrix(int rows) : values(rows, kNumFeatures), flags(rows, kNumFeatures) {}
};

inline double variance(const std::vector<double>& x) {
  if (x.size() < 2) throw TooShortSignal("variance: need at least 2 samples");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  double acc = 0.0;
  for (double v : x) acc += (v - mean) * (v - mean);
  return acc / x.size();
}

inline double line_length(const std::vector<double>& x) {
  if (x.size() < 2) throw TooShortSignal("line_length: need at least 2 samples");
  double acc = 0.0;
  for (size_t i = 1; i < x.size(); ++i) acc += std::abs(x[i] - x[i - 1]);
  return acc;
}

namespace detail {

inline std::vector<double> first_difference(const std::vector<double>& x, double fs) {
  std::vector<double> d(x.size() - 1);
  for (size_t i = 1; i < x.size(); ++i) d[i - 1] = (x[i] - x[i - 1]) * fs;
  return d;
}

}  // namespace detail

inline double hjorth_mobility(const std::vector<double>& x, double fs) {
  if (x.size() < 3) throw TooShortSignal("hjorth_mobility: need at least 3 samples");
  const double vx = variance(x);
  if (vx <= 0.0) throw ZeroVariance("hjorth_mobility: flat signal");
  return std::sqrt(variance(detail::first_difference(x, fs)) / vx);
}

inline double hjorth_complexity(const std::vector<double>& x, double fs) {
  if (x.size() < 4) throw TooShortSignal("hjorth_complexity: need at least 4 samples");
  const auto dx = detail::first_difference(x, fs);
  const double vx = variance(x);
  const double vdx = variance(dx);
  if (vx <= 0.0 || vdx <= 0.0) throw ZeroVariance("hjorth_complexity: flat signal");
  return hjorth_mobility(dx, fs) / std::sqrt(vdx / vx);
}

// Katz: L total path length, d max excursion from the first sample, a = L/(N-1).
inline double katz_fd(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n < 3) throw TooShortSignal("katz_fd: need at least 3 samples");
  double len = 0.0, dmax = 0.0;
  for (int i = 1; i < n; ++i) {
    len += std::abs(x[i] - x[i - 1]);
    dmax = std::max(dmax, std::abs(x[i] - x[0]));
  }
  if (len <= 0.0 || dmax <= 0.0)
    throw DegenerateSignal("katz_fd: zero path length or zero extent");
  const double a = len / (n - 1);
  const double denom = std::log10(dmax / a);
  if (std::abs(denom) < 1e-12)
    throw DegenerateSignal("katz_fd: extent equals average step");
  return std::log10(len / a) / denom;
}

namespace detail {

// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  const int n = static_cast<int>(xs.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-300) throw SingularFit("fit_slope: collinear abscissae");
  return (n * sxy - sx * sy) / denom;
}

}  // namespace detail

// Higuchi: average curve length of k-decimated subseries; FD is the slope of
// log L(k) against log(1/k).
inline double higuchi_fd(const std::vector<double>& x, int k_max = 10) {
  const int n = static_cast<int>(x.size());
  if (k_max < 2) throw ConfigInvalid("higuchi_fd: k_max must be >= 2");
  if (n < 2 * k_max) throw TooShortSignal("higuchi_fd: need at least 2*k_max samples");

  std::vector<double> log_inv_k, log_len;
  for (int k = 1; k <= k_max; ++k) {
    double total = 0.0;
    int used = 0;
    for (int m = 0; m < k; ++m) {
      const int steps = (n - 1 - m) / k;
      if (steps < 1) continue;
      double lm = 0.0;
      for (int i = 1; i <= steps; ++i)
        lm += std::abs(x[m + i * k] - x[m + (i - 1) * k]);
      lm *= static_cast<double>(n - 1) / (static_cast<double>(steps) * k);
      total += lm / k;
      ++used;
    }
    if (used == 0) continue;
    const double lk = total / used;
    if (lk <= 0.0) continue;
    log_inv_k.push_back(std::log(1.0 / k));
    log_len.push_back(std::log(lk));
  }
  if (log_len.size() < 2) throw DegenerateSignal("higuchi_fd: no usable scales");
  return detail::fit_slope(log_inv_k, log_len);
}

// DFA: RMS of linearly detrended integrated profile over non-overlapping windows;
// the exponent is the log-log slope across scales.
inline double dfa_exponent(const std::vector<double>& x, const std::vector<int>& scales) {
  const int n = static_cast<int>(x.size());
  if (scales.empty()) throw ConfigInvalid("dfa_exponent: no scales");
  const int smax = *std::max_element(scales.begin(), scales.end());
  const int smin = *std::min_element(scales.begin(), scales.end());
  if (smin < 4) throw ConfigInvalid("dfa_exponent: scales must be >= 4");
  if (n < 4 * smax) throw TooShortSignal("dfa_exponent: need at least 4*max(scale) samples");

  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  std::vector<double> profile(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += x[i] - mean;
    profile[i] = acc;
  }

  std::vector<double> log_n, log_f;
  for (int s : scales) {
    const int windows = n / s;
    // Closed-form linear detrend per window over t = 0..s-1.
    const double st = s * (s - 1) / 2.0;
    const double stt = static_cast<double>(s - 1) * s * (2 * s - 1) / 6.0;
    const double det = s * stt - st * st;
    double ss = 0.0;
    for (int w = 0; w < windows; ++w) {
      const double* y = profile.data() + w * s;
      double sy = 0.0, sty = 0.0;
      for (int t = 0; t < s; ++t) {
        sy += y[t];
        sty += t * y[t];
      }
      const double a = (s * sty - st * sy) / det;
      const double b = (sy - a * st) / s;
      for (int t = 0; t < s; ++t) {
        const double r = y[t] - (a * t + b);
        ss += r * r;
      }
    }
    const double f = std::sqrt(ss / (static_cast<double>(windows) * s));
    if (f <= 0.0) continue;
    log_n.push_back(std::log(static_cast<double>(s)));
    log_f.push_back(std::log(f));
  }
  if (log_f.size() < 2)
    throw SingularFit("dfa_exponent: fluctuation vanished at all scales");
  return detail::fit_slope(log_n, log_f);
}

// Left-to-right parse; the terminal tail is counted only if it is itself novel.
// For an all-equal string this yields exactly one phrase.
inline int lz76_phrase_count(const std::string& s) {
  const int n = static_cast<int>(s.size());
  int count = 0, i = 0;
  while (i < n) {
    int l = 1;
    bool novel = true;
    while (i + l <= n &&
           s.substr(0, i + l - 1).find(s.substr(i, l)) != std::string::npos) {
      ++l;
      if (i + l > n) {
        novel = false;
        break;
      }
    }
    if (!novel) break;
    ++count;
    i += l;
  }
  return count;
}

inline std::string binarize_by_median(const std::vector<double>& x) {
  std::vector<double> sorted(x);
  std::sort(sorted.begin(), sorted.end());
  const int n = static_cast<int>(sorted.size());
  const double median = n % 2 == 1 ? sorted[n / 2]
                                   : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::string s(x.size(), '0');
  for (size_t i = 0; i < x.size(); ++i)
    if (x[i] > median) s[i] = '1';
  return s;
}

inline double lzc(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n < 2) throw TooShortSignal("lzc: need at least 2 samples");
  const int c = lz76_phrase_count(binarize_by_median(x));
  return c * std::log2(static_cast<double>(n)) / n;
}

// Ordinal-pattern entropy normalized by log(d!); ties break by position (stable).
inline double perm_entropy(const std::vector<double>& x, int order_d = 3, int delay = 1) {
  const int n = static_cast<int>(x.size());
  if (order_d < 2 || order_d > 8) throw ConfigInvalid("perm_entropy: order must be in [2,8]");
  if (delay < 1) throw ConfigInvalid("perm_entropy: delay must be >= 1");
  const int span = (order_d - 1) * delay;
  if (n < span + 2) throw TooShortSignal("perm_entropy: series too short for pattern span");

  const int windows = n - span;
  std::map<uint64_t, int> hist;
  std::vector<int> idx(order_d);
  for (int w = 0; w < windows; ++w) {
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return x[w + a * delay] < x[w + b * delay];
    });
    uint64_t code = 0;
    for (int j = 0; j < order_d; ++j) code = code * order_d + idx[j];
    ++hist[code];
  }

  double h = 0.0;
  for (const auto& [code, cnt] : hist) {
    (void)code;
    const double p = static_cast<double>(cnt) / windows;
    h -= p * std::log(p);
  }
  double dfact = 1.0;
  for (int j = 2; j <= order_d; ++j) dfact *= j;
  return h / std::log(dfact);
}

inline double band_power(const std::vector<double>& x, const BandSpec& band, double fs) {
  const auto filtered = butterworth_bandpass(x, band.low_hz, band.high_hz, fs, 4);
  double energy = 0.0;
  for (double v : filtered) energy += v * v;
  return std::log(std::max(energy, 1e-12));
}

// One row of the node-attribute matrix; degenerate features fall back to 0 with a flag.
inline void fill_feature_row(const std::vector<double>& ch, double fs,
                             const FeatureConfig& cfg, FeatureMatrix& out, int row) {
  auto guarded = [&](int col, auto&& fn) {
    try {
      out.values(row, col) = fn();
    } catch (const ZeroVariance&) {
      out.values(row, col) = 0.0;
      out.flags(row, col) = 1.0;
    } catch (const DegenerateSignal&) {
      out.values(row, col) = 0.0;
      out.flags(row, col) = 1.0;
    } catch (const SingularFit&) {
      out.values(row, col) = 0.0;
      out.flags(row, col) = 1.0;
    }
  };

  const int nt = static_cast<int>(ch.size());
  std::vector<int> scales;
  for (int s : cfg.dfa_scales)
    if (4 * s <= nt) scales.push_back(s);
  if (scales.empty()) scales.push_back(4);

  guarded(0, [&] { return variance(ch); });
  guarded(1, [&] { return line_length(ch); });
  guarded(2, [&] { return hjorth_mobility(ch, fs); });
  guarded(3, [&] { return hjorth_complexity(ch, fs); });
  guarded(4, [&] { return katz_fd(ch); });
  guarded(5, [&] { return higuchi_fd(ch, cfg.hfd_kmax); });
  guarded(6, [&] { return dfa_exponent(ch, scales); });
  guarded(7, [&] { return lzc(ch); });
  guarded(8, [&] { return perm_entropy(ch, cfg.pe_order, cfg.pe_delay); });
  for (int b = 0; b < 5; ++b)
    guarded(9 + b, [&] { return band_power(ch, cfg.bands[b], fs); });
}

inline FeatureMatrix extract_features(const Epoch& epoch, const FeatureConfig& cfg = {}) {
  FeatureMatrix out(epoch.data.rows);
  std::vector<double> ch(epoch.data.cols);
  for (int r = 0; r < epoch.data.rows; ++r) {
    for (int c = 0; c < epoch.data.cols; ++c) ch[c] = epoch.data(r, c);
    fill_feature_row(ch, epoch.sample_rate_hz, cfg, out, r);
  }
  if (!out.values.all_finite())
    throw NonFinite("extract_features: non-finite feature value");
  return out;
}

}  // namespace expanet
