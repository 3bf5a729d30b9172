#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numeric>
#include <string>
#include <vector>

#include "expanet/errors.hpp"
#include "expanet/fft.hpp"
#include "expanet/recording.hpp"

namespace expanet {

enum class BandName : int { delta = 0, theta, alpha, beta, gamma };

struct BandSpec {
  BandName name;
  double low_hz;
  double high_hz;
};

inline const char* band_label(BandName b) {
  switch (b) {
    case BandName::delta: return "delta";
    case BandName::theta: return "theta";
    case BandName::alpha: return "alpha";
    case BandName::beta: return "beta";
    case BandName::gamma: return "gamma";
  }
  return "?";
}

inline const std::array<BandSpec, 5>& canonical_bands() {
  static const std::array<BandSpec, 5> bands = {{{BandName::delta, 0.5, 4.0},
                                                 {BandName::theta, 4.0, 8.0},
                                                 {BandName::alpha, 8.0, 13.0},
                                                 {BandName::beta, 13.0, 22.0},
                                                 {BandName::gamma, 22.0, 30.0}}};
  return bands;
}

namespace detail {

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

}  // namespace detail

// Linear-phase bandpass kernel: difference of windowed sincs (Hamming), then the
// kernel mean is removed so DC is nulled exactly even when low_hz sits far inside
// the window's transition width.
inline std::vector<double> fir_bandpass_kernel(double low_hz, double high_hz,
                                               double fs, int n_taps) {
  if (!(low_hz > 0.0) || !(high_hz > low_hz) || !(high_hz < fs / 2.0))
    throw InvalidBand("fir_bandpass: need 0 < low < high < fs/2, got [" +
                      std::to_string(low_hz) + ", " + std::to_string(high_hz) +
                      "] at fs=" + std::to_string(fs));
  if (n_taps < 3 || n_taps % 2 == 0)
    throw InvalidBand("fir_bandpass: n_taps must be odd and >= 3, got " +
                      std::to_string(n_taps));

  const int mid = (n_taps - 1) / 2;
  std::vector<double> h(n_taps);
  const double fl = 2.0 * low_hz / fs;
  const double fh = 2.0 * high_hz / fs;
  for (int i = 0; i < n_taps; ++i) {
    const double t = i - mid;
    const double w = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (n_taps - 1));
    h[i] = w * (fh * detail::sinc(fh * t) - fl * detail::sinc(fl * t));
  }
  const double mean = std::accumulate(h.begin(), h.end(), 0.0) / n_taps;
  for (double& v : h) v -= mean;
  return h;
}

// Zero-phase FIR filtering: symmetric kernel, edge-replicated padding, same length out.
inline std::vector<double> fir_apply(const std::vector<double>& x,
                                     const std::vector<double>& h) {
  const int n = static_cast<int>(x.size());
  const int m = static_cast<int>(h.size());
  const int half = (m - 1) / 2;
  if (n == 0) throw TooShortSignal("fir_apply: empty signal");
  std::vector<double> y(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < m; ++k) {
      int j = i + k - half;
      if (j < 0) j = 0;
      if (j >= n) j = n - 1;
      acc += h[k] * x[j];
    }
    y[i] = acc;
  }
  return y;
}

inline int default_fir_taps(double fs) {
  int n = static_cast<int>(std::lround(fs));
  if (n % 2 == 0) ++n;
  return std::max(n, 3);
}

inline std::vector<double> fir_bandpass(const std::vector<double>& x, double low_hz,
                                        double high_hz, double fs, int n_taps = 0) {
  if (n_taps == 0) n_taps = default_fir_taps(fs);
  if (static_cast<int>(x.size()) < n_taps)
    throw TooShortSignal("fir_bandpass: signal shorter than kernel (" +
                         std::to_string(x.size()) + " < " + std::to_string(n_taps) + ")");
  return fir_apply(x, fir_bandpass_kernel(low_hz, high_hz, fs, n_taps));
}

// Second-order section, direct form II transposed. a0 is normalized to 1.
struct Biquad {
  double b0, b1, b2, a1, a2;
};

namespace detail {

// Steady-state DF2T state for unit constant input; scaled by the first sample
// before each pass so the step transient at the boundary is absorbed.
inline std::array<double, 2> biquad_step_state(const Biquad& s) {
  const double h1 = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
  const double z2 = s.b2 - s.a2 * h1;
  const double z1 = s.b1 + s.b2 - (s.a1 + s.a2) * h1;
  return {z1, z2};
}

inline void biquad_run(const Biquad& s, std::vector<double>& x, double x0_scale) {
  auto zi = biquad_step_state(s);
  double z1 = zi[0] * x0_scale;
  double z2 = zi[1] * x0_scale;
  for (double& v : x) {
    const double in = v;
    const double out = s.b0 * in + z1;
    z1 = s.b1 * in - s.a1 * out + z2;
    z2 = s.b2 * in - s.a2 * out;
    v = out;
  }
}

inline void sos_cascade(const std::vector<Biquad>& sos, std::vector<double>& x) {
  for (const Biquad& s : sos) {
    biquad_run(s, x, x.front());
  }
}

}  // namespace detail

// Forward-backward (zero phase) cascade with odd-symmetric edge extension.
inline std::vector<double> sos_filtfilt(const std::vector<Biquad>& sos,
                                        const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  const int want = 3 * (2 * static_cast<int>(sos.size()) + 1);
  const int pad = std::min(want, n - 1);
  if (n < 4) throw TooShortSignal("sos_filtfilt: need at least 4 samples");

  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (int i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (int i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  detail::sos_cascade(sos, ext);
  std::reverse(ext.begin(), ext.end());
  detail::sos_cascade(sos, ext);
  std::reverse(ext.begin(), ext.end());

  return std::vector<double>(ext.begin() + pad, ext.begin() + pad + n);
}

// RBJ cookbook notch biquad.
inline Biquad notch_biquad(double center_hz, double fs, double q) {
  if (!(center_hz > 0.0) || !(center_hz < fs / 2.0))
    throw InvalidCenter("notch: center must lie in (0, fs/2), got " +
                        std::to_string(center_hz) + " at fs=" + std::to_string(fs));
  if (!(q > 0.0)) throw InvalidCenter("notch: q must be positive");
  const double w0 = 2.0 * M_PI * center_hz / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double cw = std::cos(w0);
  const double a0 = 1.0 + alpha;
  return {1.0 / a0, -2.0 * cw / a0, 1.0 / a0, -2.0 * cw / a0, (1.0 - alpha) / a0};
}

inline std::vector<double> notch_filter(const std::vector<double>& x, double center_hz,
                                        double fs, double q = 30.0) {
  return sos_filtfilt({notch_biquad(center_hz, fs, q)}, x);
}

// Butterworth bandpass as cascaded biquads, designed in the analog domain and
// mapped with the bilinear transform (edges prewarped). `order` is the lowpass
// prototype order; the bandpass has 2*order poles, i.e. `order` sections.
inline std::vector<Biquad> butter_bandpass_sos(double low_hz, double high_hz,
                                               double fs, int order = 4) {
  if (!(low_hz > 0.0) || !(high_hz > low_hz) || !(high_hz < fs / 2.0))
    throw InvalidBand("butter_bandpass: need 0 < low < high < fs/2, got [" +
                      std::to_string(low_hz) + ", " + std::to_string(high_hz) +
                      "] at fs=" + std::to_string(fs));
  if (order < 1) throw InvalidBand("butter_bandpass: order must be >= 1");

  using cd = std::complex<double>;
  const double k2fs = 2.0 * fs;
  const double w1 = k2fs * std::tan(M_PI * low_hz / fs);
  const double w2 = k2fs * std::tan(M_PI * high_hz / fs);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  // Lowpass prototype poles on the unit circle, left half plane.
  std::vector<cd> proto(order);
  for (int k = 0; k < order; ++k) {
    const double theta = M_PI * (2.0 * k + 1.0) / (2.0 * order) + M_PI / 2.0;
    proto[k] = cd(std::cos(theta), std::sin(theta));
  }

  // Lowpass -> bandpass: each prototype pole p yields two analog poles.
  std::vector<cd> apoles;
  apoles.reserve(2 * order);
  for (const cd& p : proto) {
    const cd pb = p * (bw / 2.0);
    const cd disc = std::sqrt(pb * pb - cd(w0sq, 0.0));
    apoles.push_back(pb + disc);
    apoles.push_back(pb - disc);
  }

  // Bilinear transform; bandpass zeros land at z = +1 (order of them) and z = -1.
  std::vector<cd> dpoles;
  dpoles.reserve(apoles.size());
  for (const cd& p : apoles) {
    const cd zd = (cd(k2fs, 0.0) + p) / (cd(k2fs, 0.0) - p);
    if (std::abs(zd) >= 1.0)
      throw UnstableDesign("butter_bandpass: pole outside unit circle, |z|=" +
                           std::to_string(std::abs(zd)));
    dpoles.push_back(zd);
  }

  // Pair each upper-half-plane pole with its conjugate into one section.
  std::vector<cd> upper;
  for (const cd& p : dpoles)
    if (p.imag() > 0.0) upper.push_back(p);
  if (static_cast<int>(upper.size()) != order)
    throw UnstableDesign("butter_bandpass: expected " + std::to_string(order) +
                         " conjugate pole pairs, got " + std::to_string(upper.size()));
  std::sort(upper.begin(), upper.end(),
            [](const cd& a, const cd& b) { return std::abs(a) < std::abs(b); });

  std::vector<Biquad> sos;
  sos.reserve(order);
  for (const cd& p : upper) {
    // b = (z-1)(z+1) = [1, 0, -1]; gain folded in below.
    sos.push_back({1.0, 0.0, -1.0, -2.0 * p.real(), std::norm(p)});
  }

  // Normalize to unit gain at the geometric band center.
  const double wc = 2.0 * M_PI * std::sqrt(low_hz * high_hz) / fs;
  const cd z = std::polar(1.0, wc);
  cd resp(1.0, 0.0);
  for (const Biquad& s : sos) {
    resp *= (s.b0 * z * z + s.b1 * z + s.b2) / (z * z + s.a1 * z + s.a2);
  }
  const double g = 1.0 / std::abs(resp);
  const double gsec = std::pow(g, 1.0 / order);
  for (Biquad& s : sos) {
    s.b0 *= gsec;
    s.b1 *= gsec;
    s.b2 *= gsec;
  }
  return sos;
}

inline std::vector<double> butterworth_bandpass(const std::vector<double>& x,
                                                double low_hz, double high_hz,
                                                double fs, int order = 4) {
  return sos_filtfilt(butter_bandpass_sos(low_hz, high_hz, fs, order), x);
}

// Instantaneous phase of the analytic signal, computed over the full record in
// one spectral pass. Values lie in (-pi, pi].
inline std::vector<double> hilbert_phase(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n < 8) throw TooShortSignal("hilbert_phase: need at least 8 samples");

  std::vector<fft::cplx> spec = fft::forward_real(x);
  // Analytic signal multiplier: keep DC and Nyquist, double positive freqs, zero negatives.
  const int half = n / 2;
  for (int k = 1; k < (n + 1) / 2; ++k) spec[k] *= 2.0;
  for (int k = half + 1; k < n; ++k) spec[k] = 0.0;
  fft::transform(spec, true);

  std::vector<double> phase(n);
  for (int i = 0; i < n; ++i) phase[i] = std::atan2(spec[i].imag(), spec[i].real());
  return phase;
}

// Fixed-length segmentation with fractional overlap; trailing partial window dropped.
inline std::vector<Epoch> segment_epochs(const Recording& rec, double epoch_seconds = 5.0,
                                         double overlap = 0.5) {
  if (!(epoch_seconds > 0.0))
    throw ConfigInvalid("segment_epochs: epoch length must be positive");
  if (!(overlap >= 0.0) || !(overlap < 1.0))
    throw ConfigInvalid("segment_epochs: overlap must lie in [0, 1)");
  const int nt = static_cast<int>(std::lround(epoch_seconds * rec.sample_rate_hz));
  const int n = rec.data.cols;
  if (n < nt)
    throw TooShortSignal("segment_epochs: recording " + rec.subject_id + " has " +
                         std::to_string(n) + " samples, epoch needs " +
                         std::to_string(nt));
  const int hop = std::max(1, static_cast<int>(std::floor(nt * (1.0 - overlap))));
  const int count = (n - nt) / hop + 1;

  std::vector<Epoch> out;
  out.reserve(count);
  for (int e = 0; e < count; ++e) {
    const int start = e * hop;
    Epoch ep;
    ep.subject_id = rec.subject_id;
    ep.label = rec.label;
    ep.sample_rate_hz = rec.sample_rate_hz;
    ep.segment_index = e;
    ep.data = Matrix(rec.data.rows, nt);
    for (int r = 0; r < rec.data.rows; ++r)
      for (int c = 0; c < nt; ++c) ep.data(r, c) = rec.data(r, start + c);
    out.push_back(std::move(ep));
  }
  return out;
}

// Per-row standardization with population std; constant rows become all zeros.
inline Matrix zscore_rows(const Matrix& m) {
  Matrix out(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r) {
    double mean = 0.0;
    for (int c = 0; c < m.cols; ++c) mean += m(r, c);
    mean /= m.cols;
    double var = 0.0;
    for (int c = 0; c < m.cols; ++c) {
      const double d = m(r, c) - mean;
      var += d * d;
    }
    var /= m.cols;
    if (var <= 0.0) {
      for (int c = 0; c < m.cols; ++c) out(r, c) = 0.0;
      continue;
    }
    const double inv = 1.0 / std::sqrt(var);
    for (int c = 0; c < m.cols; ++c) out(r, c) = (m(r, c) - mean) * inv;
  }
  return out;
}

}  // namespace expanet
