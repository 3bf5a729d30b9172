#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "expanet/errors.hpp"
#include "expanet/explain.hpp"
#include "expanet/features.hpp"
#include "expanet/recording.hpp"
#include "expanet/trainer.hpp"

namespace expanet {

// Locale-independent fixed-point formatting for every emitted number.
inline std::string fmt_fixed(double v, int digits = 6) {
  if (!std::isfinite(v)) return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw IoFailure("cannot open for writing: " + p.string());
  return f;
}

// White -> blue ramp for [0,1] values.
inline std::string heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255.0 * (1.0 - 0.85 * v)));
  const int g = static_cast<int>(std::lround(255.0 * (1.0 - 0.55 * v)));
  return "rgb(" + std::to_string(r) + "," + std::to_string(g) + ",255)";
}

// Blue -> white -> red ramp for signed values scaled by limit.
inline std::string diverging_color(double v, double limit) {
  const double t = limit > 0.0 ? std::clamp(v / limit, -1.0, 1.0) : 0.0;
  int r = 255, g = 255, b = 255;
  if (t > 0) {
    g = static_cast<int>(std::lround(255.0 * (1.0 - 0.8 * t)));
    b = g;
  } else if (t < 0) {
    r = static_cast<int>(std::lround(255.0 * (1.0 + 0.8 * t)));
    g = r;
  }
  return "rgb(" + std::to_string(r) + "," + std::to_string(g) + "," +
         std::to_string(b) + ")";
}

}  // namespace detail

inline void write_metrics_csv(const MetricsTable& table,
                              const std::filesystem::path& path) {
  auto f = detail::open_out(path);
  f << "fold,accuracy,precision,recall,f1\n";
  for (size_t i = 0; i < table.folds.size(); ++i) {
    const MetricsRow& r = table.folds[i];
    f << i << "," << fmt_fixed(r.accuracy, 4) << "," << fmt_fixed(r.precision, 4)
      << "," << fmt_fixed(r.recall, 4) << "," << fmt_fixed(r.f1, 4) << "\n";
  }
  f << "mean," << fmt_fixed(table.mean.accuracy, 4) << ","
    << fmt_fixed(table.mean.precision, 4) << "," << fmt_fixed(table.mean.recall, 4)
    << "," << fmt_fixed(table.mean.f1, 4) << "\n";
  f << "std," << fmt_fixed(table.stdev.accuracy, 4) << ","
    << fmt_fixed(table.stdev.precision, 4) << "," << fmt_fixed(table.stdev.recall, 4)
    << "," << fmt_fixed(table.stdev.f1, 4) << "\n";
}

namespace detail {

inline void write_feature_ranking(const Matrix& m_f, const std::filesystem::path& path) {
  std::vector<int> order(kNumFeatures);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (m_f(0, a) != m_f(0, b)) return m_f(0, a) > m_f(0, b);
    return a < b;
  });
  auto f = open_out(path);
  f << "rank,feature,saliency\n";
  for (int r = 0; r < kNumFeatures; ++r)
    f << r + 1 << "," << feature_names()[order[r]] << ","
      << fmt_fixed(m_f(0, order[r])) << "\n";
}

inline void write_matrix_csv(const Matrix& m, const std::filesystem::path& path) {
  auto f = open_out(path);
  f << "channel";
  for (int j = 0; j < m.cols; ++j) f << "," << Montage::channels()[j];
  f << "\n";
  for (int i = 0; i < m.rows; ++i) {
    f << Montage::channels()[i];
    for (int j = 0; j < m.cols; ++j) f << "," << fmt_fixed(m(i, j));
    f << "\n";
  }
}

inline void write_heatmap_svg(const Matrix& m, const std::string& title, bool diverging,
                              const std::filesystem::path& path) {
  const int n = m.rows;
  const int cell = 24, margin = 64, legend = 40;
  const int size = margin + n * cell + legend;
  double limit = 0.0;
  for (double v : m.data) limit = std::max(limit, std::abs(v));
  auto f = open_out(path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\""
    << size << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  f << "<text x=\"" << margin << "\" y=\"16\" font-size=\"13\">" << title;
  if (diverging) f << " (scale ±" << fmt_fixed(limit, 4) << ")";
  f << "</text>\n";
  for (int i = 0; i < n; ++i) {
    f << "<text x=\"" << margin - 6 << "\" y=\"" << margin + i * cell + cell / 2 + 3
      << "\" text-anchor=\"end\">" << Montage::channels()[i] << "</text>\n";
    f << "<text x=\"" << margin + i * cell + cell / 2 << "\" y=\"" << margin - 6
      << "\" text-anchor=\"middle\" transform=\"rotate(-60 "
      << margin + i * cell + cell / 2 << " " << margin - 6 << ")\">"
      << Montage::channels()[i] << "</text>\n";
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const std::string color = diverging ? diverging_color(m(i, j), limit)
                                          : heat_color(m(i, j));
      f << "<rect x=\"" << margin + j * cell << "\" y=\"" << margin + i * cell
        << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"" << color
        << "\" stroke=\"#ccc\" stroke-width=\"0.5\"><title>"
        << Montage::channels()[i] << "-" << Montage::channels()[j] << ": "
        << fmt_fixed(m(i, j)) << "</title></rect>\n";
    }
  f << "</svg>\n";
}

inline void write_feature_bars_svg(const GroupSaliency* hc, const GroupSaliency* mdd,
                                   const std::filesystem::path& path) {
  const int bar_w = 16, gap = 14, margin_l = 50, margin_b = 70, h = 220;
  const int groups = (hc ? 1 : 0) + (mdd ? 1 : 0);
  const int step = groups * bar_w + gap;
  const int w = margin_l + kNumFeatures * step + 120;
  auto f = open_out(path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\""
    << h + margin_b << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  f << "<text x=\"" << margin_l << "\" y=\"16\" font-size=\"13\">"
    << "Mean feature mask per group</text>\n";
  f << "<line x1=\"" << margin_l << "\" y1=\"" << h << "\" x2=\"" << w - 100
    << "\" y2=\"" << h << "\" stroke=\"#333\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = tick / 4.0;
    const int y = h - static_cast<int>(v * (h - 40));
    f << "<text x=\"" << margin_l - 8 << "\" y=\"" << y + 3
      << "\" text-anchor=\"end\">" << fmt_fixed(v, 2) << "</text>\n";
  }
  for (int j = 0; j < kNumFeatures; ++j) {
    const int x0 = margin_l + j * step;
    int slot = 0;
    if (hc) {
      const int bh = static_cast<int>(hc->m_f(0, j) * (h - 40));
      f << "<rect x=\"" << x0 + slot * bar_w << "\" y=\"" << h - bh << "\" width=\""
        << bar_w - 2 << "\" height=\"" << bh << "\" fill=\"#4878cf\"/>\n";
      ++slot;
    }
    if (mdd) {
      const int bh = static_cast<int>(mdd->m_f(0, j) * (h - 40));
      f << "<rect x=\"" << x0 + slot * bar_w << "\" y=\"" << h - bh << "\" width=\""
        << bar_w - 2 << "\" height=\"" << bh << "\" fill=\"#d65f5f\"/>\n";
    }
    f << "<text x=\"" << x0 + groups * bar_w / 2 << "\" y=\"" << h + 12
      << "\" text-anchor=\"end\" transform=\"rotate(-50 " << x0 + groups * bar_w / 2
      << " " << h + 12 << ")\">" << feature_names()[j] << "</text>\n";
  }
  int ly = 40;
  if (hc) {
    f << "<rect x=\"" << w - 95 << "\" y=\"" << ly << "\" width=\"12\" height=\"12\""
      << " fill=\"#4878cf\"/><text x=\"" << w - 78 << "\" y=\"" << ly + 10
      << "\">HC</text>\n";
    ly += 18;
  }
  if (mdd)
    f << "<rect x=\"" << w - 95 << "\" y=\"" << ly << "\" width=\"12\" height=\"12\""
      << " fill=\"#d65f5f\"/><text x=\"" << w - 78 << "\" y=\"" << ly + 10
      << "\">MDD</text>\n";
  f << "</svg>\n";
}

}  // namespace detail

// Emit every group table plus SVG renderings. Groups with no graphs are omitted
// and the omission is stated in notes.txt.
inline void write_report(const SaliencyBundle& bundle, const MetricsTable& metrics,
                         const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoFailure("cannot create report dir: " + out_dir.string());

  const GroupSaliency* hc = bundle.hc.n_graphs > 0 ? &bundle.hc : nullptr;
  const GroupSaliency* mdd = bundle.mdd.n_graphs > 0 ? &bundle.mdd : nullptr;
  if (!hc && !mdd) throw EmptyGroup("write_report: no graphs in either group");

  if (!metrics.folds.empty()) write_metrics_csv(metrics, out_dir / "metrics.csv");

  if (hc) detail::write_feature_ranking(hc->m_f, out_dir / "feature_ranking_hc.csv");
  if (mdd) detail::write_feature_ranking(mdd->m_f, out_dir / "feature_ranking_mdd.csv");

  {
    auto f = detail::open_out(out_dir / "channel_saliency.csv");
    f << "channel";
    if (hc) f << ",hc";
    if (mdd) f << ",mdd";
    f << "\n";
    for (int i = 0; i < Montage::kNumChannels; ++i) {
      f << Montage::channels()[i];
      if (hc) f << "," << fmt_fixed(hc->m_v(i, 0));
      if (mdd) f << "," << fmt_fixed(mdd->m_v(i, 0));
      f << "\n";
    }
  }
  {
    auto f = detail::open_out(out_dir / "edge_saliency.csv");
    f << "channel_i,channel_j";
    if (hc) f << ",hc";
    if (mdd) f << ",mdd";
    f << "\n";
    for (int i = 0; i < Montage::kNumChannels; ++i)
      for (int j = i + 1; j < Montage::kNumChannels; ++j) {
        f << Montage::channels()[i] << "," << Montage::channels()[j];
        if (hc) f << "," << fmt_fixed(hc->m_e(i, j));
        if (mdd) f << "," << fmt_fixed(mdd->m_e(i, j));
        f << "\n";
      }
  }

  auto attn_name = [](int layer, const char* grp) {
    return "attention_layer" + std::to_string(layer + 1) + "_" + grp + ".csv";
  };
  if (hc)
    for (size_t l = 0; l < hc->attn_mean.size(); ++l)
      detail::write_matrix_csv(hc->attn_mean[l], out_dir / attn_name(static_cast<int>(l), "hc"));
  if (mdd)
    for (size_t l = 0; l < mdd->attn_mean.size(); ++l)
      detail::write_matrix_csv(mdd->attn_mean[l], out_dir / attn_name(static_cast<int>(l), "mdd"));
  for (size_t l = 0; l < bundle.attn_diff.size(); ++l)
    detail::write_matrix_csv(bundle.attn_diff[l],
                             out_dir / ("attention_diff_layer" + std::to_string(l + 1) + ".csv"));

  detail::write_feature_bars_svg(hc, mdd, out_dir / "feature_saliency.svg");
  if (hc)
    detail::write_heatmap_svg(hc->m_e, "Edge saliency, HC", false,
                              out_dir / "edge_saliency_hc.svg");
  if (mdd)
    detail::write_heatmap_svg(mdd->m_e, "Edge saliency, MDD", false,
                              out_dir / "edge_saliency_mdd.svg");
  for (size_t l = 0; l < bundle.attn_diff.size(); ++l)
    detail::write_heatmap_svg(bundle.attn_diff[l],
                              "Attention difference HC-MDD, layer " + std::to_string(l + 1),
                              true,
                              out_dir / ("attention_diff_layer" + std::to_string(l + 1) + ".svg"));

  {
    auto f = detail::open_out(out_dir / "notes.txt");
    f << "graphs: hc=" << bundle.hc.n_graphs << " mdd=" << bundle.mdd.n_graphs << "\n";
    f << "non-faithful masks: " << bundle.n_nonfaithful << "\n";
    if (!hc) f << "HC group empty: HC tables omitted from this report.\n";
    if (!mdd) f << "MDD group empty: MDD tables omitted from this report.\n";
  }
}

}  // namespace expanet
