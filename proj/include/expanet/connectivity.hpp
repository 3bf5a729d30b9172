#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <utility>
#include <vector>

#include "expanet/dsp.hpp"
#include "expanet/errors.hpp"
#include "expanet/features.hpp"
#include "expanet/matrix.hpp"
#include "expanet/recording.hpp"

namespace expanet {

struct Edge {
  int i;  // smaller channel index
  int j;  // larger channel index
  double plv;
};

// One epoch turned into model input: node attributes, sparsified PLV adjacency,
// undirected edge list sorted by (i, j).
struct BrainGraph {
  Matrix x;          // [n_nodes x kNumFeatures]
  Matrix adjacency;  // [n_nodes x n_nodes], symmetric, zero diagonal
  std::vector<Edge> edges;
  Label label = Label::HC;
  std::string subject_id;
  int segment_index = 0;
};

inline double plv_pair(const std::vector<double>& phase_i,
                       const std::vector<double>& phase_j) {
  if (phase_i.size() != phase_j.size())
    throw LengthMismatch("plv_pair: series lengths differ (" +
                         std::to_string(phase_i.size()) + " vs " +
                         std::to_string(phase_j.size()) + ")");
  const int n = static_cast<int>(phase_i.size());
  if (n < 8) throw TooShortSignal("plv_pair: need at least 8 samples");
  double re = 0.0, im = 0.0;
  for (int t = 0; t < n; ++t) {
    const double d = phase_i[t] - phase_j[t];
    re += std::cos(d);
    im += std::sin(d);
  }
  re /= n;
  im /= n;
  const double v = std::sqrt(re * re + im * im);
  return std::clamp(v, 0.0, 1.0);
}

inline Matrix plv_matrix(const Epoch& epoch) {
  const int nch = epoch.data.rows;
  std::vector<std::vector<double>> phases(nch);
  std::vector<double> ch(epoch.data.cols);
  for (int r = 0; r < nch; ++r) {
    for (int c = 0; c < epoch.data.cols; ++c) ch[c] = epoch.data(r, c);
    phases[r] = hilbert_phase(ch);
  }
  Matrix a(nch, nch);
  for (int i = 0; i < nch; ++i)
    for (int j = i + 1; j < nch; ++j) {
      const double v = plv_pair(phases[i], phases[j]);
      a(i, j) = v;
      a(j, i) = v;
    }
  return a;
}

// Union top-k: an undirected edge survives if either endpoint ranks the other
// among its k strongest neighbors. Equal weights resolve toward smaller index.
inline std::vector<Edge> topk_sparsify(const Matrix& a, int k) {
  const int n = a.rows;
  if (a.cols != n) throw ShapeMismatch("topk_sparsify: adjacency must be square");
  if (k < 1 || k > n - 1)
    throw InvalidK("topk_sparsify: k must lie in [1, " + std::to_string(n - 1) +
                   "], got " + std::to_string(k));

  std::vector<std::vector<bool>> selected(n, std::vector<bool>(n, false));
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) {
    order.clear();
    for (int j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::sort(order.begin(), order.end(), [&](int p, int q) {
      if (a(i, p) != a(i, q)) return a(i, p) > a(i, q);
      return p < q;
    });
    for (int r = 0; r < k; ++r) selected[i][order[r]] = true;
  }

  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (selected[i][j] || selected[j][i]) edges.push_back({i, j, a(i, j)});
  return edges;
}

inline BrainGraph build_graph(const Epoch& epoch, const FeatureConfig& cfg, int k) {
  BrainGraph g;
  g.label = epoch.label;
  g.subject_id = epoch.subject_id;
  g.segment_index = epoch.segment_index;
  g.x = extract_features(epoch, cfg).values;

  const Matrix plv = plv_matrix(epoch);
  const int n = plv.rows;
  auto edges = topk_sparsify(plv, k);

  // Zero-weight selections carry no message; dropping them can orphan a node.
  std::vector<int> degree(n, 0);
  g.edges.clear();
  for (const Edge& e : edges) {
    if (e.plv <= 0.0) continue;
    g.edges.push_back(e);
    ++degree[e.i];
    ++degree[e.j];
  }
  for (int i = 0; i < n; ++i)
    if (degree[i] == 0)
      throw IsolatedNode("build_graph: node " + std::to_string(i) +
                         " lost every edge during sparsification");

  g.adjacency = Matrix(n, n);
  for (const Edge& e : g.edges) {
    g.adjacency(e.i, e.j) = e.plv;
    g.adjacency(e.j, e.i) = e.plv;
  }
  return g;
}

}  // namespace expanet
