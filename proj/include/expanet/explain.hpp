#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "expanet/autodiff.hpp"
#include "expanet/connectivity.hpp"
#include "expanet/eeg_io.hpp"
#include "expanet/errors.hpp"
#include "expanet/model.hpp"

namespace expanet {

struct ExplainConfig {
  double alpha = 0.005;  // edge L1
  double beta = 0.1;     // edge entropy
  double gamma = 0.005;  // feature L1
  double delta = 0.1;    // feature entropy
  double eta = 0.005;    // node L1
  double zeta = 0.1;     // node entropy
  int steps = 200;
  double lr = 0.01;
  bool directed_masks = true;
};

// Learned mask logits for one graph plus the optimization outcome. Directed mode
// keeps one entry per directed edge (aligned with GraphIndex order); undirected
// mode keeps one per undirected edge (aligned with BrainGraph::edges).
struct MaskSet {
  bool directed = true;
  Matrix m_e{0, 0};  // logits, [n_edge_entries x 1]
  Matrix m_v{0, 0};  // logits, [N x 1]
  Matrix m_f{0, 0};  // logits, [1 x F]
  int ref_label = 0;
  double ref_prob = 0.5;
  double masked_prob = 0.5;
  bool faithful = true;
  double mid_fraction = 0.0;  // fraction of pi_E inside (0.2, 0.8)

  static Matrix sigmoid_of(const Matrix& m) {
    Matrix out = m;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return out;
  }
  Matrix pi_e() const { return sigmoid_of(m_e); }
  Matrix pi_v() const { return sigmoid_of(m_v); }
  Matrix pi_f() const { return sigmoid_of(m_f); }
};

namespace detail {

// Map each directed edge slot to its undirected edge index in g.edges order.
inline std::vector<int> directed_to_undirected(const BrainGraph& g, const GraphIndex& gi) {
  std::map<std::pair<int, int>, int> pos;
  for (size_t k = 0; k < g.edges.size(); ++k)
    pos[{g.edges[k].i, g.edges[k].j}] = static_cast<int>(k);
  std::vector<int> map(gi.n_dir_edges());
  for (int k = 0; k < gi.n_dir_edges(); ++k) {
    const int i = std::min(gi.dst[k], gi.src[k]);
    const int j = std::max(gi.dst[k], gi.src[k]);
    map[k] = pos.at({i, j});
  }
  return map;
}

}  // namespace detail

// Differentiable masked inputs: X~ = pi_V * (X_std (.) pi_F), e~ = pi_E (.) e.
struct MaskedInputs {
  ad::Var x;
  ad::Var e;
  ad::Var pi_e, pi_v, pi_f;
};

inline MaskedInputs apply_masks_on_tape(ad::Tape& t, const Matrix& x_std,
                                        const BrainGraph& g, const GraphIndex& gi,
                                        ad::Var m_e, ad::Var m_v, ad::Var m_f,
                                        bool directed) {
  MaskedInputs mi;
  mi.pi_e = t.sigmoid(m_e);
  mi.pi_v = t.sigmoid(m_v);
  mi.pi_f = t.sigmoid(m_f);

  ad::Var x0 = t.input(x_std);
  mi.x = t.mul_colvec(t.broadcast_mul_row(x0, mi.pi_f), mi.pi_v);

  ad::Var e0 = t.input(gi.e);
  ad::Var pi_dir = mi.pi_e;
  if (!directed) pi_dir = t.gather_rows(mi.pi_e, detail::directed_to_undirected(g, gi));
  mi.e = t.mul(e0, pi_dir);
  return mi;
}

// Plain (tape-free) masked inputs for verification against the graph ops.
inline std::pair<Matrix, Matrix> apply_masks(const Matrix& x_std, const BrainGraph& g,
                                             const GraphIndex& gi, const MaskSet& masks) {
  const Matrix pe = masks.pi_e();
  const Matrix pv = masks.pi_v();
  const Matrix pf = masks.pi_f();
  if (pv.rows != x_std.rows || pf.cols != x_std.cols)
    throw ShapeMismatch("apply_masks: node/feature mask shape");
  Matrix x(x_std.rows, x_std.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) x(i, j) = pv(i, 0) * x_std(i, j) * pf(0, j);

  std::vector<int> und;
  if (!masks.directed) {
    und = detail::directed_to_undirected(g, gi);
    if (pe.rows != static_cast<int>(g.edges.size()))
      throw ShapeMismatch("apply_masks: undirected edge mask length");
  } else if (pe.rows != gi.n_dir_edges()) {
    throw ShapeMismatch("apply_masks: directed edge mask length");
  }
  Matrix e(gi.n_dir_edges(), 1);
  for (int k = 0; k < gi.n_dir_edges(); ++k) {
    const double p = masks.directed ? pe(k, 0) : pe(und[k], 0);
    e(k, 0) = p * gi.e(k, 0);
  }
  return {x, e};
}

// Bernoulli entropy mean over a mask's relaxed probabilities.
inline ad::Var mean_bernoulli_entropy(ad::Tape& t, ad::Var pi) {
  ad::Var one_minus = t.affine(pi, -1.0, 1.0);
  ad::Var ent = t.affine(t.add(t.mul(pi, t.log(pi)), t.mul(one_minus, t.log(one_minus))),
                         -1.0);
  return t.mean(ent);
}

inline ad::Var regularization_loss(ad::Tape& t, const MaskedInputs& mi,
                                   const ExplainConfig& cfg) {
  ad::Var reg = t.affine(t.sum(mi.pi_e), cfg.alpha);
  reg = t.add(reg, t.affine(mean_bernoulli_entropy(t, mi.pi_e), cfg.beta));
  reg = t.add(reg, t.affine(t.sum(mi.pi_f), cfg.gamma));
  reg = t.add(reg, t.affine(mean_bernoulli_entropy(t, mi.pi_f), cfg.delta));
  reg = t.add(reg, t.affine(t.sum(mi.pi_v), cfg.eta));
  reg = t.add(reg, t.affine(mean_bernoulli_entropy(t, mi.pi_v), cfg.zeta));
  return reg;
}

// GNNExplainer-style post-hoc mask optimization with frozen model parameters.
inline MaskSet optimize_masks(const ModelBundle& bundle, const BrainGraph& g,
                              const ExplainConfig& cfg) {
  const Matrix x_std = bundle.scaler.apply(g.x);
  const GraphIndex gi = make_index(g);

  MaskSet ms;
  ms.directed = cfg.directed_masks;
  const int n_edge_entries =
      cfg.directed_masks ? gi.n_dir_edges() : static_cast<int>(g.edges.size());
  ms.m_e = Matrix(n_edge_entries, 1);
  ms.m_v = Matrix(g.x.rows, 1);
  ms.m_f = Matrix(1, g.x.cols);

  {
    ad::Tape t;
    ParamVars pv = register_params(t, bundle.params, false);
    ad::Var logit = forward_logit(t, pv, t.input(x_std), t.input(gi.e), gi,
                                  bundle.params.cfg);
    ms.ref_prob = 1.0 / (1.0 + std::exp(-t.value(logit)(0, 0)));
    ms.ref_label = ms.ref_prob >= 0.5 ? 1 : 0;
  }

  ad::AdamState st_e, st_v, st_f;
  for (int step = 0; step < cfg.steps; ++step) {
    ad::Tape t;
    ParamVars pv = register_params(t, bundle.params, false);
    ad::Var me = t.input(ms.m_e, true);
    ad::Var mv = t.input(ms.m_v, true);
    ad::Var mf = t.input(ms.m_f, true);
    MaskedInputs mi = apply_masks_on_tape(t, x_std, g, gi, me, mv, mf, ms.directed);
    ad::Var logit = forward_logit(t, pv, mi.x, mi.e, gi, bundle.params.cfg);
    ad::Var loss = t.add(t.bce_with_logit(logit, static_cast<double>(ms.ref_label)),
                         regularization_loss(t, mi, cfg));
    if (!std::isfinite(t.value(loss)(0, 0)))
      throw DivergedLoss("optimize_masks: loss is not finite at step " +
                         std::to_string(step));
    t.backward(loss);
    ad::adam_step(ms.m_e, t.grad(me), st_e, cfg.lr);
    ad::adam_step(ms.m_v, t.grad(mv), st_v, cfg.lr);
    ad::adam_step(ms.m_f, t.grad(mf), st_f, cfg.lr);
  }

  {
    ad::Tape t;
    ParamVars pv = register_params(t, bundle.params, false);
    ad::Var me = t.input(ms.m_e);
    ad::Var mv = t.input(ms.m_v);
    ad::Var mf = t.input(ms.m_f);
    MaskedInputs mi = apply_masks_on_tape(t, x_std, g, gi, me, mv, mf, ms.directed);
    ad::Var logit = forward_logit(t, pv, mi.x, mi.e, gi, bundle.params.cfg);
    ms.masked_prob = 1.0 / (1.0 + std::exp(-t.value(logit)(0, 0)));
  }
  ms.faithful = (ms.masked_prob >= 0.5 ? 1 : 0) == ms.ref_label;

  const Matrix pe = ms.pi_e();
  int mid = 0;
  for (double v : pe.data)
    if (v > 0.2 && v < 0.8) ++mid;
  ms.mid_fraction = pe.data.empty() ? 0.0 : static_cast<double>(mid) / pe.data.size();
  return ms;
}

struct GroupSaliency {
  int n_graphs = 0;
  Matrix m_f{1, kNumFeatures};            // mean feature mask
  Matrix m_v{Montage::kNumChannels, 1};   // mean node mask
  Matrix m_e{Montage::kNumChannels, Montage::kNumChannels};  // mean pairwise max
  std::vector<Matrix> attn_mean;          // per layer, [N x N]
};

struct SaliencyBundle {
  GroupSaliency hc, mdd;
  std::vector<Matrix> attn_diff;  // per layer, HC - MDD
  int n_nonfaithful = 0;
};

// Per-graph symmetric edge saliency; directed entries resolve by max(i->j, j->i).
inline Matrix edge_saliency_matrix(const BrainGraph& g, const GraphIndex& gi,
                                   const MaskSet& ms) {
  const int n = g.x.rows;
  Matrix out(n, n);
  const Matrix pe = ms.pi_e();
  if (ms.directed) {
    for (int k = 0; k < gi.n_dir_edges(); ++k) {
      const int i = std::min(gi.dst[k], gi.src[k]);
      const int j = std::max(gi.dst[k], gi.src[k]);
      out(i, j) = std::max(out(i, j), pe(k, 0));
    }
  } else {
    for (size_t k = 0; k < g.edges.size(); ++k)
      out(g.edges[k].i, g.edges[k].j) = pe(static_cast<int>(k), 0);
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) out(j, i) = out(i, j);
  return out;
}

// Attention map of one graph under one model: entry (i, j) holds the layer's
// alpha for message j -> i; rows over realized neighborhoods sum to 1.
inline std::vector<Matrix> attention_maps(const BrainGraph& g, const ModelBundle& b) {
  const GraphIndex gi = make_index(g);
  ForwardTrace trace;
  model_forward(g, b.scaler.apply(g.x), b.params, &trace);
  std::vector<Matrix> maps;
  for (const Matrix& alpha : trace.alpha) {
    Matrix m(g.x.rows, g.x.rows);
    for (int k = 0; k < gi.n_dir_edges(); ++k) m(gi.dst[k], gi.src[k]) = alpha(k, 0);
    maps.push_back(std::move(m));
  }
  return maps;
}

// Group-level aggregation of masks and attention. models[i] is the bundle used
// to explain graphs[i] (its fold's held-out model).
inline SaliencyBundle aggregate_saliency(const std::vector<BrainGraph>& graphs,
                                         const std::vector<MaskSet>& masks,
                                         const std::vector<const ModelBundle*>& models) {
  if (graphs.size() != masks.size() || graphs.size() != models.size())
    throw LengthMismatch("aggregate_saliency: per-graph lists differ in length");
  if (graphs.empty()) throw EmptyGroup("aggregate_saliency: no graphs");

  SaliencyBundle out;
  const int n_layers = models[0]->params.cfg.n_layers();
  out.hc.attn_mean.assign(n_layers, Matrix(Montage::kNumChannels, Montage::kNumChannels));
  out.mdd.attn_mean = out.hc.attn_mean;

  for (size_t i = 0; i < graphs.size(); ++i) {
    const BrainGraph& g = graphs[i];
    GroupSaliency& grp = g.label == Label::HC ? out.hc : out.mdd;
    const GraphIndex gi = make_index(g);

    const Matrix pf = masks[i].pi_f();
    const Matrix pv = masks[i].pi_v();
    for (int j = 0; j < grp.m_f.cols; ++j) grp.m_f(0, j) += pf(0, j);
    for (int r = 0; r < grp.m_v.rows; ++r) grp.m_v(r, 0) += pv(r, 0);
    const Matrix es = edge_saliency_matrix(g, gi, masks[i]);
    for (size_t k = 0; k < es.data.size(); ++k) grp.m_e.data[k] += es.data[k];

    const auto maps = attention_maps(g, *models[i]);
    for (int l = 0; l < n_layers; ++l)
      for (size_t k = 0; k < maps[l].data.size(); ++k)
        grp.attn_mean[l].data[k] += maps[l].data[k];

    if (!masks[i].faithful) ++out.n_nonfaithful;
    ++grp.n_graphs;
  }

  for (GroupSaliency* grp : {&out.hc, &out.mdd}) {
    if (grp->n_graphs == 0) continue;
    const double inv = 1.0 / grp->n_graphs;
    for (double& v : grp->m_f.data) v *= inv;
    for (double& v : grp->m_v.data) v *= inv;
    for (double& v : grp->m_e.data) v *= inv;
    for (Matrix& m : grp->attn_mean)
      for (double& v : m.data) v *= inv;
  }

  if (out.hc.n_graphs > 0 && out.mdd.n_graphs > 0) {
    for (int l = 0; l < n_layers; ++l) {
      Matrix d = out.hc.attn_mean[l];
      for (size_t k = 0; k < d.data.size(); ++k) d.data[k] -= out.mdd.attn_mean[l].data[k];
      out.attn_diff.push_back(std::move(d));
    }
  }
  return out;
}

inline Matrix attention_difference(const Matrix& mean_hc, const Matrix& mean_mdd) {
  if (!mean_hc.same_shape(mean_mdd))
    throw ShapeMismatch("attention_difference: shape mismatch");
  Matrix d = mean_hc;
  for (size_t k = 0; k < d.data.size(); ++k) d.data[k] -= mean_mdd.data[k];
  return d;
}

}  // namespace expanet
