#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "expanet/autodiff.hpp"
#include "expanet/connectivity.hpp"
#include "expanet/errors.hpp"
#include "expanet/matrix.hpp"

namespace expanet {

struct ModelConfig {
  int input_dim = kNumFeatures;
  std::vector<int> hidden = {64, 64};
  int gate_hidden = 8;
  std::vector<int> head = {64, 16};
  double leaky_slope = 0.2;
  double ln_eps = 1e-5;
  double dropout = 0.2;

  int n_layers() const { return static_cast<int>(hidden.size()); }
  int out_dim() const { return hidden.back(); }
  void validate() const {
    if (hidden.empty()) throw ConfigInvalid("model: need at least one layer");
    if (input_dim < 1 || gate_hidden < 1) throw ConfigInvalid("model: bad dims");
    for (int d : hidden)
      if (d < 1) throw ConfigInvalid("model: bad hidden dim");
    if (head.size() != 2) throw ConfigInvalid("model: head needs two hidden widths");
  }
};

struct LayerParams {
  Matrix w{0, 0};         // [d x d_prev]
  Matrix attn{0, 0};      // [2d+1 x 1], layout [a_i | a_j | a_e]
  Matrix gate_w1{0, 0};   // [h x 1]
  Matrix gate_w2{0, 0};   // [1 x h]
  Matrix ln_gamma{0, 0};  // [1 x d]
  Matrix ln_beta{0, 0};   // [1 x d]
  Matrix mix_w1{0, 0};    // [2d x d]
  Matrix mix_w2{0, 0};    // [d x 2d]
  Matrix vn_w{0, 0};      // [d x d]
  Matrix vn_b{0, 0};      // [1 x d]
};

struct HeadParams {
  Matrix w1{0, 0}, b1{0, 0};  // [h1 x 3d] , [1 x h1]
  Matrix w2{0, 0}, b2{0, 0};  // [h2 x h1], [1 x h2]
  Matrix w3{0, 0}, b3{0, 0};  // [1 x h2],  [1 x 1]
};

struct ModelParams {
  ModelConfig cfg;
  std::vector<LayerParams> layers;
  HeadParams head;

  static ModelParams init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.cfg = cfg;
    int d_prev = cfg.input_dim;
    for (int l = 0; l < cfg.n_layers(); ++l) {
      const int d = cfg.hidden[l];
      LayerParams lp;
      lp.w = glorot_uniform(d, d_prev, rng);
      lp.attn = glorot_uniform(2 * d + 1, 1, rng);
      lp.gate_w1 = glorot_uniform(cfg.gate_hidden, 1, rng);
      lp.gate_w2 = glorot_uniform(1, cfg.gate_hidden, rng);
      lp.ln_gamma = Matrix(1, d, 1.0);
      lp.ln_beta = Matrix(1, d, 0.0);
      lp.mix_w1 = glorot_uniform(2 * d, d, rng);
      lp.mix_w2 = glorot_uniform(d, 2 * d, rng);
      lp.vn_w = glorot_uniform(d, d, rng);
      lp.vn_b = Matrix(1, d, 0.0);
      p.layers.push_back(std::move(lp));
      d_prev = d;
    }
    const int dl = cfg.out_dim();
    p.head.w1 = glorot_uniform(cfg.head[0], 3 * dl, rng);
    p.head.b1 = Matrix(1, cfg.head[0], 0.0);
    p.head.w2 = glorot_uniform(cfg.head[1], cfg.head[0], rng);
    p.head.b2 = Matrix(1, cfg.head[1], 0.0);
    p.head.w3 = glorot_uniform(1, cfg.head[1], rng);
    p.head.b3 = Matrix(1, 1, 0.0);
    return p;
  }
};

// Canonical parameter order used by the optimizer and by serialization.
inline void for_each_param(ModelParams& p,
                           const std::function<void(const std::string&, Matrix&)>& fn) {
  for (size_t l = 0; l < p.layers.size(); ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    LayerParams& lp = p.layers[l];
    fn(pre + "w", lp.w);
    fn(pre + "attn", lp.attn);
    fn(pre + "gate_w1", lp.gate_w1);
    fn(pre + "gate_w2", lp.gate_w2);
    fn(pre + "ln_gamma", lp.ln_gamma);
    fn(pre + "ln_beta", lp.ln_beta);
    fn(pre + "mix_w1", lp.mix_w1);
    fn(pre + "mix_w2", lp.mix_w2);
    fn(pre + "vn_w", lp.vn_w);
    fn(pre + "vn_b", lp.vn_b);
  }
  fn("head.w1", p.head.w1);
  fn("head.b1", p.head.b1);
  fn("head.w2", p.head.w2);
  fn("head.b2", p.head.b2);
  fn("head.w3", p.head.w3);
  fn("head.b3", p.head.b3);
}

inline void for_each_param(const ModelParams& p,
                           const std::function<void(const std::string&, const Matrix&)>& fn) {
  for_each_param(const_cast<ModelParams&>(p),
                 [&](const std::string& n, Matrix& m) { fn(n, m); });
}

// Directed expansion of the undirected edge list: two entries per edge, sorted
// by (dst, src) so destinations form contiguous softmax segments.
struct GraphIndex {
  int n_nodes = 0;
  std::vector<int> dst, src;
  Matrix e{0, 0};  // [2E x 1] PLV per directed edge

  int n_dir_edges() const { return static_cast<int>(dst.size()); }
};

inline GraphIndex make_index(const BrainGraph& g) {
  GraphIndex gi;
  gi.n_nodes = g.x.rows;
  std::vector<std::pair<std::pair<int, int>, double>> dir;
  dir.reserve(2 * g.edges.size());
  for (const Edge& e : g.edges) {
    dir.push_back({{e.i, e.j}, e.plv});
    dir.push_back({{e.j, e.i}, e.plv});
  }
  std::sort(dir.begin(), dir.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  gi.e = Matrix(static_cast<int>(dir.size()), 1);
  for (size_t k = 0; k < dir.size(); ++k) {
    gi.dst.push_back(dir[k].first.first);
    gi.src.push_back(dir[k].first.second);
    gi.e(static_cast<int>(k), 0) = dir[k].second;
  }
  std::vector<bool> seen(gi.n_nodes, false);
  for (int d : gi.dst) seen[d] = true;
  for (int i = 0; i < gi.n_nodes; ++i)
    if (!seen[i])
      throw IsolatedNode("make_index: node " + std::to_string(i) + " has no neighbors");
  return gi;
}

struct LayerVars {
  ad::Var w, attn, gate_w1, gate_w2, ln_gamma, ln_beta, mix_w1, mix_w2, vn_w, vn_b;
};

struct ParamVars {
  std::vector<LayerVars> layers;
  ad::Var head_w1, head_b1, head_w2, head_b2, head_w3, head_b3;
};

inline ParamVars register_params(ad::Tape& t, const ModelParams& p, bool requires_grad) {
  ParamVars pv;
  for (const LayerParams& lp : p.layers) {
    LayerVars lv;
    lv.w = t.input(lp.w, requires_grad);
    lv.attn = t.input(lp.attn, requires_grad);
    lv.gate_w1 = t.input(lp.gate_w1, requires_grad);
    lv.gate_w2 = t.input(lp.gate_w2, requires_grad);
    lv.ln_gamma = t.input(lp.ln_gamma, requires_grad);
    lv.ln_beta = t.input(lp.ln_beta, requires_grad);
    lv.mix_w1 = t.input(lp.mix_w1, requires_grad);
    lv.mix_w2 = t.input(lp.mix_w2, requires_grad);
    lv.vn_w = t.input(lp.vn_w, requires_grad);
    lv.vn_b = t.input(lp.vn_b, requires_grad);
    pv.layers.push_back(lv);
  }
  pv.head_w1 = t.input(p.head.w1, requires_grad);
  pv.head_b1 = t.input(p.head.b1, requires_grad);
  pv.head_w2 = t.input(p.head.w2, requires_grad);
  pv.head_b2 = t.input(p.head.b2, requires_grad);
  pv.head_w3 = t.input(p.head.w3, requires_grad);
  pv.head_b3 = t.input(p.head.b3, requires_grad);
  return pv;
}

// Gradients of all parameters after backward, in canonical order.
inline std::vector<Matrix> collect_param_grads(ad::Tape& t, const ParamVars& pv) {
  std::vector<Matrix> out;
  for (const LayerVars& lv : pv.layers) {
    out.push_back(t.grad(lv.w));
    out.push_back(t.grad(lv.attn));
    out.push_back(t.grad(lv.gate_w1));
    out.push_back(t.grad(lv.gate_w2));
    out.push_back(t.grad(lv.ln_gamma));
    out.push_back(t.grad(lv.ln_beta));
    out.push_back(t.grad(lv.mix_w1));
    out.push_back(t.grad(lv.mix_w2));
    out.push_back(t.grad(lv.vn_w));
    out.push_back(t.grad(lv.vn_b));
  }
  out.push_back(t.grad(pv.head_w1));
  out.push_back(t.grad(pv.head_b1));
  out.push_back(t.grad(pv.head_w2));
  out.push_back(t.grad(pv.head_b2));
  out.push_back(t.grad(pv.head_w3));
  out.push_back(t.grad(pv.head_b3));
  return out;
}

struct ForwardTrace {
  std::vector<Matrix> alpha;  // per layer, [2E x 1]
  std::vector<Matrix> gate;   // per layer, [2E x 1]
  std::vector<Matrix> h;      // per layer, [N x d]
  Matrix g_mean{0, 0}, g_add{0, 0}, g_v{0, 0};
  double logit = 0.0;
  double prob = 0.5;
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout > 0
  bool record_trace = false;
};

// Shared forward pass. `x` is the [N x F] node-feature var (already standardized
// and/or masked by the caller), `e` the [2E x 1] directed edge-feature var.
inline ad::Var forward_logit(ad::Tape& t, const ParamVars& pv, ad::Var x, ad::Var e,
                             const GraphIndex& gi, const ModelConfig& cfg,
                             const ForwardOptions& opt = {}, ForwardTrace* trace = nullptr) {
  const int n = gi.n_nodes;
  ad::Var h = x;
  ad::Var v_prime;  // virtual-node state of the innermost completed layer

  for (int l = 0; l < cfg.n_layers(); ++l) {
    const LayerVars& lv = pv.layers[l];
    const int d = cfg.hidden[l];

    ad::Var p = t.matmul_nt(h, lv.w);            // [N x d]
    ad::Var p_dst = t.gather_rows(p, gi.dst);    // [2E x d]
    ad::Var p_src = t.gather_rows(p, gi.src);

    std::vector<int> ai(d), aj(d);
    for (int k = 0; k < d; ++k) {
      ai[k] = k;
      aj[k] = d + k;
    }
    ad::Var a_i = t.gather_rows(lv.attn, ai);            // [d x 1]
    ad::Var a_j = t.gather_rows(lv.attn, aj);
    ad::Var a_e = t.gather_rows(lv.attn, {2 * d});       // [1 x 1]

    ad::Var score = t.add(t.add(t.matmul(p_dst, a_i), t.matmul(p_src, a_j)),
                          t.matmul(e, a_e));
    score = t.leaky_relu(score, cfg.leaky_slope);
    ad::Var alpha = t.segment_softmax(score, gi.dst);

    ad::Var gate_in = t.leaky_relu(t.matmul_nt(e, lv.gate_w1), cfg.leaky_slope);
    ad::Var gate = t.sigmoid(t.matmul_nt(gate_in, lv.gate_w2));  // [2E x 1]

    ad::Var coeff = t.mul(alpha, gate);
    ad::Var agg = t.segment_sum(t.mul_colvec(p_src, coeff), gi.dst, n);
    ad::Var h_att = t.elu(agg);

    ad::Var ln = t.layer_norm(h_att, cfg.ln_eps);
    ln = t.broadcast_add_row(t.broadcast_mul_row(ln, lv.ln_gamma), lv.ln_beta);
    ad::Var mix = t.matmul_nt(t.silu(t.matmul_nt(ln, lv.mix_w1)), lv.mix_w2);
    ad::Var z = t.add(h_att, mix);

    ad::Var v = t.mean_rows(z);                                   // [1 x d]
    v_prime = t.silu(t.add(t.matmul_nt(v, lv.vn_w), lv.vn_b));    // [1 x d]
    h = t.broadcast_add_row(z, v_prime);

    if (trace) {
      trace->alpha.push_back(t.value(alpha));
      trace->gate.push_back(t.value(gate));
      trace->h.push_back(t.value(h));
    }

    if (opt.training && cfg.dropout > 0.0 && l + 1 < cfg.n_layers()) {
      if (!opt.rng) throw ConfigInvalid("forward: dropout requires an RNG");
      const double keep = 1.0 - cfg.dropout;
      Matrix mask(n, d);
      std::bernoulli_distribution coin(keep);
      for (double& m : mask.data) m = coin(*opt.rng) ? 1.0 / keep : 0.0;
      h = t.mul(h, t.input(std::move(mask)));
    }
  }

  ad::Var g_mean = t.mean_rows(h);
  ad::Var g_add = t.sum_rows(h);
  ad::Var pooled = t.concat_cols({g_mean, g_add, v_prime});

  ad::Var u1 = t.relu(t.broadcast_add_row(t.matmul_nt(pooled, pv.head_w1), pv.head_b1));
  ad::Var u2 = t.relu(t.broadcast_add_row(t.matmul_nt(u1, pv.head_w2), pv.head_b2));
  ad::Var logit = t.add(t.matmul_nt(u2, pv.head_w3), pv.head_b3);

  if (trace) {
    trace->g_mean = t.value(g_mean);
    trace->g_add = t.value(g_add);
    trace->g_v = t.value(v_prime);
    trace->logit = t.value(logit)(0, 0);
    trace->prob = 1.0 / (1.0 + std::exp(-trace->logit));
  }
  return logit;
}

// Inference convenience on raw (already standardized) node features.
inline double model_forward(const BrainGraph& g, const Matrix& x_std,
                            const ModelParams& params, ForwardTrace* trace = nullptr) {
  if (x_std.rows != g.x.rows || x_std.cols != params.cfg.input_dim)
    throw ShapeMismatch("model_forward: bad feature matrix shape");
  GraphIndex gi = make_index(g);
  ad::Tape t;
  ParamVars pv = register_params(t, params, false);
  ForwardOptions opt;
  opt.record_trace = trace != nullptr;
  ad::Var logit = forward_logit(t, pv, t.input(x_std), t.input(gi.e), gi, params.cfg,
                                opt, trace);
  const double z = t.value(logit)(0, 0);
  return 1.0 / (1.0 + std::exp(-z));
}

// Scalar edge gate, mirroring the in-graph computation.
inline double edge_gate_scalar(double e_ij, const LayerParams& lp, double slope = 0.2) {
  double acc = 0.0;
  for (int k = 0; k < lp.gate_w1.rows; ++k) {
    const double inner = lp.gate_w1(k, 0) * e_ij;
    const double act = inner > 0.0 ? inner : slope * inner;
    acc += lp.gate_w2(0, k) * act;
  }
  return 1.0 / (1.0 + std::exp(-acc));
}

// Stable scalar BCE on a logit.
inline double bce_scalar(double logit, double target) {
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

}  // namespace expanet
