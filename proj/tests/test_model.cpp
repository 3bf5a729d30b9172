#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "expanet/model.hpp"
#include "oracle_utils.hpp"

using namespace expanet;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double lo = -1.0,
                     double hi = 1.0) {
  Matrix m(rows, cols);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : m.data) v = u(rng);
  return m;
}

// Connected random graph: a ring plus extra chords, PLV away from zero.
BrainGraph random_graph(std::mt19937_64& rng, int n, int extra_edges,
                        int feature_cols) {
  BrainGraph g;
  g.x = random_matrix(rng, n, feature_cols);
  std::set<std::pair<int, int>> used;
  std::uniform_real_distribution<double> up(0.3, 0.95);
  for (int i = 0; i < n; ++i) {
    int j = (i + 1) % n;
    std::pair<int, int> key = std::minmax(i, j);
    if (used.insert(key).second)
      g.edges.push_back({key.first, key.second, up(rng)});
  }
  std::uniform_int_distribution<int> un(0, n - 1);
  while (static_cast<int>(g.edges.size()) < n + extra_edges) {
    int i = un(rng), j = un(rng);
    if (i == j) continue;
    std::pair<int, int> key = std::minmax(i, j);
    if (used.insert(key).second)
      g.edges.push_back({key.first, key.second, up(rng)});
  }
  return g;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double silu(double z) { return z * sigmoid(z); }
double elu(double z) { return z > 0.0 ? z : std::expm1(z); }
double relu(double z) { return z > 0.0 ? z : 0.0; }
double leaky(double z, double s) { return z > 0.0 ? z : s * z; }

Matrix matmul_nt_o(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, b.rows);
  for (int r = 0; r < a.rows; ++r)
    for (int c = 0; c < b.rows; ++c) {
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += a(r, k) * b(c, k);
      out(r, c) = acc;
    }
  return out;
}

struct OracleTrace {
  std::vector<Matrix> alpha, gate, h;
  Matrix g_mean{0, 0}, g_add{0, 0}, g_v{0, 0};
  double logit = 0.0, prob = 0.5;
};

// Plain-loop re-derivation of the whole forward pass.
OracleTrace oracle_forward(const BrainGraph& g, const Matrix& x,
                           const ModelParams& p) {
  const GraphIndex gi = make_index(g);
  const int n = gi.n_nodes;
  const int m = gi.n_dir_edges();
  OracleTrace tr;
  Matrix h = x;
  Matrix v_prime(1, 1);

  for (int l = 0; l < p.cfg.n_layers(); ++l) {
    const LayerParams& lp = p.layers[l];
    const int d = p.cfg.hidden[l];
    const Matrix pm = matmul_nt_o(h, lp.w);

    Matrix score(m, 1);
    for (int k = 0; k < m; ++k) {
      double s = gi.e(k, 0) * lp.attn(2 * d, 0);
      for (int c = 0; c < d; ++c) {
        s += pm(gi.dst[k], c) * lp.attn(c, 0);
        s += pm(gi.src[k], c) * lp.attn(d + c, 0);
      }
      score(k, 0) = leaky(s, p.cfg.leaky_slope);
    }

    Matrix alpha(m, 1);
    int start = 0;
    while (start < m) {
      int end = start;
      while (end < m && gi.dst[end] == gi.dst[start]) ++end;
      double mx = score(start, 0);
      for (int k = start; k < end; ++k) mx = std::max(mx, score(k, 0));
      double z = 0.0;
      for (int k = start; k < end; ++k) z += std::exp(score(k, 0) - mx);
      for (int k = start; k < end; ++k) alpha(k, 0) = std::exp(score(k, 0) - mx) / z;
      start = end;
    }

    Matrix gate(m, 1);
    for (int k = 0; k < m; ++k) gate(k, 0) = edge_gate_scalar(gi.e(k, 0), lp, p.cfg.leaky_slope);

    Matrix h_att(n, d);
    for (int k = 0; k < m; ++k) {
      const double coeff = alpha(k, 0) * gate(k, 0);
      for (int c = 0; c < d; ++c) h_att(gi.dst[k], c) += coeff * pm(gi.src[k], c);
    }
    for (double& v : h_att.data) v = elu(v);

    Matrix ln(n, d);
    for (int r = 0; r < n; ++r) {
      double mu = 0.0;
      for (int c = 0; c < d; ++c) mu += h_att(r, c);
      mu /= d;
      double var = 0.0;
      for (int c = 0; c < d; ++c) var += (h_att(r, c) - mu) * (h_att(r, c) - mu);
      var /= d;
      const double inv = 1.0 / std::sqrt(var + p.cfg.ln_eps);
      for (int c = 0; c < d; ++c)
        ln(r, c) = (h_att(r, c) - mu) * inv * lp.ln_gamma(0, c) + lp.ln_beta(0, c);
    }

    Matrix mid = matmul_nt_o(ln, lp.mix_w1);
    for (double& v : mid.data) v = silu(v);
    const Matrix mix = matmul_nt_o(mid, lp.mix_w2);

    Matrix z(n, d);
    for (size_t i = 0; i < z.data.size(); ++i) z.data[i] = h_att.data[i] + mix.data[i];

    Matrix v_mean(1, d);
    for (int c = 0; c < d; ++c) {
      double acc = 0.0;
      for (int r = 0; r < n; ++r) acc += z(r, c);
      v_mean(0, c) = acc / n;
    }
    Matrix vp = matmul_nt_o(v_mean, lp.vn_w);
    for (int c = 0; c < d; ++c) vp(0, c) = silu(vp(0, c) + lp.vn_b(0, c));
    v_prime = vp;

    h = Matrix(n, d);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < d; ++c) h(r, c) = z(r, c) + vp(0, c);

    tr.alpha.push_back(alpha);
    tr.gate.push_back(gate);
    tr.h.push_back(h);
  }

  const int dl = p.cfg.out_dim();
  tr.g_mean = Matrix(1, dl);
  tr.g_add = Matrix(1, dl);
  for (int c = 0; c < dl; ++c) {
    double acc = 0.0;
    for (int r = 0; r < n; ++r) acc += h(r, c);
    tr.g_add(0, c) = acc;
    tr.g_mean(0, c) = acc / n;
  }
  tr.g_v = v_prime;

  Matrix pooled(1, 3 * dl);
  for (int c = 0; c < dl; ++c) {
    pooled(0, c) = tr.g_mean(0, c);
    pooled(0, dl + c) = tr.g_add(0, c);
    pooled(0, 2 * dl + c) = tr.g_v(0, c);
  }
  Matrix u1 = matmul_nt_o(pooled, p.head.w1);
  for (int c = 0; c < u1.cols; ++c) u1(0, c) = relu(u1(0, c) + p.head.b1(0, c));
  Matrix u2 = matmul_nt_o(u1, p.head.w2);
  for (int c = 0; c < u2.cols; ++c) u2(0, c) = relu(u2(0, c) + p.head.b2(0, c));
  const Matrix u3 = matmul_nt_o(u2, p.head.w3);
  tr.logit = u3(0, 0) + p.head.b3(0, 0);
  tr.prob = sigmoid(tr.logit);
  return tr;
}

ModelConfig small_config(int input_dim = 6) {
  ModelConfig cfg;
  cfg.input_dim = input_dim;
  cfg.hidden = {5};
  cfg.gate_hidden = 3;
  cfg.head = {4, 3};
  return cfg;
}

}  // namespace

TEST_CASE("edge gate with zero weights returns one half") {
  LayerParams lp;
  lp.gate_w1 = Matrix(3, 1, 0.0);
  lp.gate_w2 = Matrix(1, 3, 0.0);
  REQUIRE(edge_gate_scalar(0.7, lp) == 0.5);
}

TEST_CASE("edge gate is nondecreasing for positive weights") {
  LayerParams lp;
  lp.gate_w1 = Matrix(4, 1, 0.7);
  lp.gate_w2 = Matrix(1, 4, 0.3);
  double prev = -1.0;
  for (int i = 0; i <= 40; ++i) {
    const double g = edge_gate_scalar(i / 40.0, lp);
    REQUIRE(g >= prev);
    REQUIRE(g > 0.0);
    REQUIRE(g < 1.0);
    prev = g;
  }
}

TEST_CASE("edge gate gradient matches finite differences") {
  std::mt19937_64 rng(71);
  LayerParams lp;
  lp.gate_w1 = random_matrix(rng, 4, 1);
  lp.gate_w2 = random_matrix(rng, 1, 4);
  for (double e0 : {0.15, 0.55, 0.9}) {
    ad::Tape t;
    ad::Var e = t.input(Matrix(1, 1, e0), true);
    ad::Var gate = t.sigmoid(
        t.matmul_nt(t.leaky_relu(t.matmul_nt(e, t.input(lp.gate_w1)), 0.2),
                    t.input(lp.gate_w2)));
    t.backward(t.sum(gate));
    const double analytic = t.grad(e)(0, 0);
    const double h = 1e-5;
    const double fd =
        (edge_gate_scalar(e0 + h, lp) - edge_gate_scalar(e0 - h, lp)) / (2.0 * h);
    REQUIRE(oracle::rel_err(analytic, fd) < 1e-6);
  }
}

TEST_CASE("attention over a single neighbor is exactly one") {
  std::mt19937_64 rng(72);
  BrainGraph g;
  g.x = random_matrix(rng, 2, 6);
  g.edges.push_back({0, 1, 0.8});
  ModelParams p = ModelParams::init(small_config(), 7);
  ForwardTrace tr;
  model_forward(g, g.x, p, &tr);
  REQUIRE(tr.alpha[0].rows == 2);
  REQUIRE(tr.alpha[0](0, 0) == 1.0);
  REQUIRE(tr.alpha[0](1, 0) == 1.0);
}

TEST_CASE("attention splits evenly between indistinguishable neighbors") {
  std::mt19937_64 rng(73);
  BrainGraph g;
  g.x = random_matrix(rng, 3, 6);
  for (int c = 0; c < 6; ++c) g.x(2, c) = g.x(1, c);
  g.edges.push_back({0, 1, 0.6});
  g.edges.push_back({0, 2, 0.6});
  ModelParams p = ModelParams::init(small_config(), 8);
  ForwardTrace tr;
  model_forward(g, g.x, p, &tr);
  // Directed edges sorted by (dst, src): (0,1), (0,2), (1,0), (2,0).
  REQUIRE(std::abs(tr.alpha[0](0, 0) - 0.5) < 1e-12);
  REQUIRE(std::abs(tr.alpha[0](1, 0) - 0.5) < 1e-12);
  REQUIRE(tr.alpha[0](2, 0) == 1.0);
  REQUIRE(tr.alpha[0](3, 0) == 1.0);
}

TEST_CASE("forward matches the plain-loop oracle") {
  std::mt19937_64 rng(74);
  ModelConfig cfg = small_config();
  cfg.hidden = {5, 4};
  for (int trial = 0; trial < 4; ++trial) {
    BrainGraph g = random_graph(rng, 6, 4, 6);
    ModelParams p = ModelParams::init(cfg, 100 + trial);
    ForwardTrace tr;
    const double prob = model_forward(g, g.x, p, &tr);
    const OracleTrace ot = oracle_forward(g, g.x, p);
    REQUIRE(std::abs(prob - ot.prob) < 1e-12);
    for (int l = 0; l < cfg.n_layers(); ++l) {
      REQUIRE(max_abs_diff(tr.alpha[l], ot.alpha[l]) < 1e-12);
      REQUIRE(max_abs_diff(tr.gate[l], ot.gate[l]) < 1e-12);
      REQUIRE(max_abs_diff(tr.h[l], ot.h[l]) < 1e-12);
    }
    REQUIRE(max_abs_diff(tr.g_mean, ot.g_mean) < 1e-12);
    REQUIRE(max_abs_diff(tr.g_add, ot.g_add) < 1e-12);
    REQUIRE(max_abs_diff(tr.g_v, ot.g_v) < 1e-12);
  }
}

TEST_CASE("zero mix and virtual-node weights reduce a layer to gated attention") {
  std::mt19937_64 rng(75);
  ModelConfig cfg = small_config();
  BrainGraph g = random_graph(rng, 5, 3, 6);
  ModelParams p = ModelParams::init(cfg, 31);
  LayerParams& lp = p.layers[0];
  lp.mix_w1 = Matrix(lp.mix_w1.rows, lp.mix_w1.cols, 0.0);
  lp.mix_w2 = Matrix(lp.mix_w2.rows, lp.mix_w2.cols, 0.0);
  lp.vn_w = Matrix(lp.vn_w.rows, lp.vn_w.cols, 0.0);
  lp.vn_b = Matrix(1, lp.vn_b.cols, 0.0);

  ForwardTrace tr;
  model_forward(g, g.x, p, &tr);
  const OracleTrace ot = oracle_forward(g, g.x, p);
  REQUIRE(max_abs_diff(tr.h[0], ot.h[0]) < 1e-12);

  // With both residual branches dead, h is exactly the ELU-ed aggregation.
  const GraphIndex gi = make_index(g);
  const Matrix pm = matmul_nt_o(g.x, lp.w);
  Matrix agg(5, cfg.hidden[0]);
  for (int k = 0; k < gi.n_dir_edges(); ++k) {
    const double coeff =
        tr.alpha[0](k, 0) * edge_gate_scalar(gi.e(k, 0), lp, cfg.leaky_slope);
    for (int c = 0; c < cfg.hidden[0]; ++c)
      agg(gi.dst[k], c) += coeff * pm(gi.src[k], c);
  }
  for (double& v : agg.data) v = elu(v);
  REQUIRE(max_abs_diff(tr.h[0], agg) < 1e-12);
}

TEST_CASE("forcing gates to zero collapses the prediction to one half") {
  std::mt19937_64 rng(76);
  BrainGraph g = random_graph(rng, 6, 4, 6);
  for (Edge& e : g.edges) e.plv = 0.5 + 0.4 * (e.plv - 0.3) / 0.65;
  ModelParams p = ModelParams::init(small_config(), 32);
  for (LayerParams& lp : p.layers) {
    lp.gate_w1 = Matrix(lp.gate_w1.rows, 1, 1.0);
    lp.gate_w2 = Matrix(1, lp.gate_w2.cols, -200.0);
  }
  ForwardTrace tr;
  const double prob = model_forward(g, g.x, p, &tr);
  for (const Matrix& gate : tr.gate)
    for (double v : gate.data) REQUIRE(v < 1e-40);
  REQUIRE(std::abs(prob - 0.5) < 1e-9);
}

TEST_CASE("attention rows normalize and gates stay strictly inside the unit interval") {
  std::mt19937_64 rng(77);
  BrainGraph g = random_graph(rng, 8, 6, 6);
  ModelConfig cfg = small_config();
  cfg.hidden = {5, 4};
  ModelParams p = ModelParams::init(cfg, 33);
  ForwardTrace tr;
  model_forward(g, g.x, p, &tr);
  const GraphIndex gi = make_index(g);
  for (int l = 0; l < cfg.n_layers(); ++l) {
    std::vector<double> sums(gi.n_nodes, 0.0);
    for (int k = 0; k < gi.n_dir_edges(); ++k) sums[gi.dst[k]] += tr.alpha[l](k, 0);
    for (double s : sums) REQUIRE(std::abs(s - 1.0) < 1e-9);
    for (double v : tr.gate[l].data) {
      REQUIRE(v > 0.0);
      REQUIRE(v < 1.0);
    }
  }
}

TEST_CASE("prediction is deterministic and permutation invariant") {
  std::mt19937_64 rng(78);
  BrainGraph g = random_graph(rng, 9, 7, 6);
  ModelParams p = ModelParams::init(small_config(), 34);
  const double p1 = model_forward(g, g.x, p);
  const double p2 = model_forward(g, g.x, p);
  REQUIRE(p1 == p2);

  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  BrainGraph gp;
  gp.x = Matrix(9, 6);
  for (int i = 0; i < 9; ++i)
    for (int c = 0; c < 6; ++c) gp.x(perm[i], c) = g.x(i, c);
  for (const Edge& e : g.edges) {
    std::pair<int, int> key = std::minmax(perm[e.i], perm[e.j]);
    gp.edges.push_back({key.first, key.second, e.plv});
  }
  const double p3 = model_forward(gp, gp.x, p);
  REQUIRE(std::abs(p1 - p3) < 1e-9);
}

TEST_CASE("pooling a single row makes mean and add coincide") {
  std::mt19937_64 rng(79);
  Matrix h = random_matrix(rng, 1, 7);
  ad::Tape t;
  ad::Var hv = t.input(h);
  const Matrix gm = t.value(t.mean_rows(hv));
  const Matrix ga = t.value(t.sum_rows(hv));
  REQUIRE(max_abs_diff(gm, ga) == 0.0);
}

TEST_CASE("duplicating the graph doubles additive pooling only") {
  std::mt19937_64 rng(80);
  const int n = 5;
  BrainGraph g = random_graph(rng, n, 3, 6);
  BrainGraph g2;
  g2.x = Matrix(2 * n, 6);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 6; ++c) {
      g2.x(i, c) = g.x(i, c);
      g2.x(n + i, c) = g.x(i, c);
    }
  for (const Edge& e : g.edges) {
    g2.edges.push_back(e);
    g2.edges.push_back({e.i + n, e.j + n, e.plv});
  }
  ModelConfig cfg = small_config();
  cfg.hidden = {5, 4};
  ModelParams p = ModelParams::init(cfg, 35);
  ForwardTrace t1, t2;
  model_forward(g, g.x, p, &t1);
  model_forward(g2, g2.x, p, &t2);
  REQUIRE(max_abs_diff(t1.g_mean, t2.g_mean) < 1e-9);
  REQUIRE(max_abs_diff(t1.g_v, t2.g_v) < 1e-9);
  for (int c = 0; c < t1.g_add.cols; ++c)
    REQUIRE(std::abs(2.0 * t1.g_add(0, c) - t2.g_add(0, c)) < 1e-9);
}

TEST_CASE("zero classification head predicts one half exactly") {
  std::mt19937_64 rng(81);
  BrainGraph g = random_graph(rng, 4, 2, 6);
  ModelParams p = ModelParams::init(small_config(), 36);
  p.head.w1 = Matrix(p.head.w1.rows, p.head.w1.cols, 0.0);
  p.head.w2 = Matrix(p.head.w2.rows, p.head.w2.cols, 0.0);
  p.head.w3 = Matrix(p.head.w3.rows, p.head.w3.cols, 0.0);
  REQUIRE(model_forward(g, g.x, p) == 0.5);
}

TEST_CASE("stable binary cross entropy matches the naive formula") {
  REQUIRE(std::abs(bce_scalar(0.0, 1.0) - std::log(2.0)) < 1e-12);
  REQUIRE(std::abs(bce_scalar(0.0, 0.0) - std::log(2.0)) < 1e-12);
  REQUIRE(bce_scalar(20.0, 1.0) < 1e-8);
  REQUIRE(bce_scalar(-20.0, 0.0) < 1e-8);
  REQUIRE(std::isfinite(bce_scalar(750.0, 0.0)));
  REQUIRE(std::isfinite(bce_scalar(-750.0, 1.0)));

  std::mt19937_64 rng(82);
  std::uniform_real_distribution<double> ul(-15.0, 15.0);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < 200; ++i) {
    const double z = ul(rng);
    const double y = coin(rng) ? 1.0 : 0.0;
    const double prob = sigmoid(z);
    const double naive = -(y * std::log(prob) + (1.0 - y) * std::log(1.0 - prob));
    REQUIRE(std::abs(bce_scalar(z, y) - naive) < 1e-9);
  }
}

TEST_CASE("model gradients match end-to-end finite differences") {
  std::mt19937_64 rng(83);
  ModelConfig cfg;
  cfg.input_dim = kNumFeatures;
  cfg.hidden = {6, 6};
  cfg.gate_hidden = 3;
  cfg.head = {5, 4};
  BrainGraph g = random_graph(rng, 7, 5, kNumFeatures);
  ModelParams p = ModelParams::init(cfg, 37);
  const GraphIndex gi = make_index(g);
  const double target = 1.0;

  auto loss_value = [&](const ModelParams& params) {
    ad::Tape t;
    ParamVars pv = register_params(t, params, false);
    ad::Var logit = forward_logit(t, pv, t.input(g.x), t.input(gi.e), gi, cfg);
    return t.value(t.bce_with_logit(logit, target))(0, 0);
  };

  ad::Tape t;
  ParamVars pv = register_params(t, p, true);
  ad::Var logit = forward_logit(t, pv, t.input(g.x), t.input(gi.e), gi, cfg);
  t.backward(t.bce_with_logit(logit, target));
  const std::vector<Matrix> grads = collect_param_grads(t, pv);

  std::vector<Matrix*> mats;
  for_each_param(p, [&](const std::string&, Matrix& m) { mats.push_back(&m); });
  REQUIRE(mats.size() == grads.size());

  const double h = 1e-5;
  for (size_t mi = 0; mi < mats.size(); ++mi) {
    Matrix& m = *mats[mi];
    for (size_t k = 0; k < m.data.size(); ++k) {
      const double keep = m.data[k];
      m.data[k] = keep + h;
      const double up = loss_value(p);
      m.data[k] = keep - h;
      const double dn = loss_value(p);
      m.data[k] = keep;
      const double fd = (up - dn) / (2.0 * h);
      INFO("tensor " << mi << " entry " << k);
      REQUIRE(oracle::rel_err(grads[mi].data[k], fd) < 1e-4);
    }
  }
}
