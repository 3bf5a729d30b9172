#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "expanet/errors.hpp"
#include "expanet/matrix.hpp"

namespace expanet::ad {

inline Matrix mat_mul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < a.cols; ++k) {
      const double av = a(i, k);
      if (av == 0.0) continue;
      for (int j = 0; j < b.cols; ++j) c(i, j) += av * b(k, j);
    }
  return c;
}

// A^T * B
inline Matrix mat_mul_tn(const Matrix& a, const Matrix& b) {
  Matrix c(a.cols, b.cols);
  for (int k = 0; k < a.rows; ++k)
    for (int i = 0; i < a.cols; ++i) {
      const double av = a(k, i);
      if (av == 0.0) continue;
      for (int j = 0; j < b.cols; ++j) c(i, j) += av * b(k, j);
    }
  return c;
}

// A * B^T
inline Matrix mat_mul_nt(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.rows; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += a(i, k) * b(j, k);
      c(i, j) = acc;
    }
  return c;
}

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense float64 matrices. Ops are recorded in creation
// order; backward replays them once in reverse.
class Tape {
 public:
  explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}

  Var input(Matrix v, bool requires_grad = false) {
    return push(std::move(v), requires_grad, {});
  }

  const Matrix& value(Var v) const { return node(v).value; }

  // Gradient of the last backward() w.r.t. v; zeros if v never received one.
  Matrix grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.rows == 0) return Matrix(n.value.rows, n.value.cols);
    return n.grad;
  }

  size_t size() const { return nodes_.size(); }

  Var add(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    require_same(av, bv, "add");
    Matrix out = av;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    Var r = push(std::move(out), needs(a) || needs(b), {a, b});
    if (needs(a) || needs(b)) {
      nodes_[r.id].backward = [this, a, b, r] {
        const Matrix& g = nodes_[r.id].grad;
        if (needs(a)) accumulate(a, g);
        if (needs(b)) accumulate(b, g);
      };
    }
    return r;
  }

  Var sub(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    require_same(av, bv, "sub");
    Matrix out = av;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
    Var r = push(std::move(out), needs(a) || needs(b), {a, b});
    if (needs(a) || needs(b)) {
      nodes_[r.id].backward = [this, a, b, r] {
        const Matrix& g = nodes_[r.id].grad;
        if (needs(a)) accumulate(a, g);
        if (needs(b)) {
          Matrix neg = g;
          for (double& v : neg.data) v = -v;
          accumulate(b, neg);
        }
      };
    }
    return r;
  }

  Var mul(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    require_same(av, bv, "mul");
    Matrix out = av;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
    Var r = push(std::move(out), needs(a) || needs(b), {a, b});
    if (needs(a) || needs(b)) {
      nodes_[r.id].backward = [this, a, b, r] {
        const Matrix& g = nodes_[r.id].grad;
        if (needs(a)) {
          Matrix d = g;
          const Matrix& bv2 = nodes_[b.id].value;
          for (size_t i = 0; i < d.data.size(); ++i) d.data[i] *= bv2.data[i];
          accumulate(a, d);
        }
        if (needs(b)) {
          Matrix d = g;
          const Matrix& av2 = nodes_[a.id].value;
          for (size_t i = 0; i < d.data.size(); ++i) d.data[i] *= av2.data[i];
          accumulate(b, d);
        }
      };
    }
    return r;
  }

  // scale * a + shift, elementwise with scalar constants.
  Var affine(Var a, double scale, double shift = 0.0) {
    Matrix out = value(a);
    for (double& v : out.data) v = scale * v + shift;
    Var r = push(std::move(out), needs(a), {a});
    if (needs(a)) {
      nodes_[r.id].backward = [this, a, r, scale] {
        Matrix d = nodes_[r.id].grad;
        for (double& v : d.data) v *= scale;
        accumulate(a, d);
      };
    }
    return r;
  }

  Var matmul(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.cols != bv.rows)
      throw ShapeMismatch("matmul: " + shape_str(av) + " x " + shape_str(bv));
    Var r = push(mat_mul(av, bv), needs(a) || needs(b), {a, b});
    if (needs(a) || needs(b)) {
      nodes_[r.id].backward = [this, a, b, r] {
        const Matrix& g = nodes_[r.id].grad;
        if (needs(a)) accumulate(a, mat_mul_nt(g, nodes_[b.id].value));
        if (needs(b)) accumulate(b, mat_mul_tn(nodes_[a.id].value, g));
      };
    }
    return r;
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.cols != bv.cols)
      throw ShapeMismatch("matmul_nt: " + shape_str(av) + " x " + shape_str(bv) + "^T");
    Var r = push(mat_mul_nt(av, bv), needs(a) || needs(b), {a, b});
    if (needs(a) || needs(b)) {
      nodes_[r.id].backward = [this, a, b, r] {
        const Matrix& g = nodes_[r.id].grad;
        if (needs(a)) accumulate(a, mat_mul(g, nodes_[b.id].value));
        if (needs(b)) accumulate(b, mat_mul_tn(g, nodes_[a.id].value));
      };
    }
    return r;
  }

  // Add a [1 x n] row vector to every row of a [m x n] matrix.
  Var broadcast_add_row(Var a, Var row) {
    const Matrix& av = value(a);
    const Matrix& rv = value(row);
    if (rv.rows != 1 || rv.cols != av.cols)
      throw ShapeMismatch("broadcast_add_row: " + shape_str(av) + " + " + shape_str(rv));
    Matrix out = av;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) += rv(0, j);
    Var r = push(std::move(out), needs(a) || needs(row), {a, row});
    if (needs(a) || needs(row)) {
      nodes_[r.id].backward = [this, a, row, r] {
        const Matrix& g = nodes_[r.id].grad;
        if (needs(a)) accumulate(a, g);
        if (needs(row)) {
          Matrix d(1, g.cols);
          for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) d(0, j) += g(i, j);
          accumulate(row, d);
        }
      };
    }
    return r;
  }

  // Multiply every row of a [m x n] matrix by a [1 x n] row vector.
  Var broadcast_mul_row(Var a, Var row) {
    const Matrix& av = value(a);
    const Matrix& rv = value(row);
    if (rv.rows != 1 || rv.cols != av.cols)
      throw ShapeMismatch("broadcast_mul_row: " + shape_str(av) + " * " + shape_str(rv));
    Matrix out = av;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) *= rv(0, j);
    Var r = push(std::move(out), needs(a) || needs(row), {a, row});
    if (needs(a) || needs(row)) {
      nodes_[r.id].backward = [this, a, row, r] {
        const Matrix& g = nodes_[r.id].grad;
        const Matrix& av2 = nodes_[a.id].value;
        const Matrix& rv2 = nodes_[row.id].value;
        if (needs(a)) {
          Matrix d = g;
          for (int i = 0; i < d.rows; ++i)
            for (int j = 0; j < d.cols; ++j) d(i, j) *= rv2(0, j);
          accumulate(a, d);
        }
        if (needs(row)) {
          Matrix d(1, g.cols);
          for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) d(0, j) += g(i, j) * av2(i, j);
          accumulate(row, d);
        }
      };
    }
    return r;
  }

  // Scale row i of a [m x n] matrix by col(i, 0), col being [m x 1].
  Var mul_colvec(Var a, Var col) {
    const Matrix& av = value(a);
    const Matrix& cv = value(col);
    if (cv.cols != 1 || cv.rows != av.rows)
      throw ShapeMismatch("mul_colvec: " + shape_str(av) + " * " + shape_str(cv));
    Matrix out = av;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) *= cv(i, 0);
    Var r = push(std::move(out), needs(a) || needs(col), {a, col});
    if (needs(a) || needs(col)) {
      nodes_[r.id].backward = [this, a, col, r] {
        const Matrix& g = nodes_[r.id].grad;
        const Matrix& av2 = nodes_[a.id].value;
        const Matrix& cv2 = nodes_[col.id].value;
        if (needs(a)) {
          Matrix d = g;
          for (int i = 0; i < d.rows; ++i)
            for (int j = 0; j < d.cols; ++j) d(i, j) *= cv2(i, 0);
          accumulate(a, d);
        }
        if (needs(col)) {
          Matrix d(g.rows, 1);
          for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) d(i, 0) += g(i, j) * av2(i, j);
          accumulate(col, d);
        }
      };
    }
    return r;
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols: empty");
    const int rows = value(parts[0]).rows;
    int cols = 0;
    bool any = false;
    for (Var p : parts) {
      if (value(p).rows != rows) throw ShapeMismatch("concat_cols: row mismatch");
      cols += value(p).cols;
      any = any || needs(p);
    }
    Matrix out(rows, cols);
    int off = 0;
    for (Var p : parts) {
      const Matrix& pv = value(p);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < pv.cols; ++j) out(i, off + j) = pv(i, j);
      off += pv.cols;
    }
    Var r = push(std::move(out), any, parts);
    if (any) {
      std::vector<Var> ps = parts;
      nodes_[r.id].backward = [this, ps, r] {
        const Matrix& g = nodes_[r.id].grad;
        int off2 = 0;
        for (Var p : ps) {
          const Matrix& pv = nodes_[p.id].value;
          if (needs(p)) {
            Matrix d(pv.rows, pv.cols);
            for (int i = 0; i < pv.rows; ++i)
              for (int j = 0; j < pv.cols; ++j) d(i, j) = g(i, off2 + j);
            accumulate(p, d);
          }
          off2 += pv.cols;
        }
      };
    }
    return r;
  }

  Var sum(Var a) {
    const Matrix& av = value(a);
    double s = 0.0;
    for (double v : av.data) s += v;
    Matrix out(1, 1);
    out(0, 0) = s;
    Var r = push(std::move(out), needs(a), {a});
    if (needs(a)) {
      nodes_[r.id].backward = [this, a, r] {
        const double g = nodes_[r.id].grad(0, 0);
        const Matrix& av2 = nodes_[a.id].value;
        Matrix d(av2.rows, av2.cols, g);
        accumulate(a, d);
      };
    }
    return r;
  }

  Var mean(Var a) {
    const size_t n = value(a).data.size();
    return affine(sum(a), 1.0 / static_cast<double>(n));
  }

  // Column sums: [m x n] -> [1 x n].
  Var sum_rows(Var a) {
    const Matrix& av = value(a);
    Matrix out(1, av.cols);
    for (int i = 0; i < av.rows; ++i)
      for (int j = 0; j < av.cols; ++j) out(0, j) += av(i, j);
    Var r = push(std::move(out), needs(a), {a});
    if (needs(a)) {
      nodes_[r.id].backward = [this, a, r] {
        const Matrix& g = nodes_[r.id].grad;
        const Matrix& av2 = nodes_[a.id].value;
        Matrix d(av2.rows, av2.cols);
        for (int i = 0; i < d.rows; ++i)
          for (int j = 0; j < d.cols; ++j) d(i, j) = g(0, j);
        accumulate(a, d);
      };
    }
    return r;
  }

  Var mean_rows(Var a) {
    const int m = value(a).rows;
    return affine(sum_rows(a), 1.0 / static_cast<double>(m));
  }

  Var exp(Var a) {
    return unary(a, "exp", [](double x) { return std::exp(x); },
                 [](double x, double y) { (void)x; return y; });
  }

  // Natural log; domain errors surface as NonFinite when checking is enabled.
  Var log(Var a) {
    return unary(a, "log", [](double x) { return std::log(x); },
                 [](double x, double y) { (void)y; return 1.0 / x; });
  }

  Var sigmoid(Var a) {
    return unary(a, "sigmoid",
                 [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                 [](double x, double y) { (void)x; return y * (1.0 - y); });
  }

  Var silu(Var a) {
    return unary(a, "silu",
                 [](double x) { return x / (1.0 + std::exp(-x)); },
                 [](double x, double y) {
                   (void)y;
                   const double s = 1.0 / (1.0 + std::exp(-x));
                   return s * (1.0 + x * (1.0 - s));
                 });
  }

  Var relu(Var a) {
    return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double y) { (void)y; return x > 0.0 ? 1.0 : 0.0; });
  }

  Var leaky_relu(Var a, double slope = 0.2) {
    return unary(a, "leaky_relu",
                 [slope](double x) { return x > 0.0 ? x : slope * x; },
                 [slope](double x, double y) { (void)y; return x > 0.0 ? 1.0 : slope; });
  }

  Var elu(Var a) {
    return unary(a, "elu",
                 [](double x) { return x > 0.0 ? x : std::expm1(x); },
                 [](double x, double y) { (void)x; return y > 0.0 ? 1.0 : y + 1.0; });
  }

  // Per-row normalization without affine terms; compose with broadcast ops for those.
  Var layer_norm(Var a, double eps = 1e-5) {
    const Matrix& av = value(a);
    const int n = av.cols;
    if (n < 1) throw ShapeMismatch("layer_norm: empty rows");
    Matrix out(av.rows, n);
    Matrix xhat(av.rows, n);
    std::vector<double> inv_std(av.rows);
    for (int i = 0; i < av.rows; ++i) {
      double mu = 0.0;
      for (int j = 0; j < n; ++j) mu += av(i, j);
      mu /= n;
      double var = 0.0;
      for (int j = 0; j < n; ++j) {
        const double d = av(i, j) - mu;
        var += d * d;
      }
      var /= n;
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[i] = inv;
      for (int j = 0; j < n; ++j) {
        xhat(i, j) = (av(i, j) - mu) * inv;
        out(i, j) = xhat(i, j);
      }
    }
    Var r = push(std::move(out), needs(a), {a});
    if (needs(a)) {
      nodes_[r.id].backward = [this, a, r, xhat, inv_std] {
        const Matrix& g = nodes_[r.id].grad;
        const int cols = g.cols;
        Matrix d(g.rows, cols);
        for (int i = 0; i < g.rows; ++i) {
          double gm = 0.0, gxm = 0.0;
          for (int j = 0; j < cols; ++j) {
            gm += g(i, j);
            gxm += g(i, j) * xhat(i, j);
          }
          gm /= cols;
          gxm /= cols;
          for (int j = 0; j < cols; ++j)
            d(i, j) = inv_std[i] * (g(i, j) - gm - xhat(i, j) * gxm);
        }
        accumulate(a, d);
      };
    }
    return r;
  }

  // Softmax over contiguous groups of rows of a [m x 1] column. segments must be
  // nondecreasing; each group sums to 1.
  Var segment_softmax(Var a, const std::vector<int>& segments) {
    const Matrix& av = value(a);
    if (av.cols != 1) throw ShapeMismatch("segment_softmax: expects a column vector");
    if (static_cast<int>(segments.size()) != av.rows)
      throw ShapeMismatch("segment_softmax: segment count != rows");
    for (size_t i = 1; i < segments.size(); ++i)
      if (segments[i] < segments[i - 1])
        throw ShapeMismatch("segment_softmax: segments must be grouped");

    Matrix out(av.rows, 1);
    int start = 0;
    while (start < av.rows) {
      int end = start;
      while (end < av.rows && segments[end] == segments[start]) ++end;
      double mx = av(start, 0);
      for (int i = start; i < end; ++i) mx = std::max(mx, av(i, 0));
      double z = 0.0;
      for (int i = start; i < end; ++i) z += std::exp(av(i, 0) - mx);
      for (int i = start; i < end; ++i) out(i, 0) = std::exp(av(i, 0) - mx) / z;
      start = end;
    }
    Var r = push(std::move(out), needs(a), {a});
    if (needs(a)) {
      std::vector<int> segs = segments;
      nodes_[r.id].backward = [this, a, r, segs] {
        const Matrix& g = nodes_[r.id].grad;
        const Matrix& y = nodes_[r.id].value;
        Matrix d(g.rows, 1);
        int s = 0;
        while (s < g.rows) {
          int e = s;
          while (e < g.rows && segs[e] == segs[s]) ++e;
          double dot = 0.0;
          for (int i = s; i < e; ++i) dot += g(i, 0) * y(i, 0);
          for (int i = s; i < e; ++i) d(i, 0) = y(i, 0) * (g(i, 0) - dot);
          s = e;
        }
        accumulate(a, d);
      };
    }
    return r;
  }

  // Select rows by index; duplicates allowed. Backward scatter-adds.
  Var gather_rows(Var a, const std::vector<int>& idx) {
    const Matrix& av = value(a);
    for (int i : idx)
      if (i < 0 || i >= av.rows) throw ShapeMismatch("gather_rows: index out of range");
    Matrix out(static_cast<int>(idx.size()), av.cols);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int j = 0; j < av.cols; ++j) out(static_cast<int>(r), j) = av(idx[r], j);
    Var res = push(std::move(out), needs(a), {a});
    if (needs(a)) {
      std::vector<int> ix = idx;
      nodes_[res.id].backward = [this, a, res, ix] {
        const Matrix& g = nodes_[res.id].grad;
        const Matrix& av2 = nodes_[a.id].value;
        Matrix d(av2.rows, av2.cols);
        for (size_t r = 0; r < ix.size(); ++r)
          for (int j = 0; j < g.cols; ++j) d(ix[r], j) += g(static_cast<int>(r), j);
        accumulate(a, d);
      };
    }
    return res;
  }

  // Sum rows sharing a segment id into [n_segments x n]. Ids must lie in range;
  // grouping is not required here, any order accumulates correctly.
  Var segment_sum(Var a, const std::vector<int>& segments, int n_segments) {
    const Matrix& av = value(a);
    if (static_cast<int>(segments.size()) != av.rows)
      throw ShapeMismatch("segment_sum: segment count != rows");
    for (int s : segments)
      if (s < 0 || s >= n_segments) throw ShapeMismatch("segment_sum: id out of range");
    Matrix out(n_segments, av.cols);
    for (int r = 0; r < av.rows; ++r)
      for (int j = 0; j < av.cols; ++j) out(segments[r], j) += av(r, j);
    Var res = push(std::move(out), needs(a), {a});
    if (needs(a)) {
      std::vector<int> segs = segments;
      nodes_[res.id].backward = [this, a, res, segs] {
        const Matrix& g = nodes_[res.id].grad;
        Matrix d(static_cast<int>(segs.size()), g.cols);
        for (int r = 0; r < d.rows; ++r)
          for (int j = 0; j < g.cols; ++j) d(r, j) = g(segs[r], j);
        accumulate(a, d);
      };
    }
    return res;
  }

  // Numerically stable binary cross-entropy on a single logit.
  Var bce_with_logit(Var logit, double target) {
    const Matrix& lv = value(logit);
    if (lv.rows != 1 || lv.cols != 1)
      throw ShapeMismatch("bce_with_logit: logit must be 1x1");
    const double z = lv(0, 0);
    Matrix out(1, 1);
    out(0, 0) = std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
    Var r = push(std::move(out), needs(logit), {logit});
    if (needs(logit)) {
      nodes_[r.id].backward = [this, logit, r, z, target] {
        const double g = nodes_[r.id].grad(0, 0);
        Matrix d(1, 1);
        d(0, 0) = g * (1.0 / (1.0 + std::exp(-z)) - target);
        accumulate(logit, d);
      };
    }
    return r;
  }

  void backward(Var loss) {
    if (consumed_) throw ConsumedTape("backward: tape already consumed");
    const Matrix& lv = value(loss);
    if (lv.rows != 1 || lv.cols != 1)
      throw NonScalarLoss("backward: loss must be 1x1, got " + shape_str(lv));
    consumed_ = true;
    ensure_grad(loss.id);
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.backward) continue;
      if (n.grad.rows == 0) continue;  // no gradient reached this node
      n.backward();
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad{0, 0};
    bool needs_grad = false;
    std::function<void()> backward;
  };

  static std::string shape_str(const Matrix& m) {
    return "[" + std::to_string(m.rows) + "x" + std::to_string(m.cols) + "]";
  }

  static void require_same(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows != b.rows || a.cols != b.cols)
      throw ShapeMismatch(std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
  }

  const Node& node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw ShapeMismatch("tape: invalid var handle");
    return nodes_[v.id];
  }

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  Var push(Matrix value, bool needs_grad, const std::vector<Var>&) {
    if (check_finite_ && !value.all_finite())
      throw NonFinite("tape: non-finite value produced at node " +
                      std::to_string(nodes_.size()));
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void ensure_grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.rows == 0) n.grad = Matrix(n.value.rows, n.value.cols);
  }

  void accumulate(Var v, const Matrix& delta) {
    ensure_grad(v.id);
    Matrix& g = nodes_[v.id].grad;
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += delta.data[i];
  }

  template <typename F, typename G>
  Var unary(Var a, const char* name, F fwd, G bwd) {
    (void)name;
    const Matrix& av = value(a);
    Matrix out = av;
    for (double& v : out.data) v = fwd(v);
    Var r = push(std::move(out), needs(a), {a});
    if (needs(a)) {
      nodes_[r.id].backward = [this, a, r, bwd] {
        const Matrix& g = nodes_[r.id].grad;
        const Matrix& av2 = nodes_[a.id].value;
        const Matrix& yv = nodes_[r.id].value;
        Matrix d(g.rows, g.cols);
        for (size_t i = 0; i < d.data.size(); ++i)
          d.data[i] = g.data[i] * bwd(av2.data[i], yv.data[i]);
        accumulate(a, d);
      };
    }
    return r;
  }

  std::vector<Node> nodes_;
  bool check_finite_ = false;
  bool consumed_ = false;
};

struct AdamState {
  Matrix m{0, 0};
  Matrix v{0, 0};
  int t = 0;
};

// Bias-corrected Adam; epsilon added outside the square root.
inline void adam_step(Matrix& param, const Matrix& grad, AdamState& state, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (!param.same_shape(grad))
    throw ShapeMismatch("adam_step: param and grad shapes differ");
  if (state.m.rows == 0) {
    state.m = Matrix(param.rows, param.cols);
    state.v = Matrix(param.rows, param.cols);
  }
  if (!state.m.same_shape(param)) throw ShapeMismatch("adam_step: stale state shape");
  state.t += 1;
  const double c1 = 1.0 - std::pow(beta1, state.t);
  const double c2 = 1.0 - std::pow(beta2, state.t);
  for (size_t i = 0; i < param.data.size(); ++i) {
    const double g = grad.data[i];
    state.m.data[i] = beta1 * state.m.data[i] + (1.0 - beta1) * g;
    state.v.data[i] = beta2 * state.v.data[i] + (1.0 - beta2) * g * g;
    const double mhat = state.m.data[i] / c1;
    const double vhat = state.v.data[i] / c2;
    param.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace expanet::ad
