#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "expanet/errors.hpp"

namespace expanet {

// Dense row-major double matrix. Vectors are [n x 1] or [1 x n].
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

  static Matrix from(int r, int c, std::vector<double> v) {
    if (static_cast<size_t>(r) * c != v.size()) throw ShapeMismatch("from: size");
    Matrix m;
    m.rows = r;
    m.cols = c;
    m.data = std::move(v);
    return m;
  }

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("max_abs_diff");
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

// Seeded Glorot-uniform init, used for all learnable tensors.
inline Matrix glorot_uniform(int rows, int cols, std::mt19937_64& rng) {
  double a = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  Matrix m(rows, cols);
  for (double& v : m.data) v = dist(rng);
  return m;
}

}  // namespace expanet
