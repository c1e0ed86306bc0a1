#pragma once

#include <functional>
#include <vector>

namespace fmms {

using Vec = std::vector<double>;

// Dense row-major matrix. Just enough for the toy encoders.
struct Matrix {
  int rows = 0;
  int cols = 0;
  Vec a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
  const double* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }
  double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
};

double dot(const Vec& a, const Vec& b);
double norm2(const Vec& v);

// y = M x
Vec matvec(const Matrix& m, const Vec& x);
// y = M^T x
Vec matvec_t(const Matrix& m, const Vec& x);
// M += scale * u v^T
void add_outer(Matrix& m, const Vec& u, const Vec& v, double scale);

// Feature vector produced by an encoder. `unit_norm` marks vectors already
// scaled to length 1 (within 1e-9).
struct Embedding {
  Vec values;
  bool unit_norm = false;
};

inline constexpr double kZeroNormThreshold = 1e-12;

// v / ||v||. Throws ZeroVectorError when ||v|| <= 1e-12.
Embedding normalize(const Embedding& v);

// dot(a,b)/(||a|| ||b||), clamped to [-1, 1]. Throws ZeroVectorError on a
// degenerate input.
double cosine(const Embedding& a, const Embedding& b);

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
// Throws NonFiniteError if any evaluation is not finite.
Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x,
                     double h);

}  // namespace fmms
