#include "fmms/linalg.hpp"

#include <cmath>

#include "fmms/error.hpp"

namespace fmms {

double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ShapeMismatchError("dot: length mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const Vec& v) { return std::sqrt(dot(v, v)); }

Vec matvec(const Matrix& m, const Vec& x) {
  if (static_cast<int>(x.size()) != m.cols)
    throw ShapeMismatchError("matvec: dimension mismatch");
  Vec y(m.rows, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    double s = 0.0;
    for (int c = 0; c < m.cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

Vec matvec_t(const Matrix& m, const Vec& x) {
  if (static_cast<int>(x.size()) != m.rows)
    throw ShapeMismatchError("matvec_t: dimension mismatch");
  Vec y(m.cols, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    const double xr = x[r];
    for (int c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
  }
  return y;
}

void add_outer(Matrix& m, const Vec& u, const Vec& v, double scale) {
  if (static_cast<int>(u.size()) != m.rows ||
      static_cast<int>(v.size()) != m.cols)
    throw ShapeMismatchError("add_outer: dimension mismatch");
  for (int r = 0; r < m.rows; ++r) {
    double* row = m.row(r);
    const double us = u[r] * scale;
    for (int c = 0; c < m.cols; ++c) row[c] += us * v[c];
  }
}

Embedding normalize(const Embedding& v) {
  const double n = norm2(v.values);
  if (!(n > kZeroNormThreshold))
    throw ZeroVectorError("normalize: vector norm below 1e-12");
  Embedding out;
  out.values.resize(v.values.size());
  for (size_t i = 0; i < v.values.size(); ++i) out.values[i] = v.values[i] / n;
  out.unit_norm = true;
  return out;
}

double cosine(const Embedding& a, const Embedding& b) {
  const double na = norm2(a.values);
  const double nb = norm2(b.values);
  if (!(na > kZeroNormThreshold) || !(nb > kZeroNormThreshold))
    throw ZeroVectorError("cosine: vector norm below 1e-12");
  double c = dot(a.values, b.values) / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x,
                     double h) {
  if (!(h > 0.0)) throw InvalidConfigError("finite_diff_grad: h must be > 0");
  Vec g(x.size(), 0.0);
  Vec probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NonFiniteError("finite_diff_grad: non-finite evaluation");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace fmms
