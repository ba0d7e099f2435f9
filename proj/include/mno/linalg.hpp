#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mno/tensor.hpp"

namespace mno {

// Cyclic Jacobi eigensolver for small dense symmetric matrices.
// Returns eigenvalues in descending order. Sufficient for the low-rank
// covariance checks where n stays in the tens.
inline std::vector<double> symmetric_eigenvalues(const Tensor& m) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) throw Error("symmetric_eigenvalues: square matrix required");
  const int n = static_cast<int>(m.dim(0));
  std::vector<double> a(m.data);
  auto at = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-30) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) ev[static_cast<size_t>(i)] = at(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<double>());
  return ev;
}

// Lower-triangular Cholesky factor of a PSD matrix; small additive jitter
// keeps nearly singular inputs factorizable.
inline Tensor cholesky_lower(const Tensor& m, double jitter = 0.0) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) throw Error("cholesky_lower: square matrix required");
  const int64_t n = m.dim(0);
  Tensor l(Shape{n, n});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j <= i; ++j) {
      double s = m.at2(i, j) + (i == j ? jitter : 0.0);
      for (int64_t k = 0; k < j; ++k) s -= l.at2(i, k) * l.at2(j, k);
      if (i == j) {
        if (s <= 0.0) throw NumericError("cholesky_lower: matrix not positive definite");
        l.at2(i, j) = std::sqrt(s);
      } else {
        l.at2(i, j) = s / l.at2(j, j);
      }
    }
  }
  return l;
}

// Least squares line fit. Returns slope, intercept, and R^2.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("fit_line: need >= 2 matching points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0) throw Error("fit_line: degenerate abscissa");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = (syy > 0) ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

}  // namespace mno
