#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace xcbr::linalg {

// Dense row-major symmetric system solver for the small regression systems
// behind the explainers (dimension <= number of features + 1).
//
// Tries Cholesky first; on a non-positive pivot falls back to Gaussian
// elimination with partial pivoting, zeroing free variables so a singular
// system still yields a finite pseudo-solution. Returns false when the
// fallback was taken.
inline bool solve_symmetric(std::vector<double> a, std::vector<double> b,
                            std::size_t n, std::vector<double>& x) {
  x.assign(n, 0.0);
  if (n == 0) return true;

  // Cholesky: a = L L^T, in place on the lower triangle.
  std::vector<double> chol = a;
  bool spd = true;
  for (std::size_t j = 0; j < n && spd; ++j) {
    double d = chol[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= chol[j * n + k] * chol[j * n + k];
    if (!(d > 0.0) || !std::isfinite(d)) {
      spd = false;
      break;
    }
    const double ljj = std::sqrt(d);
    chol[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = chol[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= chol[i * n + k] * chol[j * n + k];
      chol[i * n + j] = s / ljj;
    }
  }
  if (spd) {
    // Forward then backward substitution.
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = b[i];
      for (std::size_t k = 0; k < i; ++k) s -= chol[i * n + k] * y[k];
      y[i] = s / chol[i * n + i];
    }
    for (std::size_t ii = n; ii > 0; --ii) {
      const std::size_t i = ii - 1;
      double s = y[i];
      for (std::size_t k = i + 1; k < n; ++k) s -= chol[k * n + i] * x[k];
      x[i] = s / chol[i * n + i];
    }
    return true;
  }

  // Pivoted Gauss on the original matrix.
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    double best = std::abs(a[perm[col] * n + col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double v = std::abs(a[perm[r] * n + col]);
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    std::swap(perm[col], perm[piv]);
    const double p = a[perm[col] * n + col];
    if (std::abs(p) < 1e-12) continue;  // free variable, stays 0
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[perm[r] * n + col] / p;
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[perm[r] * n + c] -= f * a[perm[col] * n + c];
      b[perm[r]] -= f * b[perm[col]];
    }
  }
  for (std::size_t ii = n; ii > 0; --ii) {
    const std::size_t i = ii - 1;
    const double p = a[perm[i] * n + i];
    if (std::abs(p) < 1e-12) {
      x[i] = 0.0;
      continue;
    }
    double s = b[perm[i]];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[perm[i] * n + c] * x[c];
    x[i] = s / p;
  }
  return false;
}

}  // namespace xcbr::linalg
