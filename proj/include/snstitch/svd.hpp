#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "snstitch/errors.hpp"
#include "snstitch/matrix.hpp"

namespace snstitch {

// Thin SVD a = u * diag(sigma) * v^T with sigma sorted descending.
// u: rows x k, v: cols x k, k = min(rows, cols).
struct SvdResult {
  Matrix u;
  std::vector<double> sigma;
  Matrix v;
  std::size_t sweeps = 0;
};

namespace detail {

// One-sided Jacobi (Hestenes) on the columns of a, rows >= cols.
inline SvdResult jacobi_svd_tall(const Matrix& a, std::size_t max_sweeps) {
  const std::size_t m = a.rows(), n = a.cols();
  Matrix w = a;
  Matrix v = Matrix::identity(n);
  const double tol = 1e-14;

  bool converged = false;
  std::size_t sweep = 0;
  for (; sweep < max_sweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          alpha += wp * wp;
          beta += wq * wq;
          gamma += wp * wq;
        }
        if (gamma * gamma <= tol * tol * alpha * beta || gamma == 0.0) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
  }
  if (!converged)
    throw NumericalError("svd: one-sided Jacobi did not converge within " +
                         std::to_string(max_sweeps) + " sweeps");

  std::vector<double> sigma(n);
  Matrix u(m, n);
  for (std::size_t j = 0; j < n; ++j) {
    double norm = 0.0;
    for (std::size_t i = 0; i < m; ++i) norm += w(i, j) * w(i, j);
    norm = std::sqrt(norm);
    sigma[j] = norm;
    if (norm > 0.0)
      for (std::size_t i = 0; i < m; ++i) u(i, j) = w(i, j) / norm;
  }

  // Sort columns by descending singular value.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });
  SvdResult r;
  r.sigma.resize(n);
  r.u = Matrix(m, n);
  r.v = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    r.sigma[j] = sigma[src];
    for (std::size_t i = 0; i < m; ++i) r.u(i, j) = u(i, src);
    for (std::size_t i = 0; i < n; ++i) r.v(i, j) = v(i, src);
  }
  r.sweeps = sweep;
  return r;
}

}  // namespace detail

inline SvdResult svd(const Matrix& a, std::size_t max_sweeps = 100) {
  if (a.empty()) throw ShapeError("svd: empty matrix");
  if (a.rows() >= a.cols()) return detail::jacobi_svd_tall(a, max_sweeps);
  SvdResult t = detail::jacobi_svd_tall(transpose(a), max_sweeps);
  return SvdResult{std::move(t.v), std::move(t.sigma), std::move(t.u), t.sweeps};
}

struct PinvInfo {
  std::size_t rank = 0;
  double sigma_max = 0.0;
};

// Moore-Penrose pseudoinverse. Singular values below tol * sigma_max are
// treated as zero, giving the minimum-norm solution on rank-deficient input.
inline Matrix pinv(const Matrix& a, double tol = 1e-10, PinvInfo* info = nullptr) {
  if (a.empty()) throw ShapeError("pinv: empty matrix");
  if (tol < 0.0) throw NumericalError("pinv: negative tolerance");
  SvdResult s = svd(a);
  const double smax = s.sigma.empty() ? 0.0 : s.sigma.front();
  const double cutoff = tol * smax;
  const std::size_t k = s.sigma.size();
  Matrix vs = s.v;  // columns scaled by 1/sigma (zero where cut off)
  std::size_t rank = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const double sj = s.sigma[j];
    const double inv = (sj > cutoff && sj > 0.0) ? 1.0 / sj : 0.0;
    if (inv != 0.0) ++rank;
    for (std::size_t i = 0; i < vs.rows(); ++i) vs(i, j) *= inv;
  }
  if (info) {
    info->rank = rank;
    info->sigma_max = smax;
  }
  return matmul_nt(vs, s.u);
}

}  // namespace snstitch
