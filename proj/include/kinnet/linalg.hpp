#pragma once
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "kinnet/errors.hpp"

// Dense linear algebra for the small systems appearing here (kinetic
// Jacobians, Newton corrections, closure sub-Jacobians). Everything is
// row-major and unblocked; matrices stay well under 100x100.

namespace kinnet {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * cols_ + j]; }
  double* data() { return a_.data(); }
  const double* data() const { return a_.data(); }
  std::span<double> row(std::size_t i) { return {a_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {a_.data() + i * cols_, cols_}; }

  void fill(double v) { std::fill(a_.begin(), a_.end(), v); }

  friend bool operator==(const Matrix& x, const Matrix& y) {
    return x.rows_ == y.rows_ && x.cols_ == y.cols_ && x.a_ == y.a_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> a_;
};

inline Matrix operator*(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.rows()) throw dimension_error("matrix product shape mismatch");
  Matrix z(x.rows(), y.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xik = x(i, k);
      if (xik == 0.0) continue;
      for (std::size_t j = 0; j < y.cols(); ++j) z(i, j) += xik * y(k, j);
    }
  return z;
}

// In-place LU decomposition with partial pivoting. Returns false when the
// matrix is numerically singular (zero pivot).
struct LuFactors {
  Matrix lu;
  std::vector<int> piv;
  bool singular = false;
};

inline LuFactors lu_factor(Matrix m) {
  const std::size_t n = m.rows();
  if (n != m.cols()) throw dimension_error("lu_factor needs a square matrix");
  LuFactors f{std::move(m), std::vector<int>(n), false};
  Matrix& a = f.lu;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(a(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = std::abs(a(i, k));
      if (v > best) {
        best = v;
        p = i;
      }
    }
    f.piv[k] = static_cast<int>(p);
    if (best == 0.0) {
      f.singular = true;
      return f;
    }
    if (p != k)
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
    const double inv = 1.0 / a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double l = a(i, k) * inv;
      a(i, k) = l;
      if (l == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= l * a(k, j);
    }
  }
  return f;
}

inline void lu_solve(const LuFactors& f, std::span<double> x) {
  const std::size_t n = f.lu.rows();
  if (x.size() != n) throw dimension_error("lu_solve rhs length mismatch");
  if (f.singular) throw numeric_error("lu_solve on singular factorization");
  // Row-oriented forward pass: position k is final before later swaps occur,
  // so interleaving the pivot swaps with the elimination stays consistent.
  for (std::size_t k = 0; k < n; ++k) {
    const auto p = static_cast<std::size_t>(f.piv[k]);
    if (p != k) std::swap(x[k], x[p]);
    for (std::size_t j = 0; j < k; ++j) x[k] -= f.lu(k, j) * x[j];
  }
  for (std::size_t k = n; k-- > 0;) {
    for (std::size_t j = k + 1; j < n; ++j) x[k] -= f.lu(k, j) * x[j];
    x[k] /= f.lu(k, k);
  }
}

inline std::vector<double> lu_solve(const LuFactors& f, std::span<const double> b) {
  std::vector<double> x(b.begin(), b.end());
  lu_solve(f, std::span<double>(x));
  return x;
}

namespace detail {

// Householder reduction to upper Hessenberg form, in place.
inline void hessenberg(Matrix& a) {
  const std::size_t n = a.rows();
  if (n < 3) return;
  std::vector<double> v(n), w(n);
  for (std::size_t k = 0; k + 2 < n; ++k) {
    double scale = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) scale += std::abs(a(i, k));
    if (scale == 0.0) continue;
    double sigma = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) {
      v[i] = a(i, k) / scale;
      sigma += v[i] * v[i];
    }
    double alpha = std::sqrt(sigma);
    if (v[k + 1] > 0) alpha = -alpha;
    const double beta_denom = sigma - v[k + 1] * alpha;
    if (beta_denom == 0.0) continue;
    v[k + 1] -= alpha;
    const double beta = 1.0 / beta_denom;

    // A <- (I - beta v v^T) A, rows k+1..n-1
    for (std::size_t j = k; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = k + 1; i < n; ++i) s += v[i] * a(i, j);
      s *= beta;
      for (std::size_t i = k + 1; i < n; ++i) a(i, j) -= s * v[i];
    }
    // A <- A (I - beta v v^T), cols k+1..n-1
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = k + 1; j < n; ++j) s += a(i, j) * v[j];
      s *= beta;
      for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= s * v[j];
    }
    a(k + 1, k) = scale * alpha;
    for (std::size_t i = k + 2; i < n; ++i) a(i, k) = 0.0;
  }
}

inline double sign_like(double magnitude, double carrier) {
  return carrier >= 0.0 ? std::abs(magnitude) : -std::abs(magnitude);
}

}  // namespace detail

struct EigenOptions {
  double deflation_rtol = 1e-12;
  int max_sweeps_per_n = 100;  // total Francis sweeps allowed = 100 * n
};

// All eigenvalues of a real dense matrix: Householder Hessenberg reduction
// followed by Francis double-shift QR iteration with exceptional shifts.
// Eigenvalues come out in deflation order (bottom block first).
inline std::vector<std::complex<double>> eigenvalues(Matrix a, const EigenOptions& opt = {}) {
  const std::size_t n = a.rows();
  if (n != a.cols()) throw dimension_error("eigenvalues needs a square matrix");
  std::vector<std::complex<double>> out;
  if (n == 0) return out;
  out.reserve(n);
  detail::hessenberg(a);

  const long sweep_budget = static_cast<long>(opt.max_sweeps_per_n) * static_cast<long>(n);
  long sweeps = 0;
  double shift_accum = 0.0;
  long en = static_cast<long>(n) - 1;
  int its = 0;

  auto H = [&](long i, long j) -> double& {
    return a(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  };

  while (en >= 0) {
    // Find the smallest l such that the subdiagonal below it is negligible.
    long l = en;
    while (l > 0) {
      const double s = std::abs(H(l - 1, l - 1)) + std::abs(H(l, l));
      const double tol = opt.deflation_rtol * (s != 0.0 ? s : 1.0);
      if (std::abs(H(l, l - 1)) <= tol) {
        H(l, l - 1) = 0.0;
        break;
      }
      --l;
    }

    double x = H(en, en);
    if (l == en) {
      out.emplace_back(x + shift_accum, 0.0);
      --en;
      its = 0;
      continue;
    }
    double y = H(en - 1, en - 1);
    double w = H(en, en - 1) * H(en - 1, en);
    if (l == en - 1) {
      const double p = 0.5 * (y - x);
      const double q = p * p + w;
      x += shift_accum;
      if (q >= 0.0) {
        const double z = detail::sign_like(std::sqrt(q), p);
        const double zz = p + z;
        if (zz != 0.0) {
          out.emplace_back(x + zz, 0.0);
          out.emplace_back(x - w / zz, 0.0);
        } else {
          out.emplace_back(x, 0.0);
          out.emplace_back(x, 0.0);
        }
      } else {
        out.emplace_back(x + p, std::sqrt(-q));
        out.emplace_back(x + p, -std::sqrt(-q));
      }
      en -= 2;
      its = 0;
      continue;
    }

    if (sweeps >= sweep_budget)
      throw numeric_error("QR iteration did not converge within the sweep budget");
    ++sweeps;
    ++its;
    if (its % 10 == 0) {
      // Exceptional shift to break limit cycles. Applied to every still-active
      // diagonal entry so the accumulated shift stays consistent for blocks
      // deflated later.
      shift_accum += x;
      for (long i = 0; i <= en; ++i) H(i, i) -= x;
      const double s = std::abs(H(en, en - 1)) + std::abs(H(en - 1, en - 2));
      x = y = 0.75 * s;
      w = -0.4375 * s * s;
    }

    // Look for two consecutive small subdiagonal elements.
    long m = en - 2;
    double p = 0, q = 0, r = 0;
    while (m >= l) {
      const double z = H(m, m);
      const double rr = x - z;
      const double ss = y - z;
      p = (rr * ss - w) / H(m + 1, m) + H(m, m + 1);
      q = H(m + 1, m + 1) - z - rr - ss;
      r = H(m + 2, m + 1);
      const double scale = std::abs(p) + std::abs(q) + std::abs(r);
      p /= scale;
      q /= scale;
      r /= scale;
      if (m == l) break;
      const double lhs = std::abs(H(m, m - 1)) * (std::abs(q) + std::abs(r));
      const double rhs = std::abs(p) * (std::abs(H(m - 1, m - 1)) + std::abs(z) + std::abs(H(m + 1, m + 1)));
      if (lhs <= opt.deflation_rtol * rhs) break;
      --m;
    }
    for (long i = m + 2; i <= en; ++i) {
      H(i, i - 2) = 0.0;
      if (i > m + 2) H(i, i - 3) = 0.0;
    }

    // Double QR sweep on rows/columns m..en.
    for (long k = m; k <= en - 1; ++k) {
      const bool notlast = k != en - 1;
      if (k != m) {
        p = H(k, k - 1);
        q = H(k + 1, k - 1);
        r = notlast ? H(k + 2, k - 1) : 0.0;
        x = std::abs(p) + std::abs(q) + std::abs(r);
        if (x == 0.0) continue;
        p /= x;
        q /= x;
        r /= x;
      }
      double s = detail::sign_like(std::sqrt(p * p + q * q + r * r), p);
      if (k != m)
        H(k, k - 1) = -s * x;
      else if (l != m)
        H(k, k - 1) = -H(k, k - 1);
      p += s;
      x = p / s;
      y = q / s;
      double z = r / s;
      q /= p;
      r /= p;

      for (long j = k; j <= en; ++j) {
        double pj = H(k, j) + q * H(k + 1, j);
        if (notlast) {
          pj += r * H(k + 2, j);
          H(k + 2, j) -= pj * z;
        }
        H(k + 1, j) -= pj * y;
        H(k, j) -= pj * x;
      }
      const long imax = std::min(en, k + 3);
      for (long i = l; i <= imax; ++i) {
        double pi = x * H(i, k) + y * H(i, k + 1);
        if (notlast) {
          pi += z * H(i, k + 2);
          H(i, k + 2) -= pi * r;
        }
        H(i, k + 1) -= pi * q;
        H(i, k) -= pi;
      }
    }
  }
  return out;
}

}  // namespace kinnet
