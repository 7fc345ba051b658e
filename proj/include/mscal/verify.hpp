#pragma once

#include <cmath>
#include <functional>
#include <utility>

#include "mscal/errors.hpp"
#include "mscal/types.hpp"

// Independent oracles used by tests and the CLI `verify` subcommand.
// The factorization code here is hand-rolled on purpose: it must not share
// a code path with the production likelihood modules.
namespace mscal::verify {

// Textbook lower Cholesky. Returns false if the matrix is not positive
// definite. No jitter, no pivoting.
inline bool cholesky_lower(const Mat& a, Mat& lower) {
  const int n = static_cast<int>(a.rows());
  lower = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a(i, j);
      for (int k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      if (i == j) {
        if (!(s > 0.0)) return false;
        lower(i, i) = std::sqrt(s);
      } else {
        lower(i, j) = s / lower(j, j);
      }
    }
  }
  return true;
}

inline Vec forward_substitute(const Mat& lower, const Vec& b) {
  const int n = static_cast<int>(b.size());
  Vec x(n);
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= lower(i, k) * x[k];
    x[i] = s / lower(i, i);
  }
  return x;
}

inline Vec back_substitute(const Mat& lower, const Vec& b) {
  const int n = static_cast<int>(b.size());
  Vec x(n);
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int k = i + 1; k < n; ++k) s -= lower(k, i) * x[k];
    x[i] = s / lower(i, i);
  }
  return x;
}

// Exact multivariate-normal log density via the hand-rolled factorization.
inline double dense_mvn_logpdf(const Vec& y, const Vec& mean, const Mat& cov) {
  if (y.size() != mean.size() || cov.rows() != y.size() || cov.cols() != y.size())
    throw DomainError("dense_mvn_logpdf: dimension mismatch");
  Mat lower;
  if (!cholesky_lower(cov, lower)) throw NumericalError("dense_mvn_logpdf: covariance not positive definite");
  const int m = static_cast<int>(y.size());
  double log_det = 0.0;
  for (int i = 0; i < m; ++i) log_det += 2.0 * std::log(lower(i, i));
  const Vec z = forward_substitute(lower, y - mean);
  return -0.5 * m * std::log(2.0 * M_PI) - 0.5 * log_det - 0.5 * z.squaredNorm();
}

// Gaussian conditioning of the first coordinate on the remaining ones:
// joint N(mean, cov) with cov partitioned [[c00, c0r], [cr0, Crr]].
inline std::pair<double, double> condition_first_on_rest(const Vec& mean, const Mat& cov,
                                                         const Vec& observed_rest) {
  const int m = static_cast<int>(mean.size());
  if (cov.rows() != m || cov.cols() != m || observed_rest.size() != m - 1)
    throw DomainError("condition_first_on_rest: dimension mismatch");
  Mat lower;
  if (!cholesky_lower(cov.bottomRightCorner(m - 1, m - 1), lower))
    throw NumericalError("condition_first_on_rest: conditioning block not positive definite");
  const Vec c0r = cov.row(0).tail(m - 1);
  const Vec w = back_substitute(lower, forward_substitute(lower, c0r));
  const double cond_mean = mean[0] + w.dot(observed_rest - mean.tail(m - 1));
  const double cond_var = cov(0, 0) - w.dot(c0r);
  return {cond_mean, cond_var};
}

// Closed-form tridiagonal inverse of the AR(1) correlation matrix
// R_ij = rho^|i-j| (exponential kernel on an equally spaced grid).
inline Mat ar1_inverse(int n, double rho) {
  if (n < 2) throw DomainError("ar1_inverse: need n >= 2");
  if (!(std::abs(rho) < 1.0)) throw DomainError("ar1_inverse: need |rho| < 1");
  Mat inv = Mat::Zero(n, n);
  const double f = 1.0 / (1.0 - rho * rho);
  inv(0, 0) = f;
  inv(n - 1, n - 1) = f;
  for (int i = 1; i < n - 1; ++i) inv(i, i) = f * (1.0 + rho * rho);
  for (int i = 0; i + 1 < n; ++i) {
    inv(i, i + 1) = -f * rho;
    inv(i + 1, i) = -f * rho;
  }
  return inv;
}

// Limiting variance of the closed-form calibration MLE for the exponential
// kernel on a fixed domain: 2 tau^2 gamma / (2 gamma + 1).
inline double limiting_mle_variance(double tau2, double gamma) {
  if (!(tau2 > 0.0) || !(gamma > 0.0)) throw DomainError("limiting_mle_variance: arguments must be positive");
  return 2.0 * tau2 * gamma / (2.0 * gamma + 1.0);
}

// Composite Simpson quadrature on [a, b] with an even number of intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int intervals) {
  if (intervals < 2) throw DomainError("simpson: need at least 2 intervals");
  if (intervals % 2 != 0) ++intervals;
  const double h = (b - a) / intervals;
  double s = f(a) + f(b);
  for (int i = 1; i < intervals; ++i) s += f(a + i * h) * (i % 2 == 0 ? 2.0 : 4.0);
  return s * h / 3.0;
}

}  // namespace mscal::verify
