#pragma once

#include <cmath>
#include <sstream>
#include <string>

#include "mscal/errors.hpp"
#include "mscal/types.hpp"

namespace mscal {

enum class KernelFamily { PowerExponential, Matern52, Exponential };

inline const char* to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::PowerExponential: return "power_exponential";
    case KernelFamily::Matern52: return "matern52";
    case KernelFamily::Exponential: return "exponential";
  }
  return "?";
}

inline KernelFamily kernel_family_from_string(const std::string& s) {
  if (s == "power_exponential") return KernelFamily::PowerExponential;
  if (s == "matern52") return KernelFamily::Matern52;
  if (s == "exponential") return KernelFamily::Exponential;
  throw DomainError("unknown kernel family: " + s);
}

// Anisotropic product kernel: family plus per-dimension inverse ranges
// beta_t = 1/gamma_t. Roughness alpha_t applies to PowerExponential only;
// Exponential is dispatched as PowerExponential with alpha_t = 1.
struct KernelSpec {
  KernelFamily family = KernelFamily::Matern52;
  Vec inverse_ranges;  // beta_t > 0
  Vec roughness;       // alpha_t in (0, 2]; ignored by Matern52

  int dim() const { return static_cast<int>(inverse_ranges.size()); }

  void validate() const {
    if (inverse_ranges.size() == 0) throw DomainError("KernelSpec: empty inverse_ranges");
    for (int t = 0; t < inverse_ranges.size(); ++t) {
      const double b = inverse_ranges[t];
      if (!(b > 0.0) || !std::isfinite(b))
        throw DomainError("KernelSpec: inverse range must be positive and finite");
    }
    if (family == KernelFamily::PowerExponential) {
      if (roughness.size() != inverse_ranges.size())
        throw DomainError("KernelSpec: roughness length must match dimension");
      for (int t = 0; t < roughness.size(); ++t)
        if (!(roughness[t] > 0.0 && roughness[t] <= 2.0))
          throw DomainError("KernelSpec: roughness must lie in (0, 2]");
    }
  }
};

inline KernelSpec make_kernel_spec(KernelFamily family, const Vec& inverse_ranges) {
  KernelSpec spec;
  spec.family = family;
  spec.inverse_ranges = inverse_ranges;
  spec.roughness = Vec::Ones(inverse_ranges.size());
  spec.validate();
  return spec;
}

namespace detail {

inline double matern52_1d(double d_over_gamma) {
  const double c = std::sqrt(5.0) * d_over_gamma;
  return (1.0 + c + c * c / 3.0) * std::exp(-c);
}

inline double power_exponential_1d(double d_over_gamma, double alpha) {
  return std::exp(-std::pow(d_over_gamma, alpha));
}

}  // namespace detail

// One-dimensional correlation K(d) for distance d >= 0 and range gamma > 0.
inline double eval_kernel_1d(KernelFamily family, double d, double gamma, double alpha = 1.0) {
  if (!std::isfinite(d) || d < 0.0) throw DomainError("eval_kernel_1d: distance must be finite and >= 0");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw DomainError("eval_kernel_1d: range must be positive");
  switch (family) {
    case KernelFamily::Matern52:
      return detail::matern52_1d(d / gamma);
    case KernelFamily::Exponential:
      alpha = 1.0;
      [[fallthrough]];
    case KernelFamily::PowerExponential:
      if (!(alpha > 0.0 && alpha <= 2.0)) throw DomainError("eval_kernel_1d: roughness must lie in (0, 2]");
      return detail::power_exponential_1d(d / gamma, alpha);
  }
  throw DomainError("eval_kernel_1d: unknown family");
}

// Product over coordinates of one-dimensional kernels, Eq-style anisotropy.
inline double eval_product_kernel(const KernelSpec& spec, const Eigen::Ref<const Vec>& xa,
                                  const Eigen::Ref<const Vec>& xb) {
  spec.validate();
  if (xa.size() != spec.dim() || xb.size() != spec.dim())
    throw DomainError("eval_product_kernel: input dimension mismatch");
  double k = 1.0;
  for (int t = 0; t < spec.dim(); ++t) {
    const double alpha = spec.family == KernelFamily::PowerExponential ? spec.roughness[t] : 1.0;
    k *= eval_kernel_1d(spec.family, std::abs(xa[t] - xb[t]), 1.0 / spec.inverse_ranges[t], alpha);
  }
  return k;
}

// Symmetric positive-definite matrix with its Cholesky factor. `entries`
// excludes the jitter; chol_lower factors entries + jitter_used * I.
struct CorrelationMatrix {
  Mat entries;
  Mat chol_lower;
  double log_det = 0.0;
  double jitter_used = 0.0;

  int n() const { return static_cast<int>(entries.rows()); }

  Vec solve(const Eigen::Ref<const Vec>& b) const {
    Vec y = chol_lower.triangularView<Eigen::Lower>().solve(b);
    return chol_lower.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  Mat solve_matrix(const Eigen::Ref<const Mat>& b) const {
    Mat y = chol_lower.triangularView<Eigen::Lower>().solve(b);
    return chol_lower.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  // v' (entries + jitter I)^{-1} v
  double quad_form(const Eigen::Ref<const Vec>& v) const {
    Vec y = chol_lower.triangularView<Eigen::Lower>().solve(v);
    return y.squaredNorm();
  }

  Mat inverse() const { return solve_matrix(Mat::Identity(n(), n())); }
};

namespace detail {

// Jitter escalation ladder shared by all factorizations.
inline constexpr double kJitterLadder[] = {0.0, 1e-10, 1e-8, 1e-6};

inline bool try_cholesky(const Mat& m, double jitter, Mat& lower, double& log_det) {
  Mat work = m;
  if (jitter > 0.0) work.diagonal().array() += jitter;
  Eigen::LLT<Mat> llt(work);
  if (llt.info() != Eigen::Success) return false;
  lower = llt.matrixL();
  // LLT can report success on an exactly singular matrix; a collapsed pivot
  // means the factor is unusable and the next jitter rung is needed.
  const double max_piv = lower.diagonal().maxCoeff();
  const double min_piv = lower.diagonal().minCoeff();
  if (!(min_piv > 1e-7 * max_piv) || !std::isfinite(min_piv)) return false;
  log_det = 2.0 * lower.diagonal().array().log().sum();
  return !std::isnan(log_det);
}

}  // namespace detail

// Factor a symmetric positive-definite matrix, escalating the diagonal
// jitter through the ladder. `scale` multiplies the ladder rungs so that
// covariance matrices with non-unit diagonal get proportionate jitter.
inline CorrelationMatrix factor_spd(Mat m, const std::string& what, double scale = 1.0) {
  CorrelationMatrix out;
  out.entries = std::move(m);
  for (double rung : detail::kJitterLadder) {
    const double jitter = rung * scale;
    if (detail::try_cholesky(out.entries, jitter, out.chol_lower, out.log_det)) {
      out.jitter_used = jitter;
      return out;
    }
  }
  throw NumericalError("Cholesky failed after maximal jitter for " + what);
}

// Correlation matrix of a design (n x p), entry (i,j) = product kernel of
// rows i and j. Column-at-a-time array evaluation keeps exp/pow vectorized.
inline CorrelationMatrix build_correlation_matrix(const KernelSpec& spec, const Mat& inputs) {
  spec.validate();
  const int n = static_cast<int>(inputs.rows());
  if (n < 1) throw DomainError("build_correlation_matrix: need at least one input row");
  if (inputs.cols() != spec.dim()) throw DomainError("build_correlation_matrix: design dimension mismatch");
  if (!inputs.allFinite()) throw DomainError("build_correlation_matrix: non-finite inputs");

  Mat r = Mat::Ones(n, n);
  Eigen::ArrayXXd c(n, n);
  for (int t = 0; t < spec.dim(); ++t) {
    const double beta = spec.inverse_ranges[t];
    const auto col = inputs.col(t).array();
    c = beta * (col.replicate(1, n) - col.transpose().replicate(n, 1)).abs();
    switch (spec.family) {
      case KernelFamily::Matern52:
        c *= std::sqrt(5.0);
        r.array() *= (1.0 + c + c.square() / 3.0) * (-c).exp();
        break;
      case KernelFamily::Exponential:
        r.array() *= (-c.pow(1.0)).exp();
        break;
      case KernelFamily::PowerExponential:
        r.array() *= (-c.pow(spec.roughness[t])).exp();
        break;
    }
  }

  std::ostringstream what;
  what << "correlation matrix (family=" << to_string(spec.family) << ", n=" << n
       << ", beta=" << spec.inverse_ranges.transpose() << ")";
  return factor_spd(std::move(r), what.str());
}

// Cross-correlation vector r(x*) between a new input and the design rows.
inline Vec kernel_cross(const KernelSpec& spec, const Mat& inputs, const Eigen::Ref<const Vec>& xstar) {
  const int n = static_cast<int>(inputs.rows());
  Vec r(n);
  for (int i = 0; i < n; ++i) r[i] = eval_product_kernel(spec, inputs.row(i).transpose(), xstar);
  return r;
}

}  // namespace mscal
