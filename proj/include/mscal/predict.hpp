#pragma once

#include <cmath>
#include <cstdio>
#include <vector>

#include "mscal/errors.hpp"
#include "mscal/likelihood.hpp"
#include "mscal/types.hpp"

namespace mscal {

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

namespace detail {

// Roundoff guard: variances may undershoot zero by a hair; anything worse
// than -1e-10 is a real numerical failure.
inline double clamp_variance(double v, const char* where) {
  if (v < -1e-10) throw NumericalError(std::string(where) + ": negative predictive variance");
  if (v < 0.0) {
    std::fprintf(stderr, "[mscal] warning: clamping variance %.3e to 0 in %s\n", v, where);
    return 0.0;
  }
  return v;
}

}  // namespace detail

// Predictive distribution of the shared discrepancy at a new input, given a
// discrepancy vector at the design points. The scaled process reweights the
// design values only, so conditionally on them the extension to a new input
// follows the plain-kernel Gaussian conditional (under S-GaSP the transformed
// covariance R_z enters through delta's posterior, not through these
// weights; substituting R_z here would break interpolation and produce
// negative variances).
inline Prediction predict_discrepancy(const LikelihoodEngine& eng, const Eigen::Ref<const Vec>& xstar,
                                      const Vec& delta) {
  const auto& d = eng.disc();
  const KernelSpec spec = kernel_with_beta(eng.config().disc_family, d.beta, eng.config().disc_roughness);
  const Vec r = kernel_cross(spec, eng.inputs(), xstar);
  const Vec w = d.base.solve(r);
  const double mean = w.dot(delta);
  const double variance = detail::clamp_variance(d.tau2 * (1.0 - w.dot(r)), "predict_discrepancy");
  return {mean, variance};
}

// Predictive distribution of the measurement bias of source l.
inline Prediction predict_bias(const LikelihoodEngine& eng, int l, const Eigen::Ref<const Vec>& xstar,
                               const Vec& delta) {
  const auto& term = eng.source_term(l);
  if (!term.is_bias) throw DomainError("predict_bias: source has no bias process");
  const KernelSpec spec = kernel_with_beta(eng.config().bias_family, term.beta, eng.config().bias_roughness);
  const Vec r = kernel_cross(spec, eng.inputs(), xstar);
  const Vec w = term.inv * r;
  const double mean = term.sigma2 * w.dot(eng.residual(l) - delta);
  const double variance =
      detail::clamp_variance(term.sigma2 * (1.0 - term.sigma2 * w.dot(r)), "predict_bias");
  return {mean, variance};
}

// Predictive distribution of the observable field of source l at a new
// input: model + discrepancy + bias + source mean, with all three variance
// components plus the noise floor.
inline Prediction predict_field(const LikelihoodEngine& eng, int l, const Eigen::Ref<const Vec>& xstar,
                                const Vec& delta, double f_at_xstar) {
  const Prediction pd = predict_discrepancy(eng, xstar, delta);
  const auto& term = eng.source_term(l);
  Prediction pb{0.0, 0.0};
  if (term.is_bias) pb = predict_bias(eng, l, xstar, delta);
  return {pd.mean + pb.mean + f_at_xstar + eng.mu()[l], pd.variance + pb.variance + term.noise};
}

inline Prediction predict_field(const LikelihoodEngine& eng, int l, const Eigen::Ref<const Vec>& xstar,
                                const Vec& delta) {
  if (eng.forward() == nullptr) throw DomainError("predict_field: no forward model attached");
  Mat one(1, xstar.size());
  one.row(0) = xstar.transpose();
  const double f = eng.forward()->evaluate(eng.theta(), one, eng.look(l))[0];
  return predict_field(eng, l, xstar, delta, f);
}

// Reality prediction f^M(x*, theta) + delta_hat(x*); source means are
// measurement artifacts and are excluded here.
inline Prediction predict_reality(const LikelihoodEngine& eng, const Eigen::Ref<const Vec>& xstar,
                                  const Vec& delta, double f_at_xstar) {
  Prediction p = predict_discrepancy(eng, xstar, delta);
  p.mean += f_at_xstar;
  return p;
}

// Mixture moments over retained posterior draws; with one draw this reduces
// exactly to the single-draw predictive.
class PredictionAccumulator {
public:
  void add(const Prediction& p) {
    ++count_;
    sum_mean_ += p.mean;
    sum_second_ += p.variance + p.mean * p.mean;
  }
  Prediction finalize() const {
    if (count_ == 0) throw DomainError("PredictionAccumulator: no draws");
    const double m = sum_mean_ / count_;
    return {m, detail::clamp_variance(sum_second_ / count_ - m * m, "PredictionAccumulator")};
  }

private:
  long count_ = 0;
  double sum_mean_ = 0.0;
  double sum_second_ = 0.0;
};

// Mean squared difference; serves both MSE_fM and MSE_fM+delta.
inline double evaluate_mse(const Vec& predictions, const Vec& truth) {
  if (predictions.size() != truth.size() || predictions.size() == 0)
    throw DomainError("evaluate_mse: length mismatch");
  return (predictions - truth).squaredNorm() / static_cast<double>(predictions.size());
}

}  // namespace mscal
