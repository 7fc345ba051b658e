#pragma once

#include <cmath>

#include "mscal/errors.hpp"
#include "mscal/likelihood.hpp"
#include "mscal/types.hpp"

namespace mscal {

// Jointly robust prior over inverse ranges and nugget:
//   pi(beta, eta) = c (sum C_t beta_t + eta)^a exp(-b (sum C_t beta_t + eta))
// with c = p! b^(a+p+1) prod C_t / Gamma(a+p+1).
struct JrPrior {
  double a = -0.5;
  double b = 1.0;
  Vec c;

  int p() const { return static_cast<int>(c.size()); }

  void validate() const {
    if (c.size() == 0) throw DomainError("JrPrior: empty C");
    if (!(a > -1.0 - p())) throw DomainError("JrPrior: need a > -1 - p");
    if (!(b > 0.0)) throw DomainError("JrPrior: need b > 0");
    if ((c.array() <= 0.0).any()) throw DomainError("JrPrior: need C_t > 0");
  }

  // Defaults a = 1/2 - p, b = 1, C_t = n^(-1/p) |x_t^max - x_t^min|.
  static JrPrior defaults(const Mat& inputs) {
    const int p = static_cast<int>(inputs.cols());
    const int n = static_cast<int>(inputs.rows());
    JrPrior out;
    out.a = 0.5 - p;
    out.b = 1.0;
    out.c = Vec(p);
    const double scale = std::pow(static_cast<double>(n), -1.0 / p);
    for (int t = 0; t < p; ++t) {
      const double range = inputs.col(t).maxCoeff() - inputs.col(t).minCoeff();
      out.c[t] = scale * (range > 0.0 ? range : 1.0);
    }
    return out;
  }

  double log_normalizer() const {
    return std::lgamma(p() + 1.0) + (a + p() + 1.0) * std::log(b) + c.array().log().sum() -
           std::lgamma(a + p() + 1.0);
  }

  double logdensity(const Vec& beta, double eta) const {
    validate();
    if (beta.size() != c.size()) throw DomainError("JrPrior: dimension mismatch");
    const double t = c.dot(beta) + eta;
    if (!(t > 0.0)) throw DomainError("JrPrior: sum C_t beta_t + eta must be positive");
    return log_normalizer() + a * std::log(t) - b * t;
  }
};

inline double jr_prior_logdensity(const Vec& beta, double eta, double a, double b, const Vec& c) {
  JrPrior prior{a, b, c};
  return prior.logdensity(beta, eta);
}

// Objective prior of the calibration problem: uniform box on theta, flat on
// the means, 1/tau^2 and 1/sigma2_l on the scales, JR on ranges and nuggets.
struct PriorSpec {
  Vec theta_lower, theta_upper;
  JrPrior disc_jr;
  JrPrior bias_jr;

  bool theta_in_box(const Vec& theta) const {
    if (theta.size() != theta_lower.size()) throw DomainError("PriorSpec: theta dimension mismatch");
    for (int i = 0; i < theta.size(); ++i)
      if (theta[i] < theta_lower[i] || theta[i] > theta_upper[i]) return false;
    return true;
  }

  double log_theta_density() const {
    double s = 0.0;
    for (int i = 0; i < theta_lower.size(); ++i) {
      const double w = theta_upper[i] - theta_lower[i];
      if (!(w > 0.0)) throw DomainError("PriorSpec: empty theta box");
      s -= std::log(w);
    }
    return s;
  }

  static PriorSpec defaults(const Mat& inputs, const Vec& theta_lower, const Vec& theta_upper) {
    PriorSpec out;
    out.theta_lower = theta_lower;
    out.theta_upper = theta_upper;
    out.disc_jr = JrPrior::defaults(inputs);
    out.bias_jr = JrPrior::defaults(inputs);
    return out;
  }
};

// Log posterior of the bias-separating model up to the flat-mean constant:
// block likelihood plus the objective prior. -inf outside the theta box.
inline double log_posterior(const ParameterState& state, const MultiSourceDataset& ds, const Vec& f,
                            const LikelihoodConfig& config, const PriorSpec& priors) {
  state.validate();
  if (state.theta.size() > 0 && !priors.theta_in_box(state.theta))
    return -std::numeric_limits<double>::infinity();
  double lp = joint_marginal(ds, f, state, config);
  if (state.theta.size() > 0) lp += priors.log_theta_density();
  for (int l = 0; l < state.k(); ++l)
    lp += priors.bias_jr.logdensity(state.beta_bias.row(l).transpose(), state.eta[l]) -
          std::log(state.sigma2[l]);
  lp += priors.disc_jr.logdensity(state.beta_disc, 0.0) - std::log(state.tau2);
  return lp;
}

}  // namespace mscal
