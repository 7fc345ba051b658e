#pragma once

#include <cmath>
#include <utility>

#include "mscal/errors.hpp"
#include "mscal/kernels.hpp"

namespace mscal {

enum class DiscrepancyMode { GaSP, SGaSP };

inline const char* to_string(DiscrepancyMode m) {
  return m == DiscrepancyMode::GaSP ? "gasp" : "sgasp";
}

// Model of the shared discrepancy process: a plain GaSP, or the discretized
// scaled GaSP whose n-point marginal covariance is tau^2 * R_z with
// R_z = (R^{-1} + (lambda_z / n) I)^{-1}. lambda_z = 0 reduces exactly to GaSP.
struct DiscrepancyModel {
  DiscrepancyMode mode = DiscrepancyMode::GaSP;
  double lambda_z = 0.0;
  KernelSpec kernel;
  double tau2 = 1.0;

  void validate() const {
    kernel.validate();
    if (!(lambda_z >= 0.0)) throw DomainError("DiscrepancyModel: lambda_z must be >= 0");
    if (!(tau2 > 0.0)) throw DomainError("DiscrepancyModel: tau2 must be positive");
    if (mode == DiscrepancyMode::GaSP && lambda_z != 0.0)
      throw DomainError("DiscrepancyModel: GaSP mode requires lambda_z = 0");
  }

  double effective_lambda() const { return mode == DiscrepancyMode::SGaSP ? lambda_z : 0.0; }
};

// Default scaling parameter lambda_z = C * sqrt(n) with C = 100.
inline double default_lambda_z(int n) {
  if (n < 1) throw DomainError("default_lambda_z: n must be >= 1");
  return 100.0 * std::sqrt(static_cast<double>(n));
}

// Transformed covariance R_z = (R^{-1} + (lambda_z / n) I)^{-1}, computed as
// (I + c R)^{-1} R with c = lambda_z / n so that R^{-1} is never formed.
inline CorrelationMatrix transform_covariance(const CorrelationMatrix& r, double lambda_z, int n) {
  if (!(lambda_z >= 0.0)) throw DomainError("transform_covariance: lambda_z must be >= 0");
  if (n < 1 || r.n() != n) throw DomainError("transform_covariance: size mismatch");
  const double c = lambda_z / static_cast<double>(n);
  if (c == 0.0) return r;
  Mat m = c * r.entries;
  m.diagonal().array() += 1.0;
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) throw NumericalError("transform_covariance: I + c R not positive definite");
  Mat rz = llt.solve(r.entries);
  rz = 0.5 * (rz + rz.transpose()).eval();
  return factor_spd(std::move(rz), "transformed covariance R_z");
}

// Exponential scaling density f_Z(z) with rate lambda_z / (2 tau^2 Vol(X)).
inline double scaling_density(double z, double tau2, double lambda_z, double vol) {
  if (!(z >= 0.0)) throw DomainError("scaling_density: z must be >= 0");
  if (!(tau2 > 0.0) || !(lambda_z > 0.0) || !(vol > 0.0))
    throw DomainError("scaling_density: tau2, lambda_z, vol must be positive");
  const double rate = lambda_z / (2.0 * tau2 * vol);
  return rate * std::exp(-rate * z);
}

// Density of the mean squared discrepancy under the scaled process: the GaSP
// density of Z reweighted by the scaling function (documentation/test use;
// inference uses the marginal R_z form).
inline double scaled_z_density(double z, double gasp_density_at_z, double normalizer, double tau2,
                               double lambda_z, double vol) {
  if (!(normalizer > 0.0)) throw DomainError("scaled_z_density: normalizer must be positive");
  return scaling_density(z, tau2, lambda_z, vol) * gasp_density_at_z / normalizer;
}

// Volume of the axis-aligned bounding box of a design; the computable
// default for Vol(X).
inline double bounding_box_volume(const Mat& inputs) {
  if (inputs.rows() < 1) throw DomainError("bounding_box_volume: empty design");
  double vol = 1.0;
  for (int t = 0; t < inputs.cols(); ++t) {
    const double w = inputs.col(t).maxCoeff() - inputs.col(t).minCoeff();
    vol *= (w > 0.0 ? w : 1.0);
  }
  return vol;
}

}  // namespace mscal
