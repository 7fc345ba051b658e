#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "mscal/data.hpp"
#include "mscal/discrepancy.hpp"
#include "mscal/errors.hpp"
#include "mscal/forward.hpp"
#include "mscal/kernels.hpp"
#include "mscal/rng.hpp"
#include "mscal/types.hpp"

namespace mscal {

// Full parameter vector of the bias-separating model.
struct ParameterState {
  Vec theta;
  Vec mu;         // per-source means, length k
  Vec sigma2;     // per-source bias variances, length k
  Mat beta_bias;  // k x p inverse ranges of the bias processes
  Vec eta;        // per-source nuggets eta_l = sigma2_0l / sigma2_l
  double tau2 = 1.0;
  Vec beta_disc;  // p inverse ranges of the discrepancy process

  int k() const { return static_cast<int>(mu.size()); }
  int p() const { return static_cast<int>(beta_disc.size()); }

  void validate() const {
    const int kk = k(), pp = p();
    if (sigma2.size() != kk || eta.size() != kk || beta_bias.rows() != kk || beta_bias.cols() != pp)
      throw DomainError("ParameterState: inconsistent dimensions");
    for (int l = 0; l < kk; ++l) {
      if (!(sigma2[l] > 0.0)) throw DomainError("ParameterState: sigma2 must be positive");
      if (!(eta[l] >= 0.0)) throw DomainError("ParameterState: eta must be nonnegative");
    }
    if (!(tau2 > 0.0)) throw DomainError("ParameterState: tau2 must be positive");
    if ((beta_disc.array() <= 0.0).any() || (beta_bias.array() <= 0.0).any())
      throw DomainError("ParameterState: inverse ranges must be positive");
  }

  double noise_variance(int l) const { return eta[l] * sigma2[l]; }
};

// Kernel configuration shared by likelihood, prediction and inference:
// which families (and fixed roughnesses) parameterize the discrepancy and
// measurement-bias processes, and the discrepancy scaling mode.
struct LikelihoodConfig {
  DiscrepancyMode mode = DiscrepancyMode::GaSP;
  double lambda_z = 0.0;
  KernelFamily disc_family = KernelFamily::Matern52;
  KernelFamily bias_family = KernelFamily::Matern52;
  Vec disc_roughness;  // per-dimension alpha for PowerExponential; empty = 1
  Vec bias_roughness;

  double effective_lambda() const { return mode == DiscrepancyMode::SGaSP ? lambda_z : 0.0; }
};

inline KernelSpec kernel_with_beta(KernelFamily family, const Vec& beta, const Vec& roughness) {
  KernelSpec spec;
  spec.family = family;
  spec.inverse_ranges = beta;
  spec.roughness = roughness.size() == beta.size() ? roughness : Vec::Ones(beta.size());
  spec.validate();
  return spec;
}

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093453;

// Per-source marginal covariance Sigma~_l with factor and explicit inverse.
struct SourceTerm {
  Mat chol;  // lower factor of Sigma~_l (+ jitter where needed)
  Mat inv;
  double log_det = 0.0;
  bool is_bias = true;
  double sigma2 = 1.0, eta = 0.0, noise = 0.0;
  Vec beta;
};

struct DiscTerm {
  CorrelationMatrix corr;  // R (GaSP) or R_z (S-GaSP), factored; governs delta's law
  CorrelationMatrix base;  // plain R; conditional-extension weights for prediction
  double tau2 = 1.0;
  Mat precision;           // (tau^2 corr)^{-1}
  double log_det_cov = 0;  // log |tau^2 corr|
  Vec beta;
};

}  // namespace detail

// Cached evaluator of the exact block likelihood after marginalizing the
// measurement-bias processes (per source) and the shared discrepancy:
// k + 1 factorizations of n x n matrices per full update, with selective
// refresh of single blocks for samplers.
class LikelihoodEngine {
public:
  LikelihoodEngine(const MultiSourceDataset& ds, LikelihoodConfig config,
                   const ForwardModel* forward = nullptr)
      : config_(config), forward_(forward) {
    if (ds.sources.empty()) throw DomainError("LikelihoodEngine: empty dataset");
    MultiSourceDataset check = ds;
    if (!validate_alignment(check))
      throw AlignmentError(
          "LikelihoodEngine: the bias-separating model requires aligned sources; "
          "use the aggregated (no-bias) model for misaligned data");
    inputs_ = ds.sources.front().inputs;
    n_ = static_cast<int>(inputs_.rows());
    k_ = ds.k();
    y_.reserve(k_);
    looks_.reserve(k_);
    for (const auto& s : ds.sources) {
      y_.push_back(s.outputs);
      looks_.push_back(s.look_vector);
    }
    f_.assign(k_, Vec::Zero(n_));
    mu_ = Vec::Zero(k_);
    terms_.resize(k_);
    terms_set_.assign(k_, false);
    s_sum_ = Mat::Zero(n_, n_);
  }

  int n() const { return n_; }
  int k() const { return k_; }
  int dim() const { return static_cast<int>(inputs_.cols()); }
  const Mat& inputs() const { return inputs_; }
  const Vec& outputs(int l) const { return y_[l]; }
  const std::optional<LookVector>& look(int l) const { return looks_[l]; }
  const LikelihoodConfig& config() const { return config_; }
  const ForwardModel* forward() const { return forward_; }

  // --- state setters -------------------------------------------------------

  void set_theta(const Vec& theta) {
    if (forward_ == nullptr) throw DomainError("LikelihoodEngine: no forward model attached");
    theta_ = theta;
    for (int l = 0; l < k_; ++l) f_[l] = forward_->evaluate(theta, inputs_, looks_[l]);
  }

  // Direct mean vector, identical for every source (test and toy use).
  void set_f_direct(const Vec& f) {
    if (f.size() != n_) throw DomainError("LikelihoodEngine: f length mismatch");
    theta_.resize(0);
    for (int l = 0; l < k_; ++l) f_[l] = f;
  }

  void set_mu(const Vec& mu) {
    if (mu.size() != k_) throw DomainError("LikelihoodEngine: mu length mismatch");
    mu_ = mu;
  }

  void set_bias_source(int l, double sigma2, const Vec& beta, double eta) {
    check_source(l);
    if (!(sigma2 > 0.0) || !(eta >= 0.0)) throw DomainError("set_bias_source: invalid variance parameters");
    detail::SourceTerm term;
    term.is_bias = true;
    term.sigma2 = sigma2;
    term.eta = eta;
    term.noise = sigma2 * eta;
    term.beta = beta;
    const KernelSpec spec = kernel_with_beta(config_.bias_family, beta, config_.bias_roughness);
    Mat cov = build_correlation_matrix(spec, inputs_).entries;
    cov.diagonal().array() += eta;
    cov *= sigma2;
    CorrelationMatrix f = factor_spd(std::move(cov), "source covariance", sigma2 * (1.0 + eta));
    term.chol = std::move(f.chol_lower);
    term.log_det = f.log_det;
    term.inv = term.chol.triangularView<Eigen::Lower>().solve(Mat::Identity(n_, n_));
    term.inv = (term.inv.transpose() * term.inv).eval();
    install_term(l, std::move(term));
  }

  void set_noise_source(int l, double sigma2_0) {
    check_source(l);
    if (!(sigma2_0 > 0.0)) throw DomainError("set_noise_source: noise variance must be positive");
    detail::SourceTerm term;
    term.is_bias = false;
    term.noise = sigma2_0;
    term.sigma2 = 0.0;
    term.eta = 0.0;
    term.chol = Mat::Identity(n_, n_) * std::sqrt(sigma2_0);
    term.inv = Mat::Identity(n_, n_) / sigma2_0;
    term.log_det = n_ * std::log(sigma2_0);
    install_term(l, std::move(term));
  }

  void set_discrepancy(double tau2, const Vec& beta_disc) {
    if (!(tau2 > 0.0)) throw DomainError("set_discrepancy: tau2 must be positive");
    detail::DiscTerm d;
    d.tau2 = tau2;
    d.beta = beta_disc;
    const KernelSpec spec = kernel_with_beta(config_.disc_family, beta_disc, config_.disc_roughness);
    CorrelationMatrix r = build_correlation_matrix(spec, inputs_);
    const double lambda = config_.effective_lambda();
    d.corr = lambda > 0.0 ? transform_covariance(r, lambda, n_) : r;
    d.base = std::move(r);
    d.precision = d.corr.inverse() / tau2;
    d.log_det_cov = n_ * std::log(tau2) + d.corr.log_det;
    disc_ = std::move(d);
    disc_set_ = true;
    refresh_posterior_precision();
  }

  void set_state(const ParameterState& state) {
    state.validate();
    if (state.k() != k_) throw DomainError("set_state: source count mismatch");
    if (forward_ != nullptr && state.theta.size() > 0) set_theta(state.theta);
    set_mu(state.mu);
    for (int l = 0; l < k_; ++l) set_bias_source(l, state.sigma2[l], state.beta_bias.row(l).transpose(), state.eta[l]);
    set_discrepancy(state.tau2, state.beta_disc);
  }

  // --- snapshots for reject/restore in samplers ----------------------------

  struct SourceSnapshot {
    int l;
    detail::SourceTerm term;
    Mat s_sum, chol_a;
    double log_det_a;
  };
  struct DiscSnapshot {
    detail::DiscTerm disc;
    Mat chol_a;
    double log_det_a;
  };
  struct MeanSnapshot {
    Vec theta, mu;
    std::vector<Vec> f;
  };

  MeanSnapshot snapshot_mean() const { return {theta_, mu_, f_}; }
  void restore_mean(MeanSnapshot&& s) {
    theta_ = std::move(s.theta);
    mu_ = std::move(s.mu);
    f_ = std::move(s.f);
  }
  SourceSnapshot snapshot_source(int l) const { return {l, terms_[l], s_sum_, chol_a_, log_det_a_}; }
  void restore_source(SourceSnapshot&& s) {
    terms_[s.l] = std::move(s.term);
    s_sum_ = std::move(s.s_sum);
    chol_a_ = std::move(s.chol_a);
    log_det_a_ = s.log_det_a;
  }
  DiscSnapshot snapshot_disc() const { return {disc_, chol_a_, log_det_a_}; }
  void restore_disc(DiscSnapshot&& s) {
    disc_ = std::move(s.disc);
    chol_a_ = std::move(s.chol_a);
    log_det_a_ = s.log_det_a;
  }

  // --- evaluations ----------------------------------------------------------

  Vec residual(int l) const { return y_[l] - f_[l] - Vec::Constant(n_, mu_[l]); }

  // Exact log marginal of the full data after integrating out both the
  // per-source biases and the shared discrepancy (k + 1 factorizations).
  double log_marginal() const {
    require_ready();
    double q1 = 0.0, log_dets = 0.0;
    Vec v = Vec::Zero(n_);
    for (int l = 0; l < k_; ++l) {
      const Vec r = residual(l);
      const Vec w = terms_[l].inv * r;
      q1 += r.dot(w);
      v += w;
      log_dets += terms_[l].log_det;
    }
    const Vec z = chol_a_.triangularView<Eigen::Lower>().solve(v);
    const double q2 = z.squaredNorm();
    // q1 - q2 is the quadratic form of a positive-definite covariance and
    // cannot be negative; a materially negative value means the two large
    // terms cancelled past double precision.
    double quad = q1 - q2;
    if (quad < 0.0) {
      if (quad < -1e-6 * std::max(1.0, q1))
        throw NumericalError("log_marginal: quadratic form lost positivity (ill-conditioned state)");
      quad = 0.0;
    }
    return -0.5 * n_ * k_ * detail::kLog2Pi - 0.5 * log_dets - 0.5 * disc_.log_det_cov -
           0.5 * log_det_a_ - 0.5 * quad;
  }

  // Conditional log density of one source given a discrepancy vector.
  double source_conditional_logpdf(int l, const Vec& delta) const {
    check_source(l);
    const Vec r = residual(l) - delta;
    const Vec z = terms_[l].chol.triangularView<Eigen::Lower>().solve(r);
    return -0.5 * n_ * detail::kLog2Pi - 0.5 * terms_[l].log_det - 0.5 * z.squaredNorm();
  }

  // Posterior mean and covariance of the discrepancy at the design points.
  std::pair<Vec, Mat> discrepancy_posterior() const {
    require_ready();
    Vec v = Vec::Zero(n_);
    for (int l = 0; l < k_; ++l) v += terms_[l].inv * residual(l);
    const Vec z = chol_a_.triangularView<Eigen::Lower>().solve(v);
    const Vec mean = chol_a_.transpose().triangularView<Eigen::Upper>().solve(z);
    Mat cov = chol_a_.triangularView<Eigen::Lower>().solve(Mat::Identity(n_, n_));
    cov = (cov.transpose() * cov).eval();
    return {mean, cov};
  }

  // One draw from the conditional distribution of the discrepancy.
  Vec draw_discrepancy(Rng& rng) const {
    require_ready();
    Vec v = Vec::Zero(n_);
    for (int l = 0; l < k_; ++l) v += terms_[l].inv * residual(l);
    const Vec z = chol_a_.triangularView<Eigen::Lower>().solve(v);
    const Vec mean = chol_a_.transpose().triangularView<Eigen::Upper>().solve(z);
    Vec g(n_);
    for (int i = 0; i < n_; ++i) g[i] = rng.normal();
    return mean + chol_a_.transpose().triangularView<Eigen::Upper>().solve(g);
  }

  // --- accessors used by the prediction module ------------------------------

  const detail::DiscTerm& disc() const { require_ready(); return disc_; }
  const detail::SourceTerm& source_term(int l) const { check_source(l); return terms_[l]; }
  const Vec& theta() const { return theta_; }
  const Vec& mu() const { return mu_; }
  const Vec& f_model(int l) const { return f_[l]; }

private:
  void check_source(int l) const {
    if (l < 0 || l >= k_) throw DomainError("LikelihoodEngine: source index out of range");
  }

  void install_term(int l, detail::SourceTerm&& term) {
    if (terms_set_[static_cast<std::size_t>(l)]) s_sum_ -= terms_[l].inv;
    terms_[l] = std::move(term);
    s_sum_ += terms_[l].inv;
    terms_set_[static_cast<std::size_t>(l)] = true;
    if (all_terms_set() && disc_set_) refresh_posterior_precision();
  }

  bool all_terms_set() const {
    for (int l = 0; l < k_; ++l)
      if (!terms_set_[static_cast<std::size_t>(l)]) return false;
    return true;
  }

  void refresh_posterior_precision() {
    if (!all_terms_set() || !disc_set_) return;
    // If the data precision exceeds the discrepancy precision by more than
    // double precision can represent, A collapses to S and the marginal
    // formula degenerates (the quadratic correction cancels exactly).
    if (disc_.precision.diagonal().mean() < 1e-14 * s_sum_.diagonal().mean())
      throw NumericalError("posterior precision: source precision swamps the discrepancy precision");
    Mat a = s_sum_ + disc_.precision;
    CorrelationMatrix f = factor_spd(std::move(a), "discrepancy posterior precision",
                                     s_sum_.diagonal().mean() + disc_.precision.diagonal().mean());
    chol_a_ = std::move(f.chol_lower);
    log_det_a_ = f.log_det;
  }

  void require_ready() const {
    if (!disc_set_ || !all_terms_set() || chol_a_.rows() != n_)
      throw DomainError("LikelihoodEngine: state not fully set");
  }

  LikelihoodConfig config_;
  const ForwardModel* forward_ = nullptr;
  Mat inputs_;
  int n_ = 0, k_ = 0;
  std::vector<Vec> y_;
  std::vector<std::optional<LookVector>> looks_;

  Vec theta_, mu_;
  std::vector<Vec> f_;
  std::vector<detail::SourceTerm> terms_;
  std::vector<bool> terms_set_;
  Mat s_sum_;
  detail::DiscTerm disc_;
  bool disc_set_ = false;
  Mat chol_a_;
  double log_det_a_ = 0.0;
};

// --- free-function forms of the lemma-level operations ----------------------

inline LikelihoodEngine make_engine(const MultiSourceDataset& ds, const ParameterState& state,
                                    const LikelihoodConfig& config, const Vec& f) {
  LikelihoodEngine eng(ds, config);
  eng.set_f_direct(f);
  eng.set_mu(state.mu);
  for (int l = 0; l < ds.k(); ++l)
    eng.set_bias_source(l, state.sigma2[l], state.beta_bias.row(l).transpose(), state.eta[l]);
  eng.set_discrepancy(state.tau2, state.beta_disc);
  return eng;
}

// Lemma-1 style conditional marginal of source l given delta.
inline double source_marginal(const MultiSourceDataset& ds, const Vec& f, const ParameterState& state,
                              const LikelihoodConfig& config, int l, const Vec& delta) {
  return make_engine(ds, state, config, f).source_conditional_logpdf(l, delta);
}

// Posterior (mean, covariance) of the shared discrepancy at the design.
inline std::pair<Vec, Mat> posterior_discrepancy(const MultiSourceDataset& ds, const Vec& f,
                                                 const ParameterState& state,
                                                 const LikelihoodConfig& config) {
  return make_engine(ds, state, config, f).discrepancy_posterior();
}

// Lemma-2 joint marginal of all sources.
inline double joint_marginal(const MultiSourceDataset& ds, const Vec& f, const ParameterState& state,
                             const LikelihoodConfig& config) {
  return make_engine(ds, state, config, f).log_marginal();
}

// Marginal of the stacked data under the full bias-separating model:
// mean f + (sum mu_l / k) 1, covariance (1/k^2) sum Sigma~_l + tau^2 R.
inline double aggregated_marginal_full(const SourceObservations& stacked, const Vec& f,
                                       const ParameterState& state, const LikelihoodConfig& config) {
  state.validate();
  const int n = stacked.n();
  const int k = state.k();
  Mat cov = Mat::Zero(n, n);
  for (int l = 0; l < k; ++l) {
    const KernelSpec spec =
        kernel_with_beta(config.bias_family, state.beta_bias.row(l).transpose(), config.bias_roughness);
    Mat s = build_correlation_matrix(spec, stacked.inputs).entries;
    s.diagonal().array() += state.eta[l];
    cov += (state.sigma2[l] / (static_cast<double>(k) * k)) * s;
  }
  const KernelSpec dspec = kernel_with_beta(config.disc_family, state.beta_disc, config.disc_roughness);
  CorrelationMatrix r = build_correlation_matrix(dspec, stacked.inputs);
  const double lambda = config.effective_lambda();
  if (lambda > 0.0) r = transform_covariance(r, lambda, n);
  cov += state.tau2 * r.entries;

  const Vec mean = f + Vec::Constant(n, state.mu.mean());
  CorrelationMatrix fac = factor_spd(std::move(cov), "aggregated covariance", 1.0);
  const Vec z = fac.chol_lower.triangularView<Eigen::Lower>().solve(stacked.outputs - mean);
  return -0.5 * n * detail::kLog2Pi - 0.5 * fac.log_det - 0.5 * z.squaredNorm();
}

// Marginal of the stacked data under the no-bias model:
// mean f + mu 1, covariance (sigma2_0 / k) I + tau^2 R.
inline double aggregated_marginal_nobias(const SourceObservations& stacked, const Vec& f, double mu,
                                         double sigma2_0, double tau2, int k,
                                         const CorrelationMatrix& r_disc) {
  if (!(sigma2_0 > 0.0) || !(tau2 > 0.0)) throw DomainError("aggregated_marginal_nobias: variances must be positive");
  if (k < 1) throw DomainError("aggregated_marginal_nobias: k must be >= 1");
  const int n = stacked.n();
  Mat cov = tau2 * r_disc.entries;
  cov.diagonal().array() += sigma2_0 / static_cast<double>(k);
  CorrelationMatrix fac = factor_spd(std::move(cov), "stacked covariance", 1.0);
  const Vec z =
      fac.chol_lower.triangularView<Eigen::Lower>().solve(stacked.outputs - f - Vec::Constant(n, mu));
  return -0.5 * n * detail::kLog2Pi - 0.5 * fac.log_det - 0.5 * z.squaredNorm();
}

// Exact likelihood decomposition of the no-bias model: the full-data log
// likelihood equals c(sigma2_0) plus the stacked-data log likelihood.
struct DecompositionResult {
  double full = 0.0;
  double stacked = 0.0;
  double constant = 0.0;
};

inline DecompositionResult decomposition_check(const MultiSourceDataset& ds, const Vec& f,
                                               const Vec& delta, double mu, double sigma2_0) {
  if (!(sigma2_0 > 0.0)) throw DomainError("decomposition_check: sigma2_0 must be positive");
  MultiSourceDataset check = ds;
  if (!validate_alignment(check)) throw AlignmentError("decomposition_check: misaligned dataset");
  const int n = ds.n();
  const int k = ds.k();
  if (f.size() != n || delta.size() != n) throw DomainError("decomposition_check: length mismatch");

  const Vec m = f + delta + Vec::Constant(n, mu);
  double full = -0.5 * n * k * std::log(2.0 * M_PI * sigma2_0);
  for (int l = 0; l < k; ++l) full -= (ds.sources[l].outputs - m).squaredNorm() / (2.0 * sigma2_0);

  Vec ybar = Vec::Zero(n);
  for (int l = 0; l < k; ++l) ybar += ds.sources[l].outputs;
  ybar /= static_cast<double>(k);

  const double stacked = -0.5 * n * std::log(2.0 * M_PI * sigma2_0 / k) -
                         0.5 * k * (ybar - m).squaredNorm() / sigma2_0;

  double scatter = 0.0;
  for (int l = 0; l < k; ++l) scatter += (ds.sources[l].outputs - ybar).squaredNorm();
  const double constant = -0.5 * n * (k - 1) * std::log(2.0 * M_PI * sigma2_0) -
                          0.5 * n * std::log(static_cast<double>(k)) - scatter / (2.0 * sigma2_0);

  return {full, stacked, constant};
}

}  // namespace mscal
