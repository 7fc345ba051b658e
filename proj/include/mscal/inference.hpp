#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mscal/data.hpp"
#include "mscal/errors.hpp"
#include "mscal/forward.hpp"
#include "mscal/lbfgs.hpp"
#include "mscal/likelihood.hpp"
#include "mscal/parallel.hpp"
#include "mscal/predict.hpp"
#include "mscal/priors.hpp"
#include "mscal/rng.hpp"

namespace mscal {

// ---------------------------------------------------------------------------
// Parameter layout: named coordinates with their working-scale transforms.
// Optimizer and sampler operate on the transformed free coordinates.
// ---------------------------------------------------------------------------

enum class ParamTransform { LogitBox, Log, Identity };

struct ParamDef {
  std::string name;
  ParamTransform transform = ParamTransform::Identity;
  double lo = 0.0, hi = 1.0;  // LogitBox bounds
  double init = 0.0;          // natural scale
  bool free_param = true;
};

namespace detail {

inline double softplus(double t) { return t > 30.0 ? t : std::log1p(std::exp(t)); }

inline double to_transformed(const ParamDef& d, double v) {
  switch (d.transform) {
    case ParamTransform::Log:
      if (!(v > 0.0)) throw DomainError("layout: log-transform needs positive value for " + d.name);
      return std::log(v);
    case ParamTransform::LogitBox: {
      const double w = d.hi - d.lo;
      double u = (v - d.lo) / w;
      u = std::min(1.0 - 1e-12, std::max(1e-12, u));
      return std::log(u / (1.0 - u));
    }
    case ParamTransform::Identity:
      return v;
  }
  return v;
}

inline double to_natural(const ParamDef& d, double z) {
  switch (d.transform) {
    case ParamTransform::Log:
      return std::exp(z);
    case ParamTransform::LogitBox: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return d.lo + (d.hi - d.lo) * s;
    }
    case ParamTransform::Identity:
      return z;
  }
  return z;
}

inline double log_jacobian_1d(const ParamDef& d, double z) {
  switch (d.transform) {
    case ParamTransform::Log:
      return z;
    case ParamTransform::LogitBox:
      return std::log(d.hi - d.lo) - softplus(z) - softplus(-z);
    case ParamTransform::Identity:
      return 0.0;
  }
  return 0.0;
}

}  // namespace detail

struct ParamLayout {
  std::vector<ParamDef> defs;

  int dim() const { return static_cast<int>(defs.size()); }

  std::vector<int> free_indices() const {
    std::vector<int> idx;
    for (int i = 0; i < dim(); ++i)
      if (defs[i].free_param) idx.push_back(i);
    return idx;
  }

  int n_free() const { return static_cast<int>(free_indices().size()); }

  Vec init_natural() const {
    Vec x(dim());
    for (int i = 0; i < dim(); ++i) x[i] = defs[i].init;
    return x;
  }

  // Natural full vector -> transformed free vector.
  Vec pack(const Vec& natural) const {
    const auto idx = free_indices();
    Vec z(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) z[j] = detail::to_transformed(defs[idx[j]], natural[idx[j]]);
    return z;
  }

  // Transformed free vector -> natural full vector (fixed coords at init).
  Vec unpack(const Vec& z) const {
    const auto idx = free_indices();
    if (z.size() != static_cast<int>(idx.size())) throw DomainError("layout: free-vector size mismatch");
    Vec x = init_natural();
    for (std::size_t j = 0; j < idx.size(); ++j) x[idx[j]] = detail::to_natural(defs[idx[j]], z[j]);
    return x;
  }

  double log_jacobian(const Vec& z) const {
    const auto idx = free_indices();
    double s = 0.0;
    for (std::size_t j = 0; j < idx.size(); ++j) s += detail::log_jacobian_1d(defs[idx[j]], z[j]);
    return s;
  }

  int index_of(const std::string& name) const {
    for (int i = 0; i < dim(); ++i)
      if (defs[i].name == name) return i;
    throw DomainError("layout: unknown parameter " + name);
  }
};

// ---------------------------------------------------------------------------
// Calibration model: a dataset, a forward model, a likelihood configuration
// and priors, bound into one target with a parameter layout and sampler
// blocks. Two kinds are supported: the bias-separating multi-source model
// and the aggregated (no measurement bias) model used for stacked data.
// ---------------------------------------------------------------------------

enum class ModelKind { BiasSeparating, Aggregated };

class CalibrationModel {
public:
  struct Options {
    ModelKind kind = ModelKind::BiasSeparating;
    LikelihoodConfig lik;
    bool include_mu = true;  // Aggregated only; BiasSeparating always has mu_l
    int stack_k = 1;         // number of averaged sources behind stacked data
    std::optional<std::pair<Vec, Vec>> theta_bounds;
  };

  CalibrationModel(const MultiSourceDataset& ds, const ForwardModel& forward, Options opt)
      : opt_(std::move(opt)), forward_(&forward), engine_(ds, opt_.lik, &forward) {
    if (opt_.kind == ModelKind::Aggregated && engine_.k() != 1)
      throw DomainError("CalibrationModel: the aggregated model takes exactly one (stacked) source");
    auto [lo, hi] = opt_.theta_bounds ? *opt_.theta_bounds : forward.default_theta_bounds();
    priors_ = PriorSpec::defaults(engine_.inputs(), lo, hi);
    build_layout();
    build_blocks();
  }

  const ParamLayout& layout() const { return layout_; }
  const PriorSpec& priors() const { return priors_; }
  PriorSpec& priors() { return priors_; }
  LikelihoodEngine& engine() { return engine_; }
  const LikelihoodEngine& engine() const { return engine_; }
  ModelKind kind() const { return opt_.kind; }
  const Options& options() const { return opt_; }
  int n_blocks() const { return static_cast<int>(blocks_.size()); }
  const std::vector<int>& block_coords(int b) const { return blocks_[b].coords; }
  const std::string& block_name(int b) const { return blocks_[b].name; }

  // Fix a named coordinate at a value (excluded from sampling/optimization).
  void fix(const std::string& name, double value) {
    auto& def = layout_.defs[layout_.index_of(name)];
    def.init = value;
    def.free_param = false;
  }

  int q() const { return forward_->theta_dim(); }
  int k() const { return engine_.k(); }
  int p() const { return engine_.dim(); }

  Vec theta_of(const Vec& x) const { return x.segment(0, q()); }

  // Spec-shaped state of the bias-separating model.
  ParameterState state_of(const Vec& x) const {
    if (opt_.kind != ModelKind::BiasSeparating)
      throw DomainError("state_of: aggregated model has no ParameterState");
    ParameterState s;
    const int kk = k(), pp = p();
    s.theta = theta_of(x);
    s.mu = x.segment(q(), kk);
    s.sigma2 = Vec(kk);
    s.eta = Vec(kk);
    s.beta_bias = Mat(kk, pp);
    for (int l = 0; l < kk; ++l) {
      const int base = q() + kk + l * (pp + 2);
      s.sigma2[l] = x[base];
      s.beta_bias.row(l) = x.segment(base + 1, pp).transpose();
      s.eta[l] = x[base + 1 + pp];
    }
    const int dbase = q() + kk + kk * (pp + 2);
    s.tau2 = x[dbase];
    s.beta_disc = x.segment(dbase + 1, pp);
    return s;
  }

  // Push every coordinate of x into the likelihood engine.
  void apply_all(const Vec& x) {
    for (int b = 0; b < n_blocks(); ++b) blocks_[b].apply(engine_, x);
  }

  void apply_block(int b, const Vec& x) { blocks_[b].apply(engine_, x); }

  std::function<void()> block_restorer(int b) {
    auto restore = blocks_[b].make_restorer(engine_);
    return [this, restore = std::move(restore)]() { restore(engine_); };
  }

  double current_loglik() const { return engine_.log_marginal(); }

  double log_prior(const Vec& x) const {
    const Vec theta = theta_of(x);
    if (!priors_.theta_in_box(theta)) return -std::numeric_limits<double>::infinity();
    double lp = priors_.log_theta_density();
    const int kk = k(), pp = p();
    if (opt_.kind == ModelKind::BiasSeparating) {
      for (int l = 0; l < kk; ++l) {
        const int base = q() + kk + l * (pp + 2);
        lp += priors_.bias_jr.logdensity(x.segment(base + 1, pp), x[base + 1 + pp]) - std::log(x[base]);
      }
      const int dbase = q() + kk + kk * (pp + 2);
      lp += priors_.disc_jr.logdensity(x.segment(dbase + 1, pp), 0.0) - std::log(x[dbase]);
    } else {
      const int tau_i = layout_.index_of("tau2");
      lp += priors_.disc_jr.logdensity(x.segment(tau_i + 1, pp), x[tau_i + 1 + pp]) - std::log(x[tau_i]);
    }
    return lp;
  }

  // Log posterior at a natural-parameter vector (engine state is refreshed).
  double log_posterior_value(const Vec& x) {
    const double prior = log_prior(x);
    if (!std::isfinite(prior)) return prior;
    apply_all(x);
    return current_loglik() + prior;
  }

  // Initialization rule: theta at the box center, mu at sample means,
  // variances from residual sample variances, beta at 1/input-range,
  // nugget at 0.1. Fixed coordinates keep their pinned values.
  Vec default_init() const {
    Vec x = compute_default_init();
    for (int i = 0; i < layout_.dim(); ++i)
      if (!layout_.defs[i].free_param) x[i] = layout_.defs[i].init;
    return x;
  }

private:
  Vec compute_default_init() const {
    Vec x = layout_.init_natural();
    const int kk = k(), pp = p();
    Vec theta_c(q());
    for (int i = 0; i < q(); ++i) theta_c[i] = 0.5 * (priors_.theta_lower[i] + priors_.theta_upper[i]);
    x.segment(0, q()) = theta_c;

    Vec ranges(pp);
    for (int t = 0; t < pp; ++t) {
      const double w = engine_.inputs().col(t).maxCoeff() - engine_.inputs().col(t).minCoeff();
      ranges[t] = w > 0.0 ? w : 1.0;
    }

    std::vector<Vec> resid(kk);
    Vec rbar = Vec::Zero(engine_.n());
    for (int l = 0; l < kk; ++l) {
      const Vec f = forward_->evaluate(theta_c, engine_.inputs(), engine_.look(l));
      const double mu0 = engine_.outputs(l).mean();
      resid[l] = engine_.outputs(l) - f - Vec::Constant(engine_.n(), mu0);
      rbar += resid[l];
      if (opt_.kind == ModelKind::BiasSeparating || opt_.include_mu) {
        const int mu_idx = opt_.kind == ModelKind::BiasSeparating ? q() + l : layout_.index_of("mu");
        if (layout_.defs[mu_idx].free_param) x[mu_idx] = mu0;
      }
    }
    rbar /= static_cast<double>(kk);

    const auto sample_var = [](const Vec& v) {
      const double m = v.mean();
      return v.size() > 1 ? (v.array() - m).square().sum() / (v.size() - 1) : 1.0;
    };

    if (opt_.kind == ModelKind::BiasSeparating) {
      for (int l = 0; l < kk; ++l) {
        const int base = q() + kk + l * (pp + 2);
        x[base] = std::max(0.5 * sample_var(resid[l]), 1e-8);
        for (int t = 0; t < pp; ++t) x[base + 1 + t] = 1.0 / ranges[t];
        x[base + 1 + pp] = 0.1;
      }
      const int dbase = q() + kk + kk * (pp + 2);
      x[dbase] = std::max(0.5 * sample_var(rbar), 1e-8);
      for (int t = 0; t < pp; ++t) x[dbase + 1 + t] = 1.0 / ranges[t];
    } else {
      const int tau_i = layout_.index_of("tau2");
      x[tau_i] = std::max(sample_var(rbar), 1e-8);
      for (int t = 0; t < pp; ++t) x[tau_i + 1 + t] = 1.0 / ranges[t];
      x[tau_i + 1 + pp] = 0.1;
    }
    return x;
  }

public:
  // Scale used to perturb Identity coordinates across optimizer starts.
  double identity_perturb_scale() const {
    double sd = 0.0;
    for (int l = 0; l < k(); ++l) {
      const Vec& y = engine_.outputs(l);
      const double m = y.mean();
      sd += std::sqrt((y.array() - m).square().sum() / std::max(1, static_cast<int>(y.size()) - 1));
    }
    return 0.5 * sd / k() + 1e-6;
  }

private:
  // Blocks capture only layout indices, never `this`, so models stay
  // copyable (every copy owns an independent engine).
  struct Block {
    std::string name;
    std::vector<int> coords;
    std::function<void(LikelihoodEngine&, const Vec&)> apply;
    std::function<std::function<void(LikelihoodEngine&)>(const LikelihoodEngine&)> make_restorer;
  };

  void build_layout() {
    const int kk = k(), pp = p(), qq = q();
    auto [lo, hi] = std::make_pair(priors_.theta_lower, priors_.theta_upper);
    for (int i = 0; i < qq; ++i)
      layout_.defs.push_back({"theta_" + std::to_string(i + 1), ParamTransform::LogitBox, lo[i], hi[i],
                              0.5 * (lo[i] + hi[i]), true});
    if (opt_.kind == ModelKind::BiasSeparating) {
      for (int l = 0; l < kk; ++l)
        layout_.defs.push_back({"mu_" + std::to_string(l + 1), ParamTransform::Identity, 0, 0, 0.0, true});
      for (int l = 0; l < kk; ++l) {
        const std::string tag = std::to_string(l + 1);
        layout_.defs.push_back({"sigma2_" + tag, ParamTransform::Log, 0, 0, 1.0, true});
        for (int t = 0; t < pp; ++t)
          layout_.defs.push_back(
              {"beta_bias_" + tag + "_" + std::to_string(t + 1), ParamTransform::Log, 0, 0, 1.0, true});
        layout_.defs.push_back({"eta_" + tag, ParamTransform::Log, 0, 0, 0.1, true});
      }
      layout_.defs.push_back({"tau2", ParamTransform::Log, 0, 0, 1.0, true});
      for (int t = 0; t < pp; ++t)
        layout_.defs.push_back({"beta_disc_" + std::to_string(t + 1), ParamTransform::Log, 0, 0, 1.0, true});
    } else {
      layout_.defs.push_back({"mu", ParamTransform::Identity, 0, 0, 0.0, opt_.include_mu});
      layout_.defs.push_back({"tau2", ParamTransform::Log, 0, 0, 1.0, true});
      for (int t = 0; t < pp; ++t)
        layout_.defs.push_back({"beta_disc_" + std::to_string(t + 1), ParamTransform::Log, 0, 0, 1.0, true});
      layout_.defs.push_back({"eta_disc", ParamTransform::Log, 0, 0, 0.1, true});
    }
  }

  void build_blocks() {
    const int kk = k(), pp = p(), qq = q();
    const auto mean_restorer = [](const LikelihoodEngine& eng) {
      return [snap = eng.snapshot_mean()](LikelihoodEngine& e) mutable { e.restore_mean(std::move(snap)); };
    };
    {
      Block theta_block;
      theta_block.name = "theta";
      for (int i = 0; i < qq; ++i) theta_block.coords.push_back(i);
      theta_block.apply = [qq](LikelihoodEngine& eng, const Vec& x) { eng.set_theta(x.segment(0, qq)); };
      theta_block.make_restorer = mean_restorer;
      blocks_.push_back(std::move(theta_block));
    }
    if (opt_.kind == ModelKind::BiasSeparating) {
      Block mu_block;
      mu_block.name = "mu";
      for (int l = 0; l < kk; ++l) mu_block.coords.push_back(qq + l);
      mu_block.apply = [qq, kk](LikelihoodEngine& eng, const Vec& x) { eng.set_mu(x.segment(qq, kk)); };
      mu_block.make_restorer = mean_restorer;
      blocks_.push_back(std::move(mu_block));

      for (int l = 0; l < kk; ++l) {
        Block src;
        src.name = "source_" + std::to_string(l + 1);
        const int base = qq + kk + l * (pp + 2);
        for (int j = 0; j < pp + 2; ++j) src.coords.push_back(base + j);
        src.apply = [l, base, pp](LikelihoodEngine& eng, const Vec& x) {
          eng.set_bias_source(l, x[base], x.segment(base + 1, pp), x[base + 1 + pp]);
        };
        src.make_restorer = [l](const LikelihoodEngine& eng) {
          return [snap = eng.snapshot_source(l)](LikelihoodEngine& e) mutable {
            e.restore_source(std::move(snap));
          };
        };
        blocks_.push_back(std::move(src));
      }

      Block disc;
      disc.name = "discrepancy";
      const int dbase = qq + kk + kk * (pp + 2);
      for (int j = 0; j < pp + 1; ++j) disc.coords.push_back(dbase + j);
      disc.apply = [dbase, pp](LikelihoodEngine& eng, const Vec& x) {
        eng.set_discrepancy(x[dbase], x.segment(dbase + 1, pp));
      };
      disc.make_restorer = [](const LikelihoodEngine& eng) {
        return [snap = eng.snapshot_disc()](LikelihoodEngine& e) mutable { e.restore_disc(std::move(snap)); };
      };
      blocks_.push_back(std::move(disc));
    } else {
      if (opt_.include_mu) {
        Block mu_block;
        mu_block.name = "mu";
        mu_block.coords.push_back(qq);
        mu_block.apply = [qq](LikelihoodEngine& eng, const Vec& x) { eng.set_mu(Vec::Constant(1, x[qq])); };
        mu_block.make_restorer = mean_restorer;
        blocks_.push_back(std::move(mu_block));
      }
      Block disc;
      disc.name = "covariance";
      const int tau_i = qq + 1;  // mu slot always present in the layout
      for (int j = 0; j < pp + 2; ++j) disc.coords.push_back(tau_i + j);
      disc.apply = [tau_i, pp](LikelihoodEngine& eng, const Vec& x) {
        const double tau2 = x[tau_i];
        const double eta = x[tau_i + 1 + pp];
        eng.set_discrepancy(tau2, x.segment(tau_i + 1, pp));
        eng.set_noise_source(0, std::max(tau2 * eta, 1e-30));
      };
      disc.make_restorer = [](const LikelihoodEngine& eng) {
        return [dsnap = eng.snapshot_disc(), ssnap = eng.snapshot_source(0)](LikelihoodEngine& e) mutable {
          e.restore_disc(std::move(dsnap));
          e.restore_source(std::move(ssnap));
        };
      };
      blocks_.push_back(std::move(disc));
    }
  }

  Options opt_;
  const ForwardModel* forward_;
  LikelihoodEngine engine_;
  PriorSpec priors_;
  ParamLayout layout_;
  std::vector<Block> blocks_;
};

// ---------------------------------------------------------------------------
// Maximum likelihood via multi-start L-BFGS on the transformed coordinates.
// ---------------------------------------------------------------------------

struct MleStartInfo {
  int index = 0;
  double value = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  std::string message;
};

struct MleResult {
  std::vector<std::string> names;
  Vec argmax;  // natural scale, full layout
  double log_likelihood = -std::numeric_limits<double>::infinity();
  std::vector<MleStartInfo> starts;
  int best_start = -1;
};

struct MleOptions {
  int n_starts = 10;
  std::uint64_t seed = 1;
  int threads = 1;
  LbfgsOptions lbfgs;
};

inline MleResult mle_fit(const CalibrationModel& prototype, const MleOptions& opt = {}) {
  if (opt.n_starts < 1) throw DomainError("mle_fit: n_starts must be >= 1");
  const ParamLayout& layout = prototype.layout();
  const auto free_idx = layout.free_indices();
  const Vec x0 = prototype.default_init();
  const Vec z0 = layout.pack(x0);
  const double ident_scale = prototype.identity_perturb_scale();

  std::vector<MleStartInfo> starts(opt.n_starts);
  std::vector<Vec> best_x(opt.n_starts);

  parallel_for_indexed(opt.n_starts, opt.threads, [&](int s) {
    CalibrationModel model = prototype;  // engines are value types
    Vec z = z0;
    if (s > 0) {
      Rng rng(Rng::derive(opt.seed, static_cast<std::uint64_t>(s)));
      for (std::size_t j = 0; j < free_idx.size(); ++j) {
        const ParamDef& def = layout.defs[free_idx[j]];
        switch (def.transform) {
          case ParamTransform::LogitBox: {
            const double u = rng.uniform(0.02, 0.98);
            z[j] = std::log(u / (1.0 - u));
            break;
          }
          case ParamTransform::Log:
            z[j] += 1.5 * rng.normal();
            break;
          case ParamTransform::Identity:
            z[j] += ident_scale * rng.normal();
            break;
        }
      }
    }
    const auto neg_loglik = [&model, &layout](const Vec& zz) {
      const Vec x = layout.unpack(zz);
      model.apply_all(x);
      return -model.current_loglik();
    };
    LbfgsResult r = lbfgs_minimize(neg_loglik, z, opt.lbfgs);
    starts[s].index = s;
    starts[s].value = -r.f;
    starts[s].iterations = r.iterations;
    starts[s].converged = r.converged;
    starts[s].message = r.message;
    best_x[s] = layout.unpack(r.x);
  });

  MleResult out;
  for (const auto& d : layout.defs) out.names.push_back(d.name);
  out.starts = starts;
  for (int s = 0; s < opt.n_starts; ++s) {
    if (std::isfinite(starts[s].value) && starts[s].value > out.log_likelihood) {
      out.log_likelihood = starts[s].value;
      out.best_start = s;
      out.argmax = best_x[s];
    }
  }
  if (out.best_start < 0) {
    std::string diag = "mle_fit: every start failed:";
    for (const auto& s : out.starts) diag += " [start " + std::to_string(s.index) + ": " + s.message + "]";
    throw NumericalError(diag);
  }
  return out;
}

// Closed-form generalized-least-squares mean: (1' R^-1 1)^-1 1' R^-1 y.
inline double closed_form_mean_mle(const Vec& ybar, const CorrelationMatrix& r) {
  if (ybar.size() != r.n()) throw DomainError("closed_form_mean_mle: size mismatch");
  const Vec ones = Vec::Ones(ybar.size());
  const Vec w = r.solve(ones);
  return w.dot(ybar) / w.dot(ones);
}

// ---------------------------------------------------------------------------
// Metropolis-within-Gibbs sampler with a conditional discrepancy draw per
// sweep. Blocked random-walk proposals on the transformed coordinates with
// Robbins-Monro scale adaptation during burn-in (frozen afterwards).
// ---------------------------------------------------------------------------

struct McmcSettings {
  int n_samples = 20000;
  int burn_in = 4000;
  int thin = 10;
  std::uint64_t seed = 1;
  double initial_scale = 0.5;
  bool adapt = true;
  int validate_every = 0;  // debug: recompute the log posterior from scratch
  int refresh_every = 500; // rebuild caches to absorb floating-point drift

  void validate() const {
    if (n_samples < 1 || burn_in < 0 || burn_in >= n_samples)
      throw DomainError("McmcSettings: need 0 <= burn_in < n_samples");
    if (thin < 1) throw DomainError("McmcSettings: thin must be >= 1");
  }
};

struct BlockRate {
  std::string name;
  double rate = 0.0;
  long attempts = 0;
};

struct PosteriorSamples {
  std::vector<std::string> names;
  Mat draws;           // retained x dim, natural scale
  Mat delta_draws;     // retained x n
  Vec log_posteriors;  // retained, likelihood + prior (no Jacobian)
  std::vector<BlockRate> acceptance;
  std::uint64_t seed = 0;
  McmcSettings settings;

  int retained() const { return static_cast<int>(draws.rows()); }
};

// Called at every retained draw with the engine still holding that state.
using RetainHook =
    std::function<void(int retained_index, const Vec& natural, const Vec& delta, const CalibrationModel&)>;

inline PosteriorSamples mcmc_run(CalibrationModel& model, const McmcSettings& settings,
                                 const RetainHook& hook = nullptr) {
  settings.validate();
  const ParamLayout& layout = model.layout();
  const auto free_idx = layout.free_indices();
  const int nf = static_cast<int>(free_idx.size());

  // map free position -> block id
  std::vector<std::vector<int>> block_free(model.n_blocks());
  for (int b = 0; b < model.n_blocks(); ++b)
    for (int coord : model.block_coords(b)) {
      for (int j = 0; j < nf; ++j)
        if (free_idx[j] == coord) block_free[b].push_back(j);
    }

  Rng rng(settings.seed);
  Vec x = model.default_init();
  Vec z = layout.pack(x);
  x = layout.unpack(z);  // round-trip so fixed coords take their pinned values

  double prior = model.log_prior(x);
  if (!std::isfinite(prior)) throw DomainError("mcmc_run: initialization has zero prior density");
  model.apply_all(x);
  double lp = model.current_loglik() + prior + layout.log_jacobian(z);
  if (!std::isfinite(lp)) throw DomainError("mcmc_run: log posterior not finite at initialization");

  std::vector<double> log_scale(model.n_blocks(), std::log(settings.initial_scale));
  Vec coord_scale = Vec::Ones(nf);
  std::vector<long> adapt_count(model.n_blocks(), 0);
  std::vector<long> attempts(model.n_blocks(), 0), accepts(model.n_blocks(), 0);

  // Welford accumulators for per-coordinate proposal scaling during burn-in.
  Vec wf_mean = Vec::Zero(nf), wf_m2 = Vec::Zero(nf);
  long wf_count = 0;

  const int n_retained = (settings.n_samples - settings.burn_in + settings.thin - 1) / settings.thin;
  PosteriorSamples out;
  for (const auto& d : layout.defs) out.names.push_back(d.name);
  out.draws = Mat(n_retained, layout.dim());
  out.delta_draws = Mat(n_retained, model.engine().n());
  out.log_posteriors = Vec(n_retained);
  out.seed = settings.seed;
  out.settings = settings;

  int retained = 0;
  for (int t = 0; t < settings.n_samples; ++t) {
    for (int b = 0; b < model.n_blocks(); ++b) {
      if (block_free[b].empty()) continue;
      Vec z_cand = z;
      const double scale = std::exp(log_scale[b]);
      for (int j : block_free[b]) z_cand[j] += scale * coord_scale[j] * rng.normal();
      const Vec x_cand = layout.unpack(z_cand);

      auto restore = model.block_restorer(b);
      double lp_cand = -std::numeric_limits<double>::infinity();
      bool touched = false;
      const double prior_cand = model.log_prior(x_cand);
      if (std::isfinite(prior_cand)) {
        try {
          touched = true;
          model.apply_block(b, x_cand);
          lp_cand = model.current_loglik() + prior_cand + layout.log_jacobian(z_cand);
        } catch (const std::exception&) {
          // apply may have mutated part of the engine before throwing
          lp_cand = -std::numeric_limits<double>::infinity();
        }
      }
      const double log_alpha = lp_cand - lp;
      const double u = rng.uniform();
      const bool accept = std::isfinite(lp_cand) && std::log(std::max(u, 1e-300)) < log_alpha;
      if (accept) {
        z = std::move(z_cand);
        x = x_cand;
        lp = lp_cand;
      } else if (touched) {
        restore();
      }

      if (settings.adapt && t < settings.burn_in) {
        const double alpha = std::isfinite(lp_cand) ? std::min(1.0, std::exp(std::min(0.0, log_alpha))) : 0.0;
        const long c = ++adapt_count[b];
        log_scale[b] += std::min(0.25, 1.0 / std::sqrt(static_cast<double>(c))) * (alpha - 0.3);
      } else {
        ++attempts[b];
        if (accept) ++accepts[b];
      }
    }

    if (settings.adapt && t < settings.burn_in) {
      ++wf_count;
      for (int j = 0; j < nf; ++j) {
        const double d = z[j] - wf_mean[j];
        wf_mean[j] += d / wf_count;
        wf_m2[j] += d * (z[j] - wf_mean[j]);
      }
      if (t >= settings.burn_in / 4 && wf_count > 20 && (t + 1) % 100 == 0) {
        for (int j = 0; j < nf; ++j) {
          const double sd = std::sqrt(wf_m2[j] / (wf_count - 1));
          if (sd > 1e-8) coord_scale[j] = std::max(0.05, sd);
        }
      }
    }

    const Vec delta = model.engine().draw_discrepancy(rng);

    if (settings.refresh_every > 0 && (t + 1) % settings.refresh_every == 0) {
      model.apply_all(x);
      lp = model.current_loglik() + model.log_prior(x) + layout.log_jacobian(z);
    }
    if (settings.validate_every > 0 && (t + 1) % settings.validate_every == 0) {
      model.apply_all(x);
      const double lp_re = model.current_loglik() + model.log_prior(x) + layout.log_jacobian(z);
      if (std::abs(lp_re - lp) > 1e-8 * (1.0 + std::abs(lp_re)))
        throw NumericalError("mcmc_run: cached log posterior drifted from recomputation");
      lp = lp_re;
    }

    if (t >= settings.burn_in && (t - settings.burn_in) % settings.thin == 0) {
      out.draws.row(retained) = x.transpose();
      out.delta_draws.row(retained) = delta.transpose();
      out.log_posteriors[retained] = lp - layout.log_jacobian(z);
      if (hook) hook(retained, x, delta, model);
      ++retained;
    }
  }

  for (int b = 0; b < model.n_blocks(); ++b) {
    if (block_free[b].empty()) continue;
    BlockRate r;
    r.name = model.block_name(b);
    r.attempts = attempts[b];
    r.rate = attempts[b] > 0 ? static_cast<double>(accepts[b]) / attempts[b] : 0.0;
    out.acceptance.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Posterior summaries.
// ---------------------------------------------------------------------------

struct SummaryRow {
  std::string name;
  double mean = 0.0, sd = 0.0, lo95 = 0.0, hi95 = 0.0;
};

inline double sample_quantile(Vec sorted, double q) {
  const int n = static_cast<int>(sorted.size());
  if (n == 0) throw DomainError("sample_quantile: empty sample");
  if (n == 1) return sorted[0];
  const double h = (n - 1) * q;
  const int i = std::min(n - 2, static_cast<int>(std::floor(h)));
  return sorted[i] + (h - i) * (sorted[i + 1] - sorted[i]);
}

inline std::vector<SummaryRow> posterior_summaries(const PosteriorSamples& samples) {
  if (samples.retained() == 0) throw DomainError("posterior_summaries: empty chain");
  std::vector<SummaryRow> rows;
  const int m = samples.retained();
  for (int j = 0; j < samples.draws.cols(); ++j) {
    SummaryRow r;
    r.name = samples.names[j];
    const Vec col = samples.draws.col(j);
    r.mean = col.mean();
    r.sd = m > 1 ? std::sqrt((col.array() - r.mean).square().sum() / (m - 1)) : 0.0;
    Vec sorted = col;
    std::sort(sorted.data(), sorted.data() + m);
    r.lo95 = sample_quantile(sorted, 0.025);
    r.hi95 = sample_quantile(sorted, 0.975);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace mscal
