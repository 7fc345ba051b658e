#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "mscal/errors.hpp"
#include "mscal/types.hpp"

namespace mscal {

// Julian year; converts the volume change rate theta_4 (m^3/s) into the
// m^3/yr scale so that displacements come out in m/yr.
inline constexpr double kSecondsPerYear = 31557600.0;

struct LookVector {
  Vec3 v;

  explicit LookVector(const Vec3& u) : v(u) {
    if (std::abs(v.norm() - 1.0) > 1e-12) throw DomainError("LookVector: must have unit norm");
  }
  static LookVector normalized(double e, double n, double u) {
    Vec3 w(e, n, u);
    const double norm = w.norm();
    if (!(norm > 0.0)) throw DomainError("LookVector: zero vector");
    return LookVector(Vec3(w / norm));
  }
};

// Point pressure source in an elastic halfspace.
// theta = (east m, north m, depth m, volume change rate m^3/s, Poisson ratio).
struct MogiParams {
  double east = 0.0;
  double north = 0.0;
  double depth = 2000.0;
  double volume_rate = 0.05;
  double poisson = 0.25;

  static std::pair<Vec, Vec> bounds() {
    Vec lo(5), hi(5);
    lo << -2000.0, -2000.0, 500.0, 0.0, 0.25;
    hi << 3000.0, 5000.0, 6000.0, 0.15, 0.33;
    return {lo, hi};
  }

  Vec to_vec() const {
    Vec t(5);
    t << east, north, depth, volume_rate, poisson;
    return t;
  }

  static MogiParams from_vec(const Eigen::Ref<const Vec>& t) {
    if (t.size() != 5) throw DomainError("MogiParams: expected 5 parameters");
    return MogiParams{t[0], t[1], t[2], t[3], t[4]};
  }

  void validate_bounds() const {
    const auto [lo, hi] = bounds();
    const Vec t = to_vec();
    for (int i = 0; i < 5; ++i)
      if (t[i] < lo[i] || t[i] > hi[i])
        throw DomainError("MogiParams: parameter " + std::to_string(i + 1) + " outside its bounds");
  }
};

// Surface displacement rate (east, north, up) in m/yr at surface point x.
inline Vec3 mogi_displacement_3d(const MogiParams& p, const Eigen::Ref<const Vec2>& x) {
  if (!(p.depth > 0.0)) throw DomainError("mogi_displacement_3d: depth must be positive");
  if (!std::isfinite(x[0]) || !std::isfinite(x[1])) throw DomainError("mogi_displacement_3d: non-finite input");
  const double dx = x[0] - p.east;
  const double dy = x[1] - p.north;
  const double r2 = dx * dx + dy * dy + p.depth * p.depth;
  if (r2 == 0.0) throw NumericalError("mogi_displacement_3d: singular geometry (R = 0)");
  const double r3 = r2 * std::sqrt(r2);
  const double scale = (1.0 - p.poisson) * (p.volume_rate * kSecondsPerYear) / (M_PI * r3);
  return Vec3(scale * dx, scale * dy, scale * p.depth);
}

// Line-of-sight projection of a 3D displacement onto a unit look vector.
inline double project_los(const Eigen::Ref<const Vec3>& u, const LookVector& look) {
  return u.dot(look.v);
}

inline double toy_sine(double theta, double x) { return std::sin(theta * x); }

inline double toy_mean(double theta, double /*x*/) { return theta; }

// f^M(x, theta) = theta_1 + theta_2 sin(5 x_1) on [0,1]^2.
inline double toy_trig2d(const Eigen::Ref<const Vec>& theta, const Eigen::Ref<const Vec>& x) {
  if (theta.size() != 2 || x.size() != 2) throw DomainError("toy_trig2d: expected 2-vectors");
  return theta[0] + theta[1] * std::sin(5.0 * x[0]);
}

// The reality behind toy_trig2d's calibration example.
inline double lim_reality_trig2d(const Eigen::Ref<const Vec>& x) {
  if (x.size() != 2) throw DomainError("lim_reality_trig2d: expected 2-vector");
  return ((30.0 + 5.0 * x[0] * std::sin(5.0 * x[0])) * (4.0 + std::exp(-5.0 * x[1])) - 100.0) / 6.0;
}

// Uniform forward-model contract: evaluate(theta, inputs, look) -> n-vector.
// The look vector only matters for models producing 3D displacements.
class ForwardModel {
public:
  virtual ~ForwardModel() = default;
  virtual std::string name() const = 0;
  virtual int theta_dim() const = 0;
  virtual int input_dim() const = 0;
  virtual std::pair<Vec, Vec> default_theta_bounds() const = 0;
  virtual Vec evaluate(const Eigen::Ref<const Vec>& theta, const Mat& inputs,
                       const std::optional<LookVector>& look) const = 0;
};

class MogiForwardModel final : public ForwardModel {
public:
  std::string name() const override { return "mogi"; }
  int theta_dim() const override { return 5; }
  int input_dim() const override { return 2; }
  std::pair<Vec, Vec> default_theta_bounds() const override { return MogiParams::bounds(); }

  Vec evaluate(const Eigen::Ref<const Vec>& theta, const Mat& inputs,
               const std::optional<LookVector>& look) const override {
    if (!look) throw DomainError("mogi: a look vector is required to project to line of sight");
    const MogiParams p = MogiParams::from_vec(theta);
    const int n = static_cast<int>(inputs.rows());
    Vec out(n);
    for (int i = 0; i < n; ++i)
      out[i] = project_los(mogi_displacement_3d(p, inputs.row(i).head<2>().transpose()), *look);
    return out;
  }
};

class ToySineModel final : public ForwardModel {
public:
  std::string name() const override { return "toy_sine"; }
  int theta_dim() const override { return 1; }
  int input_dim() const override { return 1; }
  std::pair<Vec, Vec> default_theta_bounds() const override {
    return {Vec::Constant(1, 0.0), Vec::Constant(1, M_PI)};
  }
  Vec evaluate(const Eigen::Ref<const Vec>& theta, const Mat& inputs,
               const std::optional<LookVector>&) const override {
    Vec out(inputs.rows());
    for (int i = 0; i < inputs.rows(); ++i) out[i] = toy_sine(theta[0], inputs(i, 0));
    return out;
  }
};

class ToyMeanModel final : public ForwardModel {
public:
  std::string name() const override { return "toy_mean"; }
  int theta_dim() const override { return 1; }
  int input_dim() const override { return 1; }
  std::pair<Vec, Vec> default_theta_bounds() const override {
    return {Vec::Constant(1, -10.0), Vec::Constant(1, 10.0)};
  }
  Vec evaluate(const Eigen::Ref<const Vec>& theta, const Mat& inputs,
               const std::optional<LookVector>&) const override {
    return Vec::Constant(inputs.rows(), theta[0]);
  }
};

class ToyTrig2dModel final : public ForwardModel {
public:
  std::string name() const override { return "toy_trig2d"; }
  int theta_dim() const override { return 2; }
  int input_dim() const override { return 2; }
  std::pair<Vec, Vec> default_theta_bounds() const override {
    return {Vec::Constant(2, -30.0), Vec::Constant(2, 30.0)};
  }
  Vec evaluate(const Eigen::Ref<const Vec>& theta, const Mat& inputs,
               const std::optional<LookVector>&) const override {
    Vec out(inputs.rows());
    for (int i = 0; i < inputs.rows(); ++i) out[i] = toy_trig2d(theta, inputs.row(i).transpose());
    return out;
  }
};

// Registry of named forward models selectable from CLI configuration.
inline std::unique_ptr<ForwardModel> make_forward_model(const std::string& name) {
  if (name == "mogi") return std::make_unique<MogiForwardModel>();
  if (name == "toy_sine") return std::make_unique<ToySineModel>();
  if (name == "toy_mean") return std::make_unique<ToyMeanModel>();
  if (name == "toy_trig2d") return std::make_unique<ToyTrig2dModel>();
  throw DomainError("unknown forward model: " + name);
}

}  // namespace mscal
