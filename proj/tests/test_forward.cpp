#include <catch2/catch_amalgamated.hpp>

#include "mscal/forward.hpp"
#include "mscal/rng.hpp"

using namespace mscal;

TEST_CASE("mogi displacement directly above the source") {
  MogiParams p{0.0, 0.0, 2000.0, 0.05, 0.25};
  const Vec3 u = mogi_displacement_3d(p, Vec2(0.0, 0.0));
  CHECK(u[0] == 0.0);
  CHECK(u[1] == 0.0);
  const double expect = (1.0 - 0.25) * (0.05 * kSecondsPerYear) / (M_PI * 2000.0 * 2000.0);
  CHECK(u[2] == Catch::Approx(expect).epsilon(1e-14));

  MogiParams deeper = p;
  deeper.depth = 4000.0;
  CHECK(mogi_displacement_3d(deeper, Vec2(0.0, 0.0))[2] == Catch::Approx(u[2] / 4.0).epsilon(1e-12));
}

TEST_CASE("mogi radial symmetry and scaling") {
  MogiParams p{500.0, 800.0, 1900.0, 0.02, 0.28};
  const double rho = 1300.0;
  Rng rng(9);
  const Vec3 u0 = mogi_displacement_3d(p, Vec2(p.east + rho, p.north));
  for (int trial = 0; trial < 6; ++trial) {
    const double a = 2.0 * M_PI * rng.uniform();
    const Vec3 u = mogi_displacement_3d(p, Vec2(p.east + rho * std::cos(a), p.north + rho * std::sin(a)));
    CHECK(u[2] == Catch::Approx(u0[2]).epsilon(1e-12));
    CHECK(u.head<2>().norm() == Catch::Approx(u0.head<2>().norm()).epsilon(1e-12));
    // horizontal displacement points radially outward
    Vec2 radial(std::cos(a), std::sin(a));
    CHECK(u.head<2>().normalized().dot(radial) == Catch::Approx(1.0).epsilon(1e-12));
  }

  MogiParams doubled = p;
  doubled.volume_rate = 2.0 * p.volume_rate;
  const Vec3 u2 = mogi_displacement_3d(doubled, Vec2(p.east + rho, p.north));
  CHECK((u2 - 2.0 * u0).norm() == Catch::Approx(0.0).margin(1e-18));
}

TEST_CASE("mogi magnitude decays with distance") {
  MogiParams p{0.0, 0.0, 1000.0, 0.03, 0.25};
  double prev = mogi_displacement_3d(p, Vec2(0.0, 0.0)).norm();
  bool decayed = true;
  for (int i = 1; i <= 40; ++i) {
    const double cur = mogi_displacement_3d(p, Vec2(250.0 * i, 0.0)).norm();
    // the norm rises off-axis before decaying, so only enforce decay after the peak
    if (i >= 3 && cur >= prev) decayed = false;
    prev = cur;
  }
  CHECK(decayed);
}

TEST_CASE("line-of-sight projection") {
  const Vec3 u(0.01, -0.02, 0.05);
  CHECK(project_los(u, LookVector(Vec3(0, 0, 1))) == Catch::Approx(0.05));
  const LookVector ortho = LookVector::normalized(0.02, 0.01, 0.0);
  CHECK(project_los(Vec3(0.01, -0.02, 0.0), ortho) == Catch::Approx(0.0).margin(1e-18));
  const LookVector diag = LookVector::normalized(1.0, 0.0, 1.0);
  CHECK(project_los(Vec3(0.3, 0.0, 0.4), diag) == Catch::Approx(0.7 / std::sqrt(2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(LookVector(Vec3(0.5, 0.5, 0.5)), DomainError);

  // linearity
  Rng rng(4);
  const LookVector look = LookVector::normalized(0.64, -0.12, 0.76);
  Vec3 a(rng.normal(), rng.normal(), rng.normal()), b(rng.normal(), rng.normal(), rng.normal());
  CHECK(project_los(a + b, look) == Catch::Approx(project_los(a, look) + project_los(b, look)).epsilon(1e-12));
  CHECK(project_los(3.5 * a, look) == Catch::Approx(3.5 * project_los(a, look)).epsilon(1e-12));
}

TEST_CASE("toy models") {
  CHECK(toy_sine(M_PI / 2.0, 1.0) == Catch::Approx(1.0));
  CHECK(toy_sine(M_PI / 2.0, 0.0) == 0.0);
  CHECK(toy_sine(M_PI / 2.0, 1.0 / 3.0) == Catch::Approx(0.5).epsilon(1e-14));

  CHECK(toy_mean(2.0, 0.3) == 2.0);
  CHECK(toy_mean(0.0, 0.9) == 0.0);
  CHECK(toy_mean(M_PI, 0.7) == M_PI);

  Vec x0 = Vec::Zero(2);
  CHECK(lim_reality_trig2d(x0) == Catch::Approx(25.0 / 3.0).epsilon(1e-14));
  CHECK(toy_trig2d(Vec::Zero(2), (Vec(2) << 0.4, 0.9).finished()) == 0.0);
  CHECK(toy_trig2d((Vec(2) << 1.0, 2.0).finished(), (Vec(2) << M_PI / 10.0, 0.5).finished()) ==
        Catch::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("forward model registry and contracts") {
  for (const auto* name : {"mogi", "toy_sine", "toy_mean", "toy_trig2d"}) {
    auto fm = make_forward_model(name);
    CHECK(fm->name() == name);
  }
  CHECK_THROWS_AS(make_forward_model("okada"), DomainError);

  auto mogi = make_forward_model("mogi");
  Mat inputs(3, 2);
  inputs << 0.0, 0.0, 1000.0, 0.0, 0.0, 2000.0;
  Vec theta(5);
  theta << 0.0, 0.0, 2000.0, 0.05, 0.25;
  const LookVector look = LookVector::normalized(0.0, 0.0, 1.0);
  const Vec out = mogi->evaluate(theta, inputs, look);
  CHECK(out.size() == 3);
  CHECK(out[0] == Catch::Approx(mogi_displacement_3d(MogiParams::from_vec(theta), Vec2(0, 0))[2]));
  CHECK_THROWS_AS(mogi->evaluate(theta, inputs, std::nullopt), DomainError);

  MogiParams inside{0.0, 0.0, 2000.0, 0.05, 0.25};
  CHECK_NOTHROW(inside.validate_bounds());
  MogiParams outside = inside;
  outside.depth = 100.0;
  CHECK_THROWS_AS(outside.validate_bounds(), DomainError);
}
