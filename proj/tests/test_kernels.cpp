#include <catch2/catch_amalgamated.hpp>

#include "mscal/kernels.hpp"
#include "mscal/rng.hpp"

using namespace mscal;

TEST_CASE("one-dimensional kernels at pinned points") {
  CHECK(eval_kernel_1d(KernelFamily::Matern52, 0.0, 1.0) == 1.0);
  CHECK(eval_kernel_1d(KernelFamily::Exponential, 1.0, 1.0) ==
        Catch::Approx(0.36787944117144233).epsilon(1e-14));
  // (1 + sqrt(5) + 5/3) exp(-sqrt(5)) at d = gamma
  CHECK(eval_kernel_1d(KernelFamily::Matern52, 2.5, 2.5) ==
        Catch::Approx(0.52399410883182031).epsilon(1e-14));
  CHECK(eval_kernel_1d(KernelFamily::PowerExponential, 2.0, 1.0, 2.0) ==
        Catch::Approx(std::exp(-4.0)).epsilon(1e-14));
}

TEST_CASE("one-dimensional kernel domain errors") {
  CHECK_THROWS_AS(eval_kernel_1d(KernelFamily::Matern52, -1.0, 1.0), DomainError);
  CHECK_THROWS_AS(eval_kernel_1d(KernelFamily::Matern52, 1.0, 0.0), DomainError);
  CHECK_THROWS_AS(eval_kernel_1d(KernelFamily::Matern52, std::nan(""), 1.0), DomainError);
  CHECK_THROWS_AS(eval_kernel_1d(KernelFamily::PowerExponential, 1.0, 1.0, 2.5), DomainError);
}

TEST_CASE("kernel is continuous non-increasing on a grid") {
  for (auto family : {KernelFamily::Matern52, KernelFamily::Exponential}) {
    double prev = 1.0;
    for (int i = 0; i <= 1000; ++i) {
      const double d = 5.0 * i / 1000.0;
      const double v = eval_kernel_1d(family, d, 0.7);
      CHECK(v <= prev + 1e-15);
      CHECK(v > 0.0);
      prev = v;
    }
  }
}

TEST_CASE("exponential equals power exponential with alpha one, bit for bit") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const double d = 3.0 * rng.uniform();
    const double g = 0.05 + rng.uniform();
    CHECK(eval_kernel_1d(KernelFamily::Exponential, d, g) ==
          eval_kernel_1d(KernelFamily::PowerExponential, d, g, 1.0));
  }
  // matrix path
  Mat x(6, 1);
  for (int i = 0; i < 6; ++i) x(i, 0) = rng.uniform();
  KernelSpec ex = make_kernel_spec(KernelFamily::Exponential, Vec::Constant(1, 2.0));
  KernelSpec pe = make_kernel_spec(KernelFamily::PowerExponential, Vec::Constant(1, 2.0));
  const Mat a = build_correlation_matrix(ex, x).entries;
  const Mat b = build_correlation_matrix(pe, x).entries;
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("product kernel composes one-dimensional evaluations") {
  KernelSpec spec = make_kernel_spec(KernelFamily::Matern52, (Vec(2) << 0.8, 2.5).finished());
  Vec xa(2), xb(2);
  xa << 0.3, 1.2;
  xb << -0.4, 0.9;
  const double expect = eval_kernel_1d(KernelFamily::Matern52, 0.7, 1.0 / 0.8) *
                        eval_kernel_1d(KernelFamily::Matern52, 0.3, 1.0 / 2.5);
  CHECK(eval_product_kernel(spec, xa, xb) == Catch::Approx(expect).epsilon(1e-13));
  CHECK(eval_product_kernel(spec, xa, xa) == 1.0);
  CHECK(eval_product_kernel(spec, xa, xb) == eval_product_kernel(spec, xb, xa));

  KernelSpec e2 = make_kernel_spec(KernelFamily::Exponential, Vec::Ones(2));
  Vec z0 = Vec::Zero(2), z1 = Vec::Ones(2);
  CHECK(eval_product_kernel(e2, z0, z1) == Catch::Approx(std::exp(-2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(eval_product_kernel(spec, Vec::Ones(3), xb), DomainError);
}

TEST_CASE("correlation matrix basics") {
  SECTION("n = 1") {
    Mat x(1, 1);
    x << 0.4;
    auto r = build_correlation_matrix(make_kernel_spec(KernelFamily::Matern52, Vec::Ones(1)), x);
    CHECK(r.entries(0, 0) == 1.0);
    CHECK(r.log_det == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("2x2 exponential determinant by hand") {
    Mat x(2, 1);
    x << 0.0, 1.0;
    auto r = build_correlation_matrix(make_kernel_spec(KernelFamily::Exponential, Vec::Ones(1)), x);
    CHECK(r.entries(0, 1) == Catch::Approx(0.36787944117144233).epsilon(1e-14));
    CHECK(r.log_det == Catch::Approx(-0.14541345786885906).epsilon(1e-12));
    CHECK(r.jitter_used == 0.0);
  }
}

TEST_CASE("correlation matrix properties on random designs") {
  Rng rng(42);
  for (auto family : {KernelFamily::Matern52, KernelFamily::Exponential}) {
    Mat x(20, 2);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
    KernelSpec spec = make_kernel_spec(family, (Vec(2) << 1.7, 0.6).finished());
    auto r = build_correlation_matrix(spec, x);

    CHECK((r.entries - r.entries.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((r.entries.diagonal().array() == 1.0).all());

    Mat recon = r.chol_lower * r.chol_lower.transpose();
    Mat target = r.entries;
    target.diagonal().array() += r.jitter_used;
    CHECK((recon - target).cwiseAbs().maxCoeff() / target.cwiseAbs().maxCoeff() < 1e-10);

    // entries match the scalar product-kernel evaluation
    for (int trial = 0; trial < 10; ++trial) {
      const int i = static_cast<int>(rng.uniform_int(20)), j = static_cast<int>(rng.uniform_int(20));
      CHECK(r.entries(i, j) ==
            Catch::Approx(eval_product_kernel(spec, x.row(i).transpose(), x.row(j).transpose()))
                .margin(1e-13));
    }
  }
}

TEST_CASE("jitter ladder engages on a degenerate design") {
  Mat x(3, 1);
  x << 0.5, 0.5, 0.9;  // duplicated input makes R singular
  auto r = build_correlation_matrix(make_kernel_spec(KernelFamily::Matern52, Vec::Ones(1)), x);
  CHECK(r.jitter_used > 0.0);
  CHECK(r.jitter_used <= 1e-6);
  Mat recon = r.chol_lower * r.chol_lower.transpose();
  Mat target = r.entries;
  target.diagonal().array() += r.jitter_used;
  CHECK((recon - target).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("solve and quadratic form agree with dense inverse") {
  Rng rng(3);
  Mat x(8, 1);
  for (int i = 0; i < 8; ++i) x(i, 0) = rng.uniform();
  auto r = build_correlation_matrix(make_kernel_spec(KernelFamily::Matern52, Vec::Constant(1, 8.0)), x);
  Vec b(8);
  for (int i = 0; i < 8; ++i) b[i] = rng.normal();
  Mat dense = r.entries;
  dense.diagonal().array() += r.jitter_used;
  const Vec ref = dense.fullPivLu().solve(b);
  CHECK((r.solve(b) - ref).norm() / ref.norm() < 1e-9);
  CHECK(r.quad_form(b) == Catch::Approx(b.dot(ref)).epsilon(1e-9));
  CHECK((r.inverse() * dense - Mat::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-7);
}
