#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "mscal/data.hpp"
#include "mscal/rng.hpp"

using namespace mscal;

namespace {

SourceObservations make_source(const Mat& x, const Vec& y, const std::string& label) {
  SourceObservations s;
  s.inputs = x;
  s.outputs = y;
  s.label = label;
  return s;
}

GridImage constant_image(int rows, int cols, double value) {
  GridImage img;
  img.values = Mat::Constant(rows, cols, value);
  img.mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(rows, cols, true);
  img.origin = Vec2(0.0, 0.0);
  img.spacing = Vec2(1.0, 1.0);
  return img;
}

}  // namespace

TEST_CASE("alignment validation") {
  Mat x(3, 2);
  x << 0, 0, 1, 0, 0, 1;
  Vec y = Vec::Ones(3);

  MultiSourceDataset one;
  one.sources = {make_source(x, y, "a")};
  CHECK(validate_alignment(one));
  CHECK(one.aligned);

  MultiSourceDataset two;
  two.sources = {make_source(x, y, "a"), make_source(x, 2.0 * y, "b")};
  CHECK(validate_alignment(two));

  Mat x2 = x;
  x2(1, 0) += 1e-3;
  MultiSourceDataset off;
  off.sources = {make_source(x, y, "a"), make_source(x2, y, "b")};
  CHECK_FALSE(validate_alignment(off));
  CHECK_FALSE(off.aligned);

  MultiSourceDataset empty;
  CHECK_THROWS_AS(validate_alignment(empty), DomainError);
}

TEST_CASE("stacking") {
  Mat x(4, 1);
  x << 0, 1, 2, 3;
  Rng rng(12);

  SECTION("identical sources stack to themselves") {
    Vec y(4);
    for (int i = 0; i < 4; ++i) y[i] = rng.normal();
    MultiSourceDataset ds;
    ds.sources = {make_source(x, y, "a"), make_source(x, y, "b")};
    CHECK((stack_sources(ds).outputs - y).norm() == 0.0);
  }
  SECTION("y and -y cancel") {
    Vec y(4);
    for (int i = 0; i < 4; ++i) y[i] = rng.normal();
    MultiSourceDataset ds;
    ds.sources = {make_source(x, y, "a"), make_source(x, (-y).eval(), "b")};
    CHECK(stack_sources(ds).outputs.cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("k = 3 equals the elementwise mean, and scaling commutes") {
    std::vector<Vec> ys;
    MultiSourceDataset ds;
    for (int l = 0; l < 3; ++l) {
      Vec y(4);
      for (int i = 0; i < 4; ++i) y[i] = rng.normal();
      ys.push_back(y);
      ds.sources.push_back(make_source(x, y, "s" + std::to_string(l)));
    }
    const Vec stack = stack_sources(ds).outputs;
    for (int i = 0; i < 4; ++i)
      CHECK(stack[i] == Catch::Approx((ys[0][i] + ys[1][i] + ys[2][i]) / 3.0).margin(1e-15));

    // scaling by a power of two keeps the identity exact in floating point
    MultiSourceDataset scaled = ds;
    for (auto& s : scaled.sources) s.outputs *= 2.0;
    CHECK((stack_sources(scaled).outputs - 2.0 * stack).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("misaligned input raises") {
    Mat x2 = x;
    x2(0, 0) += 0.5;
    MultiSourceDataset ds;
    ds.sources = {make_source(x, Vec::Ones(4), "a"), make_source(x2, Vec::Ones(4), "b")};
    CHECK_THROWS_AS(stack_sources(ds), AlignmentError);
  }
}

TEST_CASE("uniform subsampling") {
  GridImage img = constant_image(20, 25, 0.0);
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 25; ++c) img.values(r, c) = r * 100 + c;
  img.mask(3, 4) = false;
  img.mask(19, 24) = false;

  SECTION("m equal to all valid pixels hits each exactly once") {
    const int all = static_cast<int>(img.count_valid());
    auto s = uniform_subsample(img, all, 77);
    std::set<std::pair<double, double>> seen;
    for (int i = 0; i < s.n(); ++i) seen.insert({s.inputs(i, 0), s.inputs(i, 1)});
    CHECK(static_cast<int>(seen.size()) == all);
  }
  SECTION("same seed twice gives identical selections") {
    auto a = uniform_subsample(img, 50, 123);
    auto b = uniform_subsample(img, 50, 123);
    CHECK(a.inputs == b.inputs);
    CHECK(a.outputs == b.outputs);
    auto c = uniform_subsample(img, 50, 124);
    CHECK(a.inputs != c.inputs);
  }
  SECTION("selections are distinct, in-grid, and skip missing pixels") {
    auto s = uniform_subsample(img, 200, 5);
    std::set<std::pair<double, double>> seen;
    for (int i = 0; i < 200; ++i) {
      seen.insert({s.inputs(i, 0), s.inputs(i, 1)});
      CHECK(s.inputs(i, 0) >= 0.0);
      CHECK(s.inputs(i, 0) <= 24.0);
      CHECK(s.inputs(i, 1) <= 19.0);
      CHECK_FALSE((s.inputs(i, 0) == 4.0 && s.inputs(i, 1) == 3.0));
    }
    CHECK(seen.size() == 200);
  }
  CHECK_THROWS_AS(uniform_subsample(img, 10000, 1), DomainError);
}

TEST_CASE("quadtree downsampling") {
  SECTION("constant image collapses to a single box") {
    GridImage img = constant_image(16, 16, 3.5);
    auto q = quadtree_downsample(img, 0.1, 1, 64);
    REQUIRE(q.boxes.size() == 1);
    CHECK(q.boxes[0].n_pixels == 256);
    CHECK(q.boxes[0].value == Catch::Approx(3.5));
    CHECK(q.total_pixels == 256);
  }
  SECTION("offset quadrant forces exactly one split of the root") {
    GridImage img = constant_image(4, 4, 0.0);
    const double threshold = 0.2;
    img.values.block(0, 0, 2, 2).array() = 10.0 * threshold;
    auto q = quadtree_downsample(img, threshold, 1, 16);
    REQUIRE(q.boxes.size() == 4);
    for (const auto& b : q.boxes) CHECK(b.n_pixels == 4);
    int offset_boxes = 0;
    for (const auto& b : q.boxes)
      if (b.value == Catch::Approx(10.0 * threshold)) ++offset_boxes;
    CHECK(offset_boxes == 1);
  }
  SECTION("rough quadrant splits recursively while flat ones stay whole") {
    GridImage img = constant_image(8, 8, 0.0);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) img.values(r, c) = r * 5.0;  // strong gradient quadrant
    auto q = quadtree_downsample(img, 1.0, 1, 8);
    CHECK(q.boxes.size() > 4);
    CHECK(q.total_pixels == 64);
  }
  SECTION("partition covers the non-missing support exactly once") {
    Rng rng(99);
    GridImage img = constant_image(13, 9, 0.0);  // odd sizes exercise uneven splits
    for (int r = 0; r < 13; ++r)
      for (int c = 0; c < 9; ++c) {
        img.values(r, c) = rng.normal();
        if (rng.uniform() < 0.2) img.mask(r, c) = false;
      }
    auto q = quadtree_downsample(img, 0.8, 1, 4);
    CHECK(q.total_pixels == img.count_valid());

    // weighted mean of box values reproduces the full-image mean
    const Vec w = quadtree_weights(q);
    double wsum = 0.0, vsum = 0.0;
    for (std::size_t j = 0; j < q.boxes.size(); ++j) {
      wsum += w[j];
      vsum += w[j] * q.boxes[j].value;
    }
    double full = 0.0;
    long cnt = 0;
    for (int r = 0; r < 13; ++r)
      for (int c = 0; c < 9; ++c)
        if (img.mask(r, c)) {
          full += img.values(r, c);
          ++cnt;
        }
    CHECK(wsum == Catch::Approx(static_cast<double>(cnt)));
    CHECK(vsum / wsum == Catch::Approx(full / cnt).margin(1e-12));
  }
  SECTION("fully missing image raises") {
    GridImage img = constant_image(4, 4, 0.0);
    img.mask.setConstant(false);
    CHECK_THROWS_AS(quadtree_downsample(img, 1.0, 1, 4), DomainError);
  }
}

TEST_CASE("quadtree weights") {
  QuadtreeImage q;
  q.boxes = {QuadtreeBox{Vec2(0, 0), Vec2(2, 2), 1.0, 4}, QuadtreeBox{Vec2(2, 0), Vec2(2, 2), 2.0, 4},
             QuadtreeBox{Vec2(0, 2), Vec2(4, 2), 3.0, 8}};
  q.total_pixels = 16;
  const Vec w = quadtree_weights(q);
  CHECK(w[0] == 4.0);
  CHECK(w[1] == 4.0);
  CHECK(w[2] == 8.0);
  CHECK(w.sum() == Catch::Approx(16.0));

  QuadtreeImage single;
  single.boxes = {QuadtreeBox{Vec2(0, 0), Vec2(4, 4), 0.5, 16}};
  single.total_pixels = 16;
  CHECK(quadtree_weights(single)[0] == 16.0);
}

TEST_CASE("weighted likelihood reduces to the plain density for unit boxes") {
  Rng rng(21);
  const int n = 12;
  Vec y(n), m(n);
  for (int i = 0; i < n; ++i) {
    y[i] = rng.normal();
    m[i] = 0.3 * rng.normal();
  }
  const double s2 = 0.4;
  const double weighted = weighted_iid_loglik(y, m, Vec::Ones(n), s2, n);
  double plain = 0.0;
  for (int i = 0; i < n; ++i)
    plain += -0.5 * std::log(2.0 * M_PI * s2) - 0.5 * (y[i] - m[i]) * (y[i] - m[i]) / s2;
  CHECK(weighted == Catch::Approx(plain).epsilon(1e-12));
}
