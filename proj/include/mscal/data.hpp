#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mscal/errors.hpp"
#include "mscal/forward.hpp"
#include "mscal/rng.hpp"
#include "mscal/types.hpp"

namespace mscal {

// One source of field data: n observations on an n x p design, with an
// optional satellite look vector for line-of-sight forward models.
struct SourceObservations {
  Mat inputs;
  Vec outputs;
  std::optional<LookVector> look_vector;
  std::string label;

  int n() const { return static_cast<int>(inputs.rows()); }
  int dim() const { return static_cast<int>(inputs.cols()); }

  void validate() const {
    if (inputs.rows() != outputs.size()) throw DomainError("SourceObservations: outputs length mismatch");
    if (inputs.rows() < 1) throw DomainError("SourceObservations: empty source");
  }
};

struct MultiSourceDataset {
  std::vector<SourceObservations> sources;
  bool aligned = false;

  int k() const { return static_cast<int>(sources.size()); }
  int n() const { return sources.empty() ? 0 : sources.front().n(); }
  int dim() const { return sources.empty() ? 0 : sources.front().dim(); }
  const Mat& inputs() const { return sources.front().inputs; }
};

// True iff every source shares the exact same input matrix (bitwise
// coordinate equality); stores the verdict on the dataset.
inline bool validate_alignment(MultiSourceDataset& ds) {
  if (ds.sources.empty()) throw DomainError("validate_alignment: empty dataset");
  for (const auto& s : ds.sources) s.validate();
  const Mat& ref = ds.sources.front().inputs;
  bool ok = true;
  for (const auto& s : ds.sources) {
    if (s.inputs.rows() != ref.rows() || s.inputs.cols() != ref.cols() || s.inputs != ref) {
      ok = false;
      break;
    }
  }
  ds.aligned = ok;
  return ok;
}

// Pointwise mean across aligned sources.
inline SourceObservations stack_sources(const MultiSourceDataset& ds) {
  if (ds.sources.empty()) throw DomainError("stack_sources: empty dataset");
  MultiSourceDataset check = ds;
  if (!validate_alignment(check)) throw AlignmentError("stack_sources: sources are not aligned");
  SourceObservations out;
  out.inputs = ds.sources.front().inputs;
  out.outputs = Vec::Zero(out.inputs.rows());
  for (const auto& s : ds.sources) out.outputs += s.outputs;
  out.outputs /= static_cast<double>(ds.k());
  out.label = "stack";
  return out;
}

// Gridded image (e.g. an unwrapped interferogram): pixel (r, c) sits at
// origin + spacing .* (c, r); mask(r, c) == false marks a decorrelated
// (missing) pixel.
struct GridImage {
  Vec2 origin = Vec2::Zero();
  Vec2 spacing = Vec2::Ones();
  Mat values;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask;
  std::optional<LookVector> look_vector;

  int rows() const { return static_cast<int>(values.rows()); }
  int cols() const { return static_cast<int>(values.cols()); }

  void validate() const {
    if (!(spacing[0] > 0.0) || !(spacing[1] > 0.0)) throw DomainError("GridImage: spacing must be positive");
    if (mask.rows() != values.rows() || mask.cols() != values.cols())
      throw DomainError("GridImage: mask shape mismatch");
  }

  long count_valid() const { return mask.count(); }

  Vec2 pixel_center(int r, int c) const {
    return Vec2(origin[0] + c * spacing[0], origin[1] + r * spacing[1]);
  }
};

struct QuadtreeBox {
  Vec2 center;
  Vec2 extent;  // full widths in map units
  double value = 0.0;
  int n_pixels = 0;
};

struct QuadtreeImage {
  std::vector<QuadtreeBox> boxes;
  long total_pixels = 0;
};

// Draw m distinct non-missing pixels without replacement; deterministic for
// a fixed seed. Pixels are enumerated row-major before the partial shuffle.
inline SourceObservations uniform_subsample(const GridImage& img, int m, std::uint64_t seed) {
  img.validate();
  std::vector<std::pair<int, int>> valid;
  for (int r = 0; r < img.rows(); ++r)
    for (int c = 0; c < img.cols(); ++c)
      if (img.mask(r, c)) valid.emplace_back(r, c);
  if (m < 1 || static_cast<std::size_t>(m) > valid.size())
    throw DomainError("uniform_subsample: m exceeds number of non-missing pixels");

  Rng rng(seed);
  for (int i = 0; i < m; ++i) {
    const std::size_t j = i + rng.uniform_int(valid.size() - i);
    std::swap(valid[i], valid[j]);
  }

  SourceObservations out;
  out.inputs = Mat(m, 2);
  out.outputs = Vec(m);
  for (int i = 0; i < m; ++i) {
    const auto [r, c] = valid[i];
    out.inputs.row(i) = img.pixel_center(r, c).transpose();
    out.outputs[i] = img.values(r, c);
  }
  out.look_vector = img.look_vector;
  out.label = "uniform_subsample";
  return out;
}

namespace detail {

struct PixelRect {
  int r0, c0, h, w;
};

inline void quadtree_recurse(const GridImage& img, const PixelRect& rect, double split_threshold,
                             int min_box, int max_box, std::vector<QuadtreeBox>& out) {
  double lo = 0.0, hi = 0.0, sum = 0.0;
  int count = 0;
  for (int r = rect.r0; r < rect.r0 + rect.h; ++r)
    for (int c = rect.c0; c < rect.c0 + rect.w; ++c) {
      if (!img.mask(r, c)) continue;
      const double v = img.values(r, c);
      if (count == 0) {
        lo = hi = v;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      sum += v;
      ++count;
    }
  if (count == 0) return;  // fully decorrelated box, dropped

  const bool oversized = rect.h > max_box || rect.w > max_box;
  const bool rough = (hi - lo) > split_threshold && rect.h > min_box && rect.w > min_box;
  const bool splittable = rect.h > 1 || rect.w > 1;
  if ((oversized || rough) && splittable) {
    const int h1 = std::max(rect.h / 2, 1), w1 = std::max(rect.w / 2, 1);
    const int h2 = rect.h - h1, w2 = rect.w - w1;
    quadtree_recurse(img, {rect.r0, rect.c0, h1, w1}, split_threshold, min_box, max_box, out);
    if (w2 > 0) quadtree_recurse(img, {rect.r0, rect.c0 + w1, h1, w2}, split_threshold, min_box, max_box, out);
    if (h2 > 0) quadtree_recurse(img, {rect.r0 + h1, rect.c0, h2, w1}, split_threshold, min_box, max_box, out);
    if (h2 > 0 && w2 > 0)
      quadtree_recurse(img, {rect.r0 + h1, rect.c0 + w1, h2, w2}, split_threshold, min_box, max_box, out);
    return;
  }

  QuadtreeBox box;
  box.value = sum / count;
  box.n_pixels = count;
  box.center = Vec2(img.origin[0] + (rect.c0 + (rect.w - 1) * 0.5) * img.spacing[0],
                    img.origin[1] + (rect.r0 + (rect.h - 1) * 0.5) * img.spacing[1]);
  box.extent = Vec2(rect.w * img.spacing[0], rect.h * img.spacing[1]);
  out.push_back(box);
}

}  // namespace detail

// Recursive 4-way split wherever the within-box value range exceeds the
// threshold (and the box is still larger than min_box per side); boxes wider
// than max_box per side always split. Box value is the mean over non-missing
// pixels; fully missing boxes are dropped.
inline QuadtreeImage quadtree_downsample(const GridImage& img, double split_threshold, int min_box,
                                         int max_box) {
  img.validate();
  if (!(split_threshold > 0.0)) throw DomainError("quadtree_downsample: threshold must be positive");
  if (min_box < 1 || max_box < min_box) throw DomainError("quadtree_downsample: need 1 <= min_box <= max_box");
  QuadtreeImage q;
  detail::quadtree_recurse(img, {0, 0, img.rows(), img.cols()}, split_threshold, min_box, max_box, q.boxes);
  if (q.boxes.empty()) throw DomainError("quadtree_downsample: image has no valid pixels");
  for (const auto& b : q.boxes) q.total_pixels += b.n_pixels;
  return q;
}

// Likelihood weights w_j = n_j (proportionality constant 1).
inline Vec quadtree_weights(const QuadtreeImage& q) {
  if (q.boxes.empty()) throw DomainError("quadtree_weights: empty quadtree");
  Vec w(q.boxes.size());
  for (std::size_t j = 0; j < q.boxes.size(); ++j) w[j] = q.boxes[j].n_pixels;
  return w;
}

// Weighted i.i.d. Gaussian log likelihood of aggregated boxes: the
// normalizer uses the total pixel count n, the quadratic form is weighted.
inline double weighted_iid_loglik(const Vec& values, const Vec& means, const Vec& weights,
                                  double sigma2_0, long n_total) {
  if (values.size() != means.size() || values.size() != weights.size())
    throw DomainError("weighted_iid_loglik: length mismatch");
  if (!(sigma2_0 > 0.0)) throw DomainError("weighted_iid_loglik: sigma2_0 must be positive");
  const double quad = (weights.array() * (values - means).array().square()).sum();
  return -0.5 * n_total * std::log(2.0 * M_PI * sigma2_0) - 0.5 * quad / sigma2_0;
}

// View a quadtree image as point observations at box centers.
inline SourceObservations quadtree_as_observations(const QuadtreeImage& q,
                                                   const std::optional<LookVector>& look) {
  SourceObservations out;
  const int j = static_cast<int>(q.boxes.size());
  out.inputs = Mat(j, 2);
  out.outputs = Vec(j);
  for (int i = 0; i < j; ++i) {
    out.inputs.row(i) = q.boxes[i].center.transpose();
    out.outputs[i] = q.boxes[i].value;
  }
  out.look_vector = look;
  out.label = "quadtree";
  return out;
}

}  // namespace mscal
