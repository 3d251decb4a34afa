#pragma once

#include <span>
#include <vector>

#include "planesplat/raster.hpp"

namespace planesplat {

struct SparseSample {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  ///< metres, > 0
};

/// Projected SfM points for one view.
struct SparseDepth {
  int view_id = 0;
  std::vector<SparseSample> samples;
};

/// Metric prior = s * dense + t, shared by every view of a group.
struct AlignmentParams {
  double s = 1.0;
  double t = 0.0;
  int group_id = 0;
  int samples = 0;
  int iterations = 0;
  double mean_abs_residual = 0.0;
};

struct AlignmentConfig {
  int min_samples = 10;
  int max_iterations = 10;
  double weight_floor = 1e-6;
};

/// One (dense, sparse) depth correspondence.
struct DepthPair {
  double dense = 0.0;
  double sparse = 0.0;
};

/// Least-absolute-deviation fit of sparse ~ s * dense + t by iteratively
/// reweighted least squares started from the L2 solution.  Samples are sorted
/// first so the result does not depend on their order.
/// Throws AlignmentError for too few samples and DegenerateAlignmentError if
/// s <= 0 or the system is singular.
[[nodiscard]] AlignmentParams align_scale_shift(std::span<const DepthPair> pairs, const AlignmentConfig& cfg = {});

/// Gathers pairs by sampling each dense map at the nearest pixel of its sparse
/// samples (skipping NaN or non-positive values) and fits one (s, t).
[[nodiscard]] AlignmentParams align_scale_shift(std::span<const ScalarMap* const> dense,
                                                std::span<const SparseDepth> sparse, const AlignmentConfig& cfg = {});

/// s * dense + t, NaN preserved.
[[nodiscard]] ScalarMap apply_alignment(const ScalarMap& dense, const AlignmentParams& params);

struct CannyConfig {
  double sigma = 1.4;
  double low = 0.1;
  double high = 0.2;
  int dilate_px = 4;
};

/// Canny edges of the luma image: Gaussian blur, Sobel gradient scaled so a
/// unit step reads 1, non-maximum suppression and hysteresis.
[[nodiscard]] MaskMap canny_edges(const VectorMap& rgb, const CannyConfig& cfg = {});

/// Complement of the edges dilated by a (2 d + 1)^2 square.
[[nodiscard]] MaskMap low_texture_mask(const VectorMap& rgb, const CannyConfig& cfg = {});

/// conf >= threshold; NaN counts as below.
[[nodiscard]] MaskMap confidence_mask(const ScalarMap& conf, double threshold = 1.5);

/// Bilinear resize that ignores NaN samples (renormalizing the weights).
[[nodiscard]] ScalarMap resize_bilinear(const ScalarMap& src, int width, int height);
/// Nearest-neighbour resize.
[[nodiscard]] ScalarMap resize_nearest(const ScalarMap& src, int width, int height);

}  // namespace planesplat
