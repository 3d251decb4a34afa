#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <vector>

#include "planesplat/geometry.hpp"
#include "planesplat/labels.hpp"
#include "planesplat/raster.hpp"
#include "planesplat/render.hpp"
#include "planesplat/splat.hpp"

namespace planesplat {

inline constexpr double kPlaneFitEps = 1e-6;

/// Plane A^T P = 1 in a camera frame (A in 1/m).
struct PlaneParams {
  Eigen::Vector3d A = Eigen::Vector3d::Zero();
  int plane_id = 0;
  int view_id = 0;
  int inlier_count = 0;
  double rms_residual = 0.0;  ///< RMS of A^T P - 1 over the fitted points
  bool degenerate = false;    ///< near rank-deficient point set
};

/// Regularized least squares A = (Q^T Q + eps I)^-1 Q^T 1.
/// Throws InsufficientPointsError for fewer than 3 points.
[[nodiscard]] PlaneParams fit_plane(std::span<const Eigen::Vector3d> points, double eps = kPlaneFitEps);

/// 1 / (A^T K^-1 p~); NaN where |A^T K^-1 p~| < 1e-9 or the depth is not positive.
[[nodiscard]] double planar_depth_at(const Eigen::Vector3d& A, const CameraView& cam, double u, double v);
/// planar_depth_at over the pixels of `mask` (all pixels if null), NaN elsewhere.
[[nodiscard]] ScalarMap planar_depth(const PlaneParams& plane, const CameraView& cam, const MaskMap* mask = nullptr);

struct TermValue {
  double value = 0.0;
  std::size_t count = 0;  ///< pixels (or Gaussians) averaged over
};

struct CoplanarityResult {
  TermValue term;
  std::vector<PlaneParams> planes;  ///< fits used, in label order
  std::vector<int> skipped;          ///< labels with < 3 valid pixels or a degenerate fit
};

/// Mean |D_p - D| over plane pixels where both depths are valid.  Planes are
/// refit from `rendered_depth` unless `fixed_planes` supplies one for the label.
/// When `grad_depth` is given, weight * dl/dD is added with A held constant.
[[nodiscard]] CoplanarityResult coplanarity_loss(const ScalarMap& rendered_depth, const PlaneLabelMap& labels,
                                                 const CameraView& cam, ScalarMap* grad_depth = nullptr,
                                                 double weight = 1.0,
                                                 const std::vector<PlaneParams>* fixed_planes = nullptr,
                                                 double eps = kPlaneFitEps);

/// Mean squared depth error over lt & conf & valid pixels.  Null masks count as all set.
[[nodiscard]] TermValue prior_depth_loss(const ScalarMap& rendered, const ScalarMap& prior, const MaskMap* lt,
                                         const MaskMap* conf, ScalarMap* grad = nullptr, double weight = 1.0);

/// Mean of |N_r - N_d|_1 + (1 - N_r . N_d) over labeled pixels with valid normals.
[[nodiscard]] TermValue prior_normal_loss(const VectorMap& surface_normal, const VectorMap& prior_normal,
                                          const LabelRaster& labels, VectorMap* grad = nullptr, double weight = 1.0);

/// Mean |N - N_d|_1 over lt & valid pixels.  `gs_normal` may be the raw
/// blended normal; it is normalized first and `grad_gs` is taken with respect
/// to the raw value.
[[nodiscard]] TermValue dn_consistency_loss(const VectorMap& gs_normal, const VectorMap& surface_normal,
                                            const MaskMap* lt, VectorMap* grad_gs = nullptr,
                                            VectorMap* grad_surface = nullptr, double weight = 1.0);

inline constexpr double kRgbL1Weight = 0.8;

/// 0.8 L1 + 0.2 (1 - SSIM).
[[nodiscard]] TermValue rgb_loss(const VectorMap& rendered, const VectorMap& target, VectorMap* grad = nullptr,
                                 double weight = 1.0);

/// Mean over Gaussians of the smallest scale.
[[nodiscard]] TermValue flatten_loss(const GaussianCloud& scene, GaussianGradients* grad = nullptr, double weight = 1.0);

struct LossWeights {
  double dn = 0.05;
  double p = 0.5;
  double rd = 0.05;
  double rn = 0.2;
};

struct LossBreakdown {
  double l_rgb = 0.0;
  double l_s = 0.0;
  double l_dn = 0.0;
  double l_p = 0.0;
  double l_rd = 0.0;
  double l_rn = 0.0;
  double total = 0.0;
  std::size_t n_rgb = 0;
  std::size_t n_s = 0;
  std::size_t n_dn = 0;
  std::size_t n_p = 0;
  std::size_t n_rd = 0;
  std::size_t n_rn = 0;
};

/// Fills `total` from the six parts.
[[nodiscard]] LossBreakdown total_loss(const LossBreakdown& parts, const LossWeights& weights = {});

/// Per-view supervision.  Null members disable the terms that need them.
struct ViewSupervision {
  const VectorMap* image = nullptr;
  const ScalarMap* prior_depth = nullptr;
  const VectorMap* prior_normal = nullptr;
  const MaskMap* lt = nullptr;
  const MaskMap* conf = nullptr;
  const PlaneLabelMap* labels = nullptr;
};

struct ActiveTerms {
  bool dn = true;
  bool p = true;
  bool rd = true;
  bool rn = true;
};

struct LossEvaluation {
  LossBreakdown breakdown;
  RenderGradients render_grads;   ///< upstream for render_backward, depth already included
  GaussianGradients scene_grads;  ///< direct gradients (flatten term)
  std::vector<PlaneParams> planes;
  VectorMap surface_normal;
};

struct LossOptions {
  int normal_offset = 1;
  double plane_eps = kPlaneFitEps;
  const std::vector<PlaneParams>* fixed_planes = nullptr;
};

/// Evaluates every loss for one rendered view and the gradients of the
/// weighted total with respect to the render channels.  Inactive terms are
/// reported with weight zero in `breakdown.total`.
[[nodiscard]] LossEvaluation evaluate_losses(const GaussianCloud& scene, const RenderOutput& out, const CameraView& cam,
                                             const ViewSupervision& sup, const LossWeights& weights,
                                             const ActiveTerms& active, const LossOptions& options = {});

/// Weights with inactive terms zeroed.
[[nodiscard]] LossWeights effective_weights(const LossWeights& weights, const ActiveTerms& active);

}  // namespace planesplat
