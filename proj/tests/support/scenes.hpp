#pragma once

// Shared fixtures and finite-difference helpers for the test suites.

#include <functional>
#include <string>

#include "planesplat/geometry.hpp"
#include "planesplat/render.hpp"
#include "planesplat/splat.hpp"
#include "planesplat/supervision.hpp"

namespace planesplat::testing {

inline constexpr std::size_t kParamsPerGaussian = 14;

/// Camera at the world origin looking down +z.
CameraView identity_camera(int width, int height, double f, double cx, double cy, int id = 0);

/// Camera looking at `target` from `eye` with world up +z (or -y if nearly parallel).
CameraView look_at_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, int width, int height, double f,
                          int id = 0);

/// A flattened Gaussian lying in the plane z = depth, normal along world z.
Gaussian fronto_gaussian(const Eigen::Vector3d& center, double in_plane_scale, double thin_scale, double opacity,
                         const Eigen::Vector3d& rgb);

/// Three overlapping flattened Gaussians in front of an 8x8 camera with
/// distinct scales, tilts and opacities below the alpha clip.
GaussianCloud three_gaussian_scene();
CameraView small_camera();

/// Reference to the flat parameter index `k` (14 per Gaussian: mu, log_scale,
/// rot, opacity_logit, rgb).
double& param_ref(GaussianCloud& cloud, std::size_t k);
double grad_at(const GaussianGradients& grads, std::size_t k);
std::string param_name(std::size_t k);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central differences of `loss` over every scene parameter compared with
/// `analytic`.  Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult check_gradients(const GaussianCloud& scene, const GaussianGradients& analytic,
                                const std::function<double(const GaussianCloud&)>& loss, double h = 1e-4,
                                double floor = 1e-6);

VectorMap random_image(int w, int h, std::uint64_t seed);
VectorMap random_unit_field(int w, int h, std::uint64_t seed);
MaskMap random_mask(int w, int h, std::uint64_t seed, double p = 0.6);

/// Supervision for the three-Gaussian scene, chosen away from kinks of the
/// absolute values so that central differences are meaningful.
struct SmallSupervision {
  VectorMap image;
  ScalarMap prior_depth;
  VectorMap prior_normal;
  MaskMap lt;
  MaskMap conf;
  PlaneLabelMap labels;
};
SmallSupervision make_small_supervision(const RenderOutput& out);

enum class LossTerm { rgb, flatten, dn, p, rd, rn };
inline constexpr int kNumLossTerms = 6;
std::string term_name(LossTerm t);

struct TermCheck : GradCheckResult {
  double term_value = 0.0;
};

/// Analytic gradient of one loss term on the three-Gaussian scene, through
/// the renderer, against central differences of that term alone (plane fits
/// frozen at the base evaluation).
TermCheck check_term_gradient(LossTerm term, double h, double floor);

}  // namespace planesplat::testing
