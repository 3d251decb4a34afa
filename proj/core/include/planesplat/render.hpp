#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "planesplat/geometry.hpp"
#include "planesplat/raster.hpp"
#include "planesplat/splat.hpp"

namespace planesplat {

struct RenderSettings {
  double alpha_max = 0.99;
  double alpha_min = 1.0 / 255.0;      ///< contributions below this are skipped
  double transmittance_stop = 1e-4;
  double cov2d_dilation = kCov2dDilation;
  double acc_min = 0.5;                ///< minimum blend weight for a valid depth
  double near_cull = 0.2;              ///< centers closer than this (camera z) are not drawn
  double guard_band = 0.3;             ///< centers further outside the image (fraction of its size) are not drawn
  int tile_size = 8;
};

/// Rasters produced for one view.  Normals and plane distances are in the
/// camera frame; gs_normal is the raw (unnormalized) blend.
struct RenderOutput {
  VectorMap color;
  VectorMap gs_normal;
  ScalarMap plane_dist;
  ScalarMap depth;
  ScalarMap acc;
};

/// Per-Gaussian quantities for one view, kept for the backward pass.
struct PreparedGaussian {
  bool visible = false;
  Eigen::Vector3d p_cam = Eigen::Vector3d::Zero();
  Eigen::Vector2d mu2d = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity();
  Eigen::Vector3d conic = Eigen::Vector3d::Zero();  ///< (a, b, c) of the inverse 2D covariance
  double opacity = 0.0;
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal_cam = Eigen::Vector3d::Zero();  ///< oriented toward the camera
  double plane_dist = 0.0;
  double normal_sign = 1.0;
  int normal_axis = 0;
  int radius = 0;
};

/// Screen-space footprint copied once per covered tile so the per-pixel
/// loops stay on contiguous memory.
struct TileSplat {
  double mx = 0.0;
  double my = 0.0;
  double ca = 0.0;  ///< conic
  double cb = 0.0;
  double cc = 0.0;
  double opacity = 0.0;
  double power_floor = 0.0;  ///< below this exponent alpha < alpha_min
  std::uint32_t id = 0;
};

/// Forward-pass state needed by render_backward.
struct RenderTrace {
  std::vector<PreparedGaussian> prepared;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::size_t> tile_begin;  ///< tiles + 1 offsets into tile_splats
  std::vector<TileSplat> tile_splats;   ///< per tile, front to back
  std::vector<std::uint32_t> last_contributor;          ///< per pixel: list entries consumed
  std::vector<double> final_transmittance;              ///< per pixel
};

/// Depth-sorted alpha blending of color, GS normal, plane distance and
/// blend weight; depth follows from the plane channels.
[[nodiscard]] RenderOutput render(const GaussianCloud& scene, const CameraView& cam,
                                  const RenderSettings& settings = {}, RenderTrace* trace = nullptr);

/// Ray-plane depth delta / (N . K^-1 p~) from the blended plane channels.
/// NaN where acc < acc_min, |N . ray| < 1e-6 or the result is not positive.
[[nodiscard]] ScalarMap depth_from_plane(const RenderOutput& out, const CameraView& cam, double acc_min = 0.5);

/// Upstream gradients dL/d(channel); any raster may be left empty.
struct RenderGradients {
  VectorMap color;
  VectorMap gs_normal;
  ScalarMap plane_dist;
  ScalarMap depth;
  ScalarMap acc;

  RenderGradients() = default;
  RenderGradients(int width, int height);
};

/// Folds dL/d(depth) into dL/d(plane_dist) and dL/d(gs_normal).
void depth_from_plane_backward(const RenderOutput& out, const CameraView& cam, const ScalarMap& grad_depth,
                               RenderGradients& grads, double acc_min = 0.5);

/// Analytic gradients of all output channels with respect to every Gaussian
/// parameter.  `trace` must come from render() on the same scene and camera.
[[nodiscard]] GaussianGradients render_backward(const GaussianCloud& scene, const CameraView& cam,
                                                const RenderOutput& out, const RenderTrace& trace,
                                                const RenderGradients& upstream, const RenderSettings& settings = {});

}  // namespace planesplat
