#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

#include "planesplat/geometry.hpp"
#include "planesplat/labels.hpp"

namespace planesplat {

/// One anisotropic 3D Gaussian.  Scales are stored as logarithms and the
/// rotation as a (w, x, y, z) quaternion that is normalized on use.
struct Gaussian {
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
  Eigen::Vector4d rot = Eigen::Vector4d(1.0, 0.0, 0.0, 0.0);
  double opacity_logit = 0.0;
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();

  [[nodiscard]] Eigen::Vector3d scale() const { return log_scale.array().exp(); }
  [[nodiscard]] double opacity() const;
};

/// Structure-of-arrays scene.  Fields are indexed by Gaussian id.
struct GaussianCloud {
  std::vector<Eigen::Vector3d> mu;
  std::vector<Eigen::Vector3d> log_scale;
  std::vector<Eigen::Vector4d> rot;
  std::vector<double> opacity_logit;
  std::vector<Eigen::Vector3d> rgb;

  [[nodiscard]] std::size_t size() const noexcept { return mu.size(); }
  [[nodiscard]] bool empty() const noexcept { return mu.empty(); }
  void reserve(std::size_t n);
  void push_back(const Gaussian& g);
  [[nodiscard]] Gaussian at(std::size_t i) const;
  void set(std::size_t i, const Gaussian& g);

  bool operator==(const GaussianCloud&) const = default;
};

/// Per-parameter gradients laid out like GaussianCloud.
struct GaussianGradients {
  std::vector<Eigen::Vector3d> mu;
  std::vector<Eigen::Vector3d> log_scale;
  std::vector<Eigen::Vector4d> rot;
  std::vector<double> opacity_logit;
  std::vector<Eigen::Vector3d> rgb;

  explicit GaussianGradients(std::size_t n = 0);
  [[nodiscard]] std::size_t size() const noexcept { return mu.size(); }
  void add(const GaussianGradients& other, double weight = 1.0);
  [[nodiscard]] bool all_finite() const;
};

[[nodiscard]] double sigmoid(double x);
[[nodiscard]] double logit(double p);

/// Rotation matrix of the normalized quaternion (w, x, y, z).
[[nodiscard]] Eigen::Matrix3d rotation_matrix(const Eigen::Vector4d& q);
/// Unit quaternion (w, x, y, z) rotating `from` onto `to`.
[[nodiscard]] Eigen::Vector4d quaternion_between(const Eigen::Vector3d& from, const Eigen::Vector3d& to);

/// Sigma = R S S^T R^T.
[[nodiscard]] Eigen::Matrix3d covariance(const Gaussian& g);

struct Projected2D {
  Eigen::Vector2d mu2d = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov2d = Eigen::Matrix2d::Zero();
  double depth_center = 0.0;
  std::size_t gaussian_id = 0;
  bool culled = false;
};

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCov2dDilation = 0.3;

/// EWA projection: mean by the full pinhole model, covariance J W Sigma W^T J^T
/// plus `dilation` * I.  Centers at z <= kNearPlane are culled.
[[nodiscard]] Projected2D project(const Gaussian& g, const CameraView& cam, double dilation = kCov2dDilation,
                                  std::size_t gaussian_id = 0);

/// Index of the smallest scale; the lowest index wins ties.
[[nodiscard]] int min_scale_axis(const Eigen::Vector3d& log_scale);

/// World-frame normal: rotation column of the smallest-scale axis (unsigned).
[[nodiscard]] Eigen::Vector3d gaussian_normal(const Gaussian& g);
/// Same axis, oriented so it faces the camera: n . (mu - O_c) <= 0.
[[nodiscard]] Eigen::Vector3d gaussian_normal(const Gaussian& g, const CameraView& cam);

struct PlaneInitConfig {
  double density_thresh = 0.01;  ///< existing Gaussians per mask pixel below which a plane is supplemented
  double samples_per_px = 0.01;  ///< multiplier on the Gaussian deficit (density_thresh * pixels - count)
  double initial_opacity = 0.1;
  int knn = 3;
  std::uint64_t seed = 0;
};

/// Inputs for one view of plane-guided initialization.  All rasters share the
/// camera's resolution; `prior_depth` is the metric (aligned) depth prior.
struct PlaneInitView {
  const CameraView* camera = nullptr;
  const PlaneLabelMap* labels = nullptr;
  const ScalarMap* prior_depth = nullptr;
  const VectorMap* image = nullptr;
};

struct PlaneInitStats {
  std::size_t added = 0;
  std::size_t planes_supplemented = 0;
  std::size_t planes_skipped = 0;  ///< no valid prior depth inside the mask
};

/// Appends Gaussians on under-populated plane regions.  Existing Gaussians are
/// copied unchanged to the front of the result.
[[nodiscard]] GaussianCloud plane_guided_init(const GaussianCloud& existing, std::span<const PlaneInitView> views,
                                              const PlaneInitConfig& cfg, PlaneInitStats* stats = nullptr);

}  // namespace planesplat
