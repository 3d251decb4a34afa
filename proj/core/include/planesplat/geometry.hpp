#pragma once

#include <Eigen/Core>

#include <optional>

#include "planesplat/raster.hpp"

namespace planesplat {

/// Pinhole camera with a world-to-camera rigid transform: X_cam = R * X_world + t.
///
/// Pixel (u, v) refers to the pixel whose integer coordinates are (u, v); the
/// principal point is expressed in the same coordinates.  Axes follow the
/// usual vision convention (x right, y down, z forward).
class CameraView {
 public:
  CameraView() = default;
  /// Throws InvalidArgument unless R is a proper rotation (1e-9) and the
  /// intrinsics satisfy fx, fy > 0 and 0 <= cx < width, 0 <= cy < height.
  CameraView(int id, int width, int height, const Eigen::Matrix3d& K, const Eigen::Matrix3d& R,
             const Eigen::Vector3d& t);

  [[nodiscard]] int id() const noexcept { return id_; }
  [[nodiscard]] int width() const noexcept { return width_; }
  [[nodiscard]] int height() const noexcept { return height_; }
  [[nodiscard]] const Eigen::Matrix3d& K() const noexcept { return K_; }
  [[nodiscard]] const Eigen::Matrix3d& K_inv() const noexcept { return K_inv_; }
  [[nodiscard]] const Eigen::Matrix3d& R() const noexcept { return R_; }
  [[nodiscard]] const Eigen::Vector3d& t() const noexcept { return t_; }
  [[nodiscard]] double fx() const noexcept { return K_(0, 0); }
  [[nodiscard]] double fy() const noexcept { return K_(1, 1); }
  [[nodiscard]] double cx() const noexcept { return K_(0, 2); }
  [[nodiscard]] double cy() const noexcept { return K_(1, 2); }

  /// Camera center O_c in world coordinates.
  [[nodiscard]] Eigen::Vector3d center() const { return -R_.transpose() * t_; }

  /// K^-1 [u, v, 1]^T: the viewing ray scaled to unit z.
  [[nodiscard]] Eigen::Vector3d ray(double u, double v) const { return K_inv_ * Eigen::Vector3d(u, v, 1.0); }

  [[nodiscard]] Eigen::Vector3d world_to_camera(const Eigen::Vector3d& p) const { return R_ * p + t_; }
  [[nodiscard]] Eigen::Vector3d camera_to_world(const Eigen::Vector3d& p) const {
    return R_.transpose() * (p - t_);
  }

  /// Pinhole projection of a camera-frame point; undefined for z == 0.
  [[nodiscard]] Eigen::Vector2d project(const Eigen::Vector3d& p_cam) const {
    const Eigen::Vector3d h = K_ * p_cam;
    return {h.x() / h.z(), h.y() / h.z()};
  }

  [[nodiscard]] bool contains_pixel(int u, int v) const noexcept {
    return u >= 0 && v >= 0 && u < width_ && v < height_;
  }

 private:
  int id_ = 0;
  int width_ = 0;
  int height_ = 0;
  Eigen::Matrix3d K_ = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d K_inv_ = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R_ = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t_ = Eigen::Vector3d::Zero();
};

/// Intrinsics matrix from focal lengths and principal point.
[[nodiscard]] Eigen::Matrix3d make_intrinsics(double fx, double fy, double cx, double cy);

/// D(p) * K^-1 [u, v, 1]^T in the camera frame.  Throws BoundsError for an
/// out-of-image pixel and InvalidSampleError for a NaN or non-positive depth.
[[nodiscard]] Eigen::Vector3d back_project(const ScalarMap& depth, const CameraView& cam, int u, int v);

struct TransformedPoint {
  Eigen::Vector3d point;   ///< P_t in the target camera frame
  Eigen::Vector2d pixel;   ///< p_t, continuous pixel coordinates
  double z = 0.0;          ///< z_t
  bool behind_camera = false;
};

/// Maps a source-camera point into the target camera and projects it.
[[nodiscard]] TransformedPoint transform_point(const Eigen::Vector3d& p_source, const CameraView& source,
                                               const CameraView& target);

/// Local-plane normals from a depth map using the four cross neighbours at
/// offset `offset` (left, right, top, bottom).  Normals are unit length and
/// face the camera (N . ray < 0); degenerate or unsupported pixels are NaN.
[[nodiscard]] VectorMap normal_from_depth(const ScalarMap& depth, const CameraView& cam, int offset = 1);

/// Accumulates dL/d(depth) given dL/d(normal) for the map produced by
/// normal_from_depth with the same arguments.  Pixels whose forward normal was
/// invalid contribute nothing.
void normal_from_depth_backward(const ScalarMap& depth, const CameraView& cam, const VectorMap& grad_normal,
                                ScalarMap& grad_depth, int offset = 1);

/// Plane-distance map: back-projected point dotted with the local normal.
[[nodiscard]] ScalarMap plane_distance_map(const ScalarMap& depth, const VectorMap& normals, const CameraView& cam);

}  // namespace planesplat
