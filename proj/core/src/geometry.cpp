#include "planesplat/geometry.hpp"

#include <Eigen/Dense>

#include <array>
#include <string>

namespace planesplat {

CameraView::CameraView(int id, int width, int height, const Eigen::Matrix3d& K, const Eigen::Matrix3d& R,
                       const Eigen::Vector3d& t)
    : id_(id), width_(width), height_(height), K_(K), R_(R), t_(t) {
  if (width <= 0 || height <= 0) throw InvalidArgument("camera image size must be positive");
  const double fx = K(0, 0);
  const double fy = K(1, 1);
  const double cx = K(0, 2);
  const double cy = K(1, 2);
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("camera focal lengths must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw InvalidArgument("camera principal point outside the image");
  }
  if (!K.allFinite() || !R.allFinite() || !t.allFinite()) throw InvalidArgument("camera has non-finite entries");
  const double orth_err = (R * R.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (orth_err > 1e-9 || std::abs(R.determinant() - 1.0) > 1e-9) {
    throw InvalidArgument("camera rotation is not a proper rotation (view " + std::to_string(id) + ")");
  }
  K_inv_ = K.inverse();
}

Eigen::Matrix3d make_intrinsics(double fx, double fy, double cx, double cy) {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = fx;
  K(1, 1) = fy;
  K(0, 2) = cx;
  K(1, 2) = cy;
  return K;
}

Eigen::Vector3d back_project(const ScalarMap& depth, const CameraView& cam, int u, int v) {
  if (!depth.in_bounds(u, v)) throw BoundsError("back_project: pixel out of bounds");
  const double d = depth(u, v);
  if (!is_valid(d) || d <= 0.0) throw InvalidSampleError("back_project: invalid depth sample");
  return d * cam.ray(u, v);
}

TransformedPoint transform_point(const Eigen::Vector3d& p_source, const CameraView& source,
                                 const CameraView& target) {
  const Eigen::Matrix3d rel = target.R() * source.R().transpose();
  TransformedPoint out;
  out.point = rel * p_source + (target.t() - rel * source.t());
  out.z = out.point.z();
  out.behind_camera = out.z <= 0.0;
  if (!out.behind_camera) {
    out.pixel = target.project(out.point);
  } else {
    out.pixel = Eigen::Vector2d::Constant(kInvalid);
  }
  return out;
}

namespace {

struct LocalFrame {
  std::array<Eigen::Vector3d, 4> points;  // left, right, top, bottom
  std::array<Eigen::Vector2i, 4> pixels;
  Eigen::Vector3d cross;
  double sign = 1.0;
};

bool depth_ok(const ScalarMap& depth, int u, int v) {
  if (!depth.in_bounds(u, v)) return false;
  const double d = depth(u, v);
  return is_valid(d) && d > 0.0;
}

// Fills `frame` and returns true when every sample is usable and the cross
// product is not degenerate.
bool local_frame(const ScalarMap& depth, const CameraView& cam, int u, int v, int h, LocalFrame& frame) {
  if (!depth_ok(depth, u, v)) return false;
  frame.pixels = {Eigen::Vector2i(u - h, v), Eigen::Vector2i(u + h, v), Eigen::Vector2i(u, v - h),
                  Eigen::Vector2i(u, v + h)};
  for (int k = 0; k < 4; ++k) {
    const auto& px = frame.pixels[k];
    if (!depth_ok(depth, px.x(), px.y())) return false;
    frame.points[k] = depth(px.x(), px.y()) * cam.ray(px.x(), px.y());
  }
  frame.cross = (frame.points[1] - frame.points[0]).cross(frame.points[3] - frame.points[2]);
  if (!(frame.cross.norm() >= 1e-12)) return false;
  frame.sign = frame.cross.dot(cam.ray(u, v)) < 0.0 ? 1.0 : -1.0;
  return true;
}

}  // namespace

VectorMap normal_from_depth(const ScalarMap& depth, const CameraView& cam, int offset) {
  if (offset < 1) throw InvalidArgument("normal_from_depth: offset must be >= 1");
  VectorMap normals(depth.width(), depth.height(), invalid_vector());
  LocalFrame frame;
  for (int v = 0; v < depth.height(); ++v) {
    for (int u = 0; u < depth.width(); ++u) {
      if (!local_frame(depth, cam, u, v, offset, frame)) continue;
      normals(u, v) = frame.sign * frame.cross.normalized();
    }
  }
  return normals;
}

void normal_from_depth_backward(const ScalarMap& depth, const CameraView& cam, const VectorMap& grad_normal,
                                ScalarMap& grad_depth, int offset) {
  require_same_shape(depth, grad_normal, "normal_from_depth_backward");
  require_same_shape(depth, grad_depth, "normal_from_depth_backward");
  LocalFrame frame;
  for (int v = 0; v < depth.height(); ++v) {
    for (int u = 0; u < depth.width(); ++u) {
      const Eigen::Vector3d& g = grad_normal(u, v);
      if (!is_valid(g) || g.isZero()) continue;
      if (!local_frame(depth, cam, u, v, offset, frame)) continue;
      const double len = frame.cross.norm();
      const Eigen::Vector3d unit = frame.cross / len;
      const Eigen::Vector3d g_cross = frame.sign * (g - unit * unit.dot(g)) / len;
      const Eigen::Vector3d a = frame.points[1] - frame.points[0];
      const Eigen::Vector3d b = frame.points[3] - frame.points[2];
      const Eigen::Vector3d g_a = b.cross(g_cross);
      const Eigen::Vector3d g_b = g_cross.cross(a);
      const std::array<Eigen::Vector3d, 4> g_points = {-g_a, g_a, -g_b, g_b};
      for (int k = 0; k < 4; ++k) {
        const auto& px = frame.pixels[k];
        grad_depth(px.x(), px.y()) += g_points[k].dot(cam.ray(px.x(), px.y()));
      }
    }
  }
}

ScalarMap plane_distance_map(const ScalarMap& depth, const VectorMap& normals, const CameraView& cam) {
  require_same_shape(depth, normals, "plane_distance_map");
  ScalarMap out(depth.width(), depth.height(), kInvalid);
  for (int v = 0; v < depth.height(); ++v) {
    for (int u = 0; u < depth.width(); ++u) {
      const double d = depth(u, v);
      const Eigen::Vector3d& n = normals(u, v);
      if (!is_valid(d) || d <= 0.0 || !is_valid(n)) continue;
      out(u, v) = (d * cam.ray(u, v)).dot(n);
    }
  }
  return out;
}

}  // namespace planesplat
