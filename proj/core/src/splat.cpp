#include "planesplat/splat.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <random>

namespace planesplat {

double Gaussian::opacity() const { return sigmoid(opacity_logit); }

void GaussianCloud::reserve(std::size_t n) {
  mu.reserve(n);
  log_scale.reserve(n);
  rot.reserve(n);
  opacity_logit.reserve(n);
  rgb.reserve(n);
}

void GaussianCloud::push_back(const Gaussian& g) {
  mu.push_back(g.mu);
  log_scale.push_back(g.log_scale);
  rot.push_back(g.rot);
  opacity_logit.push_back(g.opacity_logit);
  rgb.push_back(g.rgb);
}

Gaussian GaussianCloud::at(std::size_t i) const {
  if (i >= size()) throw BoundsError("GaussianCloud::at: index out of range");
  return Gaussian{mu[i], log_scale[i], rot[i], opacity_logit[i], rgb[i]};
}

void GaussianCloud::set(std::size_t i, const Gaussian& g) {
  if (i >= size()) throw BoundsError("GaussianCloud::set: index out of range");
  mu[i] = g.mu;
  log_scale[i] = g.log_scale;
  rot[i] = g.rot;
  opacity_logit[i] = g.opacity_logit;
  rgb[i] = g.rgb;
}

GaussianGradients::GaussianGradients(std::size_t n)
    : mu(n, Eigen::Vector3d::Zero()),
      log_scale(n, Eigen::Vector3d::Zero()),
      rot(n, Eigen::Vector4d::Zero()),
      opacity_logit(n, 0.0),
      rgb(n, Eigen::Vector3d::Zero()) {}

void GaussianGradients::add(const GaussianGradients& other, double weight) {
  if (other.size() != size()) throw InvalidArgument("GaussianGradients::add: size mismatch");
  for (std::size_t i = 0; i < size(); ++i) {
    mu[i] += weight * other.mu[i];
    log_scale[i] += weight * other.log_scale[i];
    rot[i] += weight * other.rot[i];
    opacity_logit[i] += weight * other.opacity_logit[i];
    rgb[i] += weight * other.rgb[i];
  }
}

bool GaussianGradients::all_finite() const {
  for (std::size_t i = 0; i < size(); ++i) {
    if (!mu[i].allFinite() || !log_scale[i].allFinite() || !rot[i].allFinite() || !std::isfinite(opacity_logit[i]) ||
        !rgb[i].allFinite()) {
      return false;
    }
  }
  return true;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("logit: probability must lie in (0, 1)");
  return std::log(p / (1.0 - p));
}

Eigen::Matrix3d rotation_matrix(const Eigen::Vector4d& q) {
  const Eigen::Vector4d n = q.normalized();
  const double w = n[0];
  const double x = n[1];
  const double y = n[2];
  const double z = n[3];
  Eigen::Matrix3d R;
  R << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),  //
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),   //
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return R;
}

Eigen::Vector4d quaternion_between(const Eigen::Vector3d& from, const Eigen::Vector3d& to) {
  const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(from, to);
  return {q.w(), q.x(), q.y(), q.z()};
}

Eigen::Matrix3d covariance(const Gaussian& g) {
  const Eigen::Matrix3d M = rotation_matrix(g.rot) * g.scale().asDiagonal();
  return M * M.transpose();
}

Projected2D project(const Gaussian& g, const CameraView& cam, double dilation, std::size_t gaussian_id) {
  Projected2D out;
  out.gaussian_id = gaussian_id;
  const Eigen::Vector3d p = cam.world_to_camera(g.mu);
  out.depth_center = p.z();
  if (!(p.z() > kNearPlane)) {
    out.culled = true;
    return out;
  }
  out.mu2d = cam.project(p);
  const double z2 = p.z() * p.z();
  Eigen::Matrix<double, 2, 3> J;
  J << cam.fx() / p.z(), 0.0, -cam.fx() * p.x() / z2,  //
      0.0, cam.fy() / p.z(), -cam.fy() * p.y() / z2;
  const Eigen::Matrix3d sigma_cam = cam.R() * covariance(g) * cam.R().transpose();
  out.cov2d = J * sigma_cam * J.transpose() + dilation * Eigen::Matrix2d::Identity();
  return out;
}

int min_scale_axis(const Eigen::Vector3d& log_scale) {
  int axis = 0;
  for (int k = 1; k < 3; ++k) {
    if (log_scale[k] < log_scale[axis]) axis = k;
  }
  return axis;
}

Eigen::Vector3d gaussian_normal(const Gaussian& g) {
  return rotation_matrix(g.rot).col(min_scale_axis(g.log_scale));
}

Eigen::Vector3d gaussian_normal(const Gaussian& g, const CameraView& cam) {
  const Eigen::Vector3d n = gaussian_normal(g);
  return n.dot(g.mu - cam.center()) > 0.0 ? Eigen::Vector3d(-n) : n;
}

namespace {

// Mean distance from each point to its k nearest neighbours in the set.
std::vector<double> knn_mean_distance(const std::vector<Eigen::Vector3d>& points, int k) {
  std::vector<double> out(points.size(), 0.0);
  std::vector<double> dists;
  for (std::size_t i = 0; i < points.size(); ++i) {
    dists.clear();
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j != i) dists.push_back((points[i] - points[j]).squaredNorm());
    }
    const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), dists.size());
    if (kk == 0) continue;
    std::partial_sort(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(kk), dists.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < kk; ++j) sum += std::sqrt(dists[j]);
    out[i] = sum / static_cast<double>(kk);
  }
  return out;
}

}  // namespace

GaussianCloud plane_guided_init(const GaussianCloud& existing, std::span<const PlaneInitView> views,
                                const PlaneInitConfig& cfg, PlaneInitStats* stats) {
  GaussianCloud out = existing;
  PlaneInitStats local;
  std::mt19937_64 rng(cfg.seed);
  const double opacity_logit = logit(cfg.initial_opacity);

  for (const auto& view : views) {
    if (!view.camera || !view.labels || !view.prior_depth || !view.image) {
      throw InvalidArgument("plane_guided_init: incomplete view inputs");
    }
    const CameraView& cam = *view.camera;
    const PlaneLabelMap& labels = *view.labels;
    const ScalarMap& depth = *view.prior_depth;
    if (!labels.labels.same_shape(cam.width(), cam.height()) || !depth.same_shape(cam.width(), cam.height()) ||
        !view.image->same_shape(cam.width(), cam.height())) {
      throw InvalidArgument("plane_guided_init: raster size does not match camera");
    }
    const int num_labels = labels.num_labels();
    if (num_labels == 0) continue;

    // Gaussians already landing on each plane, counted against the current
    // (already augmented) scene.
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_labels) + 1, 0);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const Eigen::Vector3d p = cam.world_to_camera(out.mu[i]);
      if (!(p.z() > kNearPlane)) continue;
      const Eigen::Vector2d px = cam.project(p);
      const int u = static_cast<int>(std::lround(px.x()));
      const int v = static_cast<int>(std::lround(px.y()));
      if (!cam.contains_pixel(u, v)) continue;
      const int label = labels.labels(u, v);
      if (label > 0 && label <= num_labels) ++counts[static_cast<std::size_t>(label)];
    }

    std::vector<std::vector<int>> pixels(static_cast<std::size_t>(num_labels) + 1);
    std::vector<std::size_t> areas(static_cast<std::size_t>(num_labels) + 1, 0);
    for (int v = 0; v < cam.height(); ++v) {
      for (int u = 0; u < cam.width(); ++u) {
        const int label = labels.labels(u, v);
        if (label <= 0 || label > num_labels) continue;
        ++areas[static_cast<std::size_t>(label)];
        const double d = depth(u, v);
        if (is_valid(d) && d > 0.0) pixels[static_cast<std::size_t>(label)].push_back(static_cast<int>(depth.index(u, v)));
      }
    }

    for (int label = 1; label <= num_labels; ++label) {
      const auto L = static_cast<std::size_t>(label);
      const double area = static_cast<double>(areas[L]);
      if (area == 0.0) continue;
      const double density = static_cast<double>(counts[L]) / area;
      if (density >= cfg.density_thresh) continue;
      auto& candidates = pixels[L];
      if (candidates.empty()) {
        ++local.planes_skipped;
        continue;
      }
      const double deficit = cfg.density_thresh * area - static_cast<double>(counts[L]);
      std::size_t n = static_cast<std::size_t>(std::llround(cfg.samples_per_px * deficit));
      n = std::min(n, candidates.size());
      if (n == 0) continue;

      // partial Fisher-Yates: the first n entries become the sample
      for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
        std::swap(candidates[i], candidates[pick(rng)]);
      }

      std::vector<Eigen::Vector3d> points(n);
      std::vector<Eigen::Vector3d> colors(n);
      for (std::size_t i = 0; i < n; ++i) {
        const int u = candidates[i] % cam.width();
        const int v = candidates[i] / cam.width();
        points[i] = cam.camera_to_world(back_project(depth, cam, u, v));
        colors[i] = (*view.image)(u, v);
      }
      std::vector<double> spacing = knn_mean_distance(points, cfg.knn);
      if (n == 1) {
        const int u = candidates[0] % cam.width();
        const int v = candidates[0] / cam.width();
        spacing[0] = depth(u, v) / std::sqrt(cam.fx() * cam.fy()) * std::sqrt(area);
      }

      Eigen::Vector3d normal_world = Eigen::Vector3d::UnitZ();
      const Eigen::Vector3d& n_cam = labels.info[L - 1].mean_normal;
      if (is_valid(n_cam) && n_cam.norm() > 0.0) normal_world = cam.R().transpose() * n_cam.normalized();
      // isotropic scales tie on axis 0, which therefore carries the normal
      const Eigen::Vector4d rot = quaternion_between(Eigen::Vector3d::UnitX(), normal_world);

      for (std::size_t i = 0; i < n; ++i) {
        Gaussian g;
        g.mu = points[i];
        g.log_scale = Eigen::Vector3d::Constant(std::log(std::max(spacing[i], 1e-6)));
        g.rot = rot;
        g.opacity_logit = opacity_logit;
        g.rgb = colors[i];
        out.push_back(g);
      }
      local.added += n;
      ++local.planes_supplemented;
    }
  }
  if (stats) *stats = local;
  return out;
}

}  // namespace planesplat
