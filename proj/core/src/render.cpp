#include "planesplat/render.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace planesplat {

namespace {

PreparedGaussian prepare(const GaussianCloud& scene, std::size_t i, const CameraView& cam,
                         const RenderSettings& settings) {
  PreparedGaussian pg;
  pg.p_cam = cam.world_to_camera(scene.mu[i]);
  const double z = pg.p_cam.z();
  if (!(z > std::max(kNearPlane, settings.near_cull))) return pg;

  const Eigen::Matrix3d rot = rotation_matrix(scene.rot[i]);
  const Eigen::Vector3d scale = scene.log_scale[i].array().exp();
  const Eigen::Matrix3d M = rot * scale.asDiagonal();
  const Eigen::Matrix3d sigma_cam = cam.R() * (M * M.transpose()) * cam.R().transpose();
  Eigen::Matrix<double, 2, 3> J;
  J << cam.fx() / z, 0.0, -cam.fx() * pg.p_cam.x() / (z * z),  //
      0.0, cam.fy() / z, -cam.fy() * pg.p_cam.y() / (z * z);
  pg.cov2d = J * sigma_cam * J.transpose() + settings.cov2d_dilation * Eigen::Matrix2d::Identity();
  const double det = pg.cov2d.determinant();
  if (!(det > 0.0) || !std::isfinite(det)) return pg;
  pg.conic = Eigen::Vector3d(pg.cov2d(1, 1) / det, -pg.cov2d(0, 1) / det, pg.cov2d(0, 0) / det);
  pg.mu2d = cam.project(pg.p_cam);
  const double gu = settings.guard_band * cam.width();
  const double gv = settings.guard_band * cam.height();
  if (pg.mu2d.x() < -gu || pg.mu2d.y() < -gv || pg.mu2d.x() > cam.width() - 1 + gu ||
      pg.mu2d.y() > cam.height() - 1 + gv) {
    return pg;
  }

  const double mid = 0.5 * (pg.cov2d(0, 0) + pg.cov2d(1, 1));
  const double lambda_max = mid + std::sqrt(std::max(0.1, mid * mid - det));
  pg.radius = static_cast<int>(std::ceil(3.0 * std::sqrt(lambda_max)));
  if (pg.mu2d.x() + pg.radius < 0.0 || pg.mu2d.y() + pg.radius < 0.0 || pg.mu2d.x() - pg.radius > cam.width() - 1 ||
      pg.mu2d.y() - pg.radius > cam.height() - 1) {
    return pg;
  }

  pg.normal_axis = min_scale_axis(scene.log_scale[i]);
  const Eigen::Vector3d n_cam = cam.R() * rot.col(pg.normal_axis);
  pg.normal_sign = n_cam.dot(pg.p_cam) > 0.0 ? -1.0 : 1.0;
  pg.normal_cam = pg.normal_sign * n_cam;
  pg.plane_dist = pg.p_cam.dot(pg.normal_cam);
  pg.opacity = sigmoid(scene.opacity_logit[i]);
  pg.rgb = scene.rgb[i];
  pg.visible = true;
  return pg;
}

double splat_power(const TileSplat& s, double dx, double dy) {
  return -0.5 * (s.ca * dx * dx + s.cc * dy * dy) - s.cb * dx * dy;
}

// dR/dq_k for the normalized quaternion (w, x, y, z).
std::array<Eigen::Matrix3d, 4> rotation_derivatives(const Eigen::Vector4d& q) {
  const double w = q[0];
  const double x = q[1];
  const double y = q[2];
  const double z = q[3];
  std::array<Eigen::Matrix3d, 4> d;
  d[0] << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  d[1] << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  d[2] << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  d[3] << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
  return d;
}

struct ScreenGrad {
  Eigen::Vector2d mu2d = Eigen::Vector2d::Zero();
  Eigen::Vector3d conic = Eigen::Vector3d::Zero();
  double opacity = 0.0;
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal_cam = Eigen::Vector3d::Zero();
  double plane_dist = 0.0;
};

Eigen::Vector3d grad_or_zero(const VectorMap& m, std::size_t i) {
  return m.empty() ? Eigen::Vector3d::Zero() : m[i];
}
double grad_or_zero(const ScalarMap& m, std::size_t i) { return m.empty() ? 0.0 : m[i]; }

}  // namespace

RenderOutput render(const GaussianCloud& scene, const CameraView& cam, const RenderSettings& settings,
                    RenderTrace* trace) {
  const int W = cam.width();
  const int H = cam.height();
  RenderOutput out{VectorMap(W, H, Eigen::Vector3d::Zero()), VectorMap(W, H, Eigen::Vector3d::Zero()),
                   ScalarMap(W, H, 0.0), ScalarMap(W, H, kInvalid), ScalarMap(W, H, 0.0)};

  RenderTrace local;
  RenderTrace& tr = trace ? *trace : local;
  tr = RenderTrace{};
  tr.prepared.resize(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) tr.prepared[i] = prepare(scene, i, cam, settings);

  std::vector<std::uint32_t> order;
  order.reserve(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (tr.prepared[i].visible) order.push_back(static_cast<std::uint32_t>(i));
  }
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return tr.prepared[a].p_cam.z() < tr.prepared[b].p_cam.z();
  });

  const int ts = settings.tile_size;
  tr.tiles_x = (W + ts - 1) / ts;
  tr.tiles_y = (H + ts - 1) / ts;
  const std::size_t num_tiles = static_cast<std::size_t>(tr.tiles_x) * tr.tiles_y;
  struct Rect {
    int tx0, ty0, tx1, ty1;
  };
  std::vector<Rect> rects(order.size());
  std::vector<std::size_t> counts(num_tiles + 1, 0);
  for (std::size_t o = 0; o < order.size(); ++o) {
    const auto& g = tr.prepared[order[o]];
    const int u0 = std::max(0, static_cast<int>(std::floor(g.mu2d.x() - g.radius)));
    const int v0 = std::max(0, static_cast<int>(std::floor(g.mu2d.y() - g.radius)));
    const int u1 = std::min(W - 1, static_cast<int>(std::ceil(g.mu2d.x() + g.radius)));
    const int v1 = std::min(H - 1, static_cast<int>(std::ceil(g.mu2d.y() + g.radius)));
    if (u0 > u1 || v0 > v1) {
      rects[o] = {0, 0, -1, -1};
      continue;
    }
    rects[o] = {u0 / ts, v0 / ts, u1 / ts, v1 / ts};
    for (int ty = v0 / ts; ty <= v1 / ts; ++ty) {
      for (int tx = u0 / ts; tx <= u1 / ts; ++tx) ++counts[static_cast<std::size_t>(ty) * tr.tiles_x + tx + 1];
    }
  }
  std::partial_sum(counts.begin(), counts.end(), counts.begin());
  tr.tile_begin = counts;
  tr.tile_splats.resize(counts.back());
  // small slack so rounding in log/exp never skips a splat the exact test keeps
  const double log_alpha_min = std::log(settings.alpha_min) - 1e-9;
  for (std::size_t o = 0; o < order.size(); ++o) {
    const auto& g = tr.prepared[order[o]];
    const TileSplat ts_entry{g.mu2d.x(), g.mu2d.y(), g.conic[0], g.conic[1], g.conic[2],
                             g.opacity, log_alpha_min - std::log(g.opacity), order[o]};
    const Rect& r = rects[o];
    for (int ty = r.ty0; ty <= r.ty1; ++ty) {
      for (int tx = r.tx0; tx <= r.tx1; ++tx) tr.tile_splats[counts[static_cast<std::size_t>(ty) * tr.tiles_x + tx]++] = ts_entry;
    }
  }

  tr.last_contributor.assign(static_cast<std::size_t>(W) * H, 0);
  tr.final_transmittance.assign(static_cast<std::size_t>(W) * H, 1.0);
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      const std::size_t pix = out.acc.index(u, v);
      const std::size_t tile = static_cast<std::size_t>(v / ts) * tr.tiles_x + u / ts;
      const TileSplat* list = tr.tile_splats.data() + tr.tile_begin[tile];
      const std::size_t n = tr.tile_begin[tile + 1] - tr.tile_begin[tile];
      double T = 1.0;
      Eigen::Vector3d color = Eigen::Vector3d::Zero();
      Eigen::Vector3d normal = Eigen::Vector3d::Zero();
      double plane_dist = 0.0;
      std::uint32_t last = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const TileSplat& s = list[k];
        const double power = splat_power(s, u - s.mx, v - s.my);
        if (power > 0.0 || power < s.power_floor) continue;
        const double alpha = std::min(settings.alpha_max, s.opacity * std::exp(power));
        if (alpha < settings.alpha_min) continue;
        const auto& g = tr.prepared[s.id];
        const double next_T = T * (1.0 - alpha);
        if (next_T < settings.transmittance_stop) break;
        const double w = alpha * T;
        color += w * g.rgb;
        normal += w * g.normal_cam;
        plane_dist += w * g.plane_dist;
        T = next_T;
        last = static_cast<std::uint32_t>(k + 1);
      }
      out.color[pix] = color;
      out.gs_normal[pix] = normal;
      out.plane_dist[pix] = plane_dist;
      out.acc[pix] = 1.0 - T;
      tr.last_contributor[pix] = last;
      tr.final_transmittance[pix] = T;
    }
  }
  out.depth = depth_from_plane(out, cam, settings.acc_min);
  return out;
}

ScalarMap depth_from_plane(const RenderOutput& out, const CameraView& cam, double acc_min) {
  ScalarMap depth(out.plane_dist.width(), out.plane_dist.height(), kInvalid);
  for (int v = 0; v < depth.height(); ++v) {
    for (int u = 0; u < depth.width(); ++u) {
      if (!(out.acc(u, v) >= acc_min)) continue;
      const double den = out.gs_normal(u, v).dot(cam.ray(u, v));
      if (!(std::abs(den) >= 1e-6)) continue;
      const double d = out.plane_dist(u, v) / den;
      if (d > 0.0 && std::isfinite(d)) depth(u, v) = d;
    }
  }
  return depth;
}

RenderGradients::RenderGradients(int width, int height)
    : color(width, height, Eigen::Vector3d::Zero()),
      gs_normal(width, height, Eigen::Vector3d::Zero()),
      plane_dist(width, height, 0.0),
      depth(width, height, 0.0),
      acc(width, height, 0.0) {}

void depth_from_plane_backward(const RenderOutput& out, const CameraView& cam, const ScalarMap& grad_depth,
                               RenderGradients& grads, double acc_min) {
  require_same_shape(out.depth, grad_depth, "depth_from_plane_backward");
  const int W = grad_depth.width();
  const int H = grad_depth.height();
  if (grads.plane_dist.empty()) grads.plane_dist = ScalarMap(W, H, 0.0);
  if (grads.gs_normal.empty()) grads.gs_normal = VectorMap(W, H, Eigen::Vector3d::Zero());
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      const double g = grad_depth(u, v);
      if (g == 0.0 || !std::isfinite(g)) continue;
      if (!(out.acc(u, v) >= acc_min) || !is_valid(out.depth(u, v))) continue;
      const Eigen::Vector3d ray = cam.ray(u, v);
      const double den = out.gs_normal(u, v).dot(ray);
      grads.plane_dist(u, v) += g / den;
      grads.gs_normal(u, v) += (-g * out.depth(u, v) / den) * ray;
    }
  }
}

GaussianGradients render_backward(const GaussianCloud& scene, const CameraView& cam, const RenderOutput& out,
                                  const RenderTrace& trace, const RenderGradients& upstream_in,
                                  const RenderSettings& settings) {
  const int W = cam.width();
  const int H = cam.height();
  if (trace.prepared.size() != scene.size()) throw InvalidArgument("render_backward: trace does not match scene");

  RenderGradients upstream = upstream_in;
  if (!upstream.depth.empty()) depth_from_plane_backward(out, cam, upstream.depth, upstream, settings.acc_min);

  std::vector<ScreenGrad> screen(scene.size());
  const int ts = settings.tile_size;
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      const std::size_t pix = static_cast<std::size_t>(v) * W + u;
      const Eigen::Vector3d g_color = grad_or_zero(upstream.color, pix);
      const Eigen::Vector3d g_normal = grad_or_zero(upstream.gs_normal, pix);
      const double g_dist = grad_or_zero(upstream.plane_dist, pix);
      const double g_acc = grad_or_zero(upstream.acc, pix);
      if (g_color.isZero() && g_normal.isZero() && g_dist == 0.0 && g_acc == 0.0) continue;

      const std::size_t tile = static_cast<std::size_t>(v / ts) * trace.tiles_x + u / ts;
      const TileSplat* list = trace.tile_splats.data() + trace.tile_begin[tile];
      double T = trace.final_transmittance[pix];
      // contributions of everything behind the current Gaussian
      Eigen::Vector3d behind_color = Eigen::Vector3d::Zero();
      Eigen::Vector3d behind_normal = Eigen::Vector3d::Zero();
      double behind_dist = 0.0;
      double behind_acc = 0.0;
      for (std::size_t k = trace.last_contributor[pix]; k-- > 0;) {
        const TileSplat& s = list[k];
        const double dx = u - s.mx;
        const double dy = v - s.my;
        const double power = splat_power(s, dx, dy);
        if (power > 0.0 || power < s.power_floor) continue;
        const double G = std::exp(power);
        const double raw_alpha = s.opacity * G;
        const double alpha = std::min(settings.alpha_max, raw_alpha);
        if (alpha < settings.alpha_min) continue;
        const std::uint32_t id = s.id;
        const auto& g = trace.prepared[id];

        T /= (1.0 - alpha);  // transmittance in front of this Gaussian
        const double w = alpha * T;
        auto& sg = screen[id];
        sg.rgb += w * g_color;
        sg.normal_cam += w * g_normal;
        sg.plane_dist += w * g_dist;

        const double inv = 1.0 / (1.0 - alpha);
        double g_alpha = g_color.dot(T * g.rgb - behind_color * inv);
        g_alpha += g_normal.dot(T * g.normal_cam - behind_normal * inv);
        g_alpha += g_dist * (T * g.plane_dist - behind_dist * inv);
        g_alpha += g_acc * (T - behind_acc * inv);

        behind_color += w * g.rgb;
        behind_normal += w * g.normal_cam;
        behind_dist += w * g.plane_dist;
        behind_acc += w;

        if (raw_alpha >= settings.alpha_max) continue;  // clipped: alpha is locally constant
        sg.opacity += g_alpha * G;
        const double g_power = g_alpha * g.opacity * G;
        sg.conic += g_power * Eigen::Vector3d(-0.5 * dx * dx, -dx * dy, -0.5 * dy * dy);
        // power depends on mu2d through (dx, dy) = pixel - mu2d
        sg.mu2d += g_power * Eigen::Vector2d(g.conic[0] * dx + g.conic[1] * dy, g.conic[1] * dx + g.conic[2] * dy);
      }
    }
  }

  GaussianGradients grads(scene.size());
  const Eigen::Matrix3d& Rc = cam.R();
  const double fx = cam.fx();
  const double fy = cam.fy();
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const auto& g = trace.prepared[i];
    if (!g.visible) continue;
    const auto& sg = screen[i];
    grads.rgb[i] = sg.rgb;
    grads.opacity_logit[i] = sg.opacity * g.opacity * (1.0 - g.opacity);

    const double x = g.p_cam.x();
    const double y = g.p_cam.y();
    const double z = g.p_cam.z();

    // conic -> 2D covariance
    Eigen::Matrix2d Q;
    Q << g.conic[0], g.conic[1], g.conic[1], g.conic[2];
    Eigen::Matrix2d gQ;
    gQ << sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2];
    const Eigen::Matrix2d g_cov2d = -Q * gQ * Q;

    const Eigen::Matrix3d rot = rotation_matrix(scene.rot[i]);
    const Eigen::Vector3d scale = scene.log_scale[i].array().exp();
    const Eigen::Matrix3d M = rot * scale.asDiagonal();
    const Eigen::Matrix3d sigma = M * M.transpose();
    const Eigen::Matrix3d sigma_cam = Rc * sigma * Rc.transpose();
    Eigen::Matrix<double, 2, 3> J;
    J << fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z);

    const Eigen::Matrix3d g_sigma_cam = J.transpose() * g_cov2d * J;
    const Eigen::Matrix<double, 2, 3> gJ = 2.0 * g_cov2d * J * sigma_cam;
    const Eigen::Matrix3d g_sigma = Rc.transpose() * g_sigma_cam * Rc;
    const Eigen::Matrix3d gM = 2.0 * g_sigma * M;
    Eigen::Matrix3d g_rot = gM * scale.asDiagonal();
    const Eigen::Matrix3d rtg = rot.transpose() * gM;
    for (int k = 0; k < 3; ++k) grads.log_scale[i][k] = rtg(k, k) * scale[k];

    Eigen::Vector3d g_p = Eigen::Vector3d::Zero();
    const double z2 = z * z;
    const double z3 = z2 * z;
    g_p.x() += gJ(0, 2) * (-fx / z2);
    g_p.y() += gJ(1, 2) * (-fy / z2);
    g_p.z() += gJ(0, 0) * (-fx / z2) + gJ(0, 2) * (2.0 * fx * x / z3) + gJ(1, 1) * (-fy / z2) +
               gJ(1, 2) * (2.0 * fy * y / z3);
    g_p.x() += sg.mu2d.x() * fx / z;
    g_p.y() += sg.mu2d.y() * fy / z;
    g_p.z() += -sg.mu2d.x() * fx * x / z2 - sg.mu2d.y() * fy * y / z2;

    // plane distance d = p . n and the normal channel
    g_p += sg.plane_dist * g.normal_cam;
    const Eigen::Vector3d g_n = sg.normal_cam + sg.plane_dist * g.p_cam;
    g_rot.col(g.normal_axis) += g.normal_sign * (Rc.transpose() * g_n);

    grads.mu[i] = Rc.transpose() * g_p;

    const Eigen::Vector4d& q = scene.rot[i];
    const double qn = q.norm();
    const Eigen::Vector4d qhat = q / qn;
    const auto dR = rotation_derivatives(qhat);
    Eigen::Vector4d g_qhat;
    for (int k = 0; k < 4; ++k) g_qhat[k] = (g_rot.array() * dR[k].array()).sum();
    grads.rot[i] = (g_qhat - qhat * qhat.dot(g_qhat)) / qn;
  }
  return grads;
}

}  // namespace planesplat
