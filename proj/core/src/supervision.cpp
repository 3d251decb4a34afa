#include "planesplat/supervision.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "planesplat/error.hpp"
#include "planesplat/image_quality.hpp"

namespace planesplat {

namespace {

constexpr double kDegenerateCondition = 1e-6;

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

Eigen::Vector3d sgn(const Eigen::Vector3d& v) { return {sgn(v.x()), sgn(v.y()), sgn(v.z())}; }

bool mask_set(const MaskMap* m, std::size_t i) { return m == nullptr || (*m)[i] != 0; }

const PlaneParams* find_plane(const std::vector<PlaneParams>* planes, int label) {
  if (planes == nullptr) return nullptr;
  for (const auto& p : *planes) {
    if (p.plane_id == label) return &p;
  }
  return nullptr;
}

}  // namespace

PlaneParams fit_plane(std::span<const Eigen::Vector3d> points, double eps) {
  if (points.size() < 3) {
    throw InsufficientPointsError("fit_plane needs at least 3 points, got " + std::to_string(points.size()));
  }
  Eigen::Matrix3d QtQ = Eigen::Matrix3d::Zero();
  Eigen::Vector3d QtY = Eigen::Vector3d::Zero();
  for (const auto& p : points) {
    QtQ += p * p.transpose();
    QtY += p;
  }
  PlaneParams out;
  out.A = (QtQ + eps * Eigen::Matrix3d::Identity()).ldlt().solve(QtY);
  out.inlier_count = static_cast<int>(points.size());
  double ss = 0.0;
  for (const auto& p : points) {
    const double r = out.A.dot(p) - 1.0;
    ss += r * r;
  }
  out.rms_residual = std::sqrt(ss / static_cast<double>(points.size()));
  // singular values of Q are the square roots of the eigenvalues of Q^T Q
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(QtQ, Eigen::EigenvaluesOnly);
  const Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  out.degenerate = !(ev.maxCoeff() > 0.0) || ev.minCoeff() < kDegenerateCondition * ev.maxCoeff() ||
                   !out.A.allFinite() || out.A.norm() == 0.0;
  return out;
}

double planar_depth_at(const Eigen::Vector3d& A, const CameraView& cam, double u, double v) {
  const Eigen::Vector3d ray = cam.K_inv() * Eigen::Vector3d(u, v, 1.0);
  const double den = A.dot(ray);
  if (!(std::abs(den) >= 1e-9)) return kInvalid;
  const double d = 1.0 / den;
  return d > 0.0 ? d : kInvalid;
}

ScalarMap planar_depth(const PlaneParams& plane, const CameraView& cam, const MaskMap* mask) {
  ScalarMap out(cam.width(), cam.height(), kInvalid);
  if (mask) require_same_shape(out, *mask, "planar_depth mask");
  for (int v = 0; v < cam.height(); ++v) {
    for (int u = 0; u < cam.width(); ++u) {
      if (mask && (*mask)(u, v) == 0) continue;
      out(u, v) = planar_depth_at(plane.A, cam, u, v);
    }
  }
  return out;
}

CoplanarityResult coplanarity_loss(const ScalarMap& rendered_depth, const PlaneLabelMap& labels, const CameraView& cam,
                                   ScalarMap* grad_depth, double weight, const std::vector<PlaneParams>* fixed_planes,
                                   double eps) {
  require_same_shape(rendered_depth, labels.labels, "coplanarity_loss");
  if (grad_depth) require_same_shape(rendered_depth, *grad_depth, "coplanarity_loss gradient");
  CoplanarityResult result;
  const int L = labels.num_labels();
  if (L == 0) return result;

  // pixel indices per label, in raster order
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(L) + 1);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    const int l = labels.labels[i];
    if (l > 0 && l <= L && is_valid(rendered_depth[i]) && rendered_depth[i] > 0.0) {
      members[static_cast<std::size_t>(l)].push_back(i);
    }
  }

  const int W = rendered_depth.width();
  std::vector<std::pair<std::size_t, double>> residuals;  // pixel, D_p - D
  double sum = 0.0;
  std::vector<Eigen::Vector3d> pts;
  for (int l = 1; l <= L; ++l) {
    const auto& idx = members[static_cast<std::size_t>(l)];
    PlaneParams plane;
    if (const PlaneParams* fixed = find_plane(fixed_planes, l)) {
      plane = *fixed;
    } else {
      if (idx.size() < 3) {
        result.skipped.push_back(l);
        continue;
      }
      pts.clear();
      for (const std::size_t i : idx) {
        const int u = static_cast<int>(i % static_cast<std::size_t>(W));
        const int v = static_cast<int>(i / static_cast<std::size_t>(W));
        pts.push_back(rendered_depth[i] * (cam.K_inv() * Eigen::Vector3d(u, v, 1.0)));
      }
      plane = fit_plane(pts, eps);
      plane.plane_id = l;
      plane.view_id = cam.id();
      if (plane.degenerate) {
        result.skipped.push_back(l);
        continue;
      }
    }
    result.planes.push_back(plane);
    for (const std::size_t i : idx) {
      const int u = static_cast<int>(i % static_cast<std::size_t>(W));
      const int v = static_cast<int>(i / static_cast<std::size_t>(W));
      const double dp = planar_depth_at(plane.A, cam, u, v);
      if (!is_valid(dp)) continue;
      const double r = dp - rendered_depth[i];
      sum += std::abs(r);
      residuals.emplace_back(i, r);
    }
  }
  result.term.count = residuals.size();
  if (residuals.empty()) return result;
  const double inv = 1.0 / static_cast<double>(residuals.size());
  result.term.value = sum * inv;
  if (grad_depth) {
    for (const auto& [i, r] : residuals) (*grad_depth)[i] += weight * inv * -sgn(r);
  }
  return result;
}

TermValue prior_depth_loss(const ScalarMap& rendered, const ScalarMap& prior, const MaskMap* lt, const MaskMap* conf,
                           ScalarMap* grad, double weight) {
  require_same_shape(rendered, prior, "prior_depth_loss");
  if (lt) require_same_shape(rendered, *lt, "prior_depth_loss lt");
  if (conf) require_same_shape(rendered, *conf, "prior_depth_loss conf");
  if (grad) require_same_shape(rendered, *grad, "prior_depth_loss gradient");
  TermValue t;
  double sum = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    if (!mask_set(lt, i) || !mask_set(conf, i) || !is_valid(rendered[i]) || !is_valid(prior[i])) continue;
    const double r = rendered[i] - prior[i];
    sum += r * r;
    ++t.count;
  }
  if (t.count == 0) return t;
  const double inv = 1.0 / static_cast<double>(t.count);
  t.value = sum * inv;
  if (grad) {
    for (std::size_t i = 0; i < rendered.size(); ++i) {
      if (!mask_set(lt, i) || !mask_set(conf, i) || !is_valid(rendered[i]) || !is_valid(prior[i])) continue;
      (*grad)[i] += weight * inv * 2.0 * (rendered[i] - prior[i]);
    }
  }
  return t;
}

TermValue prior_normal_loss(const VectorMap& surface_normal, const VectorMap& prior_normal, const LabelRaster& labels,
                            VectorMap* grad, double weight) {
  require_same_shape(surface_normal, prior_normal, "prior_normal_loss");
  require_same_shape(surface_normal, labels, "prior_normal_loss labels");
  if (grad) require_same_shape(surface_normal, *grad, "prior_normal_loss gradient");
  TermValue t;
  double sum = 0.0;
  auto counted = [&](std::size_t i) {
    return labels[i] > 0 && is_valid(surface_normal[i]) && is_valid(prior_normal[i]);
  };
  for (std::size_t i = 0; i < surface_normal.size(); ++i) {
    if (!counted(i)) continue;
    const Eigen::Vector3d& nd = surface_normal[i];
    const Eigen::Vector3d& nr = prior_normal[i];
    sum += (nr - nd).lpNorm<1>() + (1.0 - nr.dot(nd));
    ++t.count;
  }
  if (t.count == 0) return t;
  const double inv = 1.0 / static_cast<double>(t.count);
  t.value = sum * inv;
  if (grad) {
    for (std::size_t i = 0; i < surface_normal.size(); ++i) {
      if (!counted(i)) continue;
      const Eigen::Vector3d& nd = surface_normal[i];
      const Eigen::Vector3d& nr = prior_normal[i];
      (*grad)[i] += weight * inv * (-sgn(Eigen::Vector3d(nr - nd)) - nr);
    }
  }
  return t;
}

TermValue dn_consistency_loss(const VectorMap& gs_normal, const VectorMap& surface_normal, const MaskMap* lt,
                              VectorMap* grad_gs, VectorMap* grad_surface, double weight) {
  require_same_shape(gs_normal, surface_normal, "dn_consistency_loss");
  if (lt) require_same_shape(gs_normal, *lt, "dn_consistency_loss lt");
  if (grad_gs) require_same_shape(gs_normal, *grad_gs, "dn_consistency_loss gradient");
  if (grad_surface) require_same_shape(gs_normal, *grad_surface, "dn_consistency_loss gradient");
  TermValue t;
  double sum = 0.0;
  auto counted = [&](std::size_t i) {
    return mask_set(lt, i) && is_valid(gs_normal[i]) && gs_normal[i].norm() > 1e-12 && is_valid(surface_normal[i]);
  };
  for (std::size_t i = 0; i < gs_normal.size(); ++i) {
    if (!counted(i)) continue;
    sum += (gs_normal[i].normalized() - surface_normal[i]).lpNorm<1>();
    ++t.count;
  }
  if (t.count == 0) return t;
  const double inv = 1.0 / static_cast<double>(t.count);
  t.value = sum * inv;
  if (grad_gs || grad_surface) {
    for (std::size_t i = 0; i < gs_normal.size(); ++i) {
      if (!counted(i)) continue;
      const double len = gs_normal[i].norm();
      const Eigen::Vector3d n = gs_normal[i] / len;
      const Eigen::Vector3d g = weight * inv * sgn(Eigen::Vector3d(n - surface_normal[i]));
      if (grad_gs) (*grad_gs)[i] += (g - n * n.dot(g)) / len;
      if (grad_surface) (*grad_surface)[i] -= g;
    }
  }
  return t;
}

TermValue rgb_loss(const VectorMap& rendered, const VectorMap& target, VectorMap* grad, double weight) {
  require_same_shape(rendered, target, "rgb_loss");
  if (grad) require_same_shape(rendered, *grad, "rgb_loss gradient");
  TermValue t;
  t.count = rendered.size();
  if (t.count == 0) return t;
  const double inv = 1.0 / (3.0 * static_cast<double>(t.count));
  double l1 = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) l1 += (rendered[i] - target[i]).lpNorm<1>();
  l1 *= inv;
  const double s = ssim(rendered, target, grad, -(1.0 - kRgbL1Weight) * weight);
  t.value = kRgbL1Weight * l1 + (1.0 - kRgbL1Weight) * (1.0 - s);
  if (grad) {
    for (std::size_t i = 0; i < rendered.size(); ++i) {
      (*grad)[i] += weight * kRgbL1Weight * inv * sgn(Eigen::Vector3d(rendered[i] - target[i]));
    }
  }
  return t;
}

TermValue flatten_loss(const GaussianCloud& scene, GaussianGradients* grad, double weight) {
  TermValue t;
  t.count = scene.size();
  if (t.count == 0) return t;
  if (grad && grad->size() != scene.size()) throw InvalidArgument("flatten_loss: gradient size mismatch");
  const double inv = 1.0 / static_cast<double>(t.count);
  double sum = 0.0;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const int axis = min_scale_axis(scene.log_scale[i]);
    const double s = std::exp(scene.log_scale[i][axis]);
    sum += s;
    if (grad) grad->log_scale[i][axis] += weight * inv * s;
  }
  t.value = sum * inv;
  return t;
}

LossBreakdown total_loss(const LossBreakdown& parts, const LossWeights& w) {
  LossBreakdown out = parts;
  out.total = parts.l_rgb + parts.l_s + w.dn * parts.l_dn + w.p * parts.l_p + w.rd * parts.l_rd + w.rn * parts.l_rn;
  return out;
}

LossWeights effective_weights(const LossWeights& w, const ActiveTerms& a) {
  return {a.dn ? w.dn : 0.0, a.p ? w.p : 0.0, a.rd ? w.rd : 0.0, a.rn ? w.rn : 0.0};
}

LossEvaluation evaluate_losses(const GaussianCloud& scene, const RenderOutput& out, const CameraView& cam,
                               const ViewSupervision& sup, const LossWeights& weights, const ActiveTerms& active,
                               const LossOptions& options) {
  const int W = cam.width();
  const int H = cam.height();
  const LossWeights w = effective_weights(weights, active);
  LossEvaluation ev;
  ev.render_grads = RenderGradients(W, H);
  ev.scene_grads = GaussianGradients(scene.size());
  LossBreakdown& b = ev.breakdown;

  if (sup.image) {
    const TermValue t = rgb_loss(out.color, *sup.image, &ev.render_grads.color);
    b.l_rgb = t.value;
    b.n_rgb = t.count;
  }
  {
    const TermValue t = flatten_loss(scene, &ev.scene_grads);
    b.l_s = t.value;
    b.n_s = t.count;
  }

  ev.surface_normal = normal_from_depth(out.depth, cam, options.normal_offset);
  VectorMap grad_surface(W, H, Eigen::Vector3d::Zero());
  bool surface_used = false;

  {
    const TermValue t =
        dn_consistency_loss(out.gs_normal, ev.surface_normal, sup.lt, w.dn > 0.0 ? &ev.render_grads.gs_normal : nullptr,
                            w.dn > 0.0 ? &grad_surface : nullptr, w.dn);
    b.l_dn = t.value;
    b.n_dn = t.count;
    surface_used = surface_used || (w.dn > 0.0 && t.count > 0);
  }
  if (sup.labels) {
    const CoplanarityResult c = coplanarity_loss(out.depth, *sup.labels, cam, w.p > 0.0 ? &ev.render_grads.depth : nullptr,
                                                 w.p, options.fixed_planes, options.plane_eps);
    b.l_p = c.term.value;
    b.n_p = c.term.count;
    ev.planes = c.planes;
  }
  if (sup.prior_depth) {
    const TermValue t = prior_depth_loss(out.depth, *sup.prior_depth, sup.lt, sup.conf,
                                         w.rd > 0.0 ? &ev.render_grads.depth : nullptr, w.rd);
    b.l_rd = t.value;
    b.n_rd = t.count;
  }
  if (sup.prior_normal && sup.labels) {
    const TermValue t = prior_normal_loss(ev.surface_normal, *sup.prior_normal, sup.labels->labels,
                                          w.rn > 0.0 ? &grad_surface : nullptr, w.rn);
    b.l_rn = t.value;
    b.n_rn = t.count;
    surface_used = surface_used || (w.rn > 0.0 && t.count > 0);
  }
  if (surface_used) {
    normal_from_depth_backward(out.depth, cam, grad_surface, ev.render_grads.depth, options.normal_offset);
  }
  b = total_loss(b, w);
  return ev;
}

}  // namespace planesplat
