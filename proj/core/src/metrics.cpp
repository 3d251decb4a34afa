#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <limits>
#include <random>

#include "json.hpp"
#include "planesplat/error.hpp"
#include "planesplat/fusion.hpp"
#include "planesplat/image_quality.hpp"

namespace planesplat {

SurfaceSamples sample_surface(const Mesh& mesh, std::size_t n, std::uint64_t seed) {
  mesh.validate();
  std::vector<double> cum;
  std::vector<Eigen::Vector3d> face_n;
  cum.reserve(mesh.triangles.size());
  face_n.reserve(mesh.triangles.size());
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    const Eigen::Vector3d& a = mesh.vertices[static_cast<std::size_t>(t[0])];
    const Eigen::Vector3d c =
        (mesh.vertices[static_cast<std::size_t>(t[1])] - a).cross(mesh.vertices[static_cast<std::size_t>(t[2])] - a);
    const double len = c.norm();
    total += 0.5 * len;
    cum.push_back(total);
    face_n.push_back(len > 0.0 ? Eigen::Vector3d(c / len) : Eigen::Vector3d::Zero());
  }
  if (!(total > 0.0)) throw InvalidArgument("sample_surface: mesh has no area");
  std::mt19937_64 rng(seed);
  auto uniform = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  SurfaceSamples s;
  s.points.reserve(n);
  s.normals.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = uniform() * total;
    auto f = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), r) - cum.begin());
    f = std::min(f, cum.size() - 1);
    const auto& t = mesh.triangles[f];
    const double r1 = std::sqrt(uniform());
    const double r2 = uniform();
    s.points.push_back((1.0 - r1) * mesh.vertices[static_cast<std::size_t>(t[0])] +
                       r1 * (1.0 - r2) * mesh.vertices[static_cast<std::size_t>(t[1])] +
                       r1 * r2 * mesh.vertices[static_cast<std::size_t>(t[2])]);
    s.normals.push_back(face_n[f]);
  }
  return s;
}

KdTree::KdTree(std::vector<Eigen::Vector3d> points) : points_(std::move(points)) {
  if (points_.empty()) throw InvalidArgument("KdTree: no points");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points_.size() / 8 + 2);
  build(0, static_cast<std::uint32_t>(points_.size()));
}

int KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  nodes_[static_cast<std::size_t>(id)].begin = begin;
  nodes_[static_cast<std::size_t>(id)].end = end;
  if (end - begin <= 8) return id;
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double pa = points_[a][axis];
                     const double pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  Node& n = nodes_[static_cast<std::size_t>(id)];
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

void KdTree::search(int node, const Eigen::Vector3d& q, Hit& best) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.axis < 0) {
    for (std::uint32_t i = n.begin; i < n.end; ++i) {
      const std::uint32_t p = order_[i];
      const double d = (points_[p] - q).squaredNorm();
      if (d < best.dist2 || (d == best.dist2 && p < best.index)) best = {p, d};
    }
    return;
  }
  const double diff = q[n.axis] - n.split;
  const int first = diff < 0.0 ? n.left : n.right;
  const int second = diff < 0.0 ? n.right : n.left;
  search(first, q, best);
  if (diff * diff <= best.dist2) search(second, q, best);
}

KdTree::Hit KdTree::nearest(const Eigen::Vector3d& q) const {
  Hit best{points_.size(), std::numeric_limits<double>::infinity()};
  search(0, q, best);
  return best;
}

namespace {

struct Directed {
  double mean_dist = 0.0;
  double within = 0.0;  // fraction under the threshold
  double nc = 0.0;
};

Directed one_way(const SurfaceSamples& from, const KdTree& tree, const SurfaceSamples& to, double thr) {
  Directed d;
  std::size_t within = 0;
  for (std::size_t i = 0; i < from.points.size(); ++i) {
    const KdTree::Hit h = tree.nearest(from.points[i]);
    const double dist = std::sqrt(h.dist2);
    d.mean_dist += dist;
    if (dist < thr) ++within;
    d.nc += std::abs(from.normals[i].dot(to.normals[h.index]));
  }
  const double n = static_cast<double>(from.points.size());
  d.mean_dist /= n;
  d.within = static_cast<double>(within) / n;
  d.nc /= n;
  return d;
}

}  // namespace

MetricsReport surface_metrics(const Mesh& pred, const Mesh& gt, const SurfaceMetricsConfig& cfg) {
  if (pred.empty() || gt.empty()) throw InvalidArgument("surface_metrics: empty mesh");
  if (cfg.samples == 0) throw InvalidArgument("surface_metrics: zero samples");
  const SurfaceSamples sp = sample_surface(pred, cfg.samples, cfg.seed);
  const SurfaceSamples sg = sample_surface(gt, cfg.samples, cfg.seed);
  const KdTree tp(sp.points);
  const KdTree tg(sg.points);
  const Directed acc = one_way(sp, tg, sg, cfg.f_threshold_m);
  const Directed comp = one_way(sg, tp, sp, cfg.f_threshold_m);
  MetricsReport r;
  r.acc_cm = 100.0 * acc.mean_dist;
  r.comp_cm = 100.0 * comp.mean_dist;
  r.cd_cm = 0.5 * (r.acc_cm + r.comp_cm);
  const double p = acc.within;
  const double rc = comp.within;
  r.precision_pct = 100.0 * p;
  r.recall_pct = 100.0 * rc;
  r.f1_pct = p + rc > 0.0 ? 100.0 * 2.0 * p * rc / (p + rc) : 0.0;
  r.nc_pct = 100.0 * 0.5 * (acc.nc + comp.nc);
  return r;
}

ImageMetrics image_metrics(const VectorMap& rendered, const VectorMap& target) {
  return {psnr(rendered, target), ssim(rendered, target)};
}

std::string metrics_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  auto put = [&](const char* k, double v) {
    if (std::isfinite(v)) {
      j[k] = v;
    } else {
      j[k] = nullptr;
    }
  };
  put("acc_cm", r.acc_cm);
  put("comp_cm", r.comp_cm);
  put("cd_cm", r.cd_cm);
  put("precision_pct", r.precision_pct);
  put("recall_pct", r.recall_pct);
  put("f1_pct", r.f1_pct);
  put("nc_pct", r.nc_pct);
  put("psnr_db", r.psnr_db);
  put("ssim", r.ssim);
  return j.dump(2) + "\n";
}

}  // namespace planesplat
