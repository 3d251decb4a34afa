#include "planesplat/lp3.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "planesplat/error.hpp"

namespace planesplat {

namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  const std::size_t mid = (n - 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double lo = v[mid];
  if (n % 2 == 1) return lo;
  const double hi = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(mid) + 1, v.end());
  return 0.5 * (lo + hi);
}

// an element of the set, so a median-centred band is never empty
double lower_median(std::vector<double> v) {
  const std::size_t mid = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  return v[mid];
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// 4-connected components of `pixels` (ascending raster indices), each
// returned ascending and ordered by first pixel.
std::vector<std::vector<int>> components(const std::vector<int>& pixels, int W, int H, std::vector<int>& scratch) {
  scratch.assign(static_cast<std::size_t>(W) * H, -2);
  for (int p : pixels) scratch[static_cast<std::size_t>(p)] = -1;
  std::vector<std::vector<int>> out;
  std::vector<int> stack;
  for (int p : pixels) {
    if (scratch[static_cast<std::size_t>(p)] != -1) continue;
    const int id = static_cast<int>(out.size());
    out.emplace_back();
    scratch[static_cast<std::size_t>(p)] = id;
    stack.push_back(p);
    while (!stack.empty()) {
      const int q = stack.back();
      stack.pop_back();
      out.back().push_back(q);
      const int u = q % W;
      const int v = q / W;
      const int nb[4] = {u > 0 ? q - 1 : -1, u + 1 < W ? q + 1 : -1, v > 0 ? q - W : -1, v + 1 < H ? q + W : -1};
      for (int r : nb) {
        if (r < 0 || scratch[static_cast<std::size_t>(r)] != -1) continue;
        scratch[static_cast<std::size_t>(r)] = id;
        stack.push_back(r);
      }
    }
    std::sort(out.back().begin(), out.back().end());
  }
  return out;
}

// pixels whose four neighbors all lie in the (ascending) component
int interior_count(const std::vector<int>& comp, int W, int H) {
  auto has = [&](int q) { return std::binary_search(comp.begin(), comp.end(), q); };
  int n = 0;
  for (int q : comp) {
    const int u = q % W;
    const int v = q / W;
    if (u > 0 && u + 1 < W && v > 0 && v + 1 < H && has(q - 1) && has(q + 1) && has(q - W) && has(q + W)) ++n;
  }
  return n;
}

Eigen::Vector3d mean_direction(const std::vector<int>& pixels, const VectorMap& normals) {
  Eigen::Vector3d s = Eigen::Vector3d::Zero();
  for (int p : pixels) s += normals[static_cast<std::size_t>(p)];
  return s.norm() > 0.0 ? Eigen::Vector3d(s.normalized()) : s;
}

// RMS angle to the mean direction, degrees.
double spread_deg(const std::vector<int>& pixels, const VectorMap& normals, const Eigen::Vector3d& mean) {
  if (pixels.empty()) return 0.0;
  double ss = 0.0;
  for (int p : pixels) {
    const double a = angle_deg(normals[static_cast<std::size_t>(p)], mean);
    ss += a * a;
  }
  return std::sqrt(ss / static_cast<double>(pixels.size()));
}

MaskMap close_mask(const MaskMap& m, int r) {
  if (r <= 0) return m;
  const int W = m.width();
  const int H = m.height();
  auto pass = [&](const MaskMap& in, bool dilate) {
    // separable square structuring element; outside pixels never shrink the set
    MaskMap tmp(W, H, 0), out(W, H, 0);
    for (int v = 0; v < H; ++v) {
      for (int u = 0; u < W; ++u) {
        bool acc = !dilate;
        for (int x = std::max(0, u - r); x <= std::min(W - 1, u + r); ++x) {
          acc = dilate ? (acc || in(x, v)) : (acc && in(x, v));
        }
        tmp(u, v) = acc ? 1 : 0;
      }
    }
    for (int v = 0; v < H; ++v) {
      for (int u = 0; u < W; ++u) {
        bool acc = !dilate;
        for (int y = std::max(0, v - r); y <= std::min(H - 1, v + r); ++y) {
          acc = dilate ? (acc || tmp(u, y)) : (acc && tmp(u, y));
        }
        out(u, v) = acc ? 1 : 0;
      }
    }
    return out;
  };
  return pass(pass(m, true), false);
}

int count_set(const MaskMap& m) {
  int n = 0;
  for (auto x : m.values()) n += x != 0;
  return n;
}

}  // namespace

double angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b)) * kRadToDeg;
}

int Lp3Config::fragment_px(int width, int height) const {
  if (min_fragment_px >= 0) return min_fragment_px;
  return static_cast<int>(std::ceil(min_fragment_frac * width * height));
}

long long intersection_area(const Box& a, const Box& b) noexcept {
  const int w = std::min(a.u_max, b.u_max) - std::max(a.u_min, b.u_min);
  const int h = std::min(a.v_max, b.v_max) - std::max(a.v_min, b.v_min);
  return w > 0 && h > 0 ? static_cast<long long>(w) * h : 0;
}

Box bounding_box(const MaskMap& mask) {
  Box b{mask.width(), mask.height(), 0, 0};
  bool any = false;
  for (int v = 0; v < mask.height(); ++v) {
    for (int u = 0; u < mask.width(); ++u) {
      if (!mask(u, v)) continue;
      any = true;
      b.u_min = std::min(b.u_min, u);
      b.v_min = std::min(b.v_min, v);
      b.u_max = std::max(b.u_max, u + 1);
      b.v_max = std::max(b.v_max, v + 1);
    }
  }
  return any ? b : Box{};
}

std::vector<BoxProposal> boxes_from_masks(std::span<const MaskProposal> masks) {
  std::vector<BoxProposal> out;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const Box b = bounding_box(masks[i].mask);
    if (b.empty()) continue;
    out.push_back({static_cast<int>(i), masks[i].view_id, masks[i].label, masks[i].score, b, masks[i].mask, -1});
  }
  return out;
}

std::vector<BoxProposal> filter_nested_boxes(std::vector<BoxProposal> boxes, double ios) {
  std::stable_sort(boxes.begin(), boxes.end(), [](const BoxProposal& a, const BoxProposal& b) {
    const long long aa = a.box.area();
    const long long ab = b.box.area();
    return aa != ab ? aa > ab : a.id < b.id;
  });
  std::vector<BoxProposal> kept;
  for (auto& b : boxes) {
    bool nested = false;
    for (const auto& k : kept) {
      if (k.label != b.label) continue;
      const long long smaller = std::min(k.box.area(), b.box.area());
      if (smaller > 0 && static_cast<double>(intersection_area(k.box, b.box)) >= ios * static_cast<double>(smaller)) {
        nested = true;
        break;
      }
    }
    if (!nested) kept.push_back(std::move(b));
  }
  return kept;
}

MaskMap transfer_mask(const MaskMap& mask, const ScalarMap& source_depth, const CameraView& source,
                      const CameraView& target) {
  require_same_shape(mask, source_depth, "transfer_mask");
  MaskMap out(target.width(), target.height(), 0);
  for (int v = 0; v < mask.height(); ++v) {
    for (int u = 0; u < mask.width(); ++u) {
      if (!mask(u, v)) continue;
      const double d = source_depth(u, v);
      if (!is_valid(d) || d <= 0.0) continue;
      const TransformedPoint t = transform_point(back_project(source_depth, source, u, v), source, target);
      if (t.behind_camera) continue;
      const long tu = std::lround(t.pixel.x());
      const long tv = std::lround(t.pixel.y());
      if (tu < 0 || tv < 0 || tu >= target.width() || tv >= target.height()) continue;
      out(static_cast<int>(tu), static_cast<int>(tv)) = 1;
    }
  }
  return out;
}

std::vector<std::vector<BoxProposal>> fuse_boxes_cross_view(std::span<const Lp3View> views,
                                                            const std::vector<std::vector<BoxProposal>>& boxes,
                                                            const Lp3Config& cfg, FusionStats* stats) {
  if (boxes.size() != views.size()) throw InvalidArgument("fuse_boxes_cross_view: one box list per view expected");
  FusionStats local;
  FusionStats& st = stats ? *stats : local;
  std::vector<std::vector<BoxProposal>> out(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    const CameraView& target = *views[i].camera;
    std::vector<BoxProposal> list = boxes[i];
    int next_id = 0;
    for (const auto& b : list) next_id = std::max(next_id, b.id + 1);
    for (const int n : views[i].neighbors) {
      if (n < 0 || static_cast<std::size_t>(n) >= views.size() || static_cast<std::size_t>(n) == i) {
        throw InvalidArgument("fuse_boxes_cross_view: bad neighbor index " + std::to_string(n));
      }
      const Lp3View& nb = views[static_cast<std::size_t>(n)];
      if (nb.depth == nullptr) {
        ++st.skipped_neighbors;
        st.warnings.push_back("view " + std::to_string(nb.camera->id()) + " has no depth prior; not fused into view " +
                              std::to_string(target.id()));
        continue;
      }
      std::vector<std::size_t> chosen;
      if (cfg.fuse_main_only) {
        int best = -1;
        std::size_t best_i = 0;
        for (std::size_t k = 0; k < nb.masks.size(); ++k) {
          const int c = count_set(nb.masks[k].mask);
          if (c > best) {
            best = c;
            best_i = k;
          }
        }
        if (best > 0) chosen.push_back(best_i);
      } else {
        for (std::size_t k = 0; k < nb.masks.size(); ++k) chosen.push_back(k);
      }
      for (const std::size_t k : chosen) {
        const MaskProposal& mp = nb.masks[k];
        const MaskMap warped = transfer_mask(mp.mask, *nb.depth, *nb.camera, target);
        const Box box = bounding_box(warped);
        if (box.empty()) {
          ++st.empty_transfers;
          continue;
        }
        ++st.transferred;
        list.push_back({next_id++, target.id(), mp.label, mp.score, box, close_mask(warped, cfg.transfer_close_px), n});
      }
    }
    out[i] = filter_nested_boxes(std::move(list), cfg.nested_ios);
  }
  return out;
}

std::vector<int> kmeans_directions(std::span<const Eigen::Vector3d> points, int k, std::uint64_t seed, int iterations,
                                   std::vector<Eigen::Vector3d>* centroids_out) {
  const std::size_t n = points.size();
  std::vector<int> assign(n, 0);
  if (n == 0 || k <= 0) return assign;
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Vector3d> centers;
  centers.push_back(points[rng() % n]);
  std::vector<double> d2(n);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, 1.0 - points[i].dot(c));
      d2[i] = std::max(0.0, best) * std::max(0.0, best);
      total += d2[i];
    }
    if (!(total > 0.0)) break;
    const double target = uniform01(rng) * total;
    double acc = 0.0;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc > target) {
        pick = i;
        break;
      }
    }
    centers.push_back(points[pick]);
  }
  const int K = static_cast<int>(centers.size());
  for (int it = 0; it < std::max(1, iterations); ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_dot = points[i].dot(centers[0]);
      for (int c = 1; c < K; ++c) {
        const double d = points[i].dot(centers[static_cast<std::size_t>(c)]);
        if (d > best_dot) {
          best_dot = d;
          best = c;
        }
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
    }
    if (!changed) break;
    std::vector<Eigen::Vector3d> sums(static_cast<std::size_t>(K), Eigen::Vector3d::Zero());
    for (std::size_t i = 0; i < n; ++i) sums[static_cast<std::size_t>(assign[i])] += points[i];
    for (int c = 0; c < K; ++c) {
      if (sums[static_cast<std::size_t>(c)].norm() > 1e-12) centers[static_cast<std::size_t>(c)] = sums[static_cast<std::size_t>(c)].normalized();
    }
  }
  if (centroids_out) *centroids_out = centers;
  return assign;
}

std::vector<PlaneRegion> inspect_and_split(const MaskMap& mask, const std::string& label, double score,
                                           const VectorMap& prior_normals, const ScalarMap& prior_plane_dist,
                                           const Lp3Config& cfg, SplitDiagnostics* diag) {
  require_same_shape(mask, prior_normals, "inspect_and_split normals");
  require_same_shape(mask, prior_plane_dist, "inspect_and_split plane distance");
  SplitDiagnostics local;
  SplitDiagnostics& dg = diag ? *diag : local;
  dg = SplitDiagnostics{};
  const int W = mask.width();
  const int H = mask.height();
  const int min_px = cfg.fragment_px(W, H);

  std::vector<int> valid;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] && is_valid(prior_normals[i]) && is_valid(prior_plane_dist[i])) valid.push_back(static_cast<int>(i));
  }
  dg.valid_pixels = static_cast<int>(valid.size());
  std::vector<PlaneRegion> regions;
  if (valid.empty()) return regions;

  // (a) normal clusters
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(valid.size());
  for (int p : valid) pts.push_back(prior_normals[static_cast<std::size_t>(p)]);
  std::vector<Eigen::Vector3d> centers;
  const std::vector<int> assign = kmeans_directions(pts, cfg.kmax, cfg.seed, cfg.kmeans_iterations, &centers);
  const int K = static_cast<int>(centers.size());
  std::vector<int> parent(static_cast<std::size_t>(K));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)];
    return x;
  };
  for (int a = 0; a < K; ++a) {
    for (int b = a + 1; b < K; ++b) {
      if (angle_deg(centers[static_cast<std::size_t>(a)], centers[static_cast<std::size_t>(b)]) < cfg.merge_angle_deg) {
        const int ra = find(a);
        const int rb = find(b);
        if (ra != rb) parent[static_cast<std::size_t>(std::max(ra, rb))] = std::min(ra, rb);
      }
    }
  }
  std::vector<std::vector<int>> clusters(static_cast<std::size_t>(K));
  for (std::size_t i = 0; i < valid.size(); ++i) clusters[static_cast<std::size_t>(find(assign[i]))].push_back(valid[i]);

  std::vector<int> scratch;
  const double thr = cfg.dist_outlier_m;
  auto delta_of = [&](int p) { return prior_plane_dist[static_cast<std::size_t>(p)]; };
  auto median_delta = [&](const std::vector<int>& px) {
    std::vector<double> d;
    d.reserve(px.size());
    for (int p : px) d.push_back(delta_of(p));
    return median_of(std::move(d));
  };
  auto lower_median_delta = [&](const std::vector<int>& px) {
    std::vector<double> d;
    d.reserve(px.size());
    for (int p : px) d.push_back(delta_of(p));
    return lower_median(std::move(d));
  };

  for (const auto& cluster : clusters) {
    if (cluster.empty()) continue;
    ++dg.kmeans_clusters;
    const Eigen::Vector3d mean = mean_direction(cluster, prior_normals);
    if (spread_deg(cluster, prior_normals, mean) > cfg.max_normal_spread_deg) continue;
    ++dg.clusters_kept;

    // (b) plane-distance groups: inliers of the median, then recurse on the rest
    int big_groups = 0;
    std::vector<int> remaining = cluster;
    std::vector<std::vector<int>> queue;
    while (!remaining.empty()) {
      const double med = lower_median_delta(remaining);
      std::vector<int> group, rest;
      for (int p : remaining) (std::abs(delta_of(p) - med) <= thr ? group : rest).push_back(p);
      if (static_cast<int>(group.size()) >= min_px) ++big_groups;
      for (auto& c : components(group, W, H, scratch)) queue.push_back(std::move(c));
      remaining = std::move(rest);
    }
    dg.delta_groups += big_groups;
    if (big_groups >= 2) ++dg.delta_split_clusters;

    // (c) per-component trim against its own median, then fragment filter
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      std::vector<int> comp = std::move(queue[qi]);
      if (static_cast<int>(comp.size()) < min_px) {
        ++dg.fragments_dropped;
        continue;
      }
      const double med = median_delta(comp);
      std::vector<int> in;
      for (int p : comp) {
        if (std::abs(delta_of(p) - med) <= thr) in.push_back(p);
      }
      if (in.size() != comp.size()) {
        for (auto& c : components(in, W, H, scratch)) queue.push_back(std::move(c));
        continue;
      }
      // seams between planes leave thin strips of blended normals; size is
      // measured after a one-pixel erosion
      if (interior_count(comp, W, H) < min_px) {
        ++dg.fragments_dropped;
        continue;
      }
      PlaneRegion r;
      r.label = label;
      r.score = score;
      r.mean_normal = mean_direction(comp, prior_normals);
      r.normal_spread_deg = spread_deg(comp, prior_normals, r.mean_normal);
      if (r.normal_spread_deg > cfg.max_normal_spread_deg) {
        ++dg.fragments_dropped;
        continue;
      }
      r.median_delta = med;
      r.pixels = std::move(comp);
      regions.push_back(std::move(r));
    }
  }
  dg.regions = static_cast<int>(regions.size());
  return regions;
}

PlaneLabelMap build_label_map(std::vector<PlaneRegion> regions, int width, int height, int view_id,
                              int min_fragment_px, const VectorMap* prior_normals) {
  PlaneLabelMap out;
  out.view_id = view_id;
  out.labels = LabelRaster(width, height, 0);
  std::stable_sort(regions.begin(), regions.end(),
                   [](const PlaneRegion& a, const PlaneRegion& b) { return a.pixels.size() > b.pixels.size(); });
  std::vector<int> claimed;
  for (const auto& r : regions) {
    claimed.clear();
    for (int p : r.pixels) {
      if (p < 0 || static_cast<std::size_t>(p) >= out.labels.size()) throw BoundsError("build_label_map: pixel index");
      if (out.labels[static_cast<std::size_t>(p)] == 0) claimed.push_back(p);
    }
    if (claimed.empty() || static_cast<int>(claimed.size()) < min_fragment_px) continue;
    const int id = out.num_labels() + 1;
    for (int p : claimed) out.labels[static_cast<std::size_t>(p)] = id;
    PlaneLabelInfo info;
    info.source_class = r.label;
    info.score = r.score;
    info.pixel_count = static_cast<int>(claimed.size());
    info.mean_normal = r.mean_normal;
    if (prior_normals) {
      Eigen::Vector3d s = Eigen::Vector3d::Zero();
      for (int p : claimed) {
        const Eigen::Vector3d& n = (*prior_normals)[static_cast<std::size_t>(p)];
        if (is_valid(n)) s += n;
      }
      if (s.norm() > 0.0) info.mean_normal = s.normalized();
    }
    out.info.push_back(info);
  }
  return out;
}

std::vector<Lp3ViewResult> run_lp3(std::span<const Lp3View> views, const Lp3Config& cfg, FusionStats* stats) {
  FusionStats local;
  FusionStats& st = stats ? *stats : local;
  std::vector<std::vector<BoxProposal>> boxes;
  boxes.reserve(views.size());
  for (const auto& v : views) {
    auto b = boxes_from_masks(v.masks);
    for (auto& x : b) x.view_id = v.camera->id();
    boxes.push_back(std::move(b));
  }
  const auto fused = fuse_boxes_cross_view(views, boxes, cfg, &st);

  std::vector<Lp3ViewResult> out(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    const CameraView& cam = *views[i].camera;
    const int W = cam.width();
    const int H = cam.height();
    Lp3ViewResult& res = out[i];
    res.boxes = fused[i];
    if (views[i].depth == nullptr) {
      st.warnings.push_back("view " + std::to_string(cam.id()) + " has no depth prior; no plane labels");
      res.labels.view_id = cam.id();
      res.labels.labels = LabelRaster(W, H, 0);
      continue;
    }
    const VectorMap normals = normal_from_depth(*views[i].depth, cam, cfg.normal_offset);
    const ScalarMap delta = plane_distance_map(*views[i].depth, normals, cam);
    std::vector<PlaneRegion> regions;
    for (const auto& b : res.boxes) {
      MaskMap m(W, H, 0);
      for (int v = std::max(0, b.box.v_min); v < std::min(H, b.box.v_max); ++v) {
        for (int u = std::max(0, b.box.u_min); u < std::min(W, b.box.u_max); ++u) {
          if (!b.mask.empty() && b.mask(u, v)) m(u, v) = 1;
        }
      }
      SplitDiagnostics d;
      auto r = inspect_and_split(m, b.label, b.score, normals, delta, cfg, &d);
      res.diagnostics.push_back(d);
      for (auto& x : r) regions.push_back(std::move(x));
    }
    res.labels = build_label_map(std::move(regions), W, H, cam.id(), cfg.fragment_px(W, H), &normals);
  }
  return out;
}

}  // namespace planesplat
