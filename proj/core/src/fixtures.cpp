#include "planesplat/fixtures.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "planesplat/error.hpp"

namespace planesplat {

namespace {

constexpr double kPi = std::numbers::pi;

std::mt19937_64 stream_rng(std::uint64_t seed, int view, int stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(view), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

FixtureQuad quad(const Eigen::Vector3d& o, const Eigen::Vector3d& e1, const Eigen::Vector3d& e2,
                 const Eigen::Vector3d& color, const char* label) {
  return {o, e1, e2, color, label};
}

// Room [-2, 2] x [-1.5, 1.5] x [0, 2.5].
void add_box_room(FixtureScene& s) {
  const double X = 2.0, Y = 1.5, Z = 2.5;
  s.quads.push_back(quad({-X, -Y, 0}, {2 * X, 0, 0}, {0, 2 * Y, 0}, {0.55, 0.45, 0.35}, "floor"));
  s.quads.push_back(quad({-X, -Y, Z}, {2 * X, 0, 0}, {0, 2 * Y, 0}, {0.92, 0.92, 0.88}, "ceiling"));
  s.quads.push_back(quad({-X, -Y, 0}, {2 * X, 0, 0}, {0, 0, Z}, {0.80, 0.70, 0.60}, "wall"));
  s.quads.push_back(quad({-X, Y, 0}, {2 * X, 0, 0}, {0, 0, Z}, {0.60, 0.72, 0.80}, "wall"));
  s.quads.push_back(quad({-X, -Y, 0}, {0, 2 * Y, 0}, {0, 0, Z}, {0.70, 0.80, 0.62}, "wall"));
  s.quads.push_back(quad({X, -Y, 0}, {0, 2 * Y, 0}, {0, 0, Z}, {0.82, 0.62, 0.70}, "wall"));
}

// Walls meeting at a vertical corner at (0, 3) and facing the origin.
void add_two_walls(FixtureScene& s, bool panel) {
  const double L = 3.0, Z = 3.0;
  s.quads.push_back(quad({-L, 0, 0}, {2 * L, 0, 0}, {0, L + 1.0, 0}, {0.55, 0.45, 0.35}, "floor"));
  s.quads.push_back(quad({0, L, 0}, {L, -L, 0}, {0, 0, Z}, {0.80, 0.70, 0.60}, "wall"));
  s.quads.push_back(quad({0, L, 0}, {-L, -L, 0}, {0, 0, Z}, {0.60, 0.72, 0.80}, "wall"));
  if (panel) {
    // parallel to the first wall, 0.5 m in front of it
    const Eigen::Vector3d n = Eigen::Vector3d(-1, -1, 0).normalized();
    s.quads.push_back(quad(Eigen::Vector3d(0.6, L - 0.6, 0.4) + 0.5 * n, {0.9, -0.9, 0}, {0, 0, 1.4},
                           {0.70, 0.80, 0.62}, "wall"));
  }
}

bool hit_quad(const FixtureQuad& q, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double& lambda,
              Eigen::Vector3d& n) {
  n = q.e1.cross(q.e2).normalized();
  const double den = n.dot(d);
  if (std::abs(den) < 1e-12) return false;
  lambda = n.dot(q.origin - o) / den;
  if (!(lambda > 0.0)) return false;
  const Eigen::Vector3d r = o + lambda * d - q.origin;
  const double a = r.dot(q.e1) / q.e1.squaredNorm();
  const double b = r.dot(q.e2) / q.e2.squaredNorm();
  return a >= 0.0 && a <= 1.0 && b >= 0.0 && b <= 1.0;
}

bool hit_sphere(const FixtureSphere& s, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double& lambda,
                Eigen::Vector3d& n) {
  const Eigen::Vector3d oc = o - s.center;
  const double a = d.squaredNorm();
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - a * c;
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  lambda = (-b - sq) / a;
  if (!(lambda > 0.0)) lambda = (-b + sq) / a;
  if (!(lambda > 0.0)) return false;
  n = (o + lambda * d - s.center) / s.radius;
  return true;
}

Eigen::Vector3d quad_shade(const FixtureQuad& q, const Eigen::Vector3d& p) {
  const Eigen::Vector3d r = p - q.origin;
  const double a = r.dot(q.e1) / q.e1.squaredNorm();
  const double b = r.dot(q.e2) / q.e2.squaredNorm();
  const double s = 0.9 + 0.05 * std::sin(2.0 * kPi * 1.3 * a) + 0.05 * std::cos(2.0 * kPi * 0.9 * b);
  return (s * q.color).cwiseMin(1.0);
}

MaskMap erode(const MaskMap& m) {
  MaskMap out(m.width(), m.height(), 0);
  for (int v = 1; v + 1 < m.height(); ++v) {
    for (int u = 1; u + 1 < m.width(); ++u) {
      out(u, v) = m(u, v) && m(u - 1, v) && m(u + 1, v) && m(u, v - 1) && m(u, v + 1) ? 1 : 0;
    }
  }
  return out;
}

ScalarMap smooth_noise(int w, int h, double sigma, double wavelength, std::mt19937_64& rng) {
  constexpr int kWaves = 6;
  const double amp = sigma * std::sqrt(2.0 / kWaves);
  ScalarMap out(w, h, 0.0);
  for (int k = 0; k < kWaves; ++k) {
    const double theta = uniform(rng, 0.0, 2.0 * kPi);
    const double freq = 2.0 * kPi / (wavelength * uniform(rng, 0.75, 1.5));
    const double phase = uniform(rng, 0.0, 2.0 * kPi);
    const double fx = freq * std::cos(theta);
    const double fy = freq * std::sin(theta);
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) out(u, v) += amp * std::sin(fx * u + fy * v + phase);
    }
  }
  return out;
}

}  // namespace

const std::string& FixtureScene::label(int id) const {
  if (id < 0 || id >= num_primitives()) throw InvalidArgument("fixture primitive id out of range");
  const auto i = static_cast<std::size_t>(id);
  return i < quads.size() ? quads[i].label : spheres[i - quads.size()].label;
}

Mesh FixtureScene::mesh(int segments) const {
  Mesh m;
  for (const auto& q : quads) {
    const int b = static_cast<int>(m.vertices.size());
    m.vertices.push_back(q.origin);
    m.vertices.push_back(q.origin + q.e1);
    m.vertices.push_back(q.origin + q.e1 + q.e2);
    m.vertices.push_back(q.origin + q.e2);
    m.triangles.push_back({b, b + 1, b + 2});
    m.triangles.push_back({b, b + 2, b + 3});
  }
  const int rings = std::max(segments / 2, 2);
  for (const auto& s : spheres) {
    const int b = static_cast<int>(m.vertices.size());
    for (int i = 0; i <= rings; ++i) {
      const double th = kPi * i / rings;
      for (int j = 0; j < segments; ++j) {
        const double ph = 2.0 * kPi * j / segments;
        m.vertices.push_back(s.center +
                             s.radius * Eigen::Vector3d(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph),
                                                        std::cos(th)));
      }
    }
    for (int i = 0; i < rings; ++i) {
      for (int j = 0; j < segments; ++j) {
        const int a = b + i * segments + j;
        const int c = b + i * segments + (j + 1) % segments;
        const int a2 = a + segments;
        const int c2 = c + segments;
        if (i > 0) m.triangles.push_back({a, a2, c});
        if (i + 1 < rings) m.triangles.push_back({c, a2, c2});
      }
    }
  }
  m.compute_vertex_normals();
  return m;
}

void FixtureConfig::validate() const {
  if (kind != "box_room" && kind != "two_walls" && kind != "sphere_in_room") {
    throw ValidationError("unknown fixture kind: " + kind);
  }
  if (views < 1 || width < 8 || height < 8 || !(focal > 0.0)) throw ValidationError("fixture: bad camera settings");
  if (!(noise_sigma >= 0.0) || !(noise_wavelength_px > 0.0)) throw ValidationError("fixture: bad noise settings");
  if (!(prior_scale > 0.0) || !std::isfinite(prior_shift)) throw ValidationError("fixture: bad prior distortion");
  if (sparse_per_view < 0 || !(outlier_frac >= 0.0 && outlier_frac < 1.0)) {
    throw ValidationError("fixture: bad sparse settings");
  }
  if (drop_ceiling_every < 0) throw ValidationError("fixture: drop_ceiling_every must be >= 0");
}

CameraView look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, int width, int height, double focal,
                   int id) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  if (std::abs(forward.dot(up)) > 0.99) up = -Eigen::Vector3d::UnitY();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d R;
  R.row(0) = right.transpose();
  R.row(1) = down.transpose();
  R.row(2) = forward.transpose();
  return CameraView(id, width, height, make_intrinsics(focal, focal, 0.5 * (width - 1), 0.5 * (height - 1)), R,
                    -R * eye);
}

FixtureScene fixture_scene(const FixtureConfig& cfg) {
  cfg.validate();
  FixtureScene s;
  if (cfg.kind == "two_walls") {
    add_two_walls(s, cfg.parallel_panel);
  } else {
    add_box_room(s);
    if (cfg.kind == "sphere_in_room") s.spheres.push_back({{1.3, 0.8, 0.25}, 0.25, {0.85, 0.3, 0.25}, "table"});
  }
  return s;
}

std::vector<CameraView> fixture_cameras(const FixtureConfig& cfg) {
  cfg.validate();
  std::vector<CameraView> cams;
  const int n = cfg.views;
  for (int i = 0; i < n; ++i) {
    Eigen::Vector3d eye;
    Eigen::Vector3d target;
    if (cfg.kind == "two_walls") {
      const double a = n == 1 ? 0.0 : -0.6 + 1.2 * i / (n - 1);
      eye = {a, 0.0, 1.4};
      target = {0.3 * a, 3.0, 1.2};
    } else {
      // interior orbit looking across the room, pitch cycling down, level, up
      const double phi = 2.0 * kPi * i / n;
      const double c = std::cos(phi);
      const double s = std::sin(phi);
      static constexpr double kTargetZ[3] = {0.2, 1.25, 2.3};
      eye = {0.9 * c, 0.7 * s, 1.25 + (i % 2 == 0 ? 0.15 : -0.15)};
      target = {-1.6 * c, -1.2 * s, kTargetZ[i % 3]};
    }
    cams.push_back(look_at(eye, target, cfg.width, cfg.height, cfg.focal, i));
  }
  return cams;
}

void cast_scene(const FixtureScene& scene, const CameraView& cam, ScalarMap& depth, VectorMap& normal,
                LabelRaster& ids, VectorMap* color) {
  const int w = cam.width();
  const int h = cam.height();
  depth = ScalarMap(w, h, kInvalid);
  normal = VectorMap(w, h, invalid_vector());
  ids = LabelRaster(w, h, -1);
  if (color) *color = VectorMap(w, h, Eigen::Vector3d::Zero());
  const Eigen::Vector3d o = cam.center();
  const Eigen::Vector3d light = Eigen::Vector3d(0.3, -0.5, 1.0).normalized();
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const Eigen::Vector3d ray = cam.ray(u, v);
      const Eigen::Vector3d d = cam.R().transpose() * ray;
      double best = std::numeric_limits<double>::infinity();
      int best_id = -1;
      Eigen::Vector3d best_n = Eigen::Vector3d::Zero();
      int id = 0;
      for (const auto& q : scene.quads) {
        double lambda = 0.0;
        Eigen::Vector3d n;
        if (hit_quad(q, o, d, lambda, n) && lambda < best) {
          best = lambda;
          best_id = id;
          best_n = n;
        }
        ++id;
      }
      for (const auto& s : scene.spheres) {
        double lambda = 0.0;
        Eigen::Vector3d n;
        if (hit_sphere(s, o, d, lambda, n) && lambda < best) {
          best = lambda;
          best_id = id;
          best_n = n;
        }
        ++id;
      }
      if (best_id < 0) continue;
      // ray has unit camera z, so the ray parameter is the z-depth
      depth(u, v) = best;
      ids(u, v) = best_id;
      Eigen::Vector3d nc = cam.R() * best_n;
      if (nc.dot(ray) > 0.0) nc = -nc;
      normal(u, v) = nc;
      if (color) {
        const auto bid = static_cast<std::size_t>(best_id);
        const Eigen::Vector3d p = o + best * d;
        if (bid < scene.quads.size()) {
          (*color)(u, v) = quad_shade(scene.quads[bid], p);
        } else {
          const FixtureSphere& s = scene.spheres[bid - scene.quads.size()];
          (*color)(u, v) = s.color * (0.55 + 0.45 * std::max(0.0, best_n.dot(light)));
        }
      }
    }
  }
}

Fixture make_fixture(const FixtureConfig& cfg) {
  cfg.validate();
  Fixture fx;
  fx.config = cfg;
  fx.scene = fixture_scene(cfg);
  fx.cameras = fixture_cameras(cfg);
  fx.gt_mesh = fx.scene.mesh();

  // proposal classes in order of first appearance
  std::vector<std::string> classes;
  for (int id = 0; id < fx.scene.num_primitives(); ++id) {
    if (std::find(classes.begin(), classes.end(), fx.scene.label(id)) == classes.end()) {
      classes.push_back(fx.scene.label(id));
    }
  }

  for (std::size_t vi = 0; vi < fx.cameras.size(); ++vi) {
    const CameraView& cam = fx.cameras[vi];
    const int view = static_cast<int>(vi);
    const int w = cam.width();
    const int h = cam.height();
    FixtureView fv;
    cast_scene(fx.scene, cam, fv.gt_depth, fv.gt_normal, fv.gt_ids, &fv.image);

    // priors
    ScalarMap metric = fv.gt_depth;
    if (cfg.noise_sigma > 0.0) {
      auto rng = stream_rng(cfg.seed, view, 0);
      const ScalarMap noise = smooth_noise(w, h, cfg.noise_sigma, cfg.noise_wavelength_px, rng);
      for (std::size_t i = 0; i < metric.size(); ++i) metric[i] += noise[i];
    }
    fv.prior_depth = ScalarMap(w, h, kInvalid);
    for (std::size_t i = 0; i < metric.size(); ++i) {
      fv.prior_depth[i] = (metric[i] - cfg.prior_shift) / cfg.prior_scale;
    }
    fv.prior_normal = normal_from_depth(metric, cam);
    fv.confidence = ScalarMap(w, h, kInvalid);
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        if (!is_valid(fv.gt_normal(u, v))) continue;
        fv.confidence(u, v) = 1.0 + 2.0 * std::abs(fv.gt_normal(u, v).dot(cam.ray(u, v).normalized()));
      }
    }

    // mask proposals
    std::vector<MaskMap> class_masks;
    if (cfg.merge_walls) {
      class_masks.assign(classes.size(), MaskMap(w, h, 0));
      for (std::size_t i = 0; i < fv.gt_ids.size(); ++i) {
        if (fv.gt_ids[i] < 0) continue;
        const auto c = std::find(classes.begin(), classes.end(), fx.scene.label(fv.gt_ids[i])) - classes.begin();
        class_masks[static_cast<std::size_t>(c)][i] = 1;
      }
    }
    auto add_mask = [&](const std::string& label, MaskMap m, bool thin) {
      if (thin) m = erode(m);
      if (std::none_of(m.values().begin(), m.values().end(), [](std::uint8_t x) { return x != 0; })) return;
      if (label == "ceiling" && cfg.drop_ceiling_every > 0 && view % cfg.drop_ceiling_every == 0) return;
      fv.masks.push_back({view, label, 1.0 - 0.05 * static_cast<double>(fv.masks.size()), std::move(m)});
    };
    if (cfg.merge_walls) {
      for (std::size_t c = 0; c < classes.size(); ++c) add_mask(classes[c], class_masks[c], classes[c] != "table");
    } else {
      for (int id = 0; id < fx.scene.num_primitives(); ++id) {
        MaskMap m(w, h, 0);
        for (std::size_t i = 0; i < fv.gt_ids.size(); ++i) m[i] = fv.gt_ids[i] == id ? 1 : 0;
        add_mask(fx.scene.label(id), std::move(m), fx.scene.label(id) != "table");
      }
    }

    // sparse samples at pixel positions so the dense prior is read exactly
    auto rng = stream_rng(cfg.seed, view, 1);
    std::vector<int> valid;
    for (std::size_t i = 0; i < fv.gt_depth.size(); ++i) {
      if (is_valid(fv.gt_depth[i])) valid.push_back(static_cast<int>(i));
    }
    const std::size_t n = std::min(valid.size(), static_cast<std::size_t>(cfg.sparse_per_view));
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, valid.size() - 1);
      std::swap(valid[i], valid[pick(rng)]);
    }
    const auto outliers = static_cast<std::size_t>(std::llround(cfg.outlier_frac * static_cast<double>(n)));
    fv.sparse.view_id = view;
    for (std::size_t i = 0; i < n; ++i) {
      const int u = valid[i] % w;
      const int v = valid[i] / w;
      double d = fv.gt_depth(u, v);
      const bool outlier = i < outliers;
      if (outlier) {
        d *= uniform(rng, 0.0, 1.0) < 0.5 ? uniform(rng, 0.3, 0.7) : uniform(rng, 1.5, 3.0);
      } else {
        fx.gt_points.push_back(cam.camera_to_world(d * cam.ray(u, v)));
      }
      fv.sparse.samples.push_back({static_cast<double>(u), static_cast<double>(v), d});
      fv.sparse_outlier.push_back(outlier ? 1 : 0);
    }
    fx.views.push_back(std::move(fv));
  }
  return fx;
}

}  // namespace planesplat
