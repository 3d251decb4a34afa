#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <cstring>
#include <span>
#include <set>

#include "planesplat/error.hpp"
#include "planesplat/fixtures.hpp"

namespace planesplat {
namespace {

FixtureConfig small(const std::string& kind) {
  FixtureConfig c;
  c.kind = kind;
  c.views = 4;
  c.width = 48;
  c.height = 36;
  c.focal = 26.0;
  c.sparse_per_view = 60;
  return c;
}

Eigen::Vector3d quad_normal(const FixtureQuad& q) { return q.e1.cross(q.e2).normalized(); }

// Point p lies on quad q (plane distance and barycentric bounds).
bool on_quad(const FixtureQuad& q, const Eigen::Vector3d& p, double tol) {
  const Eigen::Vector3d r = p - q.origin;
  if (std::abs(r.dot(quad_normal(q))) > tol) return false;
  const double a = r.dot(q.e1) / q.e1.squaredNorm();
  const double b = r.dot(q.e2) / q.e2.squaredNorm();
  return a > -tol && a < 1 + tol && b > -tol && b < 1 + tol;
}

// bitwise so that NaN pixels compare equal to themselves
bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool on_primitive(const FixtureScene& s, int id, const Eigen::Vector3d& p, double tol) {
  if (id < static_cast<int>(s.quads.size())) return on_quad(s.quads[static_cast<std::size_t>(id)], p, tol);
  const auto& sp = s.spheres[static_cast<std::size_t>(id) - s.quads.size()];
  return std::abs((p - sp.center).norm() - sp.radius) < tol;
}

TEST(FixtureConfig, RejectsBadSettings) {
  FixtureConfig c;
  c.kind = "pyramid";
  EXPECT_THROW(c.validate(), ValidationError);
  c = FixtureConfig{};
  c.noise_sigma = -1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = FixtureConfig{};
  c.prior_scale = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = FixtureConfig{};
  c.outlier_frac = 1.5;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_NO_THROW(FixtureConfig{}.validate());
}

TEST(FixtureScene, BoxRoomHasSixPlanesAndClosedArea) {
  const FixtureScene s = fixture_scene(FixtureConfig{});
  ASSERT_EQ(s.quads.size(), 6u);
  EXPECT_TRUE(s.spheres.empty());
  // 4 x 3 floor and ceiling, 4 x 2.5 and 3 x 2.5 wall pairs
  EXPECT_NEAR(s.mesh().area(), 2 * 12.0 + 2 * 10.0 + 2 * 7.5, 1e-9);
  std::set<std::string> labels;
  for (int i = 0; i < s.num_primitives(); ++i) labels.insert(s.label(i));
  EXPECT_EQ(labels, (std::set<std::string>{"floor", "ceiling", "wall"}));
  EXPECT_THROW((void)s.label(6), InvalidArgument);
}

TEST(FixtureScene, TwoWallsAreNinetyDegreesAndPanelIsParallel) {
  FixtureConfig c;
  c.kind = "two_walls";
  FixtureScene s = fixture_scene(c);
  ASSERT_EQ(s.quads.size(), 3u);
  const Eigen::Vector3d n1 = quad_normal(s.quads[1]);
  const Eigen::Vector3d n2 = quad_normal(s.quads[2]);
  EXPECT_NEAR(std::abs(n1.dot(n2)), 0.0, 1e-12);

  c.parallel_panel = true;
  s = fixture_scene(c);
  ASSERT_EQ(s.quads.size(), 4u);
  const Eigen::Vector3d np = quad_normal(s.quads[3]);
  const bool parallel_to_one = std::abs(std::abs(np.dot(n1)) - 1.0) < 1e-12 || std::abs(std::abs(np.dot(n2)) - 1.0) < 1e-12;
  EXPECT_TRUE(parallel_to_one);
  // offset from its wall, not coplanar
  const FixtureQuad& wall = std::abs(np.dot(n1)) > 0.5 ? s.quads[1] : s.quads[2];
  EXPECT_GT(std::abs((s.quads[3].origin - wall.origin).dot(np)), 0.2);
}

TEST(FixtureScene, SphereInRoomAddsTable) {
  const FixtureScene s = fixture_scene(small("sphere_in_room"));
  ASSERT_EQ(s.spheres.size(), 1u);
  EXPECT_EQ(s.label(s.num_primitives() - 1), "table");
  const double r = s.spheres[0].radius;
  // tessellated sphere area approaches 4 pi r^2 from below
  const double sphere_area = s.mesh(96).area() - fixture_scene(FixtureConfig{}).mesh().area();
  EXPECT_NEAR(sphere_area, 4.0 * M_PI * r * r, 0.01 * 4.0 * M_PI * r * r);
}

TEST(LookAt, TargetProjectsToPrincipalPoint) {
  const Eigen::Vector3d eye(0.3, -0.2, 1.1);
  const Eigen::Vector3d target(-1.0, 2.0, 0.5);
  const CameraView cam = look_at(eye, target, 64, 48, 50.0);
  const Eigen::Vector3d p = cam.world_to_camera(target);
  EXPECT_GT(p.z(), 0.0);
  const Eigen::Vector2d px = cam.project(p);
  EXPECT_NEAR(px.x(), cam.cx(), 1e-9);
  EXPECT_NEAR(px.y(), cam.cy(), 1e-9);
  EXPECT_NEAR((cam.center() - eye).norm(), 0.0, 1e-12);
  // world up maps to image up (negative v)
  const Eigen::Vector2d above = cam.project(cam.world_to_camera(target + Eigen::Vector3d(0, 0, 0.1)));
  EXPECT_LT(above.y(), px.y());
}

TEST(CastScene, DepthNormalAndIdsAgreeWithGeometry) {
  for (const std::string kind : {"box_room", "two_walls", "sphere_in_room"}) {
    const FixtureConfig c = small(kind);
    const FixtureScene s = fixture_scene(c);
    for (const CameraView& cam : fixture_cameras(c)) {
      ScalarMap depth;
      VectorMap normal;
      LabelRaster ids;
      cast_scene(s, cam, depth, normal, ids);
      int hits = 0;
      for (int v = 0; v < cam.height(); ++v) {
        for (int u = 0; u < cam.width(); ++u) {
          const int id = ids(u, v);
          if (id < 0) {
            EXPECT_FALSE(is_valid(depth(u, v)));
            continue;
          }
          ++hits;
          ASSERT_TRUE(is_valid(depth(u, v))) << kind;
          const Eigen::Vector3d pc = depth(u, v) * cam.ray(u, v);
          EXPECT_NEAR(pc.z(), depth(u, v), 1e-12);
          const Eigen::Vector3d pw = cam.camera_to_world(pc);
          EXPECT_TRUE(on_primitive(s, id, pw, 1e-7)) << kind << " " << u << "," << v;
          EXPECT_NEAR(normal(u, v).norm(), 1.0, 1e-9);
          EXPECT_LT(normal(u, v).dot(pc), 0.0);  // faces the camera
        }
      }
      if (kind == "box_room") EXPECT_EQ(hits, cam.width() * cam.height());  // closed room
    }
  }
}

TEST(MakeFixture, ZeroNoisePriorIsBitExact) {
  const Fixture fx = make_fixture(small("box_room"));
  ASSERT_EQ(fx.views.size(), 4u);
  for (const auto& v : fx.views) {
    for (std::size_t i = 0; i < v.gt_depth.size(); ++i) {
      EXPECT_EQ(v.prior_depth[i], v.gt_depth[i]);
    }
  }
}

TEST(MakeFixture, ScaleShiftDistortionInverts) {
  FixtureConfig c = small("box_room");
  c.prior_scale = 2.0;
  c.prior_shift = 0.5;
  const Fixture fx = make_fixture(c);
  for (const auto& v : fx.views) {
    for (std::size_t i = 0; i < v.gt_depth.size(); ++i) {
      EXPECT_NEAR(2.0 * v.prior_depth[i] + 0.5, v.gt_depth[i], 1e-12);
    }
  }
}

TEST(MakeFixture, SmoothNoiseHasRequestedRms) {
  FixtureConfig c = small("box_room");
  c.views = 12;
  c.noise_sigma = 0.02;
  const Fixture fx = make_fixture(c);
  double ss = 0.0;
  double n = 0.0;
  double step_ss = 0.0;
  for (const auto& v : fx.views) {
    for (int y = 0; y < v.gt_depth.height(); ++y) {
      for (int x = 0; x < v.gt_depth.width(); ++x) {
        const double e = v.prior_depth(x, y) - v.gt_depth(x, y);
        ss += e * e;
        n += 1.0;
        if (x > 0) {
          const double de = e - (v.prior_depth(x - 1, y) - v.gt_depth(x - 1, y));
          step_ss += de * de;
        }
      }
    }
  }
  const double rms = std::sqrt(ss / n);
  EXPECT_NEAR(rms, 0.02, 0.006);
  // smooth: neighbouring errors nearly equal
  EXPECT_LT(std::sqrt(step_ss / n), 0.25 * rms);
}

TEST(MakeFixture, SparseSamplesAndOutliers) {
  FixtureConfig c = small("box_room");
  c.outlier_frac = 0.2;
  const Fixture fx = make_fixture(c);
  std::size_t inliers = 0;
  for (const auto& v : fx.views) {
    ASSERT_EQ(v.sparse.samples.size(), 60u);
    ASSERT_EQ(v.sparse_outlier.size(), 60u);
    std::size_t out = 0;
    std::set<std::pair<int, int>> seen;
    for (std::size_t i = 0; i < v.sparse.samples.size(); ++i) {
      const auto& s = v.sparse.samples[i];
      EXPECT_EQ(s.u, std::round(s.u));
      EXPECT_EQ(s.v, std::round(s.v));
      EXPECT_TRUE(seen.insert({static_cast<int>(s.u), static_cast<int>(s.v)}).second);
      const double gt = v.gt_depth(static_cast<int>(s.u), static_cast<int>(s.v));
      if (v.sparse_outlier[i]) {
        ++out;
        const double r = s.depth / gt;
        EXPECT_TRUE((r >= 0.3 && r <= 0.7) || (r >= 1.5 && r <= 3.0)) << r;
      } else {
        EXPECT_EQ(s.depth, gt);
        ++inliers;
      }
    }
    EXPECT_EQ(out, 12u);
  }
  ASSERT_EQ(fx.gt_points.size(), inliers);
  // every inlier point is on the room surface
  for (const auto& p : fx.gt_points) {
    bool on = false;
    for (int id = 0; id < fx.scene.num_primitives() && !on; ++id) on = on_primitive(fx.scene, id, p, 1e-7);
    EXPECT_TRUE(on);
  }
}

TEST(MakeFixture, MasksFollowClassesAndDropCeiling) {
  FixtureConfig c = small("box_room");
  c.views = 6;
  const Fixture fx = make_fixture(c);
  for (std::size_t vi = 0; vi < fx.views.size(); ++vi) {
    const auto& v = fx.views[vi];
    bool has_ceiling = false;
    for (std::size_t k = 0; k < v.masks.size(); ++k) {
      const auto& m = v.masks[k];
      EXPECT_EQ(m.view_id, static_cast<int>(vi));
      EXPECT_DOUBLE_EQ(m.score, 1.0 - 0.05 * static_cast<double>(k));
      has_ceiling |= m.label == "ceiling";
      for (std::size_t i = 0; i < m.mask.size(); ++i) {
        if (!m.mask[i]) continue;
        ASSERT_GE(v.gt_ids[i], 0);
        EXPECT_EQ(fx.scene.label(v.gt_ids[i]), m.label);
      }
    }
    if (vi % 3 == 0) EXPECT_FALSE(has_ceiling) << vi;
  }
}

TEST(MakeFixture, SameSeedSameOutputOtherSeedDiffers) {
  FixtureConfig c = small("two_walls");
  c.noise_sigma = 0.01;
  c.outlier_frac = 0.1;
  const Fixture a = make_fixture(c);
  const Fixture b = make_fixture(c);
  c.seed = 7;
  const Fixture d = make_fixture(c);
  bool differs = false;
  for (std::size_t vi = 0; vi < a.views.size(); ++vi) {
    EXPECT_TRUE(same_bits(a.views[vi].prior_depth.values(), b.views[vi].prior_depth.values()));
    ASSERT_EQ(a.views[vi].sparse.samples.size(), b.views[vi].sparse.samples.size());
    for (std::size_t i = 0; i < a.views[vi].sparse.samples.size(); ++i) {
      EXPECT_EQ(a.views[vi].sparse.samples[i].depth, b.views[vi].sparse.samples[i].depth);
    }
    differs |= !same_bits(a.views[vi].prior_depth.values(), d.views[vi].prior_depth.values());
  }
  EXPECT_TRUE(differs);
}

TEST(MakeFixture, ConfidenceTracksViewingAngle) {
  const Fixture fx = make_fixture(small("two_walls"));
  const auto& cam = fx.cameras[0];
  const auto& v = fx.views[0];
  for (int y = 0; y < cam.height(); ++y) {
    for (int x = 0; x < cam.width(); ++x) {
      if (!is_valid(v.gt_depth(x, y))) {
        EXPECT_FALSE(is_valid(v.confidence(x, y)));
        continue;
      }
      const double cosang = std::abs(v.gt_normal(x, y).dot(cam.ray(x, y).normalized()));
      EXPECT_NEAR(v.confidence(x, y), 1.0 + 2.0 * cosang, 1e-12);
      EXPECT_GE(v.confidence(x, y), 1.0);
      EXPECT_LE(v.confidence(x, y), 3.0);
    }
  }
}

}  // namespace
}  // namespace planesplat
