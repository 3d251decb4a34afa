#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>

#include "planesplat/error.hpp"
#include "planesplat/fusion.hpp"
#include "scenes.hpp"

namespace planesplat {
namespace {

TsdfVolume filled(int n, double voxel, const std::function<double(const Eigen::Vector3d&)>& sdf) {
  TsdfVolume v(Eigen::Vector3d::Constant(-0.5 * voxel * (n - 1)), voxel, {n, n, n});
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        v.tsdf[v.index(i, j, k)] = static_cast<float>(sdf(v.center(i, j, k)));
        v.weight[v.index(i, j, k)] = 1.0f;
      }
    }
  }
  return v;
}

TEST(MarchingCubesTable, TrivialConfigsAreEmptyAndCrossedEdgesUsed) {
  const auto& table = marching_cubes_table();
  EXPECT_TRUE(table[0].triangles.empty());
  EXPECT_TRUE(table[255].triangles.empty());
  const int edges[12][2] = {{0, 1}, {1, 2}, {3, 2}, {0, 3}, {4, 5}, {5, 6}, {7, 6}, {4, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  for (int c = 1; c < 255; ++c) {
    std::set<int> used;
    for (const auto& t : table[static_cast<std::size_t>(c)].triangles) {
      for (int e : t) {
        if (e < 12) used.insert(e);
      }
    }
    std::set<int> crossed;
    for (int e = 0; e < 12; ++e) {
      if (((c >> edges[e][0]) & 1) != ((c >> edges[e][1]) & 1)) crossed.insert(e);
    }
    EXPECT_EQ(used, crossed) << c;
  }
  // the single-corner case is one triangle
  EXPECT_EQ(table[1].triangles.size(), 1u);
  // two adjacent corners: a quad
  EXPECT_EQ(table[3].triangles.size(), 2u);
}

TEST(MarchingCubes, AllPositiveVolumeGivesEmptyMesh) {
  const TsdfVolume v = filled(8, 0.1, [](const Eigen::Vector3d&) { return 0.5; });
  EXPECT_TRUE(marching_cubes(v).empty());
}

TEST(MarchingCubes, SphereWithinOneVoxelAndOutwardNormals) {
  const double r = 0.31;
  const double voxel = 0.02;
  const TsdfVolume v = filled(40, voxel, [&](const Eigen::Vector3d& p) { return p.norm() - r; });
  const Mesh m = marching_cubes(v);
  ASSERT_FALSE(m.empty());
  double worst = 0.0;
  for (const auto& p : m.vertices) worst = std::max(worst, std::abs(p.norm() - r));
  EXPECT_LT(worst, voxel);
  for (const auto& t : m.triangles) {
    const Eigen::Vector3d& a = m.vertices[static_cast<std::size_t>(t[0])];
    const Eigen::Vector3d n = (m.vertices[static_cast<std::size_t>(t[1])] - a).cross(m.vertices[static_cast<std::size_t>(t[2])] - a);
    EXPECT_GE(n.dot(a), 0.0);
  }
  EXPECT_NEAR(m.area(), 4.0 * M_PI * r * r, 0.02 * 4.0 * M_PI * r * r);
}

TEST(MarchingCubes, ExactPlaneSdfIsReproduced) {
  const Eigen::Vector3d n = Eigen::Vector3d(0.3, -0.4, 0.866).normalized();
  const TsdfVolume v = filled(20, 0.05, [&](const Eigen::Vector3d& p) { return n.dot(p) - 0.07; });
  const Mesh m = marching_cubes(v);
  ASSERT_FALSE(m.empty());
  for (const auto& p : m.vertices) EXPECT_LT(std::abs(n.dot(p) - 0.07), 1e-6);
}

// every undirected mesh edge is shared by exactly two triangles traversing it
// in opposite directions
TEST(MarchingCubes, RandomClosedVolumeIsWatertightAndConsistentlyWound) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const int n = 12;
  TsdfVolume v = filled(n, 0.1, [&](const Eigen::Vector3d&) { return U(rng); });
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        if (i == 0 || j == 0 || k == 0 || i == n - 1 || j == n - 1 || k == n - 1) v.tsdf[v.index(i, j, k)] = 1.0f;
      }
    }
  }
  const Mesh m = marching_cubes(v);
  ASSERT_FALSE(m.empty());
  std::map<std::pair<int, int>, int> directed;
  for (const auto& t : m.triangles) {
    for (int e = 0; e < 3; ++e) ++directed[{t[static_cast<std::size_t>(e)], t[static_cast<std::size_t>((e + 1) % 3)]}];
  }
  for (const auto& [e, count] : directed) {
    EXPECT_EQ(count, 1);
    const auto it = directed.find({e.second, e.first});
    ASSERT_NE(it, directed.end());
    EXPECT_EQ(it->second, 1);
  }
}

TEST(Tsdf, FrontoPlaneZeroCrossingWithinOneVoxel) {
  const CameraView cam = testing::identity_camera(64, 48, 50.0, 31.5, 23.5);
  const ScalarMap depth(64, 48, 2.0);
  TsdfVolume v = TsdfVolume::covering({-0.8, -0.6, 1.6}, {0.8, 0.6, 2.4}, 0.02);
  tsdf_integrate(v, depth, nullptr, cam, 0.08);
  const Mesh m = marching_cubes(v);
  ASSERT_FALSE(m.empty());
  for (const auto& p : m.vertices) EXPECT_LT(std::abs(p.z() - 2.0), 0.02);
}

TEST(Tsdf, EmptyDepthLeavesVolumeUnchanged) {
  const CameraView cam = testing::identity_camera(16, 12, 10.0, 7.5, 5.5);
  TsdfVolume v = TsdfVolume::covering({-1, -1, 0.5}, {1, 1, 3}, 0.1);
  const TsdfVolume before = v;
  tsdf_integrate(v, ScalarMap(16, 12, kInvalid), nullptr, cam, 0.3);
  EXPECT_EQ(v.tsdf, before.tsdf);
  EXPECT_EQ(v.weight, before.weight);
}

TEST(Tsdf, TwoConsistentViewsDoubleWeightsOnly) {
  const CameraView cam = testing::identity_camera(32, 24, 25.0, 15.5, 11.5);
  const ScalarMap depth(32, 24, 1.5);
  TsdfVolume one = TsdfVolume::covering({-0.6, -0.5, 1.0}, {0.6, 0.5, 2.0}, 0.05);
  TsdfVolume two = one;
  tsdf_integrate(one, depth, nullptr, cam, 0.2);
  tsdf_integrate(two, depth, nullptr, cam, 0.2);
  tsdf_integrate(two, depth, nullptr, cam, 0.2);
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_FLOAT_EQ(two.weight[i], 2.0f * one.weight[i]);
    EXPECT_NEAR(two.tsdf[i], one.tsdf[i], 1e-6);
  }
  const Mesh a = marching_cubes(one);
  const Mesh b = marching_cubes(two);
  ASSERT_EQ(a.vertices.size(), b.vertices.size());
  for (std::size_t i = 0; i < a.vertices.size(); ++i) EXPECT_LT((a.vertices[i] - b.vertices[i]).norm(), 1e-6);
}

TEST(KdTree, MatchesBruteForce) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 2000; ++i) pts.emplace_back(U(rng), U(rng), 0.1 * U(rng));
  pts.push_back(pts[17]);  // duplicate: the lower index wins
  const KdTree tree(pts);
  for (int q = 0; q < 300; ++q) {
    const Eigen::Vector3d p(U(rng), U(rng), U(rng));
    std::size_t best = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if ((pts[i] - p).squaredNorm() < (pts[best] - p).squaredNorm()) best = i;
    }
    const auto hit = tree.nearest(p);
    EXPECT_EQ(hit.index, best);
    EXPECT_DOUBLE_EQ(hit.dist2, (pts[best] - p).squaredNorm());
  }
  EXPECT_EQ(tree.nearest(pts[17]).index, 17u);
}

Mesh square(double z, double size = 1.0) {
  Mesh m;
  m.vertices = {{0, 0, z}, {size, 0, z}, {size, size, z}, {0, size, z}};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

TEST(SurfaceMetrics, IdenticalMeshes) {
  SurfaceMetricsConfig cfg;
  cfg.samples = 20000;
  const MetricsReport r = surface_metrics(square(0.0), square(0.0), cfg);
  EXPECT_EQ(r.acc_cm, 0.0);
  EXPECT_EQ(r.comp_cm, 0.0);
  EXPECT_EQ(r.cd_cm, 0.0);
  EXPECT_DOUBLE_EQ(r.f1_pct, 100.0);
  EXPECT_DOUBLE_EQ(r.nc_pct, 100.0);
}

TEST(SurfaceMetrics, ParallelPlanesThreeCentimetersApart) {
  const MetricsReport r = surface_metrics(square(0.0), square(0.03));
  EXPECT_NEAR(r.acc_cm, 3.0, 0.03);
  EXPECT_NEAR(r.comp_cm, 3.0, 0.03);
  EXPECT_NEAR(r.cd_cm, 3.0, 0.03);
  EXPECT_DOUBLE_EQ(r.f1_pct, 100.0);
  EXPECT_NEAR(r.nc_pct, 100.0, 1e-9);
}

TEST(SurfaceMetrics, ParallelPlanesTenCentimetersApart) {
  SurfaceMetricsConfig cfg;
  cfg.samples = 20000;
  const MetricsReport r = surface_metrics(square(0.0), square(0.10), cfg);
  EXPECT_EQ(r.f1_pct, 0.0);
  EXPECT_NEAR(r.cd_cm, 10.0, 0.1);
}

TEST(SurfaceMetrics, SwappingArgumentsSwapsAccAndComp) {
  Mesh a = square(0.0);
  Mesh b = square(0.02, 0.7);
  SurfaceMetricsConfig cfg;
  cfg.samples = 5000;
  cfg.seed = 3;
  const MetricsReport ab = surface_metrics(a, b, cfg);
  const MetricsReport ba = surface_metrics(b, a, cfg);
  EXPECT_EQ(ab.acc_cm, ba.comp_cm);
  EXPECT_EQ(ab.comp_cm, ba.acc_cm);
  EXPECT_EQ(ab.cd_cm, ba.cd_cm);
  EXPECT_EQ(ab.f1_pct, ba.f1_pct);
  EXPECT_GT(ab.acc_cm, ab.comp_cm);  // a extends beyond b
}

TEST(SurfaceMetrics, PerpendicularNormalsGiveZeroConsistency) {
  Mesh wall;
  wall.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {0, 0, 1}};
  wall.triangles = {{0, 1, 2}, {0, 2, 3}};
  SurfaceMetricsConfig cfg;
  cfg.samples = 2000;
  EXPECT_NEAR(surface_metrics(square(0.0), wall, cfg).nc_pct, 0.0, 1e-9);
  EXPECT_THROW((void)surface_metrics(Mesh{}, wall, cfg), InvalidArgument);
}

TEST(SampleSurface, AreaUniformAndOnSurface) {
  Mesh m = square(0.0);
  // a second, four times larger square far away
  for (const auto& p : square(0.0, 2.0).vertices) m.vertices.push_back(p + Eigen::Vector3d(5, 0, 0));
  m.triangles.push_back({4, 5, 6});
  m.triangles.push_back({4, 6, 7});
  const SurfaceSamples s = sample_surface(m, 50000, 1);
  int far = 0;
  for (const auto& p : s.points) {
    EXPECT_EQ(p.z(), 0.0);
    far += p.x() > 3.0;
  }
  EXPECT_NEAR(far / 50000.0, 0.8, 0.01);
}

TEST(ImageMetrics, Examples) {
  const VectorMap a(16, 16, Eigen::Vector3d::Constant(0.5));
  const VectorMap b(16, 16, Eigen::Vector3d::Constant(0.6));
  const ImageMetrics same = image_metrics(a, a);
  EXPECT_DOUBLE_EQ(same.psnr_db, 99.0);
  EXPECT_DOUBLE_EQ(same.ssim, 1.0);
  EXPECT_NEAR(image_metrics(a, b).psnr_db, 20.0, 1e-9);
}

TEST(MetricsJson, HasAllFieldsAndNullForMissingImageMetrics) {
  MetricsReport r;
  r.cd_cm = 1.5;
  const std::string j = metrics_json(r);
  for (const char* k : {"acc_cm", "comp_cm", "cd_cm", "f1_pct", "nc_pct", "psnr_db", "ssim"}) {
    EXPECT_NE(j.find(std::string("\"") + k + "\""), std::string::npos) << k;
  }
  EXPECT_NE(j.find("\"psnr_db\": null"), std::string::npos);
}

}  // namespace
}  // namespace planesplat
