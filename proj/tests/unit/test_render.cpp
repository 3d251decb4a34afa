#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "planesplat/render.hpp"
#include "scenes.hpp"

namespace planesplat {
namespace {

using testing::check_gradients;
using testing::fronto_gaussian;
using testing::identity_camera;

GaussianCloud single(const Gaussian& g) {
  GaussianCloud c;
  c.push_back(g);
  return c;
}

TEST(Render, OpaqueFrontoPlaneCoversFrame) {
  const CameraView cam = identity_camera(32, 24, 20.0, 15.5, 11.5);
  const auto scene = single(fronto_gaussian({0, 0, 2}, 100.0, 1e-3, 0.9999, {0.2, 0.5, 0.7}));
  const RenderOutput out = render(scene, cam);
  for (int v = 0; v < cam.height(); ++v) {
    for (int u = 0; u < cam.width(); ++u) {
      const double acc = out.acc(u, v);
      EXPECT_NEAR(acc, 1.0, 0.0101);  // alpha clip at 0.99
      EXPECT_TRUE(out.color(u, v).isApprox(acc * Eigen::Vector3d(0.2, 0.5, 0.7), 1e-9));
      EXPECT_TRUE(out.gs_normal(u, v).normalized().isApprox(Eigen::Vector3d(0, 0, -1), 1e-12));
      EXPECT_NEAR(out.plane_dist(u, v) / acc, -2.0, 1e-9);
      EXPECT_NEAR(out.depth(u, v), 2.0, 1e-9);
    }
  }
}

TEST(Render, TwoHalfTransparentGaussiansComposite) {
  const CameraView cam = identity_camera(8, 8, 8.0, 3.5, 3.5);
  GaussianCloud scene;
  scene.push_back(fronto_gaussian({0, 0, 2}, 1e4, 1e-3, 0.5, {1, 0, 0}));
  scene.push_back(fronto_gaussian({0, 0, 2}, 1e4, 1e-3, 0.5, {1, 0, 0}));
  const RenderOutput out = render(scene, cam);
  // 0.5 + 0.5 * 0.5
  EXPECT_NEAR(out.acc(3, 3), 0.75, 1e-6);
  EXPECT_NEAR(out.color(0, 7).x(), 0.75, 1e-6);
}

TEST(Render, UncoveredPixelHasNoDepth) {
  const CameraView cam = identity_camera(64, 64, 50.0, 31.5, 31.5);
  const auto scene = single(fronto_gaussian({0, 0, 2}, 0.02, 1e-3, 0.9, {1, 1, 1}));
  const RenderOutput out = render(scene, cam);
  EXPECT_EQ(out.acc(0, 0), 0.0);
  EXPECT_TRUE(std::isnan(out.depth(0, 0)));
  EXPECT_GT(out.acc(31, 31), 0.5);
}

TEST(Render, EmptySceneRendersNothing) {
  const CameraView cam = identity_camera(8, 8, 8.0, 3.5, 3.5);
  const RenderOutput out = render(GaussianCloud{}, cam);
  for (std::size_t i = 0; i < out.acc.size(); ++i) {
    EXPECT_EQ(out.acc[i], 0.0);
    EXPECT_TRUE(std::isnan(out.depth[i]));
  }
}

TEST(Render, GaussianBehindCameraIsCulled) {
  const CameraView cam = identity_camera(8, 8, 8.0, 3.5, 3.5);
  const auto scene = single(fronto_gaussian({0, 0, -1}, 10.0, 1e-3, 0.9, {1, 1, 1}));
  const RenderOutput out = render(scene, cam);
  EXPECT_EQ(out.acc(4, 4), 0.0);
}

TEST(Render, SlantedPlaneDepthMatchesRayPlaneIntersection) {
  const CameraView cam = identity_camera(40, 30, 30.0, 19.5, 14.5);
  Gaussian g;
  g.mu = Eigen::Vector3d(0.1, -0.05, 2.5);
  const Eigen::Vector3d n = Eigen::Vector3d(0.3, -0.2, -1.0).normalized();
  g.rot = quaternion_between(Eigen::Vector3d::UnitZ(), n);
  g.log_scale = Eigen::Vector3d(std::log(3.0), std::log(2.5), std::log(1e-4));
  g.opacity_logit = logit(0.95);
  g.rgb = Eigen::Vector3d::Constant(0.5);
  const RenderOutput out = render(single(g), cam);
  int covered = 0;
  for (int v = 0; v < cam.height(); ++v) {
    for (int u = 0; u < cam.width(); ++u) {
      if (!is_valid(out.depth(u, v))) continue;
      ++covered;
      const Eigen::Vector3d ray = cam.ray(u, v);
      const double expected = n.dot(g.mu) / n.dot(ray);
      EXPECT_NEAR(out.depth(u, v), expected, 1e-5);
    }
  }
  EXPECT_GT(covered, 600);
}

TEST(Render, DepthFromPlaneExamples) {
  const CameraView cam = identity_camera(200, 100, 100.0, 50.0, 50.0);
  RenderOutput out{VectorMap(200, 100, Eigen::Vector3d(0, 0, -1)), VectorMap(200, 100, Eigen::Vector3d(0, 0, -1)),
                   ScalarMap(200, 100, -2.0), ScalarMap(200, 100, kInvalid), ScalarMap(200, 100, 1.0)};
  out.gs_normal(60, 60) = Eigen::Vector3d(1, 0, 0);  // perpendicular to the principal ray
  const ScalarMap depth = depth_from_plane(out, cam);
  EXPECT_DOUBLE_EQ(depth(50, 50), 2.0);
  // K^-1 p~ = (1, 0, 1) at (150, 50): delta / (N . ray) = -2 / -1
  EXPECT_DOUBLE_EQ(depth(150, 50), 2.0);
  EXPECT_TRUE(std::isnan(depth(60, 60)));
}

TEST(Render, IsDeterministic) {
  const auto scene = testing::three_gaussian_scene();
  const CameraView cam = testing::small_camera();
  const RenderOutput a = render(scene, cam);
  const RenderOutput b = render(scene, cam);
  for (std::size_t i = 0; i < a.acc.size(); ++i) {
    EXPECT_EQ(std::memcmp(&a.acc[i], &b.acc[i], sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(a.color[i].data(), b.color[i].data(), 3 * sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(&a.plane_dist[i], &b.plane_dist[i], sizeof(double)), 0);
  }
}

TEST(Render, AccumulatedWeightIsMonotoneInOpacity) {
  const CameraView cam = testing::small_camera();
  auto scene = testing::three_gaussian_scene();
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> pick(0, scene.size() - 1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t i = pick(rng);
    const RenderOutput before = render(scene, cam);
    scene.opacity_logit[i] += 0.3;
    const RenderOutput after = render(scene, cam);
    for (std::size_t p = 0; p < before.acc.size(); ++p) {
      EXPECT_GE(after.acc[p], before.acc[p] - 1e-12);
      EXPECT_LE(after.acc[p], 1.0 + 1e-6);
    }
  }
}

TEST(RenderBackward, ZeroUpstreamGivesZeroGradient) {
  const auto scene = testing::three_gaussian_scene();
  const CameraView cam = testing::small_camera();
  RenderTrace trace;
  const RenderOutput out = render(scene, cam, {}, &trace);
  const RenderGradients up(cam.width(), cam.height());
  const GaussianGradients g = render_backward(scene, cam, out, trace, up);
  for (std::size_t k = 0; k < scene.size() * testing::kParamsPerGaussian; ++k) {
    EXPECT_EQ(testing::grad_at(g, k), 0.0);
  }
}

TEST(RenderBackward, ColorGradientOfOpaqueGaussian) {
  const CameraView cam = identity_camera(4, 4, 4.0, 1.5, 1.5);
  const auto scene = single(fronto_gaussian({0, 0, 2}, 1e4, 1e-3, 0.9999, {0.3, 0.3, 0.3}));
  RenderTrace trace;
  const RenderOutput out = render(scene, cam, {}, &trace);
  RenderGradients up(4, 4);
  up.color(1, 1) = Eigen::Vector3d::Ones();
  const GaussianGradients g = render_backward(scene, cam, out, trace, up);
  EXPECT_TRUE(g.rgb[0].isApprox(Eigen::Vector3d::Constant(0.99), 1e-6));
}

TEST(RenderBackward, MatchesFiniteDifferencesOnAllChannels) {
  const auto scene = testing::three_gaussian_scene();
  const CameraView cam = testing::small_camera();
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 1.0);
  RenderGradients up(cam.width(), cam.height());
  for (std::size_t i = 0; i < up.acc.size(); ++i) {
    up.color[i] = Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
    up.gs_normal[i] = Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
    up.plane_dist[i] = normal(rng);
    up.acc[i] = normal(rng);
    up.depth[i] = normal(rng);
  }
  auto loss = [&](const GaussianCloud& s) {
    const RenderOutput o = render(s, cam);
    double total = 0.0;
    for (std::size_t i = 0; i < o.acc.size(); ++i) {
      total += up.color[i].dot(o.color[i]) + up.gs_normal[i].dot(o.gs_normal[i]) + up.plane_dist[i] * o.plane_dist[i] +
               up.acc[i] * o.acc[i];
      if (is_valid(o.depth[i])) total += up.depth[i] * o.depth[i];
    }
    return total;
  };
  RenderTrace trace;
  const RenderOutput out = render(scene, cam, {}, &trace);
  const GaussianGradients analytic = render_backward(scene, cam, out, trace, up);
  const auto result = check_gradients(scene, analytic, loss);
  EXPECT_LT(result.max_rel_error, 1e-3) << testing::param_name(result.worst_param) << " analytic "
                                         << result.worst_analytic << " numeric " << result.worst_numeric;
}

}  // namespace
}  // namespace planesplat
