#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include "planesplat/error.hpp"
#include "planesplat/optimizer.hpp"
#include "scenes.hpp"

namespace planesplat {
namespace {

using testing::fronto_gaussian;
using testing::identity_camera;

TEST(Schedule, DefaultStarts) {
  const Schedule s;
  EXPECT_EQ(s.total_iters, 30000);
  const ActiveTerms a = s.active(6999);
  EXPECT_FALSE(a.dn || a.rd || a.p || a.rn);
  const ActiveTerms b = s.active(7000);
  EXPECT_TRUE(b.dn && b.rd);
  EXPECT_FALSE(b.p || b.rn);
  EXPECT_FALSE(s.active(13999).p);
  EXPECT_TRUE(s.active(14000).p);
  EXPECT_FALSE(s.active(19999).rn);
  EXPECT_TRUE(s.active(20000).rn);
}

TEST(Schedule, ScaledKeepsRatios) {
  const Schedule full = Schedule::scaled(30000);
  EXPECT_EQ(full.start_dn, 7000);
  EXPECT_EQ(full.start_rd, 7000);
  EXPECT_EQ(full.start_p, 14000);
  EXPECT_EQ(full.start_rn, 20000);
  const Schedule s = Schedule::scaled(3000);
  EXPECT_EQ(s.start_dn, 700);
  EXPECT_EQ(s.start_p, 1400);
  EXPECT_EQ(s.start_rn, 2000);
  EXPECT_NO_THROW(s.validate());
}

TEST(Schedule, ValidationRejectsStartsOutsideRange) {
  Schedule s = Schedule::scaled(100);
  s.start_rn = 101;
  EXPECT_THROW(s.validate(), ValidationError);
  s = Schedule::scaled(100);
  s.start_dn = -1;
  EXPECT_THROW(s.validate(), ValidationError);
}

TEST(LearningRates, ExponentialDecayEndpoints) {
  const LearningRates lr;
  EXPECT_DOUBLE_EQ(lr.mu_at(0, 1000), 1.6e-4);
  EXPECT_NEAR(lr.mu_at(1000, 1000), 1.6e-6, 1e-18);
  EXPECT_NEAR(lr.mu_at(500, 1000), std::sqrt(1.6e-4 * 1.6e-6), 1e-15);
}

TEST(SelectView, SingleView) {
  for (int it = 0; it < 20; ++it) EXPECT_EQ(select_view(it, 1, 5), 0);
}

TEST(SelectView, EveryViewOncePerEpoch) {
  const int n = 7;
  for (int epoch = 0; epoch < 5; ++epoch) {
    std::set<int> seen;
    for (int k = 0; k < n; ++k) seen.insert(select_view(epoch * n + k, n, 11));
    EXPECT_EQ(static_cast<int>(seen.size()), n);
  }
}

TEST(SelectView, ReproducibleAndSeedDependent) {
  std::vector<int> a, b, c;
  for (int it = 0; it < 60; ++it) {
    a.push_back(select_view(it, 6, 3));
    b.push_back(select_view(it, 6, 3));
    c.push_back(select_view(it, 6, 4));
  }
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

GaussianCloud random_cloud(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  GaussianCloud c;
  for (int i = 0; i < n; ++i) {
    Gaussian g;
    g.mu = {N(rng), N(rng), 3 + N(rng)};
    g.log_scale = {N(rng), N(rng), N(rng)};
    g.rot = Eigen::Vector4d(N(rng), N(rng), N(rng), N(rng)).normalized();
    g.opacity_logit = N(rng);
    g.rgb = {N(rng), N(rng), N(rng)};
    c.push_back(g);
  }
  return c;
}

GaussianGradients random_grads(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  GaussianGradients g(n);
  for (std::size_t i = 0; i < n; ++i) {
    g.mu[i] = {N(rng), N(rng), N(rng)};
    g.log_scale[i] = {N(rng), N(rng), N(rng)};
    g.rot[i] = {N(rng), N(rng), N(rng), N(rng)};
    g.opacity_logit[i] = N(rng);
    g.rgb[i] = {N(rng), N(rng), N(rng)};
  }
  return g;
}

TEST(Adam, FirstStepMovesBySignTimesRate) {
  GaussianCloud c = random_cloud(5, 1);
  const GaussianCloud before = c;
  const GaussianGradients g = random_grads(5, 2);
  Adam adam(5);
  LearningRates lr;
  adam.step(c, g, lr, 1e-3);
  // bias-corrected first moment / sqrt(second) = g / |g|
  for (std::size_t i = 0; i < 5; ++i) {
    for (int k = 0; k < 3; ++k) {
      EXPECT_NEAR(c.mu[i][k] - before.mu[i][k], -1e-3 * std::copysign(1.0, g.mu[i][k]), 1e-12);
      EXPECT_NEAR(c.log_scale[i][k] - before.log_scale[i][k], -lr.log_scale * std::copysign(1.0, g.log_scale[i][k]),
                  1e-12);
      EXPECT_NEAR(c.rgb[i][k] - before.rgb[i][k], -lr.rgb * std::copysign(1.0, g.rgb[i][k]), 1e-12);
    }
    EXPECT_NEAR(c.opacity_logit[i] - before.opacity_logit[i], -lr.opacity * std::copysign(1.0, g.opacity_logit[i]),
                1e-12);
  }
}

TEST(Adam, QuaternionsStayUnitAndScalesPositive) {
  GaussianCloud c = random_cloud(20, 3);
  Adam adam(20);
  LearningRates lr;
  lr.rot = 0.3;  // large steps stress renormalization
  for (int s = 0; s < 50; ++s) {
    adam.step(c, random_grads(20, 100 + static_cast<std::uint64_t>(s)), lr, 1e-3);
    for (std::size_t i = 0; i < 20; ++i) {
      EXPECT_NEAR(c.rot[i].norm(), 1.0, 1e-6);
      EXPECT_TRUE((c.at(i).scale().array() > 0.0).all());
    }
  }
  EXPECT_EQ(adam.steps(), 50);
}

// A fronto plane at z = 2 seen by one camera, with exact priors.
struct PlaneFixture {
  CameraView cam = identity_camera(32, 24, 30.0, 15.5, 11.5);
  GaussianCloud scene;
  VectorMap image;
  ScalarMap depth;
  VectorMap normal;
  MaskMap lt;
  MaskMap conf;
  PlaneLabelMap labels;

  PlaneFixture() {
    for (int j = -4; j <= 4; ++j) {
      for (int i = -6; i <= 6; ++i) {
        // a slight tilt and depth offset give the geometric terms work to do
        scene.push_back(fronto_gaussian({0.18 * i, 0.18 * j, 2.0 + 0.03 * ((i + j) % 2)}, 0.12, 0.03, 0.5,
                                        {0.3, 0.3, 0.3}));
      }
    }
    image = VectorMap(32, 24, Eigen::Vector3d(0.6, 0.5, 0.4));
    depth = ScalarMap(32, 24, 2.0);
    normal = VectorMap(32, 24, Eigen::Vector3d(0, 0, -1));
    lt = MaskMap(32, 24, 1);
    conf = MaskMap(32, 24, 1);
    labels.labels = LabelRaster(32, 24, 1);
    labels.info.push_back({"wall", Eigen::Vector3d(0, 0, -1), 1.0, 32 * 24});
  }

  [[nodiscard]] TrainView view() const { return {&cam, {&image, &depth, &normal, &lt, &conf, &labels}}; }
};

TrainConfig small_config(int iters) {
  TrainConfig cfg;
  cfg.schedule = Schedule::scaled(iters);
  cfg.seed = 9;
  return cfg;
}

TEST(Train, LossDecreasesOnAFeasiblePlane) {
  const PlaneFixture f;
  const TrainView v = f.view();
  TrainConfig cfg = small_config(2001);
  // keep every term active so the comparison uses one objective
  cfg.schedule.start_dn = cfg.schedule.start_p = cfg.schedule.start_rd = cfg.schedule.start_rn = 0;
  const TrainResult r = train(f.scene, std::span<const TrainView>(&v, 1), cfg);
  ASSERT_EQ(r.log.size(), 2001u);
  EXPECT_LT(r.log[2000].loss.total, r.log[0].loss.total);
  EXPECT_LT(r.log[2000].loss.total, 0.5 * r.log[0].loss.total);
}

TEST(Train, NoTermContributesBeforeItsStart) {
  const PlaneFixture f;
  const TrainView v = f.view();
  TrainConfig cfg = small_config(60);
  std::vector<std::string> messages;
  cfg.log = [&](const std::string& m) { messages.push_back(m); };
  const TrainResult r = train(f.scene, std::span<const TrainView>(&v, 1), cfg);
  const Schedule& s = cfg.schedule;
  for (const auto& row : r.log) {
    EXPECT_EQ(row.active.dn, row.iteration >= s.start_dn);
    EXPECT_EQ(row.active.p, row.iteration >= s.start_p);
    EXPECT_EQ(row.active.rn, row.iteration >= s.start_rn);
    const LossBreakdown expect = total_loss(row.loss, effective_weights(cfg.weights, row.active));
    EXPECT_NEAR(row.loss.total, expect.total, 1e-12);
  }
  auto logged = [&](const std::string& needle) {
    for (const auto& m : messages) {
      if (m.find(needle) != std::string::npos) return true;
    }
    return false;
  };
  EXPECT_TRUE(logged("iteration 14: l_dn active"));
  EXPECT_TRUE(logged("iteration 14: l_rd active"));
  EXPECT_TRUE(logged("iteration 28: l_p active"));
  EXPECT_TRUE(logged("iteration 40: l_rn active"));
}

TEST(Train, FixedSeedGivesIdenticalLog) {
  const PlaneFixture f;
  PlaneFixture g;
  g.cam = CameraView(1, 32, 24, f.cam.K(), Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.05, 0, 0));
  const std::vector<TrainView> views = {f.view(), g.view()};
  auto run = [&] {
    std::ostringstream ss;
    const TrainResult r = train(f.scene, views, small_config(40));
    write_loss_csv(ss, r.log);
    return std::make_pair(ss.str(), r.scene);
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_EQ(a.first.substr(0, a.first.find('\n')),
            "iteration,view,l_rgb,l_s,l_dn,l_p,l_rd,l_rn,total,active_dn,active_p,active_rd,active_rn");
}

TEST(Train, CheckpointsAtInterval) {
  const PlaneFixture f;
  const TrainView v = f.view();
  TrainConfig cfg = small_config(10);
  cfg.ckpt_every = 4;
  std::vector<int> at;
  cfg.checkpoint = [&](int it, const GaussianCloud& s) {
    at.push_back(it);
    EXPECT_EQ(s.size(), f.scene.size());
  };
  (void)train(f.scene, std::span<const TrainView>(&v, 1), cfg);
  EXPECT_EQ(at, (std::vector<int>{4, 8, 10}));
}

TEST(Train, NonFiniteLossAbortsWithDump) {
  const PlaneFixture f;
  const TrainView v = f.view();
  GaussianCloud bad = f.scene;
  bad.rgb[50] = Eigen::Vector3d::Constant(std::nan(""));
  TrainConfig cfg = small_config(5);
  const auto dir = std::filesystem::temp_directory_path() / "planesplat_nonfinite_test";
  std::filesystem::remove_all(dir);
  cfg.dump_dir = dir;
  EXPECT_THROW((void)train(bad, std::span<const TrainView>(&v, 1), cfg), NonFiniteLossError);
  EXPECT_TRUE(std::filesystem::exists(dir / "nonfinite_iter0_view0" / "color.pfm"));
  EXPECT_TRUE(std::filesystem::exists(dir / "nonfinite_iter0_view0" / "depth.pfm"));
  std::filesystem::remove_all(dir);
}

TEST(Train, RejectsMissingInputs) {
  const PlaneFixture f;
  TrainView v = f.view();
  EXPECT_THROW((void)train(GaussianCloud{}, std::span<const TrainView>(&v, 1), small_config(3)), ValidationError);
  v.sup.image = nullptr;
  EXPECT_THROW((void)train(f.scene, std::span<const TrainView>(&v, 1), small_config(3)), ValidationError);
}

}  // namespace
}  // namespace planesplat
