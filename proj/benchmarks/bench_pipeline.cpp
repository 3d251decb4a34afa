#include <benchmark/benchmark.h>

#include <Eigen/Geometry>

#include <random>

#include "planesplat/fixtures.hpp"
#include "planesplat/fusion.hpp"
#include "planesplat/render.hpp"
#include "planesplat/supervision.hpp"

namespace {

using namespace planesplat;

const Fixture& room() {
  static const Fixture fx = [] {
    FixtureConfig c;
    c.views = 4;
    return make_fixture(c);
  }();
  return fx;
}

// Flattened Gaussians on the room walls, sampled from the ground-truth
// depth of every fixture view.
GaussianCloud surface_cloud(std::size_t n, double opacity) {
  const Fixture& fx = room();
  std::mt19937_64 rng(3);
  GaussianCloud cloud;
  cloud.reserve(n);
  while (cloud.size() < n) {
    const std::size_t vi = rng() % fx.views.size();
    const auto& cam = fx.cameras[vi];
    const auto& view = fx.views[vi];
    const int u = static_cast<int>(rng() % static_cast<unsigned>(cam.width()));
    const int v = static_cast<int>(rng() % static_cast<unsigned>(cam.height()));
    if (!is_valid(view.gt_depth(u, v))) continue;
    Gaussian g;
    g.mu = cam.camera_to_world(view.gt_depth(u, v) * cam.ray(u, v));
    const Eigen::Vector3d n_world = cam.R().transpose() * view.gt_normal(u, v);
    const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), n_world);
    g.rot = Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
    g.log_scale = Eigen::Vector3d(std::log(0.04), std::log(0.04), std::log(0.002));
    g.opacity_logit = std::log(opacity / (1.0 - opacity));
    g.rgb = view.image(u, v);
    cloud.push_back(g);
  }
  return cloud;
}

void BM_Render(benchmark::State& state) {
  const GaussianCloud cloud = surface_cloud(static_cast<std::size_t>(state.range(0)), 0.3);
  const CameraView& cam = room().cameras[0];
  for (auto _ : state) benchmark::DoNotOptimize(render(cloud, cam));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Render)->Arg(5000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_RenderBackward(benchmark::State& state) {
  const GaussianCloud cloud = surface_cloud(static_cast<std::size_t>(state.range(0)), 0.3);
  const CameraView& cam = room().cameras[0];
  RenderTrace trace;
  const RenderOutput out = render(cloud, cam, {}, &trace);
  RenderGradients up(cam.width(), cam.height());
  for (auto& c : up.color.values()) c = Eigen::Vector3d(0.1, -0.2, 0.3);
  for (auto& d : up.plane_dist.values()) d = 0.05;
  for (auto _ : state) benchmark::DoNotOptimize(render_backward(cloud, cam, out, trace, up));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RenderBackward)->Arg(5000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_TsdfIntegrate(benchmark::State& state) {
  const Fixture& fx = room();
  const double voxel = 0.01 * static_cast<double>(state.range(0));
  TsdfVolume vol = TsdfVolume::covering(Eigen::Vector3d(-2, -1.5, 0), Eigen::Vector3d(2, 1.5, 2.5), voxel, 0.1);
  for (auto _ : state) {
    for (std::size_t i = 0; i < fx.views.size(); ++i) {
      tsdf_integrate(vol, fx.views[i].gt_depth, &fx.views[i].image, fx.cameras[i], 4 * voxel);
    }
  }
  state.counters["voxels"] = static_cast<double>(vol.size());
}
BENCHMARK(BM_TsdfIntegrate)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_MarchingCubes(benchmark::State& state) {
  const Fixture& fx = room();
  const double voxel = 0.01 * static_cast<double>(state.range(0));
  TsdfVolume vol = TsdfVolume::covering(Eigen::Vector3d(-2, -1.5, 0), Eigen::Vector3d(2, 1.5, 2.5), voxel, 0.1);
  for (std::size_t i = 0; i < fx.views.size(); ++i) {
    tsdf_integrate(vol, fx.views[i].gt_depth, nullptr, fx.cameras[i], 4 * voxel);
  }
  for (auto _ : state) benchmark::DoNotOptimize(marching_cubes(vol));
}
BENCHMARK(BM_MarchingCubes)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_SurfaceMetrics(benchmark::State& state) {
  const Mesh gt = room().scene.mesh();
  Mesh shifted = gt;
  for (auto& v : shifted.vertices) v.z() += 0.01;
  SurfaceMetricsConfig cfg;
  cfg.samples = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(surface_metrics(shifted, gt, cfg));
}
BENCHMARK(BM_SurfaceMetrics)->Arg(20000)->Arg(200000)->Unit(benchmark::kMillisecond);

void BM_CoplanarityLoss(benchmark::State& state) {
  const Fixture& fx = room();
  const CameraView& cam = fx.cameras[0];
  PlaneLabelMap labels;
  labels.labels = LabelRaster(cam.width(), cam.height(), 0);
  int max_id = 0;
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    labels.labels[i] = fx.views[0].gt_ids[i] + 1;
    max_id = std::max(max_id, labels.labels[i]);
  }
  labels.info.resize(static_cast<std::size_t>(max_id));
  for (auto _ : state) benchmark::DoNotOptimize(coplanarity_loss(fx.views[0].gt_depth, labels, cam));
}
BENCHMARK(BM_CoplanarityLoss)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
