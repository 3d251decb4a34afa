#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "planesplat/geometry.hpp"
#include "planesplat/lp3.hpp"
#include "planesplat/mesh.hpp"
#include "planesplat/priors.hpp"
#include "planesplat/raster.hpp"

namespace planesplat {

/// Rectangle origin + a * e1 + b * e2 with a, b in [0, 1]; e1 and e2 are
/// orthogonal.
struct FixtureQuad {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d e1 = Eigen::Vector3d::UnitX();
  Eigen::Vector3d e2 = Eigen::Vector3d::UnitY();
  Eigen::Vector3d color = Eigen::Vector3d::Constant(0.5);
  std::string label;  ///< proposal class
};

struct FixtureSphere {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 0.25;
  Eigen::Vector3d color = Eigen::Vector3d::Constant(0.5);
  std::string label;
};

/// Primitives in a world frame with z up.  Primitive ids number the quads
/// first, then the spheres.
struct FixtureScene {
  std::vector<FixtureQuad> quads;
  std::vector<FixtureSphere> spheres;

  [[nodiscard]] int num_primitives() const noexcept {
    return static_cast<int>(quads.size() + spheres.size());
  }
  [[nodiscard]] const std::string& label(int id) const;
  [[nodiscard]] Mesh mesh(int sphere_segments = 48) const;
};

struct FixtureConfig {
  std::string kind = "box_room";  ///< box_room, two_walls or sphere_in_room
  int views = 20;
  int width = 128;
  int height = 96;
  double focal = 70.0;
  double noise_sigma = 0.0;       ///< RMS of the smooth prior depth noise in metres
  double noise_wavelength_px = 48.0;
  double prior_scale = 1.0;       ///< prior = (depth + noise - shift) / scale
  double prior_shift = 0.0;
  int sparse_per_view = 150;
  double outlier_frac = 0.0;      ///< sparse samples replaced by gross errors
  bool parallel_panel = false;    ///< two_walls: add a panel in front of one wall
  bool merge_walls = true;        ///< one "wall" proposal for every wall
  int drop_ceiling_every = 3;     ///< omit the ceiling proposal in every n-th view (0 keeps all)
  std::uint64_t seed = 0;

  /// Throws ValidationError for an unknown kind or out-of-range values.
  void validate() const;
};

/// One rendered view of a fixture.  Normals are in the camera frame and face
/// the camera; ids hold the primitive hit per pixel (-1 for none).
struct FixtureView {
  VectorMap image;
  ScalarMap gt_depth;
  VectorMap gt_normal;
  LabelRaster gt_ids;
  ScalarMap prior_depth;   ///< relative, before alignment
  VectorMap prior_normal;
  ScalarMap confidence;    ///< 1 + 2 |cos| of the viewing angle, NaN off-surface
  std::vector<MaskProposal> masks;
  SparseDepth sparse;
  std::vector<std::uint8_t> sparse_outlier;  ///< parallel to sparse.samples
};

struct Fixture {
  FixtureConfig config;
  FixtureScene scene;
  std::vector<CameraView> cameras;
  std::vector<FixtureView> views;
  Mesh gt_mesh;
  std::vector<Eigen::Vector3d> gt_points;  ///< inlier sparse samples in world coordinates
};

/// Camera at `eye` looking at `target`, world up +z.
[[nodiscard]] CameraView look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, int width, int height,
                                 double focal, int id = 0);

[[nodiscard]] FixtureScene fixture_scene(const FixtureConfig& cfg);
[[nodiscard]] std::vector<CameraView> fixture_cameras(const FixtureConfig& cfg);

/// Nearest positive hit along every pixel ray.  Depth is camera z.
void cast_scene(const FixtureScene& scene, const CameraView& cam, ScalarMap& depth, VectorMap& normal,
                LabelRaster& ids, VectorMap* color = nullptr);

[[nodiscard]] Fixture make_fixture(const FixtureConfig& cfg);

}  // namespace planesplat
