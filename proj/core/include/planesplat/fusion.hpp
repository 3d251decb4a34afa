#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "planesplat/geometry.hpp"
#include "planesplat/mesh.hpp"
#include "planesplat/raster.hpp"

namespace planesplat {

/// Dense truncated signed distance grid.  Voxel (i, j, k) has its center at
/// origin + voxel_size * (i, j, k); positive values are in front of surfaces.
struct TsdfVolume {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  double voxel_size = 0.02;
  std::array<int, 3> dims{0, 0, 0};
  std::vector<float> tsdf;    ///< in [-1, 1]
  std::vector<float> weight;  ///< >= 0
  std::vector<Eigen::Vector3f> color;

  TsdfVolume() = default;
  TsdfVolume(const Eigen::Vector3d& origin, double voxel_size, std::array<int, 3> dims);
  /// Grid covering [lo, hi] with `margin` added on every side.
  [[nodiscard]] static TsdfVolume covering(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi, double voxel_size,
                                           double margin = 0.0);

  [[nodiscard]] std::size_t size() const noexcept { return tsdf.size(); }
  [[nodiscard]] std::size_t index(int i, int j, int k) const noexcept {
    return (static_cast<std::size_t>(k) * static_cast<std::size_t>(dims[1]) + static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(dims[0]) +
           static_cast<std::size_t>(i);
  }
  [[nodiscard]] Eigen::Vector3d center(int i, int j, int k) const {
    return origin + voxel_size * Eigen::Vector3d(i, j, k);
  }
};

/// Integrates one depth map (z-depth, NaN = missing).  Voxels projecting to a
/// valid pixel with sdf = depth - z > -trunc_m get clamp(sdf / trunc_m, -1, 1)
/// averaged in with unit weight.  `color` may be null.
void tsdf_integrate(TsdfVolume& vol, const ScalarMap& depth, const VectorMap* color, const CameraView& cam,
                    double trunc_m);

/// Zero level set of the volume.  Cubes with any corner of weight <=
/// min_weight are skipped.  Triangles are wound so normals point towards
/// positive values.
[[nodiscard]] Mesh marching_cubes(const TsdfVolume& vol, float min_weight = 0.0f);

/// Triangulation of one corner sign configuration.  Indices 0-11 are cube
/// edges; 12 + k is the centroid of centroid_loops[k], used for loops that
/// cannot be fanned without a diagonal lying in a cube face.
struct CubeCase {
  std::vector<std::array<int, 3>> triangles;
  std::vector<std::vector<int>> centroid_loops;
};

/// Table for the 256 configurations (bit i set when corner i is inside).
/// Corners 0-3 lie on z = 0 counter clockwise from the origin, 4-7 above
/// them; edges 0-3 and 4-7 run along those rings, 8-11 are vertical.
[[nodiscard]] const std::array<CubeCase, 256>& marching_cubes_table();

struct SurfaceSamples {
  std::vector<Eigen::Vector3d> points;
  std::vector<Eigen::Vector3d> normals;
};

/// Area-uniform samples with face normals.  Throws InvalidArgument for a mesh
/// without area.
[[nodiscard]] SurfaceSamples sample_surface(const Mesh& mesh, std::size_t n, std::uint64_t seed);

/// Static 3D kd-tree for nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Eigen::Vector3d> points);

  struct Hit {
    std::size_t index = 0;
    double dist2 = 0.0;
  };
  /// Nearest point; ties go to the lowest index.
  [[nodiscard]] Hit nearest(const Eigen::Vector3d& q) const;
  [[nodiscard]] std::size_t size() const noexcept { return points_.size(); }

 private:
  struct Node {
    int axis = -1;  ///< -1 for leaves
    double split = 0.0;
    int left = -1;
    int right = -1;
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
  };
  int build(std::uint32_t begin, std::uint32_t end);
  void search(int node, const Eigen::Vector3d& q, Hit& best) const;

  std::vector<Eigen::Vector3d> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

struct SurfaceMetricsConfig {
  std::size_t samples = 200000;
  double f_threshold_m = 0.05;
  std::uint64_t seed = 0;
};

/// Surface metrics in cm / percent; image fields are NaN unless filled.
struct MetricsReport {
  double acc_cm = 0.0;
  double comp_cm = 0.0;
  double cd_cm = 0.0;
  double precision_pct = 0.0;
  double recall_pct = 0.0;
  double f1_pct = 0.0;
  double nc_pct = 0.0;
  double psnr_db = kInvalid;
  double ssim = kInvalid;
};

/// Both meshes are sampled with the same seed.  Acc is pred -> gt, Comp is
/// gt -> pred, NC averages |cos| of nearest-neighbor normals in both
/// directions.
[[nodiscard]] MetricsReport surface_metrics(const Mesh& pred, const Mesh& gt, const SurfaceMetricsConfig& cfg = {});

struct ImageMetrics {
  double psnr_db = 0.0;
  double ssim = 0.0;
};
[[nodiscard]] ImageMetrics image_metrics(const VectorMap& rendered, const VectorMap& target);

[[nodiscard]] std::string metrics_json(const MetricsReport& report);

}  // namespace planesplat
