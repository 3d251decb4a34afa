#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "planesplat/geometry.hpp"
#include "planesplat/labels.hpp"
#include "planesplat/raster.hpp"

namespace planesplat {

/// Half-open pixel box [u_min, u_max) x [v_min, v_max).
struct Box {
  int u_min = 0;
  int v_min = 0;
  int u_max = 0;
  int v_max = 0;

  [[nodiscard]] long long area() const noexcept {
    return static_cast<long long>(u_max - u_min) * static_cast<long long>(v_max - v_min);
  }
  [[nodiscard]] bool empty() const noexcept { return u_max <= u_min || v_max <= v_min; }
  bool operator==(const Box&) const = default;
};

[[nodiscard]] long long intersection_area(const Box& a, const Box& b) noexcept;
/// Bounding box of the set pixels; empty box for an empty mask.
[[nodiscard]] Box bounding_box(const MaskMap& mask);

struct MaskProposal {
  int view_id = 0;
  std::string label;
  double score = 1.0;
  MaskMap mask;
};

struct BoxProposal {
  int id = 0;
  int view_id = 0;
  std::string label;
  double score = 1.0;
  Box box;
  MaskMap mask;          ///< pixels segmented for this box
  int source_view = -1;  ///< view the box was transferred from, -1 for the view's own proposals
};

struct Lp3Config {
  int kmax = 4;
  double merge_angle_deg = 10.0;
  double max_normal_spread_deg = 15.0;
  double dist_outlier_m = 0.05;
  double min_fragment_frac = 0.005;  ///< of the image area, used when min_fragment_px < 0
  int min_fragment_px = -1;
  double nested_ios = 0.95;
  bool fuse_main_only = true;
  int transfer_close_px = 2;  ///< closing radius that fills reprojection holes in transferred masks
  int kmeans_iterations = 50;
  int normal_offset = 1;
  std::uint64_t seed = 0;

  [[nodiscard]] int fragment_px(int width, int height) const;
};

/// Proposals for a box made from each mask of the view, ids in input order.
[[nodiscard]] std::vector<BoxProposal> boxes_from_masks(std::span<const MaskProposal> masks);

/// Drops, for every same-label pair with intersection over the smaller area
/// >= ios, the smaller box.  Output is ordered by area (desc) then id.
[[nodiscard]] std::vector<BoxProposal> filter_nested_boxes(std::vector<BoxProposal> boxes, double ios = 0.95);

/// Cross-view inputs for one view; `depth` is the aligned prior (null if missing).
struct Lp3View {
  const CameraView* camera = nullptr;
  const ScalarMap* depth = nullptr;
  std::vector<MaskProposal> masks;
  std::vector<int> neighbors;  ///< indices into the view list
};

struct FusionStats {
  int transferred = 0;
  int skipped_neighbors = 0;  ///< neighbor without depth prior
  int empty_transfers = 0;    ///< nothing landed in front of the target camera
  std::vector<std::string> warnings;
};

/// Reprojects one mask of `source` into `target` through the source depth.
/// Returns the warped pixel set (before hole filling).
[[nodiscard]] MaskMap transfer_mask(const MaskMap& mask, const ScalarMap& source_depth, const CameraView& source,
                                    const CameraView& target);

/// Adds, for each view, the boxes of its neighbors' main masks transferred
/// into it, then filters nested boxes.  `boxes[i]` holds view i's current
/// proposals; the result has one list per view.
[[nodiscard]] std::vector<std::vector<BoxProposal>> fuse_boxes_cross_view(
    std::span<const Lp3View> views, const std::vector<std::vector<BoxProposal>>& boxes, const Lp3Config& cfg,
    FusionStats* stats = nullptr);

struct PlaneRegion {
  std::string label;
  double score = 1.0;
  std::vector<int> pixels;  ///< raster indices, ascending
  Eigen::Vector3d mean_normal = Eigen::Vector3d::Zero();
  double median_delta = 0.0;
  double normal_spread_deg = 0.0;
};

struct SplitDiagnostics {
  int valid_pixels = 0;
  int kmeans_clusters = 0;    ///< clusters after merging
  int clusters_kept = 0;      ///< after the spread test
  int delta_groups = 0;       ///< plane-distance groups with >= min_fragment_px pixels
  int delta_split_clusters = 0;  ///< normal clusters that split into >= 2 such groups
  int fragments_dropped = 0;
  int regions = 0;

  [[nodiscard]] bool normal_split() const noexcept { return clusters_kept >= 2; }
  [[nodiscard]] bool delta_split() const noexcept { return delta_split_clusters > 0; }
};

/// K-means on unit vectors (cosine geometry) with k-means++ seeding.
/// Returns the cluster of each point; ties go to the lowest index.
[[nodiscard]] std::vector<int> kmeans_directions(std::span<const Eigen::Vector3d> points, int k, std::uint64_t seed,
                                                 int iterations, std::vector<Eigen::Vector3d>* centroids = nullptr);

/// Geometric inspection of one mask: normal clustering, plane-distance
/// grouping and fragment removal.
[[nodiscard]] std::vector<PlaneRegion> inspect_and_split(const MaskMap& mask, const std::string& label, double score,
                                                         const VectorMap& prior_normals,
                                                         const ScalarMap& prior_plane_dist, const Lp3Config& cfg,
                                                         SplitDiagnostics* diag = nullptr);

/// Disjoint relabeling: larger regions claim pixels first; clipped regions
/// below `min_fragment_px` are dropped; labels are contiguous from 1.
/// Metadata normals are averaged from `prior_normals` when given.
[[nodiscard]] PlaneLabelMap build_label_map(std::vector<PlaneRegion> regions, int width, int height, int view_id,
                                            int min_fragment_px = 0, const VectorMap* prior_normals = nullptr);

struct Lp3ViewResult {
  PlaneLabelMap labels;
  std::vector<BoxProposal> boxes;
  std::vector<SplitDiagnostics> diagnostics;  ///< one per processed box
};

/// Runs fusion, filtering, inspection and relabeling for every view.
[[nodiscard]] std::vector<Lp3ViewResult> run_lp3(std::span<const Lp3View> views, const Lp3Config& cfg,
                                                 FusionStats* stats = nullptr);

/// Angle between unit vectors in degrees.
[[nodiscard]] double angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

}  // namespace planesplat
