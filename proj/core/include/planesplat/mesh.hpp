#pragma once

#include <Eigen/Core>

#include <array>
#include <vector>

namespace planesplat {

struct Mesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Eigen::Vector3d> normals;  ///< per vertex, optional
  std::vector<Eigen::Vector3d> colors;   ///< per vertex in [0, 1], optional

  [[nodiscard]] bool empty() const noexcept { return triangles.empty(); }
  [[nodiscard]] double area() const;
  /// Per-vertex normals from area-weighted face normals.
  void compute_vertex_normals();
  /// Throws ValidationError on out-of-range indices or non-finite vertices.
  void validate() const;
};

}  // namespace planesplat
