#include "planesplat/mesh.hpp"

#include <Eigen/Geometry>

#include "planesplat/error.hpp"

namespace planesplat {

double Mesh::area() const {
  double a = 0.0;
  for (const auto& t : triangles) {
    const Eigen::Vector3d& p0 = vertices[static_cast<std::size_t>(t[0])];
    a += 0.5 * (vertices[static_cast<std::size_t>(t[1])] - p0).cross(vertices[static_cast<std::size_t>(t[2])] - p0).norm();
  }
  return a;
}

void Mesh::compute_vertex_normals() {
  normals.assign(vertices.size(), Eigen::Vector3d::Zero());
  for (const auto& t : triangles) {
    const Eigen::Vector3d& p0 = vertices[static_cast<std::size_t>(t[0])];
    const Eigen::Vector3d n =
        (vertices[static_cast<std::size_t>(t[1])] - p0).cross(vertices[static_cast<std::size_t>(t[2])] - p0);
    for (int k : t) normals[static_cast<std::size_t>(k)] += n;
  }
  for (auto& n : normals) {
    const double len = n.norm();
    n = len > 0.0 ? Eigen::Vector3d(n / len) : Eigen::Vector3d::Zero();
  }
}

void Mesh::validate() const {
  const auto nv = static_cast<int>(vertices.size());
  for (const auto& v : vertices) {
    if (!v.allFinite()) throw ValidationError("mesh has a non-finite vertex");
  }
  for (const auto& t : triangles) {
    for (int k : t) {
      if (k < 0 || k >= nv) throw ValidationError("mesh triangle index out of range");
    }
  }
  if (!normals.empty() && normals.size() != vertices.size()) throw ValidationError("mesh normal count mismatch");
  if (!colors.empty() && colors.size() != vertices.size()) throw ValidationError("mesh color count mismatch");
}

}  // namespace planesplat
