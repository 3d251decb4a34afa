#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "planesplat/error.hpp"
#include "planesplat/io.hpp"
#include "planesplat/ply.hpp"

namespace planesplat {
namespace {

namespace fs = std::filesystem;

fs::path temp(const std::string& name) { return fs::temp_directory_path() / ("planesplat_ply_" + name); }

TEST(ScenePly, RoundTripIsExact) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> N(0.0, 1.0);
  GaussianCloud c;
  for (int i = 0; i < 37; ++i) {
    Gaussian g;
    g.mu = {N(rng), N(rng), N(rng)};
    g.log_scale = {N(rng), N(rng), N(rng)};
    g.rot = Eigen::Vector4d(N(rng), N(rng), N(rng), N(rng)).normalized();
    g.opacity_logit = N(rng);
    g.rgb = {N(rng), N(rng), N(rng)};
    c.push_back(g);
  }
  const fs::path p = temp("scene.ply");
  io::write_scene_ply(p, c);
  EXPECT_EQ(io::read_scene_ply(p), c);
  const std::string bytes = io::read_file(p);
  EXPECT_NE(bytes.find("property double opacity_logit"), std::string::npos);
  fs::remove(p);
}

TEST(ScenePly, EmptySceneAndWrongFile) {
  const fs::path p = temp("empty.ply");
  io::write_scene_ply(p, GaussianCloud{});
  EXPECT_TRUE(io::read_scene_ply(p).empty());
  io::write_file_atomic(p, "not a ply");
  EXPECT_THROW((void)io::read_scene_ply(p), IoError);
  fs::remove(p);
}

Mesh tetra() {
  Mesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  m.triangles = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
  return m;
}

TEST(MeshPly, BinaryRoundTrip) {
  Mesh m = tetra();
  m.compute_vertex_normals();
  m.colors = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.5, 0.5, 0.5}};
  const fs::path p = temp("mesh.ply");
  io::write_mesh_ply(p, m);
  const Mesh r = io::read_mesh_ply(p);
  ASSERT_EQ(r.vertices.size(), 4u);
  EXPECT_EQ(r.triangles, m.triangles);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(r.vertices[i].isApprox(m.vertices[i]));
    EXPECT_NEAR((r.normals[i] - m.normals[i]).norm(), 0.0, 1e-6);
    EXPECT_NEAR((r.colors[i] - m.colors[i]).norm(), 0.0, 1.0 / 255.0);
  }
  fs::remove(p);
}

TEST(MeshPly, AsciiQuadIsTriangulated) {
  const fs::path p = temp("quad.ply");
  io::write_file_atomic(p,
                        "ply\nformat ascii 1.0\nelement vertex 4\nproperty double x\nproperty double y\n"
                        "property double z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
                        "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
  const Mesh m = io::read_mesh_ply(p);
  ASSERT_EQ(m.triangles.size(), 2u);
  EXPECT_NEAR(m.area(), 1.0, 1e-12);
  fs::remove(p);
}

TEST(MeshPly, BadIndexIsRejected) {
  const fs::path p = temp("bad.ply");
  io::write_file_atomic(p,
                        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                        "property float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
                        "0 0 0\n1 0 0\n1 1 0\n3 0 1 7\n");
  EXPECT_THROW((void)io::read_mesh_ply(p), IoError);
  fs::remove(p);
}

TEST(Mesh, AreaAndNormals) {
  Mesh m = tetra();
  EXPECT_NEAR(m.area(), 1.5 + std::sqrt(3.0) / 2.0, 1e-12);
  m.compute_vertex_normals();
  // outward normal at the corner opposite the origin face sums three faces
  EXPECT_NEAR(m.normals[0].norm(), 1.0, 1e-12);
  EXPECT_TRUE(m.normals[0].isApprox(Eigen::Vector3d(-1, -1, -1).normalized()));
}

}  // namespace
}  // namespace planesplat
