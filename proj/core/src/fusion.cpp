#include "planesplat/fusion.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "planesplat/error.hpp"

namespace planesplat {

TsdfVolume::TsdfVolume(const Eigen::Vector3d& o, double vs, std::array<int, 3> d) : origin(o), voxel_size(vs), dims(d) {
  if (!(vs > 0.0) || d[0] <= 0 || d[1] <= 0 || d[2] <= 0) throw InvalidArgument("TsdfVolume: bad grid");
  const std::size_t n = static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1]) * static_cast<std::size_t>(d[2]);
  tsdf.assign(n, 1.0f);
  weight.assign(n, 0.0f);
  color.assign(n, Eigen::Vector3f::Zero());
}

TsdfVolume TsdfVolume::covering(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi, double voxel_size,
                                double margin) {
  const Eigen::Vector3d a = lo.array() - margin;
  const Eigen::Vector3d b = hi.array() + margin;
  std::array<int, 3> dims{};
  for (int k = 0; k < 3; ++k) dims[static_cast<std::size_t>(k)] = static_cast<int>(std::ceil((b[k] - a[k]) / voxel_size)) + 1;
  return TsdfVolume(a, voxel_size, dims);
}

namespace {
constexpr double kBilinearJump = 0.1;
}  // namespace

void tsdf_integrate(TsdfVolume& vol, const ScalarMap& depth, const VectorMap* color, const CameraView& cam,
                    double trunc_m) {
  if (!(trunc_m > 0.0)) throw InvalidArgument("tsdf_integrate: trunc_m must be positive");
  if (depth.width() != cam.width() || depth.height() != cam.height()) {
    throw InvalidArgument("tsdf_integrate: depth size differs from camera");
  }
  if (color && (color->width() != depth.width() || color->height() != depth.height())) {
    throw InvalidArgument("tsdf_integrate: color size differs from depth");
  }
  const Eigen::Matrix3d& R = cam.R();
  const Eigen::Vector3d& t = cam.t();
  for (int k = 0; k < vol.dims[2]; ++k) {
    for (int j = 0; j < vol.dims[1]; ++j) {
      // camera-frame point of voxel (0, j, k) plus a step per i
      const Eigen::Vector3d row0 = R * vol.center(0, j, k) + t;
      const Eigen::Vector3d step = R.col(0) * vol.voxel_size;
      for (int i = 0; i < vol.dims[0]; ++i) {
        const Eigen::Vector3d p = row0 + static_cast<double>(i) * step;
        if (p.z() <= 1e-6) continue;
        const double u = cam.fx() * p.x() / p.z() + cam.cx();
        const double v = cam.fy() * p.y() / p.z() + cam.cy();
        const long pu = std::lround(u);
        const long pv = std::lround(v);
        if (pu < 0 || pv < 0 || pu >= cam.width() || pv >= cam.height()) continue;
        double d = depth(static_cast<int>(pu), static_cast<int>(pv));
        if (!is_valid(d) || d <= 0.0) continue;
        Eigen::Vector3d c = color ? (*color)(static_cast<int>(pu), static_cast<int>(pv)) : Eigen::Vector3d::Zero();
        // bilinear inside smooth 2x2 neighborhoods, nearest across depth jumps
        const int u0 = static_cast<int>(std::floor(u));
        const int v0 = static_cast<int>(std::floor(v));
        if (u0 >= 0 && v0 >= 0 && u0 + 1 < cam.width() && v0 + 1 < cam.height()) {
          const double q[4] = {depth(u0, v0), depth(u0 + 1, v0), depth(u0, v0 + 1), depth(u0 + 1, v0 + 1)};
          const double lo = std::min({q[0], q[1], q[2], q[3]});
          const double hi = std::max({q[0], q[1], q[2], q[3]});
          if (is_valid(lo) && is_valid(hi) && lo > 0.0 && hi - lo <= kBilinearJump * lo) {
            const double fu = u - u0;
            const double fv = v - v0;
            const double wq[4] = {(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
            d = wq[0] * q[0] + wq[1] * q[1] + wq[2] * q[2] + wq[3] * q[3];
            if (color) {
              c = wq[0] * (*color)(u0, v0) + wq[1] * (*color)(u0 + 1, v0) + wq[2] * (*color)(u0, v0 + 1) +
                  wq[3] * (*color)(u0 + 1, v0 + 1);
            }
          }
        }
        const double sdf = d - p.z();
        if (sdf <= -trunc_m) continue;
        const std::size_t idx = vol.index(i, j, k);
        const float w = vol.weight[idx];
        const float val = static_cast<float>(std::min(1.0, sdf / trunc_m));
        vol.tsdf[idx] = (vol.tsdf[idx] * w + val) / (w + 1.0f);
        if (color) vol.color[idx] = (vol.color[idx] * w + c.cast<float>()) / (w + 1.0f);
        vol.weight[idx] = w + 1.0f;
      }
    }
  }
}

namespace {

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {3, 2}, {0, 3}, {4, 5}, {5, 6}, {7, 6}, {4, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
// face corner cycles, counter-clockwise seen from outside the cube
constexpr int kFace[6][4] = {{0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4}, {3, 7, 6, 2}, {0, 4, 7, 3}, {1, 2, 6, 5}};

int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e) {
    if ((kEdge[e][0] == a && kEdge[e][1] == b) || (kEdge[e][0] == b && kEdge[e][1] == a)) return e;
  }
  return -1;
}

Eigen::Vector3d edge_midpoint(int e) {
  const int* a = kCorner[kEdge[e][0]];
  const int* b = kCorner[kEdge[e][1]];
  return 0.5 * Eigen::Vector3d(a[0] + b[0], a[1] + b[1], a[2] + b[2]);
}

bool share_face(int e0, int e1) {
  for (const auto& f : kFace) {
    int hits = 0;
    for (int e : {e0, e1}) {
      bool a = false, b = false;
      for (int c : f) {
        a = a || c == kEdge[e][0];
        b = b || c == kEdge[e][1];
      }
      hits += a && b;
    }
    if (hits == 2) return true;
  }
  return false;
}

// Each face contributes one segment per run of inside corners, from the edge
// where the run starts to the edge where it ends.  Diagonal inside corners on
// a face are therefore kept apart, and the two faces sharing an edge agree,
// so the loops close and neighboring cubes stitch without holes.
CubeCase triangulate(int config) {
  auto inside = [&](int c) { return (config >> c) & 1; };
  std::array<int, 12> next;
  next.fill(-1);
  for (const auto& f : kFace) {
    for (int s = 0; s < 4; ++s) {
      const int a = f[s];
      const int b = f[(s + 1) % 4];
      if (inside(a) || !inside(b)) continue;  // not an entering crossing
      for (int r = 1; r < 4; ++r) {
        const int c = f[(s + r) % 4];
        const int d = f[(s + r + 1) % 4];
        if (inside(c) && !inside(d)) {
          next[static_cast<std::size_t>(edge_between(a, b))] = edge_between(c, d);
          break;
        }
      }
    }
  }
  CubeCase out;
  std::array<bool, 12> used{};
  for (int start = 0; start < 12; ++start) {
    if (next[static_cast<std::size_t>(start)] < 0 || used[static_cast<std::size_t>(start)]) continue;
    std::vector<int> loop;
    for (int e = start; !used[static_cast<std::size_t>(e)]; e = next[static_cast<std::size_t>(e)]) {
      used[static_cast<std::size_t>(e)] = true;
      loop.push_back(e);
    }
    const std::size_t m = loop.size();
    // a fan diagonal between two vertices of one face would lie in that face
    // and could be repeated by the neighboring cube
    int apex = -1;
    for (std::size_t s = 0; s < m && apex < 0; ++s) {
      bool ok = true;
      for (std::size_t i = 2; i + 1 < m && ok; ++i) ok = !share_face(loop[s], loop[(s + i) % m]);
      if (ok) apex = static_cast<int>(s);
    }
    if (apex >= 0) {
      const auto s = static_cast<std::size_t>(apex);
      for (std::size_t i = 1; i + 1 < m; ++i) out.triangles.push_back({loop[s], loop[(s + i) % m], loop[(s + i + 1) % m]});
    } else {
      const int c = 12 + static_cast<int>(out.centroid_loops.size());
      for (std::size_t i = 0; i < m; ++i) out.triangles.push_back({c, loop[i], loop[(i + 1) % m]});
      out.centroid_loops.push_back(loop);
    }
  }
  return out;
}

std::array<CubeCase, 256> build_table() {
  std::array<CubeCase, 256> table;
  for (int c = 0; c < 256; ++c) table[static_cast<std::size_t>(c)] = triangulate(c);
  // orient so the normal of the single-corner case points away from the corner
  const auto& t = table[1].triangles.front();
  const Eigen::Vector3d n = (edge_midpoint(t[1]) - edge_midpoint(t[0])).cross(edge_midpoint(t[2]) - edge_midpoint(t[0]));
  if (n.dot(Eigen::Vector3d::Ones()) < 0.0) {
    for (auto& cc : table) {
      for (auto& tri : cc.triangles) std::swap(tri[1], tri[2]);
    }
  }
  return table;
}

}  // namespace

const std::array<CubeCase, 256>& marching_cubes_table() {
  static const auto table = build_table();
  return table;
}

Mesh marching_cubes(const TsdfVolume& vol, float min_weight) {
  const auto& table = marching_cubes_table();
  Mesh mesh;
  const bool has_color = vol.color.size() == vol.size();
  std::unordered_map<std::uint64_t, int> vertex_of;
  const int nx = vol.dims[0];
  const int ny = vol.dims[1];
  const int nz = vol.dims[2];
  std::array<std::size_t, 8> idx{};
  std::array<float, 8> val{};
  std::array<int, 16> ev{};
  for (int k = 0; k + 1 < nz; ++k) {
    for (int j = 0; j + 1 < ny; ++j) {
      for (int i = 0; i + 1 < nx; ++i) {
        int config = 0;
        bool ok = true;
        for (int c = 0; c < 8 && ok; ++c) {
          idx[static_cast<std::size_t>(c)] = vol.index(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]);
          ok = vol.weight[idx[static_cast<std::size_t>(c)]] > min_weight;
          val[static_cast<std::size_t>(c)] = vol.tsdf[idx[static_cast<std::size_t>(c)]];
          if (val[static_cast<std::size_t>(c)] < 0.0f) config |= 1 << c;
        }
        if (!ok || config == 0 || config == 255) continue;
        const CubeCase& cc = table[static_cast<std::size_t>(config)];
        for (int e = 0; e < 12; ++e) {
          const int a = kEdge[e][0];
          const int b = kEdge[e][1];
          if (((config >> a) & 1) == ((config >> b) & 1)) continue;
          // global key: lower corner voxel and axis
          const int ax = kCorner[a][0] != kCorner[b][0] ? 0 : (kCorner[a][1] != kCorner[b][1] ? 1 : 2);
          const std::uint64_t key =
              static_cast<std::uint64_t>(idx[static_cast<std::size_t>(a)]) * 3u + static_cast<std::uint64_t>(ax);
          auto [it, inserted] = vertex_of.try_emplace(key, static_cast<int>(mesh.vertices.size()));
          if (inserted) {
            const double va = val[static_cast<std::size_t>(a)];
            const double vb = val[static_cast<std::size_t>(b)];
            const double s = va / (va - vb);
            const Eigen::Vector3d pa = vol.center(i + kCorner[a][0], j + kCorner[a][1], k + kCorner[a][2]);
            const Eigen::Vector3d pb = vol.center(i + kCorner[b][0], j + kCorner[b][1], k + kCorner[b][2]);
            mesh.vertices.push_back(pa + s * (pb - pa));
            if (has_color) {
              const Eigen::Vector3f ca = vol.color[idx[static_cast<std::size_t>(a)]];
              const Eigen::Vector3f cb = vol.color[idx[static_cast<std::size_t>(b)]];
              mesh.colors.push_back((ca + static_cast<float>(s) * (cb - ca)).cast<double>());
            }
          }
          ev[static_cast<std::size_t>(e)] = it->second;
        }
        for (std::size_t l = 0; l < cc.centroid_loops.size(); ++l) {
          Eigen::Vector3d p = Eigen::Vector3d::Zero();
          Eigen::Vector3d col = Eigen::Vector3d::Zero();
          for (int e : cc.centroid_loops[l]) {
            p += mesh.vertices[static_cast<std::size_t>(ev[static_cast<std::size_t>(e)])];
            if (has_color) col += mesh.colors[static_cast<std::size_t>(ev[static_cast<std::size_t>(e)])];
          }
          const double inv = 1.0 / static_cast<double>(cc.centroid_loops[l].size());
          ev[12 + l] = static_cast<int>(mesh.vertices.size());
          mesh.vertices.push_back(p * inv);
          if (has_color) mesh.colors.push_back(col * inv);
        }
        for (const auto& tri : cc.triangles) {
          mesh.triangles.push_back({ev[static_cast<std::size_t>(tri[0])], ev[static_cast<std::size_t>(tri[1])],
                                    ev[static_cast<std::size_t>(tri[2])]});
        }
      }
    }
  }
  if (!mesh.triangles.empty()) mesh.compute_vertex_normals();
  return mesh;
}

}  // namespace planesplat
