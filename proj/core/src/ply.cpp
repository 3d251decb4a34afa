#include "planesplat/ply.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "planesplat/error.hpp"
#include "planesplat/io.hpp"

namespace planesplat::io {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");

namespace {

constexpr const char* kSceneFields[] = {"x",  "y",  "z",  "log_s1", "log_s2",        "log_s3", "qw",
                                        "qx", "qy", "qz", "opacity_logit", "r", "g",      "b"};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

struct Property {
  std::string name;
  std::string type;
  bool is_list = false;
  std::string count_type;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> props;
};

struct Header {
  bool binary = false;
  std::vector<Element> elements;
  std::size_t data_offset = 0;
};

std::size_t type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  throw IoError("unsupported PLY type " + t);
}

Header parse_header(const std::string& bytes, const fs::path& path) {
  Header h;
  const std::size_t end = bytes.find("end_header");
  if (bytes.rfind("ply", 0) != 0 || end == std::string::npos) throw IoError("not a PLY file: " + path.string());
  std::size_t nl = bytes.find('\n', end);
  if (nl == std::string::npos) throw IoError("truncated PLY header: " + path.string());
  h.data_offset = nl + 1;
  std::istringstream in(bytes.substr(0, end));
  std::string line;
  bool have_format = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") {
        h.binary = false;
      } else if (fmt == "binary_little_endian") {
        h.binary = true;
      } else {
        throw IoError("unsupported PLY format " + fmt + ": " + path.string());
      }
      have_format = true;
    } else if (kw == "element") {
      Element e;
      ls >> e.name >> e.count;
      if (!ls) throw IoError("bad PLY element line: " + path.string());
      h.elements.push_back(e);
    } else if (kw == "property") {
      if (h.elements.empty()) throw IoError("PLY property before element: " + path.string());
      Property p;
      ls >> p.type;
      if (p.type == "list") {
        p.is_list = true;
        ls >> p.count_type >> p.type;
      }
      ls >> p.name;
      if (!ls) throw IoError("bad PLY property line: " + path.string());
      type_size(p.type);
      if (p.is_list) type_size(p.count_type);
      h.elements.back().props.push_back(p);
    }
  }
  if (!have_format) throw IoError("PLY header without format: " + path.string());
  return h;
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t offset, bool binary, const fs::path& path)
      : bytes_(bytes), pos_(offset), binary_(binary), path_(path) {
    if (!binary_) text_.str(bytes_.substr(offset));
  }

  double scalar(const std::string& t) {
    if (!binary_) {
      double v = 0.0;
      if (!(text_ >> v)) throw IoError("truncated ASCII PLY body: " + path_.string());
      return v;
    }
    const std::size_t n = type_size(t);
    if (pos_ + n > bytes_.size()) throw IoError("truncated PLY body: " + path_.string());
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    if (t == "char" || t == "int8") return static_cast<double>(load<std::int8_t>(p));
    if (t == "uchar" || t == "uint8") return static_cast<double>(load<std::uint8_t>(p));
    if (t == "short" || t == "int16") return static_cast<double>(load<std::int16_t>(p));
    if (t == "ushort" || t == "uint16") return static_cast<double>(load<std::uint16_t>(p));
    if (t == "int" || t == "int32") return static_cast<double>(load<std::int32_t>(p));
    if (t == "uint" || t == "uint32") return static_cast<double>(load<std::uint32_t>(p));
    if (t == "float" || t == "float32") return static_cast<double>(load<float>(p));
    return load<double>(p);
  }

 private:
  template <typename T>
  static T load(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
  }

  const std::string& bytes_;
  std::size_t pos_;
  bool binary_;
  fs::path path_;
  std::istringstream text_;
};

}  // namespace

void write_scene_ply(const fs::path& path, const GaussianCloud& scene) {
  std::string out = "ply\nformat binary_little_endian 1.0\ncomment planesplat gaussian scene\nelement vertex " +
                    std::to_string(scene.size()) + "\n";
  for (const char* f : kSceneFields) out += std::string("property double ") + f + "\n";
  out += "end_header\n";
  out.reserve(out.size() + scene.size() * 14 * sizeof(double));
  for (std::size_t i = 0; i < scene.size(); ++i) {
    for (int k = 0; k < 3; ++k) put(out, scene.mu[i][k]);
    for (int k = 0; k < 3; ++k) put(out, scene.log_scale[i][k]);
    for (int k = 0; k < 4; ++k) put(out, scene.rot[i][k]);
    put(out, scene.opacity_logit[i]);
    for (int k = 0; k < 3; ++k) put(out, scene.rgb[i][k]);
  }
  write_file_atomic(path, out);
}

GaussianCloud read_scene_ply(const fs::path& path) {
  const std::string bytes = read_file(path);
  const Header h = parse_header(bytes, path);
  if (h.elements.size() != 1 || h.elements[0].name != "vertex" || h.elements[0].props.size() != 14) {
    throw IoError("not a Gaussian scene PLY: " + path.string());
  }
  for (std::size_t k = 0; k < 14; ++k) {
    if (h.elements[0].props[k].name != kSceneFields[k] || h.elements[0].props[k].is_list) {
      throw IoError("unexpected scene property " + h.elements[0].props[k].name + ": " + path.string());
    }
  }
  Reader r(bytes, h.data_offset, h.binary, path);
  const auto& props = h.elements[0].props;
  GaussianCloud scene;
  scene.reserve(h.elements[0].count);
  double v[14];
  for (std::size_t i = 0; i < h.elements[0].count; ++i) {
    for (std::size_t k = 0; k < 14; ++k) v[k] = r.scalar(props[k].type);
    Gaussian g;
    g.mu = {v[0], v[1], v[2]};
    g.log_scale = {v[3], v[4], v[5]};
    g.rot = {v[6], v[7], v[8], v[9]};
    g.opacity_logit = v[10];
    g.rgb = {v[11], v[12], v[13]};
    scene.push_back(g);
  }
  return scene;
}

void write_mesh_ply(const fs::path& path, const Mesh& mesh) {
  mesh.validate();
  const bool has_n = !mesh.normals.empty();
  const bool has_c = !mesh.colors.empty();
  std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(mesh.vertices.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\n";
  if (has_n) out += "property float nx\nproperty float ny\nproperty float nz\n";
  if (has_c) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "element face " + std::to_string(mesh.triangles.size()) +
         "\nproperty list uchar int vertex_indices\nend_header\n";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    for (int k = 0; k < 3; ++k) put(out, static_cast<float>(mesh.vertices[i][k]));
    if (has_n) {
      for (int k = 0; k < 3; ++k) put(out, static_cast<float>(mesh.normals[i][k]));
    }
    if (has_c) {
      for (int k = 0; k < 3; ++k) {
        put(out, static_cast<std::uint8_t>(std::lround(std::clamp(mesh.colors[i][k], 0.0, 1.0) * 255.0)));
      }
    }
  }
  for (const auto& t : mesh.triangles) {
    put(out, static_cast<std::uint8_t>(3));
    for (int k : t) put(out, static_cast<std::int32_t>(k));
  }
  write_file_atomic(path, out);
}

Mesh read_mesh_ply(const fs::path& path) {
  const std::string bytes = read_file(path);
  const Header h = parse_header(bytes, path);
  Reader r(bytes, h.data_offset, h.binary, path);
  Mesh mesh;
  for (const auto& e : h.elements) {
    if (e.name == "vertex") {
      int ix = -1, iy = -1, iz = -1;
      int in[3] = {-1, -1, -1};
      int ic[3] = {-1, -1, -1};
      for (std::size_t k = 0; k < e.props.size(); ++k) {
        const std::string& n = e.props[k].name;
        const int kk = static_cast<int>(k);
        if (n == "x") ix = kk;
        if (n == "y") iy = kk;
        if (n == "z") iz = kk;
        if (n == "nx") in[0] = kk;
        if (n == "ny") in[1] = kk;
        if (n == "nz") in[2] = kk;
        if (n == "red") ic[0] = kk;
        if (n == "green") ic[1] = kk;
        if (n == "blue") ic[2] = kk;
      }
      if (ix < 0 || iy < 0 || iz < 0) throw IoError("PLY vertices without x/y/z: " + path.string());
      const bool has_n = in[0] >= 0 && in[1] >= 0 && in[2] >= 0;
      const bool has_c = ic[0] >= 0 && ic[1] >= 0 && ic[2] >= 0;
      std::vector<double> vals(e.props.size());
      for (std::size_t i = 0; i < e.count; ++i) {
        for (std::size_t k = 0; k < e.props.size(); ++k) {
          if (e.props[k].is_list) {
            const auto cnt = static_cast<std::size_t>(r.scalar(e.props[k].count_type));
            for (std::size_t j = 0; j < cnt; ++j) (void)r.scalar(e.props[k].type);
            vals[k] = 0.0;
          } else {
            vals[k] = r.scalar(e.props[k].type);
          }
        }
        mesh.vertices.emplace_back(vals[static_cast<std::size_t>(ix)], vals[static_cast<std::size_t>(iy)],
                                   vals[static_cast<std::size_t>(iz)]);
        if (has_n) {
          mesh.normals.emplace_back(vals[static_cast<std::size_t>(in[0])], vals[static_cast<std::size_t>(in[1])],
                                    vals[static_cast<std::size_t>(in[2])]);
        }
        if (has_c) {
          const double s = e.props[static_cast<std::size_t>(ic[0])].type.find("char") != std::string::npos ? 255.0 : 1.0;
          mesh.colors.emplace_back(vals[static_cast<std::size_t>(ic[0])] / s, vals[static_cast<std::size_t>(ic[1])] / s,
                                   vals[static_cast<std::size_t>(ic[2])] / s);
        }
      }
    } else {
      for (std::size_t i = 0; i < e.count; ++i) {
        for (const auto& p : e.props) {
          if (!p.is_list) {
            (void)r.scalar(p.type);
            continue;
          }
          const auto cnt = static_cast<std::size_t>(r.scalar(p.count_type));
          std::vector<int> idx(cnt);
          for (auto& x : idx) x = static_cast<int>(r.scalar(p.type));
          if (e.name == "face" && (p.name == "vertex_indices" || p.name == "vertex_index")) {
            for (std::size_t j = 1; j + 1 < cnt; ++j) mesh.triangles.push_back({idx[0], idx[j], idx[j + 1]});
          }
        }
      }
    }
  }
  try {
    mesh.validate();
  } catch (const ValidationError& e) {
    throw IoError(std::string(e.what()) + ": " + path.string());
  }
  return mesh;
}

}  // namespace planesplat::io
