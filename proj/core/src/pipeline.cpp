#include "planesplat/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "planesplat/error.hpp"
#include "planesplat/io.hpp"
#include "planesplat/ply.hpp"
#include "planesplat/render.hpp"

namespace planesplat {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config

namespace {

// Reads or writes every config field through the same listing.
struct ConfigReader {
  const json* cur = nullptr;
  std::string path;
  std::set<std::string> seen;

  template <typename T>
  void operator()(const char* key, T& value) {
    seen.insert(key);
    if (!cur->contains(key)) return;
    try {
      if constexpr (std::is_same_v<T, fs::path>) {
        value = cur->at(key).get<std::string>();
      } else {
        value = cur->at(key).get<T>();
      }
    } catch (const json::exception&) {
      throw ValidationError("config " + path + key + " has the wrong type");
    }
  }

  template <typename F>
  void section(const char* key, F&& body) {
    seen.insert(key);
    if (!cur->contains(key)) return;
    const json& sub = cur->at(key);
    if (!sub.is_object()) throw ValidationError("config " + path + key + " must be an object");
    ConfigReader inner{&sub, path + key + ".", {}};
    body(inner);
    inner.finish();
  }

  void finish() const {
    for (const auto& item : cur->items()) {
      if (!seen.count(item.key())) throw ValidationError("unknown config key " + path + item.key());
    }
  }
};

struct ConfigWriter {
  ojson* cur = nullptr;

  template <typename T>
  void operator()(const char* key, T& value) {
    if constexpr (std::is_same_v<T, fs::path>) {
      (*cur)[key] = value.generic_string();
    } else {
      (*cur)[key] = value;
    }
  }

  template <typename F>
  void section(const char* key, F&& body) {
    ojson sub = ojson::object();
    ConfigWriter inner{&sub};
    body(inner);
    (*cur)[key] = std::move(sub);
  }
};

template <typename V>
void visit_config(RunConfig& c, V& v) {
  v("workdir", c.workdir);
  v("input", c.input);
  v("seed", c.seed);
  v("prompts", c.prompts);
  v.section("fixture", [&](auto& s) {
    FixtureConfig& f = c.fixture;
    s("kind", f.kind);
    s("views", f.views);
    s("width", f.width);
    s("height", f.height);
    s("focal", f.focal);
    s("noise_sigma", f.noise_sigma);
    s("noise_wavelength_px", f.noise_wavelength_px);
    s("prior_scale", f.prior_scale);
    s("prior_shift", f.prior_shift);
    s("sparse_per_view", f.sparse_per_view);
    s("outlier_frac", f.outlier_frac);
    s("parallel_panel", f.parallel_panel);
    s("merge_walls", f.merge_walls);
    s("drop_ceiling_every", f.drop_ceiling_every);
  });
  v.section("align", [&](auto& s) {
    s("group_size", c.group_size);
    s("min_samples", c.align.min_samples);
    s("max_iterations", c.align.max_iterations);
    s("conf_threshold", c.conf_threshold);
    s("canny_sigma", c.canny.sigma);
    s("canny_low", c.canny.low);
    s("canny_high", c.canny.high);
    s("dilate_px", c.canny.dilate_px);
  });
  v.section("lp3", [&](auto& s) {
    Lp3Config& l = c.lp3;
    s("kmax", l.kmax);
    s("merge_angle_deg", l.merge_angle_deg);
    s("max_normal_spread_deg", l.max_normal_spread_deg);
    s("dist_outlier_m", l.dist_outlier_m);
    s("min_fragment_frac", l.min_fragment_frac);
    s("min_fragment_px", l.min_fragment_px);
    s("nested_ios", l.nested_ios);
    s("fuse_main_only", l.fuse_main_only);
    s("transfer_close_px", l.transfer_close_px);
    s("kmeans_iterations", l.kmeans_iterations);
    s("normal_offset", l.normal_offset);
    s("neighbors", c.lp3_neighbors);
  });
  v.section("init", [&](auto& s) {
    s("density_thresh", c.init.density_thresh);
    s("samples_per_px", c.init.samples_per_px);
    s("initial_opacity", c.init.initial_opacity);
    s("knn", c.init.knn);
    s("from_sparse", c.init_from_sparse);
  });
  v.section("train", [&](auto& s) {
    s("iterations", c.iterations);
    s("start_dn", c.start_dn);
    s("start_p", c.start_p);
    s("start_rd", c.start_rd);
    s("start_rn", c.start_rn);
    s.section("weights", [&](auto& w) {
      w("dn", c.weights.dn);
      w("p", c.weights.p);
      w("rd", c.weights.rd);
      w("rn", c.weights.rn);
    });
    s.section("lr", [&](auto& w) {
      w("mu_init", c.lr.mu_init);
      w("mu_final", c.lr.mu_final);
      w("log_scale", c.lr.log_scale);
      w("rot", c.lr.rot);
      w("opacity", c.lr.opacity);
      w("rgb", c.lr.rgb);
    });
    s("normal_offset", c.normal_offset);
    s("ckpt_every", c.ckpt_every);
    s("acc_min", c.render.acc_min);
  });
  v.section("fuse", [&](auto& s) {
    s("voxel_size", c.voxel_size);
    s("trunc_m", c.trunc_m);
    s("margin", c.fuse_margin);
    s("min_weight", c.min_weight);
  });
  v.section("eval", [&](auto& s) {
    s("samples", c.metrics.samples);
    s("f_threshold_m", c.metrics.f_threshold_m);
    s("heatmaps", c.heatmaps);
  });
}

ojson config_object(const RunConfig& cfg) {
  RunConfig copy = cfg;
  ojson out = ojson::object();
  ConfigWriter w{&out};
  visit_config(copy, w);
  return out;
}

}  // namespace

Schedule RunConfig::schedule() const {
  Schedule s = Schedule::scaled(iterations);
  if (start_dn >= 0) s.start_dn = start_dn;
  if (start_p >= 0) s.start_p = start_p;
  if (start_rd >= 0) s.start_rd = start_rd;
  if (start_rn >= 0) s.start_rn = start_rn;
  s.lr = lr;
  return s;
}

void RunConfig::validate() const {
  if (workdir.empty()) throw ValidationError("config: workdir is empty");
  fixture.validate();
  if (group_size < 1) throw ValidationError("config: align.group_size must be >= 1");
  if (lp3_neighbors < 0) throw ValidationError("config: lp3.neighbors must be >= 0");
  if (iterations < 1) throw ValidationError("config: train.iterations must be >= 1");
  schedule().validate();
  if (weights.dn < 0 || weights.p < 0 || weights.rd < 0 || weights.rn < 0) {
    throw ValidationError("config: loss weights must be non-negative");
  }
  if (ckpt_every < 0) throw ValidationError("config: train.ckpt_every must be >= 0");
  if (!(voxel_size > 0.0) || trunc_m < 0.0 || fuse_margin < 0.0) throw ValidationError("config: bad fuse settings");
  if (metrics.samples == 0 || !(metrics.f_threshold_m > 0.0)) throw ValidationError("config: bad eval settings");
  if (!(init.density_thresh >= 0.0) || !(init.samples_per_px >= 0.0) || init.knn < 1 ||
      !(init.initial_opacity > 0.0 && init.initial_opacity < 1.0)) {
    throw ValidationError("config: bad init settings");
  }
}

RunConfig config_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (doc.is_object() && doc.contains("stages") && doc.contains("config")) doc = doc.at("config");
  if (!doc.is_object()) throw ValidationError("config must be a JSON object");
  RunConfig cfg;
  ConfigReader r{&doc, "", {}};
  visit_config(cfg, r);
  r.finish();
  cfg.lp3.seed = cfg.seed;
  cfg.init.seed = cfg.seed;
  cfg.fixture.seed = cfg.seed;
  cfg.metrics.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

std::string config_to_json(const RunConfig& cfg) { return config_object(cfg).dump(2) + "\n"; }

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::string view_name(std::size_t i) {
  std::string s = std::to_string(i);
  return s.size() < 3 ? std::string(3 - s.size(), '0') + s : s;
}

void say(const StageOptions& opt, const std::string& msg) {
  if (opt.log) opt.log(msg);
}

const fs::path& require(const fs::path& p) {
  if (!fs::exists(p)) throw ValidationError("missing artifact: " + p.generic_string());
  return p;
}

json read_json(const fs::path& p) {
  try {
    return json::parse(io::read_file(require(p)));
  } catch (const json::exception& e) {
    throw IoError("invalid JSON " + p.generic_string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const ojson& j) { io::write_file_atomic(p, j.dump(2) + "\n"); }

void write_sparse_json(const fs::path& p, const SparseDepth& s) {
  ojson samples = ojson::array();
  for (const auto& x : s.samples) samples.push_back({x.u, x.v, x.depth});
  write_json(p, ojson{{"view_id", s.view_id}, {"samples", samples}});
}

SparseDepth read_sparse_json(const fs::path& p) {
  const json j = read_json(p);
  SparseDepth s;
  try {
    s.view_id = j.at("view_id").get<int>();
    for (const auto& x : j.at("samples")) {
      const auto v = x.get<std::vector<double>>();
      if (v.size() != 3) throw IoError("sparse sample needs [u, v, depth]: " + p.generic_string());
      s.samples.push_back({v[0], v[1], v[2]});
    }
  } catch (const json::exception& e) {
    throw IoError("malformed sparse depth " + p.generic_string() + ": " + e.what());
  }
  return s;
}

ojson vec3(const Eigen::Vector3d& v) {
  ojson a = ojson::array();
  for (int i = 0; i < 3; ++i) {
    if (std::isfinite(v[i])) {
      a.push_back(v[i]);
    } else {
      a.push_back(nullptr);
    }
  }
  return a;
}

Eigen::Vector3d vec3(const json& j) {
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    const json& x = j.at(static_cast<std::size_t>(i));
    v[i] = x.is_null() ? kInvalid : x.get<double>();
  }
  return v;
}

// Sorted relative path -> content hash of every file under `dir`.
ojson file_hashes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  ojson out = ojson::object();
  for (const auto& f : files) out[fs::relative(f, dir).generic_string()] = content_hash(io::read_file(f));
  return out;
}

class Manifest {
 public:
  explicit Manifest(fs::path workdir) : path_(std::move(workdir) / "manifest.json") {
    if (fs::exists(path_)) {
      try {
        doc_ = ojson::parse(io::read_file(path_));
      } catch (const ojson::exception& e) {
        throw IoError("invalid manifest " + path_.generic_string() + ": " + e.what());
      }
    }
    if (!doc_.is_object()) doc_ = ojson::object();
    if (!doc_.contains("format")) doc_["format"] = "planesplat-manifest-1";
    if (!doc_.contains("stages")) doc_["stages"] = ojson::object();
  }

  [[nodiscard]] bool has(const std::string& stage) const { return doc_["stages"].contains(stage); }
  [[nodiscard]] std::string key(const std::string& stage) const {
    return has(stage) ? doc_["stages"][stage].value("key", std::string()) : std::string();
  }
  ojson& doc() { return doc_; }
  void save() const { write_json(path_, doc_); }

 private:
  fs::path path_;
  ojson doc_;
};

struct Upstream {
  const char* stage;  ///< stage recorded in the manifest, or null
  fs::path artifact;  ///< file that must exist
};

template <typename Body>
StageStatus run_stage(const RunConfig& cfg, const StageOptions& opt, const std::string& stage, const fs::path& outdir,
                      const std::string& section, const std::vector<Upstream>& upstream, Body&& body) {
  cfg.validate();
  fs::create_directories(cfg.workdir);
  Manifest m(cfg.workdir);
  std::string key_src = stage + "\n" + section;
  for (const auto& up : upstream) {
    if (up.stage && !m.has(up.stage)) {
      throw ValidationError("missing artifact: " + up.artifact.generic_string() + " (run the " + up.stage +
                            " stage first)");
    }
    require(up.artifact);
    if (up.stage) key_src += "\n" + m.key(up.stage);
  }
  const std::string key = content_hash(key_src);
  if (!opt.force && m.key(stage) == key && fs::exists(outdir)) {
    say(opt, stage + ": up to date, skipped (use --force to rerun)");
    return StageStatus::skipped;
  }
  say(opt, stage + ": running");
  const fs::path tmp = outdir.parent_path() / ("." + outdir.filename().string() + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  ojson info = ojson::object();
  try {
    body(tmp, info);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
  fs::remove_all(outdir);
  fs::rename(tmp, outdir);
  ojson entry = ojson::object();
  entry["key"] = key;
  entry["outputs"] = fs::relative(outdir, cfg.workdir).generic_string();
  for (auto& item : info.items()) entry[item.key()] = item.value();
  entry["files"] = file_hashes(outdir);
  m.doc()["config"] = config_object(cfg);
  m.doc()["stages"][stage] = std::move(entry);
  m.save();
  say(opt, stage + ": done");
  return StageStatus::ran;
}

std::string section_of(const RunConfig& cfg, std::initializer_list<const char*> keys) {
  const ojson all = config_object(cfg);
  ojson out = ojson::object();
  for (const char* k : keys) out[k] = all.at(k);
  return out.dump();
}

struct Inputs {
  fs::path dir;
  std::vector<CameraView> cams;
};

Inputs load_inputs(const RunConfig& cfg) {
  Inputs in{cfg.input_dir(), {}};
  in.cams = io::read_cameras_json(require(in.dir / "cameras.json"));
  if (in.cams.empty()) throw ValidationError("cameras.json lists no views");
  return in;
}

VectorMap load_image(const Inputs& in, std::size_t i) {
  VectorMap img = io::read_rgb_png(require(in.dir / "images" / (view_name(i) + ".png")));
  if (!img.same_shape(in.cams[i].width(), in.cams[i].height())) {
    throw ValidationError("image " + view_name(i) + " does not match its camera size");
  }
  return img;
}

PlaneLabelMap load_labels(const fs::path& lp3_dir, const json& meta, std::size_t i, const CameraView& cam) {
  PlaneLabelMap lm;
  lm.view_id = cam.id();
  lm.labels = io::read_label_png(require(lp3_dir / ("labels_" + view_name(i) + ".png")));
  if (!lm.labels.same_shape(cam.width(), cam.height())) throw ValidationError("label map size mismatch");
  for (const auto& p : meta.at("views").at(i).at("planes")) {
    PlaneLabelInfo info;
    info.source_class = p.at("class").get<std::string>();
    info.mean_normal = vec3(p.at("mean_normal"));
    info.score = p.at("score").get<double>();
    info.pixel_count = p.at("pixels").get<int>();
    lm.info.push_back(info);
  }
  return lm;
}

// Isotropic Gaussians at the sparse samples, scaled by the mean distance to
// the nearest `knn` neighbors.  Axis 0 (the normal on ties) follows the prior
// normal at the sample pixel.
GaussianCloud sparse_init(const Inputs& in, const std::vector<VectorMap>& images,
                          const std::vector<VectorMap>& normals, double opacity, int knn) {
  std::vector<Eigen::Vector3d> pts;
  std::vector<Eigen::Vector3d> cols;
  std::vector<Eigen::Vector4d> rots;
  for (std::size_t i = 0; i < in.cams.size(); ++i) {
    const SparseDepth s = read_sparse_json(in.dir / "sparse" / (view_name(i) + ".json"));
    const CameraView& cam = in.cams[i];
    for (const auto& x : s.samples) {
      if (!(x.depth > 0.0)) continue;
      const int u = static_cast<int>(std::lround(x.u));
      const int v = static_cast<int>(std::lround(x.v));
      if (!cam.contains_pixel(u, v)) continue;
      pts.push_back(cam.camera_to_world(x.depth * cam.ray(x.u, x.v)));
      cols.push_back(images[i](u, v));
      const Eigen::Vector3d& n = normals[i](u, v);
      rots.push_back(is_valid(n) ? quaternion_between(Eigen::Vector3d::UnitX(), cam.R().transpose() * n)
                                 : Eigen::Vector4d(1.0, 0.0, 0.0, 0.0));
    }
  }
  GaussianCloud out;
  std::vector<double> d2;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    d2.clear();
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j != i) d2.push_back((pts[i] - pts[j]).squaredNorm());
    }
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(knn), d2.size());
    std::partial_sort(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(k), d2.end());
    double mean = 0.0;
    for (std::size_t j = 0; j < k; ++j) mean += std::sqrt(d2[j]);
    mean = k > 0 ? mean / static_cast<double>(k) : 0.01;
    Gaussian g;
    g.mu = pts[i];
    g.log_scale = Eigen::Vector3d::Constant(std::log(std::max(mean, 1e-4)));
    g.rot = rots[i];
    g.opacity_logit = logit(opacity);
    g.rgb = cols[i];
    out.push_back(g);
  }
  return out;
}

constexpr double kBoundsQuantile = 0.001;
constexpr double kMaxVoxels = 4e8;

double trunc_of(const RunConfig& cfg) { return cfg.trunc_m > 0.0 ? cfg.trunc_m : 4.0 * cfg.voxel_size; }

Eigen::Vector3d heat(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return {std::min(1.0, 2.0 * x), std::max(0.0, 2.0 * x - 1.0), 0.0};
}

}  // namespace

// ---------------------------------------------------------------------------
// Stages

void write_fixture(const Fixture& fx, const std::vector<std::string>& prompts, const fs::path& dir) {
  for (const char* sub : {"images", "priors", "sparse", "masks", "gt"}) fs::create_directories(dir / sub);
  io::write_cameras_json(dir / "cameras.json", fx.cameras);
  ojson proposals = ojson::array();
  for (std::size_t i = 0; i < fx.views.size(); ++i) {
    const FixtureView& v = fx.views[i];
    const std::string n = view_name(i);
    io::write_rgb_png(dir / "images" / (n + ".png"), v.image);
    io::write_pfm(dir / "priors" / ("depth_" + n + ".pfm"), v.prior_depth);
    io::write_pfm(dir / "priors" / ("normal_" + n + ".pfm"), v.prior_normal);
    io::write_pfm(dir / "priors" / ("conf_" + n + ".pfm"), v.confidence);
    write_sparse_json(dir / "sparse" / (n + ".json"), v.sparse);
    for (std::size_t k = 0; k < v.masks.size(); ++k) {
      const std::string file = "masks/" + n + "_" + std::to_string(k) + ".png";
      io::write_mask_png(dir / file, v.masks[k].mask);
      proposals.push_back({{"view", i}, {"label", v.masks[k].label}, {"score", v.masks[k].score}, {"mask", file}});
    }
    io::write_pfm(dir / "gt" / ("depth_" + n + ".pfm"), v.gt_depth);
    io::write_pfm(dir / "gt" / ("normal_" + n + ".pfm"), v.gt_normal);
    LabelRaster ids(v.gt_ids.width(), v.gt_ids.height(), 0);
    for (std::size_t p = 0; p < ids.size(); ++p) ids[p] = v.gt_ids[p] + 1;
    io::write_label_png(dir / "gt" / ("ids_" + n + ".png"), ids);
  }
  write_json(dir / "proposals.json", ojson{{"prompts", prompts}, {"proposals", proposals}});
  io::write_mesh_ply(dir / "gt" / "mesh.ply", fx.gt_mesh);
  Mesh points;
  points.vertices = fx.gt_points;
  io::write_mesh_ply(dir / "gt" / "points.ply", points);
  ojson outliers = ojson::array();
  for (const auto& v : fx.views) outliers.push_back(v.sparse_outlier);
  write_json(dir / "gt" / "fixture.json",
             ojson{{"kind", fx.config.kind},
                   {"prior_scale", fx.config.prior_scale},
                   {"prior_shift", fx.config.prior_shift},
                   {"primitives", fx.scene.num_primitives()},
                   {"sparse_outliers", outliers}});
}

StageStatus cmd_make_fixture(const RunConfig& cfg, const StageOptions& opt) {
  return run_stage(cfg, opt, "make_fixture", cfg.input_dir(), section_of(cfg, {"seed", "prompts", "fixture"}), {},
                   [&](const fs::path& tmp, ojson& info) {
                     RunConfig c = cfg;
                     c.fixture.seed = cfg.seed;
                     const Fixture fx = make_fixture(c.fixture);
                     write_fixture(fx, cfg.prompts, tmp);
                     info["kind"] = fx.config.kind;
                     info["views"] = fx.cameras.size();
                     info["prompts"] = cfg.prompts;
                   });
}

StageStatus cmd_align(const RunConfig& cfg, const StageOptions& opt) {
  const fs::path in_dir = cfg.input_dir();
  std::vector<Upstream> up{{nullptr, in_dir / "cameras.json"}};
  if (Manifest(cfg.workdir).has("make_fixture")) up.push_back({"make_fixture", in_dir / "cameras.json"});
  return run_stage(
      cfg, opt, "align", cfg.workdir / "align", section_of(cfg, {"align"}), up, [&](const fs::path& tmp, ojson& info) {
        const Inputs in = load_inputs(cfg);
        const std::size_t n = in.cams.size();
        std::vector<ScalarMap> dense(n);
        std::vector<SparseDepth> sparse(n);
        for (std::size_t i = 0; i < n; ++i) {
          const CameraView& cam = in.cams[i];
          const std::string name = view_name(i);
          dense[i] = io::read_pfm_scalar(require(in.dir / "priors" / ("depth_" + name + ".pfm")));
          if (!dense[i].same_shape(cam.width(), cam.height())) {
            dense[i] = resize_bilinear(dense[i], cam.width(), cam.height());
          }
          ScalarMap conf = io::read_pfm_scalar(require(in.dir / "priors" / ("conf_" + name + ".pfm")));
          if (!conf.same_shape(cam.width(), cam.height())) conf = resize_nearest(conf, cam.width(), cam.height());
          sparse[i] = read_sparse_json(in.dir / "sparse" / (name + ".json"));
          io::write_mask_png(tmp / ("conf_" + name + ".png"), confidence_mask(conf, cfg.conf_threshold));
          io::write_mask_png(tmp / ("lt_" + name + ".png"), low_texture_mask(load_image(in, i), cfg.canny));
        }
        ojson groups = ojson::array();
        for (std::size_t g0 = 0; g0 < n; g0 += static_cast<std::size_t>(cfg.group_size)) {
          const std::size_t g1 = std::min(n, g0 + static_cast<std::size_t>(cfg.group_size));
          std::vector<const ScalarMap*> ptrs;
          for (std::size_t i = g0; i < g1; ++i) ptrs.push_back(&dense[i]);
          AlignmentParams p = align_scale_shift(ptrs, std::span<const SparseDepth>(sparse.data() + g0, g1 - g0),
                                                cfg.align);
          p.group_id = static_cast<int>(groups.size());
          for (std::size_t i = g0; i < g1; ++i) {
            io::write_pfm(tmp / ("depth_" + view_name(i) + ".pfm"), apply_alignment(dense[i], p));
          }
          say(opt, "align: group " + std::to_string(p.group_id) + " s=" + std::to_string(p.s) +
                       " t=" + std::to_string(p.t));
          groups.push_back({{"group", p.group_id},
                            {"first_view", g0},
                            {"last_view", g1 - 1},
                            {"s", p.s},
                            {"t", p.t},
                            {"samples", p.samples},
                            {"iterations", p.iterations},
                            {"mean_abs_residual", p.mean_abs_residual}});
        }
        write_json(tmp / "params.json", ojson{{"groups", groups}});
        info["alignment"] = groups;
      });
}

StageStatus cmd_lp3(const RunConfig& cfg, const StageOptions& opt) {
  return run_stage(
      cfg, opt, "lp3", cfg.workdir / "lp3", section_of(cfg, {"seed", "lp3"}),
      {{"align", cfg.workdir / "align" / "params.json"}}, [&](const fs::path& tmp, ojson& info) {
        const Inputs in = load_inputs(cfg);
        const std::size_t n = in.cams.size();
        std::vector<ScalarMap> depth(n);
        std::vector<Lp3View> views(n);
        for (std::size_t i = 0; i < n; ++i) {
          depth[i] = io::read_pfm_scalar(require(cfg.workdir / "align" / ("depth_" + view_name(i) + ".pfm")));
          views[i].camera = &in.cams[i];
          views[i].depth = &depth[i];
          for (int d = 1; d <= cfg.lp3_neighbors; ++d) {
            if (i >= static_cast<std::size_t>(d)) views[i].neighbors.push_back(static_cast<int>(i) - d);
            if (i + static_cast<std::size_t>(d) < n) views[i].neighbors.push_back(static_cast<int>(i) + d);
          }
        }
        const json props = read_json(in.dir / "proposals.json");
        try {
          for (const auto& p : props.at("proposals")) {
            const auto v = p.at("view").get<std::size_t>();
            if (v >= n) throw ValidationError("proposal for unknown view " + std::to_string(v));
            MaskProposal mp;
            mp.view_id = in.cams[v].id();
            mp.label = p.at("label").get<std::string>();
            mp.score = p.value("score", 1.0);
            mp.mask = io::read_mask_png(require(in.dir / p.at("mask").get<std::string>()));
            if (!mp.mask.same_shape(in.cams[v].width(), in.cams[v].height())) {
              throw ValidationError("mask size mismatch for view " + std::to_string(v));
            }
            views[v].masks.push_back(std::move(mp));
          }
        } catch (const json::exception& e) {
          throw IoError(std::string("malformed proposals.json: ") + e.what());
        }
        std::vector<std::string> warnings;
        for (std::size_t i = 0; i < n; ++i) {
          if (views[i].masks.empty()) warnings.push_back("view " + view_name(i) + " has no mask proposals");
        }
        Lp3Config lc = cfg.lp3;
        lc.seed = cfg.seed;
        FusionStats stats;
        const auto results = run_lp3(views, lc, &stats);
        for (auto& w : stats.warnings) warnings.push_back(w);
        ojson meta_views = ojson::array();
        int total_planes = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const auto& r = results[i];
          io::write_label_png(tmp / ("labels_" + view_name(i) + ".png"), r.labels.labels);
          ojson planes = ojson::array();
          for (int l = 1; l <= r.labels.num_labels(); ++l) {
            const auto& inf = r.labels.info[static_cast<std::size_t>(l - 1)];
            planes.push_back({{"label", l},
                              {"class", inf.source_class},
                              {"mean_normal", vec3(inf.mean_normal)},
                              {"score", inf.score},
                              {"pixels", inf.pixel_count}});
          }
          ojson diags = ojson::array();
          for (const auto& d : r.diagnostics) {
            diags.push_back({{"kmeans_clusters", d.kmeans_clusters},
                             {"clusters_kept", d.clusters_kept},
                             {"delta_groups", d.delta_groups},
                             {"normal_split", d.normal_split()},
                             {"delta_split", d.delta_split()},
                             {"fragments_dropped", d.fragments_dropped},
                             {"regions", d.regions}});
          }
          total_planes += r.labels.num_labels();
          meta_views.push_back({{"view", i}, {"boxes", r.boxes.size()}, {"planes", planes}, {"diagnostics", diags}});
        }
        for (const auto& w : warnings) say(opt, "warning: " + w);
        write_json(tmp / "labels.json", ojson{{"views", meta_views}});
        info["planes"] = total_planes;
        info["transferred_boxes"] = stats.transferred;
        info["warnings"] = warnings;
        info["prompts"] = cfg.prompts;
      });
}

StageStatus cmd_train(const RunConfig& cfg, const StageOptions& opt) {
  return run_stage(
      cfg, opt, "train", cfg.workdir / "train", section_of(cfg, {"seed", "init", "train"}),
      {{"align", cfg.workdir / "align" / "params.json"}, {"lp3", cfg.workdir / "lp3" / "labels.json"}},
      [&](const fs::path& tmp, ojson& info) {
        const Inputs in = load_inputs(cfg);
        const std::size_t n = in.cams.size();
        const fs::path align_dir = cfg.workdir / "align";
        const fs::path lp3_dir = cfg.workdir / "lp3";
        const json meta = read_json(lp3_dir / "labels.json");
        std::vector<VectorMap> images(n);
        std::vector<ScalarMap> depth(n);
        std::vector<VectorMap> normals(n);
        std::vector<MaskMap> lt(n);
        std::vector<MaskMap> conf(n);
        std::vector<PlaneLabelMap> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
          const std::string name = view_name(i);
          images[i] = load_image(in, i);
          depth[i] = io::read_pfm_scalar(require(align_dir / ("depth_" + name + ".pfm")));
          normals[i] = io::read_pfm_vector(require(in.dir / "priors" / ("normal_" + name + ".pfm")));
          if (!normals[i].same_shape(images[i])) throw ValidationError("prior normal size mismatch for view " + name);
          lt[i] = io::read_mask_png(require(align_dir / ("lt_" + name + ".png")));
          conf[i] = io::read_mask_png(require(align_dir / ("conf_" + name + ".png")));
          try {
            labels[i] = load_labels(lp3_dir, meta, i, in.cams[i]);
          } catch (const json::exception& e) {
            throw IoError(std::string("malformed lp3/labels.json: ") + e.what());
          }
        }

        GaussianCloud scene;
        if (cfg.init_from_sparse) scene = sparse_init(in, images, normals, cfg.init.initial_opacity, cfg.init.knn);
        const std::size_t from_sparse = scene.size();
        std::vector<PlaneInitView> pviews(n);
        for (std::size_t i = 0; i < n; ++i) pviews[i] = {&in.cams[i], &labels[i], &depth[i], &images[i]};
        PlaneInitConfig pc = cfg.init;
        pc.seed = cfg.seed;
        PlaneInitStats pstats;
        scene = plane_guided_init(scene, pviews, pc, &pstats);
        io::write_scene_ply(tmp / "init.ply", scene);
        say(opt, "train: " + std::to_string(scene.size()) + " Gaussians (" + std::to_string(from_sparse) +
                     " from sparse points, " + std::to_string(pstats.added) + " plane-guided)");

        std::vector<TrainView> tviews(n);
        for (std::size_t i = 0; i < n; ++i) {
          tviews[i].camera = &in.cams[i];
          tviews[i].sup = {&images[i], &depth[i], &normals[i], &lt[i], &conf[i], &labels[i]};
        }
        TrainConfig tc;
        tc.schedule = cfg.schedule();
        tc.weights = cfg.weights;
        tc.render = cfg.render;
        tc.normal_offset = cfg.normal_offset;
        tc.seed = cfg.seed;
        tc.ckpt_every = cfg.ckpt_every;
        if (cfg.ckpt_every > 0) {
          fs::create_directories(tmp / "ckpt");
          tc.checkpoint = [&](int it, const GaussianCloud& s) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "iter_%06d.ply", it);
            io::write_scene_ply(tmp / "ckpt" / buf, s);
          };
        }
        std::ostringstream log;
        tc.log = [&](const std::string& line) {
          log << line << "\n";
          say(opt, "train: " + line);
        };
        tc.dump_dir = cfg.workdir / "train_failure";
        const TrainResult res = train(std::move(scene), tviews, tc);
        io::write_scene_ply(tmp / "scene.ply", res.scene);
        std::ostringstream csv;
        write_loss_csv(csv, res.log);
        io::write_file_atomic(tmp / "loss.csv", csv.str());
        io::write_file_atomic(tmp / "log.txt", log.str());

        const Schedule s = tc.schedule;
        info["loss_weights"] = {{"dn", cfg.weights.dn}, {"p", cfg.weights.p}, {"rd", cfg.weights.rd},
                                {"rn", cfg.weights.rn}};
        info["schedule"] = {{"iterations", s.total_iters}, {"start_dn", s.start_dn}, {"start_p", s.start_p},
                            {"start_rd", s.start_rd},      {"start_rn", s.start_rn}};
        info["gaussians"] = {{"sparse", from_sparse},
                             {"plane_guided", pstats.added},
                             {"planes_supplemented", pstats.planes_supplemented},
                             {"total", res.scene.size()}};
      });
}

StageStatus cmd_fuse(const RunConfig& cfg, const StageOptions& opt) {
  return run_stage(cfg, opt, "fuse", cfg.workdir / "fuse", section_of(cfg, {"fuse"}),
                   {{"train", cfg.workdir / "train" / "scene.ply"}}, [&](const fs::path& tmp, ojson& info) {
                     const Inputs in = load_inputs(cfg);
                     const GaussianCloud scene = io::read_scene_ply(cfg.workdir / "train" / "scene.ply");
                     std::vector<RenderOutput> outs;
                     std::array<std::vector<double>, 3> coords;
                     for (const auto& cam : in.cams) {
                       outs.push_back(render(scene, cam, cfg.render));
                       const ScalarMap& d = outs.back().depth;
                       for (int v = 0; v < cam.height(); ++v) {
                         for (int u = 0; u < cam.width(); ++u) {
                           if (!is_valid(d(u, v))) continue;
                           const Eigen::Vector3d p = cam.camera_to_world(d(u, v) * cam.ray(u, v));
                           for (int a = 0; a < 3; ++a) coords[static_cast<std::size_t>(a)].push_back(p[a]);
                         }
                       }
                     }
                     if (coords[0].empty()) throw Error("fuse: no view rendered a valid depth");
                     // robust bounds: stray grazing-angle depths must not blow up the grid
                     Eigen::Vector3d lo;
                     Eigen::Vector3d hi;
                     for (std::size_t a = 0; a < 3; ++a) {
                       auto& c = coords[a];
                       const auto k = static_cast<std::ptrdiff_t>(kBoundsQuantile * static_cast<double>(c.size() - 1));
                       std::nth_element(c.begin(), c.begin() + k, c.end());
                       lo[static_cast<int>(a)] = c[static_cast<std::size_t>(k)];
                       std::nth_element(c.begin(), c.end() - 1 - k, c.end());
                       hi[static_cast<int>(a)] = *(c.end() - 1 - k);
                     }
                     const Eigen::Vector3d ext = (hi - lo) / cfg.voxel_size;
                     if (ext.prod() > kMaxVoxels) throw Error("fuse: volume too large for the voxel size");
                     TsdfVolume vol = TsdfVolume::covering(lo, hi, cfg.voxel_size, cfg.fuse_margin);
                     for (std::size_t i = 0; i < in.cams.size(); ++i) {
                       tsdf_integrate(vol, outs[i].depth, &outs[i].color, in.cams[i], trunc_of(cfg));
                     }
                     const Mesh mesh = marching_cubes(vol, cfg.min_weight);
                     if (mesh.empty()) say(opt, "warning: fused mesh is empty");
                     io::write_mesh_ply(tmp / "mesh.ply", mesh);
                     info["voxel_size"] = cfg.voxel_size;
                     info["trunc_m"] = trunc_of(cfg);
                     info["dims"] = vol.dims;
                     info["triangles"] = mesh.triangles.size();
                   });
}

StageStatus cmd_eval(const RunConfig& cfg, const StageOptions& opt) {
  const fs::path gt_path = cfg.input_dir() / "gt" / "mesh.ply";
  return run_stage(
      cfg, opt, "eval", cfg.workdir / "eval", section_of(cfg, {"seed", "eval"}),
      {{"fuse", cfg.workdir / "fuse" / "mesh.ply"}, {nullptr, gt_path}}, [&](const fs::path& tmp, ojson& info) {
        const Inputs in = load_inputs(cfg);
        const Mesh pred = io::read_mesh_ply(cfg.workdir / "fuse" / "mesh.ply");
        const Mesh gt = io::read_mesh_ply(gt_path);
        MetricsReport r;
        if (pred.empty()) {
          say(opt, "warning: empty mesh, surface metrics undefined");
          r.acc_cm = r.comp_cm = r.cd_cm = kInvalid;
          r.precision_pct = r.recall_pct = r.f1_pct = 0.0;
          r.nc_pct = kInvalid;
        } else {
          SurfaceMetricsConfig mc = cfg.metrics;
          mc.seed = cfg.seed;
          r = surface_metrics(pred, gt, mc);
        }
        const GaussianCloud scene = io::read_scene_ply(cfg.workdir / "train" / "scene.ply");
        double psnr_sum = 0.0;
        double ssim_sum = 0.0;
        for (std::size_t i = 0; i < in.cams.size(); ++i) {
          const RenderOutput out = render(scene, in.cams[i], cfg.render);
          VectorMap color = out.color;
          for (std::size_t p = 0; p < color.size(); ++p) color[p] = color[p].cwiseMax(0.0).cwiseMin(1.0);
          const ImageMetrics im = image_metrics(color, load_image(in, i));
          psnr_sum += im.psnr_db;
          ssim_sum += im.ssim;
          const fs::path gt_depth = in.dir / "gt" / ("depth_" + view_name(i) + ".pfm");
          if (cfg.heatmaps && fs::exists(gt_depth)) {
            const ScalarMap g = io::read_pfm_scalar(gt_depth);
            VectorMap hm(g.width(), g.height(), Eigen::Vector3d::Zero());
            for (std::size_t p = 0; p < hm.size(); ++p) {
              const double e = std::abs(out.depth[p] - g[p]);
              hm[p] = std::isfinite(e) ? heat(e / 0.05) : Eigen::Vector3d(0.0, 0.0, 0.5);
            }
            io::write_rgb_png(tmp / ("heatmap_" + view_name(i) + ".png"), hm);
          }
        }
        r.psnr_db = psnr_sum / static_cast<double>(in.cams.size());
        r.ssim = ssim_sum / static_cast<double>(in.cams.size());
        const std::string text = metrics_json(r);
        io::write_file_atomic(tmp / "metrics.json", text);
        say(opt, "eval: " + ojson::parse(text).dump());
        info["metrics"] = ojson::parse(text);
      });
}

void cmd_all(const RunConfig& cfg, const StageOptions& opt) {
  if (!fs::exists(cfg.input_dir() / "cameras.json") || Manifest(cfg.workdir).has("make_fixture")) {
    cmd_make_fixture(cfg, opt);
  }
  cmd_align(cfg, opt);
  cmd_lp3(cfg, opt);
  cmd_train(cfg, opt);
  cmd_fuse(cfg, opt);
  cmd_eval(cfg, opt);
}

}  // namespace planesplat
