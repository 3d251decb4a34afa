#include "planesplat/optimizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "planesplat/error.hpp"
#include "planesplat/io.hpp"

namespace planesplat {

double LearningRates::mu_at(int iteration, int total_iters) const {
  if (total_iters <= 0) return mu_init;
  const double t = std::clamp(static_cast<double>(iteration) / total_iters, 0.0, 1.0);
  return std::exp((1.0 - t) * std::log(mu_init) + t * std::log(mu_final));
}

Schedule Schedule::scaled(int total_iters) {
  Schedule s;
  s.total_iters = total_iters;
  // integer arithmetic keeps the 30000-iteration defaults exact
  auto at = [&](long long num) { return static_cast<int>(num * total_iters / 30); };
  s.start_dn = at(7);
  s.start_rd = at(7);
  s.start_p = at(14);
  s.start_rn = at(20);
  return s;
}

ActiveTerms Schedule::active(int iteration) const {
  return {iteration >= start_dn, iteration >= start_p, iteration >= start_rd, iteration >= start_rn};
}

void Schedule::validate() const {
  if (total_iters < 0) throw ValidationError("schedule: total_iters must be non-negative");
  for (const auto& [name, v] : {std::pair<const char*, int>{"start_dn", start_dn},
                                {"start_p", start_p},
                                {"start_rd", start_rd},
                                {"start_rn", start_rn}}) {
    if (v < 0 || v > total_iters) {
      throw ValidationError(std::string("schedule: ") + name + " = " + std::to_string(v) + " outside [0, " +
                            std::to_string(total_iters) + "]");
    }
  }
  if (!(lr.mu_init > 0 && lr.mu_final > 0 && lr.log_scale >= 0 && lr.rot >= 0 && lr.opacity >= 0 && lr.rgb >= 0)) {
    throw ValidationError("schedule: learning rates must be non-negative (mu rates positive)");
  }
}

int select_view(int iteration, int num_views, std::uint64_t seed) {
  if (num_views <= 0) throw InvalidArgument("select_view: no views");
  if (iteration < 0) throw InvalidArgument("select_view: negative iteration");
  const int epoch = iteration / num_views;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::vector<int> order(static_cast<std::size_t>(num_views));
  std::iota(order.begin(), order.end(), 0);
  for (int i = num_views - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  return order[static_cast<std::size_t>(iteration % num_views)];
}

Adam::Adam(std::size_t n, double beta1, double beta2, double eps) : b1_(beta1), b2_(beta2), eps_(eps), m_(n), v_(n) {}

namespace {

template <typename V>
void adam_update(V& param, const V& g, V& m, V& v, double lr, double b1, double b2, double c1, double c2,
                 double eps) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
  param -= (lr * (m / c1).array() / ((v / c2).array().sqrt() + eps)).matrix();
}

void adam_update(double& param, double g, double& m, double& v, double lr, double b1, double b2, double c1, double c2,
                 double eps) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v + (1.0 - b2) * g * g;
  param -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
}

}  // namespace

void Adam::step(GaussianCloud& scene, const GaussianGradients& g, const LearningRates& lr, double mu_lr) {
  if (g.size() != scene.size() || m_.size() != scene.size()) throw InvalidArgument("Adam::step: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_);
  const double c2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    adam_update(scene.mu[i], g.mu[i], m_.mu[i], v_.mu[i], mu_lr, b1_, b2_, c1, c2, eps_);
    adam_update(scene.log_scale[i], g.log_scale[i], m_.log_scale[i], v_.log_scale[i], lr.log_scale, b1_, b2_, c1, c2,
                eps_);
    adam_update(scene.rot[i], g.rot[i], m_.rot[i], v_.rot[i], lr.rot, b1_, b2_, c1, c2, eps_);
    adam_update(scene.opacity_logit[i], g.opacity_logit[i], m_.opacity_logit[i], v_.opacity_logit[i], lr.opacity, b1_,
                b2_, c1, c2, eps_);
    adam_update(scene.rgb[i], g.rgb[i], m_.rgb[i], v_.rgb[i], lr.rgb, b1_, b2_, c1, c2, eps_);
    const double n = scene.rot[i].norm();
    scene.rot[i] = n > 0.0 ? Eigen::Vector4d(scene.rot[i] / n) : Eigen::Vector4d(1, 0, 0, 0);
  }
}

namespace {

void dump_view(const std::filesystem::path& dir, int iteration, int view, const RenderOutput& out,
               const ViewSupervision& sup) {
  if (dir.empty()) return;
  const std::filesystem::path d = dir / ("nonfinite_iter" + std::to_string(iteration) + "_view" + std::to_string(view));
  io::write_pfm(d / "color.pfm", out.color);
  io::write_pfm(d / "gs_normal.pfm", out.gs_normal);
  io::write_pfm(d / "plane_dist.pfm", out.plane_dist);
  io::write_pfm(d / "depth.pfm", out.depth);
  io::write_pfm(d / "acc.pfm", out.acc);
  if (sup.prior_depth) io::write_pfm(d / "prior_depth.pfm", *sup.prior_depth);
}

void announce(const TrainConfig& cfg, int it, const ActiveTerms& now, const ActiveTerms& before) {
  if (!cfg.log) return;
  const std::string head = "iteration " + std::to_string(it) + ": ";
  if (it == 0) cfg.log(head + "l_rgb and l_s active");
  const LossWeights& w = cfg.weights;
  auto say = [&](bool on, bool was, const char* name, double weight) {
    if (on && !was) {
      char buf[32];
      const auto r = std::to_chars(buf, buf + sizeof(buf), weight);
      cfg.log(head + name + " active (weight " + std::string(buf, r.ptr) + ")");
    }
  };
  say(now.dn, before.dn, "l_dn", w.dn);
  say(now.rd, before.rd, "l_rd", w.rd);
  say(now.p, before.p, "l_p", w.p);
  say(now.rn, before.rn, "l_rn", w.rn);
}

}  // namespace

TrainResult train(GaussianCloud scene, std::span<const TrainView> views, const TrainConfig& cfg) {
  cfg.schedule.validate();
  if (views.empty()) throw ValidationError("train: no views");
  if (scene.empty()) throw ValidationError("train: empty scene");
  for (const auto& v : views) {
    if (v.camera == nullptr || v.sup.image == nullptr) throw ValidationError("train: every view needs a camera and image");
  }
  const Schedule& sch = cfg.schedule;
  Adam adam(scene.size());
  TrainResult res;
  res.log.reserve(static_cast<std::size_t>(sch.total_iters));
  ActiveTerms before{false, false, false, false};
  LossOptions opt;
  opt.normal_offset = cfg.normal_offset;
  for (int it = 0; it < sch.total_iters; ++it) {
    const ActiveTerms active = sch.active(it);
    announce(cfg, it, active, before);
    before = active;
    const int vi = select_view(it, static_cast<int>(views.size()), cfg.seed);
    const TrainView& view = views[static_cast<std::size_t>(vi)];
    RenderTrace trace;
    const RenderOutput out = render(scene, *view.camera, cfg.render, &trace);
    LossEvaluation ev = evaluate_losses(scene, out, *view.camera, view.sup, cfg.weights, active, opt);
    auto fail = [&](const std::string& what) {
      dump_view(cfg.dump_dir, it, vi, out, view.sup);
      throw NonFiniteLossError("non-finite " + what + " at iteration " + std::to_string(it) + ", view " +
                               std::to_string(view.camera->id()) +
                               (cfg.dump_dir.empty() ? std::string() : "; rasters dumped to " + cfg.dump_dir.string()));
    };
    if (!std::isfinite(ev.breakdown.total)) fail("loss");
    GaussianGradients g = render_backward(scene, *view.camera, out, trace, ev.render_grads, cfg.render);
    g.add(ev.scene_grads);
    if (!g.all_finite()) fail("gradient");
    adam.step(scene, g, sch.lr, sch.lr.mu_at(it, sch.total_iters));
    res.log.push_back({it, view.camera->id(), ev.breakdown, active});
    if (cfg.log && (it % 500 == 0 || it + 1 == sch.total_iters)) {
      char buf[32];
      const auto r = std::to_chars(buf, buf + sizeof(buf), ev.breakdown.total, std::chars_format::general, 6);
      cfg.log("iteration " + std::to_string(it) + " loss " + std::string(buf, r.ptr));
    }
    if (cfg.checkpoint && cfg.ckpt_every > 0 && (it + 1) % cfg.ckpt_every == 0 && it + 1 != sch.total_iters) {
      cfg.checkpoint(it + 1, scene);
    }
  }
  if (cfg.checkpoint) cfg.checkpoint(sch.total_iters, scene);
  res.scene = std::move(scene);
  return res;
}

void write_loss_csv(std::ostream& out, std::span<const LossLogRow> rows) {
  out << "iteration,view,l_rgb,l_s,l_dn,l_p,l_rd,l_rn,total,active_dn,active_p,active_rd,active_rn\n";
  char buf[64];
  auto num = [&](double v) {
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    out.write(buf, r.ptr - buf);
  };
  for (const auto& row : rows) {
    out << row.iteration << ',' << row.view;
    for (double v : {row.loss.l_rgb, row.loss.l_s, row.loss.l_dn, row.loss.l_p, row.loss.l_rd, row.loss.l_rn,
                     row.loss.total}) {
      out << ',';
      num(v);
    }
    out << ',' << int(row.active.dn) << ',' << int(row.active.p) << ',' << int(row.active.rd) << ','
        << int(row.active.rn) << '\n';
  }
}

}  // namespace planesplat
