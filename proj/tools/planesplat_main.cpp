// planesplat: pipeline driver.  Exit codes: 0 ok, 1 invalid input or config,
// 2 runtime failure.

#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "planesplat/error.hpp"
#include "planesplat/io.hpp"
#include "planesplat/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string config;
  std::string workdir;
  std::string kind;
  long long seed = -1;
  bool force = false;
  bool dry_run = false;
};

planesplat::RunConfig resolve(const Options& o) {
  planesplat::RunConfig cfg;
  if (!o.config.empty()) {
    std::string text;
    try {
      text = planesplat::io::read_file(o.config);
    } catch (const planesplat::IoError& e) {
      throw planesplat::ValidationError(e.what());
    }
    cfg = planesplat::config_from_json(text);
  }
  if (!o.workdir.empty()) cfg.workdir = o.workdir;
  if (!o.kind.empty()) cfg.fixture.kind = o.kind;
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
  cfg.lp3.seed = cfg.init.seed = cfg.fixture.seed = cfg.metrics.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Planar Gaussian splatting pipeline on synthetic or prepared inputs"};
  app.require_subcommand(0, 1);
  Options o;
  app.add_option("--config", o.config, "Run config JSON (a manifest.json also works)");
  app.add_option("--workdir", o.workdir, "Override the run directory");
  app.add_option("--seed", o.seed, "Seed for every random choice")->check(CLI::NonNegativeNumber);
  app.add_flag("--force", o.force, "Rerun stages that are up to date");
  app.add_flag("--dry-run", o.dry_run, "Print the resolved config and exit");

  struct Cmd {
    const char* name;
    const char* help;
    planesplat::StageStatus (*fn)(const planesplat::RunConfig&, const planesplat::StageOptions&);
  };
  const Cmd cmds[] = {
      {"make-fixture", "Generate a synthetic input set", planesplat::cmd_make_fixture},
      {"align", "Scale/shift alignment of depth priors, low-texture and confidence masks", planesplat::cmd_align},
      {"lp3", "Plane label maps from mask proposals", planesplat::cmd_lp3},
      {"train", "Plane-guided initialization and optimization", planesplat::cmd_train},
      {"fuse", "TSDF fusion of rendered depth into a mesh", planesplat::cmd_fuse},
      {"eval", "Surface and image metrics", planesplat::cmd_eval},
  };
  std::string chosen;
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help)->fallthrough();
    if (std::string(c.name) == "make-fixture") {
      sub->add_option("--kind", o.kind, "box_room, two_walls or sphere_in_room");
    }
    sub->callback([&chosen, name = c.name] { chosen = name; });
  }
  app.add_subcommand("all", "Run every stage in order")->fallthrough()->callback([&chosen] { chosen = "all"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    const planesplat::RunConfig cfg = resolve(o);
    if (o.dry_run) {
      std::cout << planesplat::config_to_json(cfg);
      return kExitOk;
    }
    if (chosen.empty()) {
      std::cerr << app.help();
      return kExitValidation;
    }
    planesplat::StageOptions opt;
    opt.force = o.force;
    opt.log = [](const std::string& line) { std::cerr << line << "\n"; };
    if (chosen == "all") {
      planesplat::cmd_all(cfg, opt);
    } else {
      for (const auto& c : cmds) {
        if (chosen == c.name) c.fn(cfg, opt);
      }
    }
  } catch (const planesplat::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
