// vpo: command-line entry point for campaigns and the study service.

#include <csignal>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "vpo/campaign.hpp"
#include "vpo/config.hpp"
#include "vpo/report.hpp"
#include "vpo/service.hpp"

namespace {

struct GlobalFlags {
  std::string config;
  bool resume = true;
  bool force = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
  std::optional<std::string> output_dir;
  std::optional<int> workers;
  std::vector<std::string> stages;
  bool verbose = false;
};

vpo::CampaignConfig load(const GlobalFlags& f) {
  namespace fs = std::filesystem;
  vpo::Json j = vpo::read_json_file(f.config);
  if (f.seed) j["seed"] = *f.seed;
  if (f.backend) j["backend"]["kind"] = *f.backend;
  if (f.output_dir) j["output_dir"] = fs::absolute(*f.output_dir).string();
  if (f.workers) j["workers"] = *f.workers;
  return vpo::config_from_json(j, fs::absolute(f.config).parent_path().string());
}

vpo::service::StudyServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int serve(const vpo::CampaignConfig& cfg) {
  auto study = vpo::service::make_study(cfg, vpo::wall_clock_ms());
  vpo::service::ServeOptions opts;
  opts.static_dir = cfg.service.static_dir;
  opts.images = vpo::service::load_image_index(cfg.output_dir);
  vpo::service::StudyServer server(study, opts);
  const int port = server.bind(cfg.service.host, cfg.service.port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  spdlog::info("serving {} pairs to {} participants on http://{}:{}", study->pairs().size(),
               cfg.service.participants.size(), cfg.service.host, port);
  server.listen();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual prompt optimization campaigns"};
  app.require_subcommand(1);
  GlobalFlags f;
  app.add_option("-c,--config", f.config, "Campaign config (JSON)")->required()->check(CLI::ExistingFile);
  app.add_flag("--resume,!--no-resume", f.resume, "Continue optimizer runs from checkpoints (default on)");
  app.add_flag("--force", f.force, "Re-run stages the manifest lists as done");
  app.add_option("--seed", f.seed, "Override the config seed");
  app.add_option("--backend", f.backend, "Override the backend")->check(CLI::IsMember({"sim", "gateway"}));
  app.add_option("-o,--output-dir", f.output_dir, "Override the run directory");
  app.add_option("-j,--workers", f.workers, "Parallel identities per stage")->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", f.verbose, "Debug logging");

  const std::vector<std::string> stage_cmds{"optimize", "evaluate", "interpret", "mitigate",
                                            "distill",  "analyze",  "report"};
  for (const auto& s : stage_cmds) app.add_subcommand(s, "Run the " + s + " stage (prerequisites first)");
  auto* run = app.add_subcommand("run", "Run several stages, or all of them");
  run->add_option("--stage", f.stages, "Stage to run (repeatable; default all)")
      ->check(CLI::IsMember(vpo::kStages));
  app.add_subcommand("serve", "Serve the human-judgment study");
  app.add_subcommand("validate", "Check the config and gateway credentials, then exit");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(f.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    const auto cfg = load(f);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "validate") {
      cfg.preflight();
      std::cout << "config ok: " << cfg.name << " (" << cfg.hash() << ")\n";
      return 0;
    }
    if (cmd == "serve") return serve(cfg);
    vpo::Campaign campaign(cfg, {f.force, f.resume});
    if (cmd == "run") {
      campaign.run(f.stages.empty() ? std::vector<std::string>{"all"} : f.stages);
    } else {
      campaign.run({cmd});
    }
    std::cout << "run directory: " << cfg.output_dir << "\n";
    return 0;
  } catch (const vpo::ConfigError& e) {
    std::cerr << "config errors:\n";
    for (const auto& line : e.errors) std::cerr << "  " << line << "\n";
    return 2;
  } catch (const vpo::PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
