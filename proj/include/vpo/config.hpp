#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vpo/analysis.hpp"
#include "vpo/gateway.hpp"
#include "vpo/interpret.hpp"
#include "vpo/optimizers.hpp"

// Campaign configuration: one JSON file, ${VAR} interpolation in any string,
// every problem reported at once before a backend is touched.

namespace vpo {

/// All validation failures of a config, one per line.
struct ConfigError : PreconditionError {
  explicit ConfigError(std::vector<std::string> errors);
  std::vector<std::string> errors;
};

enum class BackendKind { Sim, Gateway };
std::string to_string(BackendKind kind);

struct SimSettings {
  int identities = 50;
  std::vector<double> weights{1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, -0.3};
  /// Sets the judge temperature unless noise_scale is given.
  double max_win_prob = 0.75;
  std::optional<double> noise_scale;
  double order_bias = 0.0;
  double edit_noise = 0.0;
  int identity_dim = 4;
  double prior_target = 0.65;
  double prior_pull = 0.5;
  double originals_lo = 0.0;
  double originals_hi = 0.2;
  double gamma = 0.5;  // normalization contraction per pass
  int evaluators = 3;  // tournament judges
  int max_themes = 8;
};

struct GatewaySettings {
  gateway::GatewaySetup setup;
  /// Tournament evaluators; defaults to the optimization judges.
  std::vector<gateway::GatewayConfig> evaluators;
  /// `<images_dir>/<task>/` holds one original per file.
  std::string images_dir;
};

struct TournamentConfig {
  int sample_size = 200;
  bool include_same_status = true;
  bool within_category = false;
  bool head_to_head = true;
};

/// One fitted model. `source` names the trial log: evaluate, head_to_head,
/// mitigate or distill.
struct AnalysisSpec {
  std::string name;
  std::string source = "evaluate";
  analysis::ExpandMode mode = analysis::ExpandMode::Standard;
  analysis::ModelSpec model;
  std::vector<std::string> emm;
  /// Treatment contrasts against this cell; all pairs when absent.
  std::optional<std::string> reference;
  /// Optional row filter (column, value) applied before fitting.
  std::optional<std::pair<std::string, std::string>> filter;
};

struct InterpretConfig {
  bool enabled = true;
  interpret::Linkage linkage = interpret::Linkage::Average;
  interpret::Distance distance = interpret::Distance::Cosine;
  int concurrency = 1;
};

struct MitigationConfig {
  bool enabled = true;
  std::vector<int> kappas{0, 1, 3};
  int sample_size = 200;
  Strategy strategy = Strategy::CVPO;
};

struct DistillConfig {
  bool enabled = true;
  /// Themes come from this strategy's interpret tree.
  Strategy strategy = Strategy::CVPO;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  int queue_size = 30;
  std::vector<std::string> participants;
  /// Trial log the pairs are drawn from (evaluate, head_to_head, mitigate, distill).
  std::string pairs_source = "evaluate";
  std::string static_dir;  // UI bundle
  std::string image_root;  // served under /images
};

struct CampaignConfig {
  std::string name = "campaign";
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  std::vector<std::string> tasks;
  std::vector<Strategy> strategies{Strategy::CVPO, Strategy::VFD, Strategy::VTG};
  OptimizerConfig optimizer;
  BackendKind backend = BackendKind::Sim;
  SimSettings sim;
  std::optional<GatewaySettings> gateway;
  TournamentConfig tournament;
  std::vector<AnalysisSpec> analyses;
  InterpretConfig interpret;
  MitigationConfig mitigation;
  DistillConfig distill;
  ServiceConfig service;
  int workers = 1;
  /// Directory of the config file; relative paths resolve against it.
  std::string base_dir = ".";

  std::uint64_t seed_value() const { return seed.value_or(0); }
  /// Exhaustive; throws ConfigError listing every problem.
  void validate() const;
  /// Validation plus gateway auth variables.
  void preflight() const;
  /// Canonical JSON of the resolved config.
  Json to_json() const;
  std::string hash() const;
};

/// Replaces ${NAME} with the environment value. Unset names are collected.
std::string interpolate_env(const std::string& text, std::vector<std::string>& missing);

std::vector<AnalysisSpec> default_analyses();

CampaignConfig config_from_json(const Json& j, const std::string& base_dir = ".");
CampaignConfig load_config(const std::string& path);

}  // namespace vpo
