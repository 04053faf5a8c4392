#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vpo/config.hpp"
#include "vpo/optimizers.hpp"
#include "vpo/sim.hpp"
#include "vpo/tournament.hpp"

// Stage runner behind the CLI. Every stage reads its inputs from and writes
// its outputs under the run directory, records itself in manifest.json, and
// is skipped when the manifest already lists it as done.
//
// Layout:
//   manifest.json
//   images/<task>/{originals,zero_shot}.json
//   optimize/<task>/<strategy>/<identity>.json
//   checkpoints/<task>/<strategy>/<identity>/step_<t>.json
//   trials/{evaluate,head_to_head,mitigate,distill}.jsonl  (+ raw_*.jsonl)
//   interpret/descriptions.jsonl, interpret/<strategy>_<task>.{json,csv}
//   distill/<task>.json
//   analysis/<name>/{fit.json,emm.json,emm.csv,contrasts.json}
//   report/{summary.md,budget.csv,utility.csv,trials.csv}

namespace vpo {

inline const std::vector<std::string> kStages{"optimize", "evaluate", "interpret", "mitigate",
                                              "distill",  "analyze",  "report"};

struct CampaignOptions {
  /// Re-run stages even when the manifest lists them as done.
  bool force = false;
  /// Continue optimizer runs from their checkpoints (otherwise they restart).
  bool resume = true;
};

/// Per-task backends and data, rebuilt identically on every invocation.
struct TaskContext {
  TaskSpec spec;
  std::shared_ptr<sim::SimEnvironment> env;  // sim only
  Backends backends;
  std::vector<std::shared_ptr<Judge>> evaluators;
  std::vector<ImageRef> originals;
};

class Campaign {
 public:
  Campaign(CampaignConfig cfg, CampaignOptions options = {});

  /// Runs the named stages (or all, for "all"), prerequisites first.
  void run(const std::vector<std::string>& stages);
  void run_stage(const std::string& stage);

  bool stage_done(const std::string& stage) const;
  const Json& manifest() const { return manifest_; }
  const CampaignConfig& config() const { return cfg_; }
  std::string path(const std::string& relative) const;

  TaskContext& task_context(const std::string& task_name);
  /// Optimizer results for one task and strategy, in identity order.
  std::vector<OptRunResult> load_results(const TaskContext& ctx, Strategy strategy) const;

 private:
  void optimize();
  void evaluate();
  void interpret();
  void mitigate();
  void distill();
  void analyze();
  void report();

  void mark_done(const std::string& stage, Json summary);
  void save_manifest();
  std::vector<std::string> prerequisites(const std::string& stage) const;
  std::vector<ImageRef> load_images(const std::string& relative) const;
  void save_images(const std::string& relative, const std::vector<ImageRef>& images) const;
  std::vector<ImageRef> zero_shots(const TaskContext& ctx) const;
  std::string task_key(const TaskContext& ctx) const;

  CampaignConfig cfg_;
  CampaignOptions options_;
  Json manifest_;
  std::map<std::string, std::unique_ptr<TaskContext>> tasks_;
};

/// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first
/// failure after all workers stop.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

/// Sim environment for one task of a campaign.
sim::SimEnvironment campaign_environment(const CampaignConfig& cfg, const TaskSpec& task);

}  // namespace vpo
