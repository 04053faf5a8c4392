#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vpo/judging.hpp"
#include "vpo/ports.hpp"
#include "vpo/serialization.hpp"

namespace vpo {

struct OptimizerConfig {
  int t_max = 30;
  int t_min = 10;
  double epsilon = 0.05;
  int challengers = 3;  // K
  int panel_size = 3;
  int patience = 5;
  int vfd_attempts = 3;  // k
  int vtg_memory = 3;    // m
  /// VFD only honours its patience stop once t >= t_min.
  bool vfd_respect_t_min = true;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class StopReason { Budget, Equilibrium, Patience };
std::string to_string(StopReason reason);
StopReason parse_stop_reason(std::string_view text);

struct IterationRecord {
  int t = 0;
  /// Residual prompt of the image produced this iteration.
  std::string residual;
  std::string image_id;
  /// Champion or incumbent after the iteration.
  std::string incumbent_id;
  std::optional<double> share;
  /// win, loss, inconsistent, no-quorum, equilibrium, step
  std::string outcome;
  bool accepted = false;
};

struct CallCounters {
  long judge_calls = 0;
  long edit_calls = 0;
  long proposer_calls = 0;
  long critic_calls = 0;

  long api_calls() const { return judge_calls + edit_calls + proposer_calls + critic_calls; }
  long images_generated() const { return edit_calls; }
  CallCounters& operator+=(const CallCounters& o);
};

struct OptRunResult {
  Strategy strategy = Strategy::None;
  std::string identity_id;
  std::vector<IterationRecord> records;
  ImageRef final_image;
  std::string zero_shot_id;
  std::string final_residual;
  int iterations_used = 0;
  StopReason stop_reason = StopReason::Budget;
  CallCounters counters;
  /// Every image the run produced, in creation order.
  std::vector<ImageRef> images;

  const ImageRef* find_image(std::string_view id) const;
};

void to_json(Json& j, const IterationRecord& r);
void from_json(const Json& j, IterationRecord& r);
void to_json(Json& j, const CallCounters& c);
void from_json(const Json& j, CallCounters& c);
void to_json(Json& j, const OptRunResult& r);
void from_json(const Json& j, OptRunResult& r);

/// Persists run state after every iteration and hands back the latest state
/// when a run restarts.
class Checkpointer {
 public:
  virtual ~Checkpointer() = default;
  virtual std::optional<Json> load_latest(const std::string& key) = 0;
  virtual void save(const std::string& key, int t, const Json& state) = 0;
};

/// Files at `<root>/<key>/step_<t>.json`, key = `<task>/<strategy>/<identity>`.
class DirectoryCheckpointer final : public Checkpointer {
 public:
  explicit DirectoryCheckpointer(std::string root) : root_(std::move(root)) {}
  std::optional<Json> load_latest(const std::string& key) override;
  void save(const std::string& key, int t, const Json& state) override;

 private:
  std::string root_;
};

class MemoryCheckpointer final : public Checkpointer {
 public:
  std::optional<Json> load_latest(const std::string& key) override;
  void save(const std::string& key, int t, const Json& state) override;
  std::size_t saves() const { return saves_; }

 private:
  std::map<std::string, std::map<int, Json>> states_;
  std::size_t saves_ = 0;
};

std::string run_key(const TaskSpec& task, Strategy strategy, const std::string& identity_id);

/// Everything a run needs. `zero_shot` must be make_zero_shot(original).
struct RunInputs {
  const ImageRef& original;
  const ImageRef& zero_shot;
  const TaskSpec& task;
  const OptimizerConfig& cfg;
  const Backends& backends;
  Checkpointer* checkpointer = nullptr;
};

/// Edit of x0 under the bare base prior, tagged ZeroShot.
ImageRef make_zero_shot(const ImageRef& original, const TaskSpec& task, const Backends& backends,
                        std::uint64_t seed);

/// Index of the challenger with the most consistent wins over the incumbent
/// (k=1 each); ties and the all-lose case go to the lowest index.
std::size_t contest(std::span<const ImageRef> challengers, const ImageRef& incumbent, Judge& judge,
                    std::string_view instruction, Stream& stream, CallCounters* counters = nullptr);

OptRunResult run_cvpo(const RunInputs& in);
OptRunResult run_vfd(const RunInputs& in);
OptRunResult run_vtg(const RunInputs& in);
OptRunResult run_optimizer(Strategy strategy, const RunInputs& in);

double budget_fraction(double n_iter, double min_iter, double max_iter);

/// Panel instructions for CVPO: the task's judge prompts cycled to the panel
/// size, each followed by the feedback request.
std::vector<std::string> panel_instructions(const TaskSpec& task, int panel_size);

}  // namespace vpo
