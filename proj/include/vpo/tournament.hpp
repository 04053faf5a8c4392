#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vpo/judging.hpp"
#include "vpo/ports.hpp"
#include "vpo/serialization.hpp"

namespace vpo {

/// An image entered into a tournament, with the strategy whose run produced
/// it (or the strategy whose tournament it belongs to, for shared originals).
struct Contestant {
  ImageRef image;
  Strategy strategy = Strategy::None;
  /// Logged id and status when they differ from the judged image (mitigation
  /// trials are recorded against the pre-normalization images).
  std::optional<TrialSide> record_as;

  TrialSide recorded() const { return record_as.value_or(TrialSide{image.id, image.variant}); }
};

struct PairingPolicy {
  std::vector<Variant> statuses;
  bool within_category = false;
  /// Also pair each status with itself (e.g. Final vs Final).
  bool include_same_status = true;
  int sample_size = 200;  // pairs per status-combination cell
  std::uint64_t seed = 0;
};

/// A cross-identity pair in canonical (lexicographic id) order.
struct Pairing {
  Contestant left;
  Contestant right;
  std::optional<std::string> category;

  std::string pair_id() const {
    return make_pair_id(left.recorded().image_id, right.recorded().image_id);
  }
};

/// Seeded uniform sample of cross-identity pairs for every status cell.
/// `task` supplies categories when the policy is within-category.
std::vector<Pairing> build_pairings(const std::vector<Contestant>& contestants,
                                    const PairingPolicy& policy, const TaskSpec& task);

/// Monotone timestamp source. Sim campaigns use a logical counter so logs
/// are byte-identical; live collection uses wall-clock milliseconds.
using Clock = std::function<std::int64_t()>;
Clock logical_clock(std::int64_t start = 0);
Clock wall_clock_ms();

struct RawJudgment {
  std::string pair_id;
  std::string evaluator;
  int order_index = 0;
  std::string first_id;
  Side winner = Side::First;
  std::string feedback;
};

struct SkippedPair {
  std::string pair_id;
  std::string evaluator;
  std::string reason;
};

struct TournamentResult {
  std::vector<TrialRecord> trials;
  std::vector<RawJudgment> raw;
  std::vector<SkippedPair> skipped;

  void append(TournamentResult&& other);
};

struct TournamentSettings {
  TaskId task = TaskId::Custom;
  std::string instruction;
  int kappa = 0;
  /// Overrides the per-side strategies for within-strategy tournaments.
  std::optional<StrategyTag> tag;
};

/// Both orders per pair per evaluator; agreement gives Left/Right on the
/// canonical order, disagreement Inconsistent. Backend failures skip the
/// pair for that evaluator and are reported, never thrown.
TournamentResult run_tournament(const std::vector<Pairing>& pairs,
                                std::span<const std::shared_ptr<Judge>> evaluators,
                                const TournamentSettings& settings, Stream& stream,
                                const Clock& clock);

/// Cross-strategy, cross-identity pairs of final images, sample_size pairs
/// per strategy matchup.
std::vector<Pairing> build_head_to_head(const std::map<Strategy, std::vector<ImageRef>>& finals,
                                        const PairingPolicy& policy, const TaskSpec& task);

TournamentResult head_to_head(const std::map<Strategy, std::vector<ImageRef>>& finals,
                              std::span<const std::shared_ptr<Judge>> evaluators,
                              const PairingPolicy& policy, const TaskSpec& task,
                              const std::string& instruction, Stream& stream, const Clock& clock);

void to_json(Json& j, const RawJudgment& r);

}  // namespace vpo
