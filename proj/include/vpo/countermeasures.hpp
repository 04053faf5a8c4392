#pragma once

#include <string>
#include <vector>

#include "vpo/interpret.hpp"
#include "vpo/ports.hpp"
#include "vpo/tournament.hpp"

// Pairwise normalization before judging, and prompt distillation of
// discovered themes.

namespace vpo {

struct NormalizedPair {
  ImageRef a;
  ImageRef b;
  /// Passes that completed; less than kappa when a pass failed.
  int passes = 0;
};

/// kappa passes of plan-then-edit on both images. A failing pass is dropped
/// with a warning and the previous pass is returned.
NormalizedPair normalize_pair(const ImageRef& a, const ImageRef& b, const TaskSpec& task, int kappa,
                              const Backends& backends, Stream& stream);

struct MitigationSettings {
  std::vector<int> kappas{0, 1, 3};
  std::string instruction;
  std::uint64_t seed = 0;
};

/// Tournament on normalized versions of each pair for every kappa. Rows keep
/// the pre-normalization ids and statuses and carry kappa; Inconsistent is
/// recovered at analysis time from the outcome.
TournamentResult evaluate_mitigation(const std::vector<Pairing>& pairs, const TaskSpec& task,
                                     const Backends& backends,
                                     std::span<const std::shared_ptr<Judge>> evaluators,
                                     const MitigationSettings& settings, const Clock& clock);

/// The task's distillation template with one bullet per theme and the
/// identity clause last.
std::string distill_prompt(const std::vector<Theme>& themes, const TaskSpec& task);
std::string distill_prompt(const interpret::ThemeNode& top, const TaskSpec& task);

inline constexpr std::string_view kDefaultIdentityClause =
    "Keep the subject itself exactly unchanged.";

/// Single zero-shot edit of x0 under the distilled prompt, tagged Distilled.
ImageRef apply_distilled(const ImageRef& x0, const std::string& distilled_prompt,
                         const Backends& backends, const CallContext& ctx);

}  // namespace vpo
