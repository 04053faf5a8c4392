#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace vpo {

// Error taxonomy shared by all modules.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PreconditionError : Error {
  using Error::Error;
};
/// A backend (editor, judge, text model) failed after its retry budget.
struct BackendError : Error {
  using Error::Error;
};
struct SchemaError : Error {
  using Error::Error;
};

enum class TaskId { Hotels, Houses, People, Products, Custom };
enum class Strategy { VTG, VFD, CVPO, None };

std::string to_string(TaskId task);
std::string to_string(Strategy strategy);
TaskId parse_task(std::string_view text);
Strategy parse_strategy(std::string_view text);

/// Lineage tag of an image. `index` carries t for Step and the pass count
/// for Normalized; it is zero for every other kind.
struct Variant {
  enum class Kind { Original, ZeroShot, Step, Final, Distilled, Normalized };

  Kind kind = Kind::Original;
  int index = 0;

  static Variant original() { return {Kind::Original, 0}; }
  static Variant zero_shot() { return {Kind::ZeroShot, 0}; }
  static Variant step(int t);
  static Variant final_image() { return {Kind::Final, 0}; }
  static Variant distilled() { return {Kind::Distilled, 0}; }
  static Variant normalized(int passes);

  /// Statuses are the variants that may enter a tournament.
  bool is_status() const { return kind != Kind::Step; }

  friend bool operator==(const Variant&, const Variant&) = default;
  friend auto operator<=>(const Variant&, const Variant&) = default;
};

std::string to_string(Variant variant);
Variant parse_variant(std::string_view text);

/// Simulation payload: the identity block never changes along a lineage,
/// the presentation block lives in [0,1]^d.
struct SynthImage {
  Eigen::VectorXi identity;
  Eigen::VectorXd presentation;
};

struct FileImage {
  std::string path;
};

using Payload = std::variant<FileImage, SynthImage>;

/// Image ids are "<identity_id>" for originals and "<identity_id>~<suffix>"
/// for every derived variant, so the identity is recoverable from any id.
inline constexpr char kIdentitySeparator = '~';
std::string identity_of(std::string_view image_id);

struct ImageRef {
  std::string id;
  std::string identity_id;
  Variant variant;
  Payload payload;
  std::optional<std::string> parent;
  std::optional<std::string> producing_prompt;

  const SynthImage* synth() const { return std::get_if<SynthImage>(&payload); }
  const FileImage* file() const { return std::get_if<FileImage>(&payload); }
};

ImageRef make_original(std::string identity_id, Payload payload);

/// Child of `parent` carrying the same identity. The id suffix must be
/// unique within the identity.
ImageRef derive_image(const ImageRef& parent, std::string_view id_suffix, Variant variant,
                      Payload payload, std::string producing_prompt);

/// Throws PreconditionError when the lineage invariants do not hold.
void validate(const ImageRef& image);

/// Base prior followed by the residual, separated by one blank line. An
/// empty residual returns the base prior unchanged.
std::string compose(std::string_view base_prior, std::string_view residual);

struct PromptState {
  std::string base_prior;
  std::string residual;
  std::string composed;

  static PromptState make(std::string base_prior, std::string residual = {});
};

struct StrategyPrompts {
  std::string judge_instruction;
  std::string proposer_instruction;
};

struct TaskSpec {
  TaskId task_id = TaskId::Custom;
  std::string base_prior;
  std::vector<std::string> judge_instructions;
  std::string evaluator_instruction;
  std::string feedback_instruction;
  std::string optimizer_instruction;
  std::string proposer_instruction;
  StrategyPrompts vfd;
  std::string vtg_loss_instruction;
  std::string vtg_constraints;
  std::string context_removal_instruction;
  std::string distill_header;
  std::string distill_footer;
  /// identity id -> category, for within-category tournaments.
  std::optional<std::map<std::string, std::string>> category_labels;

  void validate() const;
  std::optional<std::string> category_of(const std::string& identity_id) const;
};

enum class Outcome { Left, Right, Inconsistent };
std::string to_string(Outcome outcome);
Outcome parse_outcome(std::string_view text);

/// Strategy of each side; equal for within-strategy trials, different for
/// head-to-head trials.
struct StrategyTag {
  Strategy left = Strategy::None;
  Strategy right = Strategy::None;

  static StrategyTag same(Strategy s) { return {s, s}; }
  friend bool operator==(const StrategyTag&, const StrategyTag&) = default;
};
std::string to_string(StrategyTag tag);
StrategyTag parse_strategy_tag(std::string_view text);

struct TrialSide {
  std::string image_id;
  Variant status;
};

/// One presentation of a canonical pair. `left`/`right` are always the
/// canonical (lexicographic) order; `order_index` says which side was shown
/// first. `outcome` is relative to the canonical order.
struct TrialRecord {
  std::string pair_id;
  TaskId task = TaskId::Custom;
  StrategyTag strategy;
  std::string evaluator;
  TrialSide left;
  TrialSide right;
  int order_index = 0;
  Outcome outcome = Outcome::Inconsistent;
  int kappa = 0;
  std::optional<std::string> category;
  std::int64_t ts = 0;

  /// Logical trial: the pair judged by one evaluator at one mitigation level.
  std::string trial_id() const;
};

std::string make_pair_id(std::string_view a, std::string_view b);

/// Throws SchemaError when a record violates the trial invariants.
void validate(const TrialRecord& record);

}  // namespace vpo
