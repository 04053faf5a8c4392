#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "vpo/core.hpp"
#include "vpo/rng.hpp"

// Ports for every external model the engine talks to. Each port has a
// simulated implementation (sim.hpp) and an HTTP gateway (gateway.hpp).

namespace vpo {

enum class Side { First, Second };

inline Side flip(Side side) { return side == Side::First ? Side::Second : Side::First; }

struct Judgment {
  Side winner = Side::First;
  std::string feedback;
};

class Editor {
 public:
  virtual ~Editor() = default;
  /// Edits `image` under `composed_prompt`. The result has parent=image.id,
  /// the same identity, and variant Step(1); callers retag it.
  virtual ImageRef edit(const CallContext& ctx, const ImageRef& image,
                        std::string_view composed_prompt,
                        std::span<const ImageRef> references) = 0;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual Judgment judge(const CallContext& ctx, std::string_view instruction,
                         const ImageRef& first, const ImageRef& second) = 0;
  virtual std::string id() const = 0;
};

class Proposer {
 public:
  virtual ~Proposer() = default;
  /// Exactly `count` candidate residual prompts.
  virtual std::vector<std::string> propose(const CallContext& ctx, std::string_view instruction,
                                           std::string_view context_prompt,
                                           std::span<const std::string> feedback_history,
                                           int count) = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  /// Unit-norm embedding, deterministic per input.
  virtual Eigen::VectorXd embed(const CallContext& ctx, std::string_view text) = 0;
};

struct Theme {
  std::string name;
  std::optional<std::string> description;

  friend bool operator==(const Theme&, const Theme&) = default;
};

class Summarizer {
 public:
  virtual ~Summarizer() = default;
  /// Called with at least two items; singletons never reach the backend.
  virtual std::vector<Theme> summarize_many(const CallContext& ctx,
                                            std::span<const std::string> items,
                                            std::string_view schema_instruction) = 0;
};

/// Summarize contract: empty input is a precondition error and a single item
/// passes through verbatim as one theme without a backend call.
std::vector<Theme> summarize(Summarizer& summarizer, const CallContext& ctx,
                             std::span<const std::string> items,
                             std::string_view schema_instruction);

class Describer {
 public:
  virtual ~Describer() = default;
  virtual std::string describe(const CallContext& ctx, std::string_view instruction,
                               const ImageRef& original, const ImageRef& edited) = 0;
};

/// Produces the edit instructions that bring two images to a shared neutral
/// presentation (one normalization pass).
class NormalizationPlanner {
 public:
  virtual ~NormalizationPlanner() = default;
  virtual std::pair<std::string, std::string> plan(const CallContext& ctx,
                                                   std::string_view instruction,
                                                   const ImageRef& a, const ImageRef& b) = 0;
};

/// Textual-gradient machinery for VTG.
class Critic {
 public:
  virtual ~Critic() = default;
  virtual std::string loss(const CallContext& ctx, std::string_view loss_instruction,
                           const ImageRef& image, std::string_view prompt_and_context) = 0;
  virtual std::string gradient(const CallContext& ctx, std::string_view loss,
                               std::string_view prompt) = 0;
  /// Aggregates the recent gradients (oldest first) into an update direction.
  virtual std::string direction(const CallContext& ctx, std::span<const std::string> gradients,
                                std::string_view constraints) = 0;
  virtual std::string apply(const CallContext& ctx, std::string_view prompt,
                            std::string_view direction) = 0;
  virtual std::string project(const CallContext& ctx, std::string_view prompt,
                              std::string_view constraints) = 0;
};

class IdentityVerifier {
 public:
  virtual ~IdentityVerifier() = default;
  virtual bool same_identity(const CallContext& ctx, const ImageRef& x, const ImageRef& x0) = 0;
};

/// Everything an optimizer or campaign stage needs. `judges` is the
/// optimization panel; tournament evaluators are passed separately.
struct Backends {
  std::shared_ptr<Editor> editor;
  std::vector<std::shared_ptr<Judge>> judges;
  std::shared_ptr<Proposer> proposer;
  std::shared_ptr<Embedder> embedder;
  std::shared_ptr<Summarizer> summarizer;
  std::shared_ptr<Describer> describer;
  std::shared_ptr<NormalizationPlanner> normalizer;
  std::shared_ptr<Critic> critic;
  std::shared_ptr<IdentityVerifier> verifier;
};

/// Identity constraint check of `x` against the lineage original `x0`.
bool identity_check(IdentityVerifier* verifier, const CallContext& ctx, const ImageRef& x,
                    const ImageRef& x0);

}  // namespace vpo
