#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "vpo/ports.hpp"

// Closed, deterministic preference environment. Images are SynthImage
// payloads; the judge is a Bradley-Terry chooser over a linear utility of the
// presentation block; the editor understands a small edit language:
//
//   set <i> <v>      presentation[i] = v
//   add <i> <d>      presentation[i] += d
//   set id <j> <v>   identity edit: never applied, counted as a violation
//
// Ops may appear anywhere in a line; other tokens are ignored. After all ops
// the presentation is clamped to [0,1].

namespace vpo::sim {

struct SimEnvironment {
  /// Utility weights over the presentation block.
  Eigen::VectorXd weights;
  /// Judge temperature: P(first) = logistic(dU / noise_scale + order_bias).
  /// Zero gives the deterministic argmax chooser.
  double noise_scale = 1.0;
  double order_bias = 0.0;
  std::uint64_t seed = 0;
  /// Gaussian noise added to every coordinate an edit op touches.
  double edit_noise = 0.0;
  int identity_dim = 4;

  /// A prompt containing `prior_text` moves each presentation coordinate a
  /// fraction `prior_pull` toward `prior_target`, but only in the direction
  /// the prior favors (up when the target is >= 0.5, down otherwise).
  std::string prior_text;
  Eigen::VectorXd prior_target;
  double prior_pull = 0.0;

  /// Judge feedback names at most this many coordinates.
  int feedback_coordinates = 3;

  // Proposer behaviour.
  double step_min = 0.3;
  double step_max = 0.6;
  int max_named = 3;
  double explore_probability = 0.5;

  // Critic (VTG) behaviour.
  double critic_step = 0.2;
  double critic_noise = 0.05;

  // Summarizer and describer.
  int max_themes = 8;
  double describe_threshold = 0.05;

  int presentation_dim() const { return static_cast<int>(weights.size()); }
  void validate() const;
};

double logistic(double z);

/// Temperature at which the best possible presentation beats the worst with
/// probability `p_max`.
double noise_scale_for_max_win_prob(const Eigen::VectorXd& weights, double p_max);

template <typename DerivedW, typename DerivedX>
typename DerivedW::Scalar utility(const Eigen::MatrixBase<DerivedW>& weights,
                                  const Eigen::MatrixBase<DerivedX>& presentation) {
  return weights.dot(presentation);
}

double sim_utility(const SimEnvironment& env, const SynthImage& image);
double sim_utility(const SimEnvironment& env, const ImageRef& image);

/// Probability that the first-shown image wins; handles the zero-noise and
/// infinite-bias limits.
double first_win_probability(double utility_gap, double noise_scale, double order_bias);

struct EditOp {
  enum class Kind { Set, Add };
  Kind kind = Kind::Add;
  bool identity = false;
  int index = 0;
  double value = 0.0;

  friend bool operator==(const EditOp&, const EditOp&) = default;
};

struct EditProgram {
  std::vector<EditOp> ops;
  bool applies_prior = false;
  int unknown_tokens = 0;
  int malformed_ops = 0;
};

EditProgram parse_edit_program(std::string_view text, std::string_view prior_text = {});
std::string format_op(const EditOp& op);
std::string format_ops(const std::vector<EditOp>& ops);
/// Shortest text that round-trips the double exactly.
std::string format_number(double value);

struct EditResult {
  SynthImage image;
  int identity_violations = 0;
};

EditResult apply_edit_program(const SimEnvironment& env, const SynthImage& image,
                              const EditProgram& program, Rng& rng);

class SimEditor final : public Editor {
 public:
  explicit SimEditor(std::shared_ptr<const SimEnvironment> env) : env_(std::move(env)) {}
  ImageRef edit(const CallContext& ctx, const ImageRef& image, std::string_view composed_prompt,
                std::span<const ImageRef> references) override;
  std::uint64_t identity_violations() const { return violations_.load(); }

 private:
  std::shared_ptr<const SimEnvironment> env_;
  std::atomic<std::uint64_t> violations_{0};
};

class SimJudge final : public Judge {
 public:
  SimJudge(std::shared_ptr<const SimEnvironment> env, std::string id,
           std::optional<double> order_bias = std::nullopt,
           std::optional<double> noise_scale = std::nullopt);
  Judgment judge(const CallContext& ctx, std::string_view instruction, const ImageRef& first,
                 const ImageRef& second) override;
  std::string id() const override { return id_; }
  double order_bias() const { return order_bias_; }
  double noise_scale() const { return noise_scale_; }

 private:
  std::shared_ptr<const SimEnvironment> env_;
  std::string id_;
  double order_bias_;
  double noise_scale_;
};

/// Feedback naming the coordinates where `winner` beats `loser` most, by
/// utility-weighted gap.
std::string describe_advantage(const SimEnvironment& env, const SynthImage& winner,
                               const SynthImage& loser);

class SimProposer final : public Proposer {
 public:
  explicit SimProposer(std::shared_ptr<const SimEnvironment> env) : env_(std::move(env)) {}
  std::vector<std::string> propose(const CallContext& ctx, std::string_view instruction,
                                   std::string_view context_prompt,
                                   std::span<const std::string> feedback_history,
                                   int count) override;

 private:
  std::shared_ptr<const SimEnvironment> env_;
};

/// Feature-hashing embedder: sum of seeded Gaussian token vectors, normalized.
class SimEmbedder final : public Embedder {
 public:
  explicit SimEmbedder(std::uint64_t seed, int dim = 64) : seed_(seed), dim_(dim) {}
  Eigen::VectorXd embed(const CallContext& ctx, std::string_view text) override;

 private:
  std::uint64_t seed_;
  int dim_;
};

/// Groups edit ops found in the items by (coordinate, direction) and reports
/// the most frequent groups; falls back to the most frequent words when the
/// items carry no ops.
class SimSummarizer final : public Summarizer {
 public:
  explicit SimSummarizer(int max_themes = 8) : max_themes_(max_themes) {}
  std::vector<Theme> summarize_many(const CallContext& ctx, std::span<const std::string> items,
                                    std::string_view schema_instruction) override;

 private:
  int max_themes_;
};

inline constexpr std::string_view kNoSalientChanges = "no salient changes";

class SimDescriber final : public Describer {
 public:
  explicit SimDescriber(std::shared_ptr<const SimEnvironment> env) : env_(std::move(env)) {}
  std::string describe(const CallContext& ctx, std::string_view instruction,
                       const ImageRef& original, const ImageRef& edited) override;

 private:
  std::shared_ptr<const SimEnvironment> env_;
};

/// One pass moves each presentation a fraction `gamma` toward the pair mean.
class SimNormalizer final : public NormalizationPlanner {
 public:
  explicit SimNormalizer(double gamma) : gamma_(gamma) {}
  std::pair<std::string, std::string> plan(const CallContext& ctx, std::string_view instruction,
                                           const ImageRef& a, const ImageRef& b) override;
  double gamma() const { return gamma_; }

 private:
  double gamma_;
};

class SimCritic final : public Critic {
 public:
  explicit SimCritic(std::shared_ptr<const SimEnvironment> env) : env_(std::move(env)) {}
  std::string loss(const CallContext& ctx, std::string_view loss_instruction,
                   const ImageRef& image, std::string_view prompt_and_context) override;
  std::string gradient(const CallContext& ctx, std::string_view loss,
                       std::string_view prompt) override;
  std::string direction(const CallContext& ctx, std::span<const std::string> gradients,
                        std::string_view constraints) override;
  std::string apply(const CallContext& ctx, std::string_view prompt,
                    std::string_view direction) override;
  std::string project(const CallContext& ctx, std::string_view prompt,
                      std::string_view constraints) override;

 private:
  std::shared_ptr<const SimEnvironment> env_;
};

class SimIdentityVerifier final : public IdentityVerifier {
 public:
  bool same_identity(const CallContext& ctx, const ImageRef& x, const ImageRef& x0) override;
};

/// Identity blocks are random integers; presentations uniform in [lo, hi].
std::vector<ImageRef> make_originals(const SimEnvironment& env, int count, std::uint64_t seed,
                                     double lo = 0.0, double hi = 0.2,
                                     std::string_view prefix = "id");

/// Defaults used by the sim campaigns and the acceptance suite: eight
/// presentation coordinates, judge temperature set so the best presentation
/// beats the worst with probability 0.75.
SimEnvironment standard_environment(std::uint64_t seed, std::string prior_text);

Backends make_backends(std::shared_ptr<const SimEnvironment> env, int panel_size,
                       double normalization_gamma = 0.5);

}  // namespace vpo::sim
