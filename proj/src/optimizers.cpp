#include "vpo/optimizers.hpp"

#include <algorithm>
#include <deque>
#include <filesystem>
#include <regex>

#include <spdlog/spdlog.h>

namespace vpo {

namespace fs = std::filesystem;

void OptimizerConfig::validate() const {
  std::vector<std::string> errs;
  if (t_max < 1) errs.push_back("t_max must be >= 1");
  if (t_min < 0 || t_min > t_max) errs.push_back("t_min must lie in [0, t_max]");
  if (!(epsilon > 0.0 && epsilon <= 0.5)) errs.push_back("epsilon must lie in (0, 0.5]");
  if (challengers < 1) errs.push_back("challengers (K) must be >= 1");
  if (panel_size < 1) errs.push_back("panel_size must be >= 1");
  if (patience < 1) errs.push_back("patience must be >= 1");
  if (vfd_attempts < 1) errs.push_back("vfd_attempts must be >= 1");
  if (vtg_memory < 1) errs.push_back("vtg_memory (m) must be >= 1");
  if (errs.empty()) return;
  std::string msg = "optimizer config:";
  for (const auto& e : errs) msg += " " + e + ";";
  throw PreconditionError(msg);
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::Budget: return "budget";
    case StopReason::Equilibrium: return "equilibrium";
    case StopReason::Patience: return "patience";
  }
  return "budget";
}

StopReason parse_stop_reason(std::string_view text) {
  if (text == "budget") return StopReason::Budget;
  if (text == "equilibrium") return StopReason::Equilibrium;
  if (text == "patience") return StopReason::Patience;
  throw SchemaError("unknown stop reason '" + std::string(text) + "'");
}

CallCounters& CallCounters::operator+=(const CallCounters& o) {
  judge_calls += o.judge_calls;
  edit_calls += o.edit_calls;
  proposer_calls += o.proposer_calls;
  critic_calls += o.critic_calls;
  return *this;
}

const ImageRef* OptRunResult::find_image(std::string_view id) const {
  for (const auto& im : images)
    if (im.id == id) return &im;
  if (final_image.id == id) return &final_image;
  return nullptr;
}

void to_json(Json& j, const IterationRecord& r) {
  j = Json::object();
  j["t"] = r.t;
  j["residual"] = r.residual;
  j["image_id"] = r.image_id;
  j["incumbent_id"] = r.incumbent_id;
  j["share"] = r.share ? Json(*r.share) : Json(nullptr);
  j["outcome"] = r.outcome;
  j["accepted"] = r.accepted;
}

void from_json(const Json& j, IterationRecord& r) {
  r.t = j.at("t").get<int>();
  r.residual = j.at("residual").get<std::string>();
  r.image_id = j.at("image_id").get<std::string>();
  r.incumbent_id = j.at("incumbent_id").get<std::string>();
  r.share.reset();
  if (!j.at("share").is_null()) r.share = j["share"].get<double>();
  r.outcome = j.at("outcome").get<std::string>();
  r.accepted = j.at("accepted").get<bool>();
}

void to_json(Json& j, const CallCounters& c) {
  j = Json{{"judge_calls", c.judge_calls},
           {"edit_calls", c.edit_calls},
           {"proposer_calls", c.proposer_calls},
           {"critic_calls", c.critic_calls},
           {"api_calls", c.api_calls()},
           {"images_generated", c.images_generated()}};
}

void from_json(const Json& j, CallCounters& c) {
  c.judge_calls = j.at("judge_calls").get<long>();
  c.edit_calls = j.at("edit_calls").get<long>();
  c.proposer_calls = j.at("proposer_calls").get<long>();
  c.critic_calls = j.at("critic_calls").get<long>();
}

void to_json(Json& j, const OptRunResult& r) {
  j = Json::object();
  j["strategy"] = to_string(r.strategy);
  j["identity_id"] = r.identity_id;
  j["iterations_used"] = r.iterations_used;
  j["stop_reason"] = to_string(r.stop_reason);
  j["zero_shot_id"] = r.zero_shot_id;
  j["final_residual"] = r.final_residual;
  j["final_image"] = r.final_image.id.empty() ? Json(nullptr) : Json(r.final_image);
  j["counters"] = r.counters;
  j["records"] = r.records;
  j["images"] = r.images;
}

void from_json(const Json& j, OptRunResult& r) {
  r.strategy = parse_strategy(j.at("strategy").get<std::string>());
  r.identity_id = j.at("identity_id").get<std::string>();
  r.iterations_used = j.at("iterations_used").get<int>();
  r.stop_reason = parse_stop_reason(j.at("stop_reason").get<std::string>());
  r.zero_shot_id = j.at("zero_shot_id").get<std::string>();
  r.final_residual = j.at("final_residual").get<std::string>();
  r.final_image = j.at("final_image").is_null() ? ImageRef{} : j["final_image"].get<ImageRef>();
  r.counters = j.at("counters").get<CallCounters>();
  r.records = j.at("records").get<std::vector<IterationRecord>>();
  r.images = j.at("images").get<std::vector<ImageRef>>();
}

std::optional<Json> DirectoryCheckpointer::load_latest(const std::string& key) {
  const fs::path dir = fs::path(root_) / key;
  if (!fs::exists(dir)) return std::nullopt;
  static const std::regex name(R"(step_(\d+)\.json)");
  int best = -1;
  fs::path best_path;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string fname = entry.path().filename().string();
    if (!std::regex_match(fname, m, name)) continue;
    const int t = std::stoi(m[1].str());
    if (t > best) {
      best = t;
      best_path = entry.path();
    }
  }
  if (best < 0) return std::nullopt;
  return read_json_file(best_path.string());
}

void DirectoryCheckpointer::save(const std::string& key, int t, const Json& state) {
  write_json_file((fs::path(root_) / key / ("step_" + std::to_string(t) + ".json")).string(), state,
                  -1);
}

std::optional<Json> MemoryCheckpointer::load_latest(const std::string& key) {
  auto it = states_.find(key);
  if (it == states_.end() || it->second.empty()) return std::nullopt;
  return it->second.rbegin()->second;
}

void MemoryCheckpointer::save(const std::string& key, int t, const Json& state) {
  states_[key][t] = state;
  ++saves_;
}

std::string run_key(const TaskSpec& task, Strategy strategy, const std::string& identity_id) {
  return to_string(task.task_id) + "/" + to_string(strategy) + "/" + identity_id;
}

std::vector<std::string> panel_instructions(const TaskSpec& task, int panel_size) {
  if (task.judge_instructions.empty()) throw PreconditionError("task has no judge instructions");
  std::vector<std::string> out;
  for (int j = 0; j < panel_size; ++j) {
    const std::string& base = task.judge_instructions[j % task.judge_instructions.size()];
    out.push_back(task.feedback_instruction.empty() ? base : base + "\n\n" + task.feedback_instruction);
  }
  return out;
}

ImageRef make_zero_shot(const ImageRef& original, const TaskSpec& task, const Backends& backends,
                        std::uint64_t seed) {
  if (!backends.editor) throw PreconditionError("zero-shot: no editor configured");
  Stream stream = Stream::named(seed, to_string(task.task_id) + "/zero-shot/" + original.identity_id);
  const ImageRef refs[] = {original};
  ImageRef zs = backends.editor->edit(stream.next(), original, compose(task.base_prior, ""), refs);
  zs.variant = Variant::zero_shot();
  return zs;
}

std::size_t contest(std::span<const ImageRef> challengers, const ImageRef& incumbent, Judge& judge,
                    std::string_view instruction, Stream& stream, CallCounters* counters) {
  if (challengers.empty()) throw PreconditionError("contest: need at least one challenger");
  std::size_t best = 0;
  int best_wins = -1;
  bool any_consistent = false;
  for (std::size_t i = 0; i < challengers.size(); ++i) {
    ConsistentOutcome o = consistent_pairwise(judge, stream, instruction, challengers[i], incumbent, 1);
    if (counters) counters->judge_calls += o.judge_calls();
    any_consistent = any_consistent || !o.inconsistent();
    const int wins = o.winner == Side::First ? 1 : 0;
    if (wins > best_wins) {
      best_wins = wins;
      best = i;
    }
  }
  if (!any_consistent) spdlog::debug("contest: every comparison was inconsistent, keeping challenger 0");
  return best;
}

double budget_fraction(double n_iter, double min_iter, double max_iter) {
  if (!(min_iter < max_iter) || n_iter < min_iter || n_iter > max_iter)
    throw PreconditionError("budget_fraction: need min <= n <= max and min < max");
  return (n_iter - min_iter) / (max_iter - min_iter);
}

namespace {

struct Candidate {
  std::string prompt;
  ImageRef image;
};

void to_json(Json& j, const Candidate& c) { j = Json{{"prompt", c.prompt}, {"image", c.image}}; }
void from_json(const Json& j, Candidate& c) {
  c.prompt = j.at("prompt").get<std::string>();
  c.image = j.at("image").get<ImageRef>();
}

void check_common(const RunInputs& in) {
  in.cfg.validate();
  in.task.validate();
  if (!in.backends.editor) throw PreconditionError("optimizer: no editor configured");
  if (in.zero_shot.identity_id != in.original.identity_id ||
      in.zero_shot.variant != Variant::zero_shot())
    throw PreconditionError("optimizer: zero_shot must be the ZeroShot variant of the original");
}

/// Shared run bookkeeping: stream, result, checkpoint plumbing.
class RunContext {
 public:
  RunContext(const RunInputs& in, Strategy strategy)
      : in_(in), key_(run_key(in.task, strategy, in.original.identity_id)),
        stream_(Stream::named(in.cfg.seed, key_)) {
    result.strategy = strategy;
    result.identity_id = in.original.identity_id;
    result.zero_shot_id = in.zero_shot.id;
  }

  /// Returns the saved strategy state, or nullopt for a fresh run.
  std::optional<Json> restore() {
    if (!in_.checkpointer) return std::nullopt;
    auto state = in_.checkpointer->load_latest(key_);
    if (!state) return std::nullopt;
    result = state->at("result").get<OptRunResult>();
    stream_.set_counter(state->at("stream_counter").get<std::uint64_t>());
    t = state->at("t").get<int>();
    done = state->at("done").get<bool>();
    spdlog::info("{}: resuming after t={}{}", key_, t, done ? " (complete)" : "");
    return state->at("state");
  }

  void save(const Json& state) {
    if (!in_.checkpointer) return;
    Json j = Json::object();
    j["t"] = t;
    j["done"] = done;
    j["stream_counter"] = stream_.counter();
    j["result"] = result;
    j["state"] = state;
    in_.checkpointer->save(key_, t, j);
  }

  ImageRef edit(const ImageRef& source, const std::string& residual, int step) {
    const ImageRef refs[] = {source, in_.original};
    ImageRef out = in_.backends.editor->edit(stream_.next(), source,
                                             compose(in_.task.base_prior, residual), refs);
    out.variant = Variant::step(std::max(step, 1));
    ++result.counters.edit_calls;
    if (out.identity_id != in_.original.identity_id)
      throw BackendError("editor returned an image of another identity: " + out.id);
    result.images.push_back(out);
    return out;
  }

  void finish(const ImageRef& winner, const std::string& residual, StopReason reason, int iterations) {
    result.final_image = derive_image(winner, to_lower(to_string(result.strategy)) + "-final",
                                      Variant::final_image(), winner.payload,
                                      winner.producing_prompt.value_or(""));
    result.final_residual = residual;
    result.stop_reason = reason;
    result.iterations_used = iterations;
    done = true;
  }

  Stream& stream() { return stream_; }
  const std::string& key() const { return key_; }

  OptRunResult result;
  int t = 0;
  bool done = false;

 private:
  static std::string to_lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }

  const RunInputs& in_;
  std::string key_;
  Stream stream_;
};

}  // namespace

OptRunResult run_cvpo(const RunInputs& in) {
  check_common(in);
  const auto& cfg = in.cfg;
  const auto& b = in.backends;
  if (!b.proposer) throw PreconditionError("CVPO: no proposer configured");
  if (static_cast<int>(b.judges.size()) < cfg.panel_size)
    throw PreconditionError("CVPO: panel needs " + std::to_string(cfg.panel_size) + " judges");
  const std::span<const std::shared_ptr<Judge>> panel(b.judges.data(), cfg.panel_size);
  const auto instructions = panel_instructions(in.task, cfg.panel_size);

  RunContext run(in, Strategy::CVPO);
  Candidate champion, challenger;
  if (auto state = run.restore()) {
    if (run.done) return run.result;
    champion = state->at("champion").get<Candidate>();
    challenger = state->at("challenger").get<Candidate>();
  } else {
    // x_A is the zero-shot edit; the first challenger comes from one
    // proposal with no feedback, applied to x0.
    champion = {"", in.zero_shot};
    auto p = b.proposer->propose(run.stream().next(), in.task.proposer_instruction,
                                 compose(in.task.base_prior, ""), {}, 1);
    ++run.result.counters.proposer_calls;
    if (p.empty()) throw BackendError("CVPO: proposer returned nothing");
    challenger = {p.front(), run.edit(in.original, p.front(), 1)};
    run.save(Json{{"champion", champion}, {"challenger", challenger}});
  }

  auto state_json = [&] { return Json{{"champion", champion}, {"challenger", challenger}}; };
  while (!run.done && run.t < cfg.t_max) {
    const int t = run.t + 1;
    IterationRecord rec;
    rec.t = t;
    VoteTally tally;
    try {
      tally = panel_vote(panel, instructions, run.stream(), champion.image, challenger.image);
    } catch (const NoQuorum&) {
      // No winner this round: both candidates stay and are voted on again.
      run.result.counters.judge_calls += 2L * cfg.panel_size;
      rec.residual = challenger.prompt;
      rec.image_id = challenger.image.id;
      rec.incumbent_id = champion.image.id;
      rec.outcome = "no-quorum";
      run.result.records.push_back(rec);
      run.t = t;
      run.save(state_json());
      continue;
    }
    run.result.counters.judge_calls += tally.judge_calls;
    const bool challenger_won = tally.winner == Side::Second;
    Candidate& winner = challenger_won ? challenger : champion;
    Candidate& loser = challenger_won ? champion : challenger;
    rec.share = tally.share;

    if (equilibrium_reached(tally.share, t, cfg.t_min, cfg.epsilon)) {
      rec.residual = winner.prompt;
      rec.image_id = winner.image.id;
      rec.incumbent_id = winner.image.id;
      rec.outcome = "equilibrium";
      run.result.records.push_back(rec);
      run.t = t;
      run.finish(winner.image, winner.prompt, StopReason::Equilibrium, t);
      run.save(state_json());
      return run.result;
    }

    auto proposals = b.proposer->propose(run.stream().next(), in.task.optimizer_instruction,
                                         compose(in.task.base_prior, loser.prompt), tally.feedbacks,
                                         cfg.challengers);
    ++run.result.counters.proposer_calls;
    if (static_cast<int>(proposals.size()) != cfg.challengers)
      throw BackendError("CVPO: proposer returned " + std::to_string(proposals.size()) +
                         " proposals, expected " + std::to_string(cfg.challengers));
    std::vector<ImageRef> candidates;
    for (const auto& p : proposals) candidates.push_back(run.edit(winner.image, p, t));
    const std::size_t k = contest(candidates, winner.image, *panel[0], instructions[0],
                                  run.stream(), &run.result.counters);

    champion = Candidate(winner);
    challenger = {proposals[k], candidates[k]};
    rec.residual = challenger.prompt;
    rec.image_id = challenger.image.id;
    rec.incumbent_id = champion.image.id;
    rec.outcome = challenger_won ? "challenger-won" : "champion-held";
    rec.accepted = challenger_won;
    run.result.records.push_back(rec);
    run.t = t;
    if (run.t >= cfg.t_max) run.finish(champion.image, champion.prompt, StopReason::Budget, run.t);
    run.save(state_json());
  }
  if (!run.done) {
    run.finish(champion.image, champion.prompt, StopReason::Budget, run.t);
    run.save(state_json());
  }
  return run.result;
}

OptRunResult run_vfd(const RunInputs& in) {
  check_common(in);
  const auto& cfg = in.cfg;
  const auto& b = in.backends;
  if (!b.proposer) throw PreconditionError("VFD: no proposer configured");
  if (b.judges.empty()) throw PreconditionError("VFD: no judge configured");
  const std::string judge_instruction =
      in.task.vfd.judge_instruction.empty() ? in.task.judge_instructions.front()
                                            : in.task.vfd.judge_instruction;
  const std::string& proposer_instruction =
      in.task.vfd.proposer_instruction.empty() ? in.task.proposer_instruction
                                               : in.task.vfd.proposer_instruction;

  RunContext run(in, Strategy::VFD);
  Candidate incumbent{"", in.zero_shot};
  std::vector<std::string> feedback;
  int misses = 0;
  if (auto state = run.restore()) {
    if (run.done) return run.result;
    incumbent = state->at("incumbent").get<Candidate>();
    feedback = state->at("feedback").get<std::vector<std::string>>();
    misses = state->at("misses").get<int>();
  }
  auto state_json = [&] {
    return Json{{"incumbent", incumbent}, {"feedback", feedback}, {"misses", misses}};
  };

  while (run.t < cfg.t_max) {
    const int t = run.t + 1;
    auto p = b.proposer->propose(run.stream().next(), proposer_instruction,
                                 compose(in.task.base_prior, incumbent.prompt), feedback, 1);
    ++run.result.counters.proposer_calls;
    if (p.empty()) throw BackendError("VFD: proposer returned nothing");
    ImageRef candidate = run.edit(incumbent.image, p.front(), t);
    ConsistentOutcome o = consistent_pairwise(*b.judges.front(), run.stream(), judge_instruction,
                                              incumbent.image, candidate, cfg.vfd_attempts);
    run.result.counters.judge_calls += o.judge_calls();

    IterationRecord rec;
    rec.t = t;
    rec.residual = p.front();
    rec.image_id = candidate.id;
    if (o.winner == Side::Second) {
      incumbent = {p.front(), candidate};
      feedback.clear();
      misses = 0;
      rec.outcome = "win";
      rec.accepted = true;
    } else {
      feedback.push_back("Proposal:\n" + p.front() + "\nFeedback:\n" + o.feedback);
      ++misses;
      rec.outcome = o.inconsistent() ? "inconsistent" : "loss";
    }
    rec.incumbent_id = incumbent.image.id;
    run.result.records.push_back(rec);
    run.t = t;
    const bool patience_hit = misses >= cfg.patience && (!cfg.vfd_respect_t_min || t >= cfg.t_min);
    if (patience_hit)
      run.finish(incumbent.image, incumbent.prompt, StopReason::Patience, t);
    else if (t >= cfg.t_max)
      run.finish(incumbent.image, incumbent.prompt, StopReason::Budget, t);
    run.save(state_json());
    if (run.done) break;
  }
  if (!run.done) {
    run.finish(incumbent.image, incumbent.prompt, StopReason::Budget, run.t);
    run.save(state_json());
  }
  return run.result;
}

OptRunResult run_vtg(const RunInputs& in) {
  check_common(in);
  const auto& cfg = in.cfg;
  const auto& b = in.backends;
  if (!b.critic) throw PreconditionError("VTG: no critic configured");
  const std::string& constraints = in.task.vtg_constraints;
  const auto category = in.task.category_of(in.original.identity_id);

  RunContext run(in, Strategy::VTG);
  std::string prompt;
  std::string image_prompt;  // residual that produced `current`
  ImageRef current = in.original;
  std::deque<std::string> gradients;
  if (auto state = run.restore()) {
    if (run.done) return run.result;
    prompt = state->at("prompt").get<std::string>();
    image_prompt = state->at("image_prompt").get<std::string>();
    current = state->at("current").get<ImageRef>();
    for (const auto& g : state->at("gradients")) gradients.push_back(g.get<std::string>());
  }
  auto state_json = [&] {
    return Json{{"prompt", prompt},
                {"image_prompt", image_prompt},
                {"current", current},
                {"gradients", Json(std::vector<std::string>(gradients.begin(), gradients.end()))}};
  };

  while (run.t < cfg.t_max) {
    const int t = run.t + 1;
    const std::string composed = compose(in.task.base_prior, prompt);
    ImageRef next = run.edit(current, prompt, t);
    std::string context = composed;
    if (category) context += "\n\nCategory: " + *category;
    const std::string z = prompt.empty() ? context : prompt + "\n\n" + context;
    const std::string loss = b.critic->loss(run.stream().next(), in.task.vtg_loss_instruction, next, z);
    const std::string grad = b.critic->gradient(run.stream().next(), loss, prompt);
    gradients.push_back(grad);
    while (static_cast<int>(gradients.size()) > cfg.vtg_memory) gradients.pop_front();
    const std::vector<std::string> window(gradients.begin(), gradients.end());
    const std::string delta = b.critic->direction(run.stream().next(), window, constraints);
    const std::string stepped = b.critic->apply(run.stream().next(), prompt, delta);
    const std::string projected = b.critic->project(run.stream().next(), stepped, constraints);
    run.result.counters.critic_calls += 5;

    IterationRecord rec;
    rec.t = t;
    rec.residual = prompt;
    rec.image_id = next.id;
    rec.incumbent_id = next.id;
    rec.outcome = "step";
    rec.accepted = true;
    run.result.records.push_back(rec);

    image_prompt = prompt;
    current = std::move(next);
    prompt = projected;
    run.t = t;
    if (t >= cfg.t_max) run.finish(current, image_prompt, StopReason::Budget, t);
    run.save(state_json());
  }
  if (!run.done) {
    run.finish(current, image_prompt, StopReason::Budget, run.t);
    run.save(state_json());
  }
  return run.result;
}

OptRunResult run_optimizer(Strategy strategy, const RunInputs& in) {
  switch (strategy) {
    case Strategy::CVPO: return run_cvpo(in);
    case Strategy::VFD: return run_vfd(in);
    case Strategy::VTG: return run_vtg(in);
    case Strategy::None: break;
  }
  throw PreconditionError("run_optimizer: strategy 'none' cannot be optimized");
}

}  // namespace vpo
