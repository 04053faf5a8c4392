#include "vpo/tournament.hpp"

#include <chrono>
#include <set>

#include <spdlog/spdlog.h>

namespace vpo {

namespace {

std::optional<std::string> shared_category(const TaskSpec& task, const ImageRef& a,
                                           const ImageRef& b, bool required) {
  auto ca = task.category_of(a.identity_id);
  auto cb = task.category_of(b.identity_id);
  if (required && (!ca || !cb))
    throw PreconditionError("within-category pairing: no category for identity " +
                            (!ca ? a.identity_id : b.identity_id));
  if (ca && cb && *ca == *cb) return ca;
  return std::nullopt;
}

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng.index(i)]);
}

Pairing canonical(const Contestant& a, const Contestant& b, std::optional<std::string> category) {
  if (a.image.id < b.image.id) return {a, b, std::move(category)};
  return {b, a, std::move(category)};
}

/// Candidates are (i, j) index pairs into `xs` and `ys`.
std::vector<Pairing> sample_cell(const std::string& cell, const std::vector<const Contestant*>& xs,
                                 const std::vector<const Contestant*>& ys, bool same_group,
                                 const PairingPolicy& policy, const TaskSpec& task) {
  std::set<std::string> identities;
  for (const auto* c : xs) identities.insert(c->image.identity_id);
  for (const auto* c : ys) identities.insert(c->image.identity_id);
  if (identities.size() < 2 || xs.empty() || ys.empty())
    throw PreconditionError("pairing cell " + cell + ": fewer than two distinct identities");

  std::vector<Pairing> candidates;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = same_group ? i + 1 : 0; j < ys.size(); ++j) {
      const Contestant& a = *xs[i];
      const Contestant& b = *ys[j];
      if (a.image.identity_id == b.image.identity_id) continue;
      auto category = shared_category(task, a.image, b.image, policy.within_category);
      if (policy.within_category && !category) continue;
      candidates.push_back(canonical(a, b, std::move(category)));
    }
  if (candidates.empty())
    throw PreconditionError("pairing cell " + cell + ": no valid cross-identity pairs");
  Rng rng(mix_keys(policy.seed, fnv1a(cell)));
  shuffle(candidates, rng);
  if (static_cast<int>(candidates.size()) > policy.sample_size)
    candidates.resize(policy.sample_size);
  else if (static_cast<int>(candidates.size()) < policy.sample_size)
    spdlog::info("pairing cell {}: only {} pairs available (requested {})", cell,
                 candidates.size(), policy.sample_size);
  return candidates;
}

}  // namespace

std::vector<Pairing> build_pairings(const std::vector<Contestant>& contestants,
                                    const PairingPolicy& policy, const TaskSpec& task) {
  if (policy.statuses.empty()) throw PreconditionError("pairing policy lists no statuses");
  if (policy.sample_size < 1) throw PreconditionError("pairing policy sample_size must be >= 1");
  for (const auto& s : policy.statuses)
    if (!s.is_status()) throw PreconditionError("Step variants never enter tournaments");

  std::vector<std::vector<const Contestant*>> groups(policy.statuses.size());
  for (const auto& c : contestants)
    for (std::size_t s = 0; s < policy.statuses.size(); ++s)
      if (c.image.variant == policy.statuses[s]) groups[s].push_back(&c);

  std::vector<Pairing> out;
  for (std::size_t a = 0; a < groups.size(); ++a)
    for (std::size_t b = a; b < groups.size(); ++b) {
      if (a == b && !policy.include_same_status) continue;
      const std::string cell = to_string(policy.statuses[a]) + "x" + to_string(policy.statuses[b]);
      auto pairs = sample_cell(cell, groups[a], groups[b], a == b, policy, task);
      out.insert(out.end(), pairs.begin(), pairs.end());
    }
  return out;
}

Clock logical_clock(std::int64_t start) {
  auto counter = std::make_shared<std::int64_t>(start);
  return [counter] { return (*counter)++; };
}

Clock wall_clock_ms() {
  return [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

void TournamentResult::append(TournamentResult&& other) {
  trials.insert(trials.end(), std::make_move_iterator(other.trials.begin()),
                std::make_move_iterator(other.trials.end()));
  raw.insert(raw.end(), std::make_move_iterator(other.raw.begin()),
             std::make_move_iterator(other.raw.end()));
  skipped.insert(skipped.end(), std::make_move_iterator(other.skipped.begin()),
                 std::make_move_iterator(other.skipped.end()));
}

TournamentResult run_tournament(const std::vector<Pairing>& pairs,
                                std::span<const std::shared_ptr<Judge>> evaluators,
                                const TournamentSettings& settings, Stream& stream,
                                const Clock& clock) {
  if (evaluators.empty()) throw PreconditionError("run_tournament: need at least one evaluator");
  TournamentResult out;
  for (const auto& pair : pairs) {
    const ImageRef& left = pair.left.image;
    const ImageRef& right = pair.right.image;
    if (left.identity_id == right.identity_id)
      throw PreconditionError("run_tournament: self-identity pair " + pair.pair_id());
    const std::string pid = pair.pair_id();
    for (const auto& evaluator : evaluators) {
      const std::string eid = evaluator->id();
      // Contexts are drawn before the calls so a failure never shifts the
      // stream for later pairs.
      const CallContext c0 = stream.next();
      const CallContext c1 = stream.next();
      Judgment j0, j1;
      try {
        j0 = evaluator->judge(c0, settings.instruction, left, right);
        j1 = evaluator->judge(c1, settings.instruction, right, left);
      } catch (const std::exception& e) {
        spdlog::warn("tournament: skipping {} for {}: {}", pid, eid, e.what());
        out.skipped.push_back({pid, eid, e.what()});
        continue;
      }
      out.raw.push_back({pid, eid, 0, left.id, j0.winner, j0.feedback});
      out.raw.push_back({pid, eid, 1, right.id, j1.winner, j1.feedback});
      const Outcome o0 = j0.winner == Side::First ? Outcome::Left : Outcome::Right;
      const Outcome o1 = j1.winner == Side::First ? Outcome::Right : Outcome::Left;
      const Outcome outcome = o0 == o1 ? o0 : Outcome::Inconsistent;
      for (int order = 0; order < 2; ++order) {
        TrialRecord r;
        r.pair_id = pid;
        r.task = settings.task;
        r.strategy = settings.tag.value_or(StrategyTag{pair.left.strategy, pair.right.strategy});
        r.evaluator = eid;
        r.left = pair.left.recorded();
        r.right = pair.right.recorded();
        r.order_index = order;
        r.outcome = outcome;
        r.kappa = settings.kappa;
        r.category = pair.category;
        r.ts = clock();
        validate(r);
        out.trials.push_back(std::move(r));
      }
    }
  }
  return out;
}

std::vector<Pairing> build_head_to_head(const std::map<Strategy, std::vector<ImageRef>>& finals,
                                        const PairingPolicy& policy, const TaskSpec& task) {
  if (finals.size() < 2) throw PreconditionError("head_to_head: need at least two strategies");
  std::vector<std::pair<Strategy, std::vector<Contestant>>> sides;
  for (const auto& [s, images] : finals) {
    std::vector<Contestant> cs;
    for (const auto& im : images) cs.push_back({im, s, std::nullopt});
    sides.emplace_back(s, std::move(cs));
  }
  std::vector<Pairing> out;
  for (std::size_t a = 0; a < sides.size(); ++a)
    for (std::size_t b = a + 1; b < sides.size(); ++b) {
      std::vector<const Contestant*> xs, ys;
      for (const auto& c : sides[a].second) xs.push_back(&c);
      for (const auto& c : sides[b].second) ys.push_back(&c);
      const std::string cell = to_string(sides[a].first) + "x" + to_string(sides[b].first);
      auto pairs = sample_cell(cell, xs, ys, false, policy, task);
      out.insert(out.end(), pairs.begin(), pairs.end());
    }
  return out;
}

TournamentResult head_to_head(const std::map<Strategy, std::vector<ImageRef>>& finals,
                              std::span<const std::shared_ptr<Judge>> evaluators,
                              const PairingPolicy& policy, const TaskSpec& task,
                              const std::string& instruction, Stream& stream, const Clock& clock) {
  const auto pairs = build_head_to_head(finals, policy, task);
  TournamentSettings settings;
  settings.task = task.task_id;
  settings.instruction = instruction;
  return run_tournament(pairs, evaluators, settings, stream, clock);
}

void to_json(Json& j, const RawJudgment& r) {
  j = Json::object();
  j["pair_id"] = r.pair_id;
  j["evaluator"] = r.evaluator;
  j["order_index"] = r.order_index;
  j["first_id"] = r.first_id;
  j["winner"] = r.winner == Side::First ? "first" : "second";
  j["feedback"] = r.feedback;
}

}  // namespace vpo
