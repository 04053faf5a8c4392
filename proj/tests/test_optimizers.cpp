#include <doctest.h>

#include <set>

#include "support.hpp"
#include "vpo/optimizers.hpp"

using namespace vpo;
using testing::ScriptedJudge;

namespace {

struct Fixture {
  std::shared_ptr<sim::SimEnvironment> env = testing::sim_env(21);
  TaskSpec task = testing::hotels();
  Backends backends = sim::make_backends(env, 3);
  ImageRef x0 = sim::make_originals(*env, 1, 5).front();
  OptimizerConfig cfg;

  Fixture() { cfg.seed = 99; }
  ImageRef zero_shot() const { return make_zero_shot(x0, task, backends, cfg.seed); }
  OptRunResult run(Strategy s, Checkpointer* cp = nullptr) {
    const ImageRef zs = zero_shot();
    return run_optimizer(s, RunInputs{x0, zs, task, cfg, backends, cp});
  }
};

/// Records the feedback history length it was handed on each call.
class RecordingProposer final : public Proposer {
 public:
  explicit RecordingProposer(std::shared_ptr<Proposer> inner) : inner_(std::move(inner)) {}
  std::vector<std::string> propose(const CallContext& ctx, std::string_view instruction,
                                   std::string_view context_prompt, std::span<const std::string> feedback,
                                   int count) override {
    sizes.push_back(feedback.size());
    return inner_->propose(ctx, instruction, context_prompt, feedback, count);
  }
  std::vector<std::size_t> sizes;

 private:
  std::shared_ptr<Proposer> inner_;
};

class CrashingEditor final : public Editor {
 public:
  CrashingEditor(std::shared_ptr<Editor> inner, int allowed) : inner_(std::move(inner)), allowed_(allowed) {}
  ImageRef edit(const CallContext& ctx, const ImageRef& image, std::string_view prompt,
                std::span<const ImageRef> refs) override {
    if (allowed_-- <= 0) throw BackendError("editor went away");
    return inner_->edit(ctx, image, prompt, refs);
  }

 private:
  std::shared_ptr<Editor> inner_;
  int allowed_;
};

double utility_of(const sim::SimEnvironment& env, const OptRunResult& r, const ImageRef& zs,
                  const std::string& id) {
  if (id == zs.id) return sim::sim_utility(env, zs);
  const ImageRef* im = r.find_image(id);
  REQUIRE(im != nullptr);
  return sim::sim_utility(env, *im);
}

}  // namespace

TEST_CASE("budget fraction") {
  CHECK(budget_fraction(10, 10, 30) == 0.0);
  CHECK(budget_fraction(30, 10, 30) == 1.0);
  CHECK(budget_fraction(15, 10, 30) == 0.25);
  CHECK_THROWS_AS(budget_fraction(5, 10, 30), PreconditionError);
  CHECK_THROWS_AS(budget_fraction(31, 10, 30), PreconditionError);
  CHECK_THROWS_AS(budget_fraction(10, 10, 10), PreconditionError);
}

TEST_CASE("optimizer config validation lists every problem") {
  OptimizerConfig c;
  c.t_max = 0;
  c.epsilon = 0.7;
  c.challengers = 0;
  try {
    c.validate();
    FAIL("expected a precondition error");
  } catch (const PreconditionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("t_max") != std::string::npos);
    CHECK(msg.find("epsilon") != std::string::npos);
    CHECK(msg.find("challengers") != std::string::npos);
  }
}

TEST_CASE("CVPO stops at the first balanced round once t_min is reached") {
  Fixture f;
  f.cfg.t_min = 10;
  f.cfg.epsilon = 0.05;
  const std::set<int> split_rounds{3, 12, 15};
  auto round_of = [](int call) { return call / 2 + 1; };
  auto j0 = std::make_shared<ScriptedJudge>("j0", [](int, auto&, auto&) { return Side::First; });
  auto j1 = std::make_shared<ScriptedJudge>("j1", [](int c, auto&, auto&) { return testing::vote_a(c); });
  auto j2 = std::make_shared<ScriptedJudge>("j2", [&](int c, auto&, auto&) {
    return split_rounds.count(round_of(c)) ? testing::vote_b(c) : testing::vote_a(c);
  });
  f.backends.judges = {j0, j1, j2};
  const auto r = f.run(Strategy::CVPO);
  CHECK(r.stop_reason == StopReason::Equilibrium);
  CHECK(r.iterations_used == 12);
  REQUIRE(r.records.size() == 12);
  CHECK(r.records[2].share == doctest::Approx(0.5));
  CHECK(r.records[2].outcome == "champion-held");
  CHECK(r.records[11].outcome == "equilibrium");
  CHECK(j1->calls() == 24);
  // Champion held every round, so the final image is the zero-shot edit.
  CHECK(r.final_image.parent == f.zero_shot().id);
  CHECK(r.final_image.variant == Variant::final_image());
}

TEST_CASE("CVPO without balanced rounds uses the full budget") {
  Fixture f;
  f.cfg.t_max = 8;
  f.cfg.t_min = 2;
  auto j = [](const std::string& id) {
    return std::make_shared<ScriptedJudge>(id, [](int c, auto&, auto&) { return testing::vote_b(c); });
  };
  f.backends.judges = {j("0"), j("1"), j("2")};
  const auto r = f.run(Strategy::CVPO);
  CHECK(r.stop_reason == StopReason::Budget);
  CHECK(r.iterations_used == 8);
  for (const auto& rec : r.records) CHECK(rec.accepted);
  // One initial proposal plus one per round; K edits per round plus the first.
  CHECK(r.counters.proposer_calls == 9);
  CHECK(r.counters.edit_calls == 1 + 8 * f.cfg.challengers);
}

TEST_CASE("CVPO rounds with no consistent judge keep both candidates") {
  Fixture f;
  f.cfg.t_max = 4;
  f.cfg.t_min = 0;
  auto j = [](const std::string& id) {
    return std::make_shared<ScriptedJudge>(id, [](int, auto&, auto&) { return Side::First; });
  };
  f.backends.judges = {j("0"), j("1"), j("2")};
  const auto r = f.run(Strategy::CVPO);
  REQUIRE(r.records.size() == 4);
  for (const auto& rec : r.records) {
    CHECK(rec.outcome == "no-quorum");
    CHECK(rec.image_id == r.records[0].image_id);
  }
  CHECK(r.stop_reason == StopReason::Budget);
}

TEST_CASE("VFD patience stop and feedback reset") {
  Fixture f;
  f.cfg.patience = 4;
  f.cfg.vfd_respect_t_min = false;
  auto proposer = std::make_shared<RecordingProposer>(f.backends.proposer);
  f.backends.proposer = proposer;

  SUBCASE("incumbent always preferred") {
    f.backends.judges = {std::make_shared<ScriptedJudge>("j", [](int c, auto&, auto&) { return testing::vote_a(c); })};
    const auto r = f.run(Strategy::VFD);
    CHECK(r.stop_reason == StopReason::Patience);
    CHECK(r.iterations_used == 4);
    CHECK(proposer->sizes == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(r.final_image.parent == f.zero_shot().id);
  }
  SUBCASE("a win at t=3 clears feedback and resets the miss count") {
    f.backends.judges = {std::make_shared<ScriptedJudge>("j", [](int c, auto&, auto&) {
      return c / 2 + 1 == 3 ? testing::vote_b(c) : testing::vote_a(c);
    })};
    const auto r = f.run(Strategy::VFD);
    CHECK(r.stop_reason == StopReason::Patience);
    CHECK(r.iterations_used == 7);
    CHECK(proposer->sizes == std::vector<std::size_t>{0, 1, 2, 0, 1, 2, 3});
    CHECK(r.records[2].accepted);
    CHECK(r.final_image.parent == r.records[2].image_id);
    CHECK(r.final_residual == r.records[2].residual);
  }
  SUBCASE("t_min defers the patience stop when respected") {
    f.cfg.vfd_respect_t_min = true;
    f.cfg.t_min = 10;
    f.backends.judges = {std::make_shared<ScriptedJudge>("j", [](int c, auto&, auto&) { return testing::vote_a(c); })};
    const auto r = f.run(Strategy::VFD);
    CHECK(r.iterations_used == 10);
    CHECK(r.stop_reason == StopReason::Patience);
  }
  SUBCASE("inconsistent judge uses all attempts and counts as a miss") {
    f.cfg.vfd_attempts = 3;
    auto j = std::make_shared<ScriptedJudge>("j", [](int, auto&, auto&) { return Side::First; });
    f.backends.judges = {j};
    const auto r = f.run(Strategy::VFD);
    CHECK(r.iterations_used == 4);
    CHECK(r.records[0].outcome == "inconsistent");
    CHECK(j->calls() == 4 * 6);
    CHECK(r.counters.judge_calls == 24);
  }
}

TEST_CASE("VTG always runs the full budget") {
  Fixture f;
  const auto r = f.run(Strategy::VTG);
  CHECK(r.iterations_used == 30);
  CHECK(r.stop_reason == StopReason::Budget);
  CHECK(budget_fraction(r.iterations_used, f.cfg.t_min, f.cfg.t_max) == 1.0);
  CHECK(r.counters.critic_calls == 150);
  CHECK(r.counters.edit_calls == 30);
  CHECK(r.counters.judge_calls == 0);
}

TEST_CASE("noise-free judges never replace the incumbent with a worse image") {
  for (std::uint64_t seed : {1, 2, 3}) {
    Fixture f;
    f.cfg.seed = seed;
    f.cfg.t_min = 30;  // no early stop
    for (auto& j : f.backends.judges) j = std::make_shared<sim::SimJudge>(f.env, j->id(), 0.0, 0.0);
    const ImageRef zs = f.zero_shot();
    for (Strategy s : {Strategy::CVPO, Strategy::VFD}) {
      const auto r = f.run(s);
      double prev = sim::sim_utility(*f.env, zs);
      for (const auto& rec : r.records) {
        const double u = utility_of(*f.env, r, zs, rec.incumbent_id);
        CHECK(u >= prev);
        prev = u;
      }
      CHECK(sim::sim_utility(*f.env, r.final_image) >= sim::sim_utility(*f.env, zs));
    }
  }
}

TEST_CASE("a crashed run resumes to the same result") {
  for (Strategy s : {Strategy::CVPO, Strategy::VFD, Strategy::VTG}) {
    CAPTURE(to_string(s));
    Fixture clean;
    const Json expected = clean.run(s);

    testing::TempDir dir("resume");
    DirectoryCheckpointer cp(dir.str());
    Fixture crashing;
    const auto inner = crashing.backends.editor;
    crashing.backends.editor = std::make_shared<CrashingEditor>(inner, 9);
    // The zero-shot edit happens outside the run; make it before the crash budget matters.
    const ImageRef zs = clean.zero_shot();
    CHECK_THROWS_AS(run_optimizer(s, RunInputs{crashing.x0, zs, crashing.task, crashing.cfg, crashing.backends, &cp}),
                    BackendError);
    crashing.backends.editor = inner;
    const Json resumed = run_optimizer(s, RunInputs{crashing.x0, zs, crashing.task, crashing.cfg, crashing.backends, &cp});
    CHECK(resumed == expected);

    // A finished run is returned from its checkpoint without new calls.
    crashing.backends.editor = std::make_shared<CrashingEditor>(inner, 0);
    const Json again = run_optimizer(s, RunInputs{crashing.x0, zs, crashing.task, crashing.cfg, crashing.backends, &cp});
    CHECK(again == expected);
  }
}

TEST_CASE("run results survive JSON") {
  Fixture f;
  f.cfg.t_max = 5;
  f.cfg.t_min = 5;
  const auto r = f.run(Strategy::CVPO);
  const Json j = r;
  const OptRunResult back = j.get<OptRunResult>();
  CHECK(Json(back) == j);
  CHECK(j["counters"]["api_calls"] == r.counters.api_calls());
}

TEST_CASE("contest picks the most consistent winner, lowest index on ties") {
  const ImageRef inc = testing::synth("i", {0.5});
  const std::vector<ImageRef> ch{testing::synth("c0", {0.1}), testing::synth("c1", {0.9}), testing::synth("c2", {0.9})};
  ScriptedJudge j("j", [](int c, const ImageRef& first, const ImageRef& second) {
    // Prefers whichever image has the larger coordinate, consistently.
    (void)c;
    return first.synth()->presentation[0] >= second.synth()->presentation[0] ? Side::First : Side::Second;
  });
  Stream s = Stream::named(1, "contest");
  CallCounters counters;
  CHECK(contest(ch, inc, j, "", s, &counters) == 1);
  CHECK(counters.judge_calls == 6);
}

TEST_CASE("panel instructions cycle the task prompts") {
  const TaskSpec t = testing::hotels();
  const auto ins = panel_instructions(t, static_cast<int>(t.judge_instructions.size()) + 1);
  CHECK(ins.back() == ins.front());
  CHECK(ins.front().find(t.judge_instructions.front()) == 0);
}
