#include <doctest.h>

#include <set>

#include "support.hpp"
#include "vpo/tournament.hpp"

using namespace vpo;
using testing::ScriptedJudge;
using testing::synth;

namespace {

/// n identities, each with an Original and a Final image.
std::vector<Contestant> field(int n) {
  std::vector<Contestant> out;
  for (int i = 0; i < n; ++i) {
    const ImageRef x0 = synth("id" + std::to_string(i), {0.1 * i});
    out.push_back({x0, Strategy::CVPO, std::nullopt});
    out.push_back({derive_image(x0, "cvpo-final", Variant::final_image(), synth("t", {0.1 * i + 0.05}).payload, "p"),
                   Strategy::CVPO, std::nullopt});
  }
  return out;
}

std::shared_ptr<Judge> prefers_higher(const std::string& id) {
  return std::make_shared<ScriptedJudge>(id, [](int, const ImageRef& a, const ImageRef& b) {
    return a.synth()->presentation[0] >= b.synth()->presentation[0] ? Side::First : Side::Second;
  });
}

}  // namespace

TEST_CASE("pairings are cross-identity, canonical and sized per cell") {
  const auto cs = field(6);
  PairingPolicy p;
  p.statuses = {Variant::original(), Variant::final_image()};
  p.sample_size = 7;
  p.seed = 3;
  const auto pairs = build_pairings(cs, p, testing::hotels());
  CHECK(pairs.size() == 3 * 7);
  std::set<std::string> seen;
  for (const auto& pr : pairs) {
    CHECK(pr.left.image.identity_id != pr.right.image.identity_id);
    CHECK(pr.left.image.id < pr.right.image.id);
    seen.insert(pr.pair_id() + to_string(pr.left.image.variant) + to_string(pr.right.image.variant));
  }
  CHECK(seen.size() == pairs.size());

  const auto again = build_pairings(cs, p, testing::hotels());
  for (std::size_t i = 0; i < pairs.size(); ++i) CHECK(again[i].pair_id() == pairs[i].pair_id());
  p.seed = 4;
  const auto other = build_pairings(cs, p, testing::hotels());
  bool differs = false;
  for (std::size_t i = 0; i < pairs.size(); ++i) differs = differs || other[i].pair_id() != pairs[i].pair_id();
  CHECK(differs);
}

TEST_CASE("small cells return every available pair") {
  const auto cs = field(3);
  PairingPolicy p;
  p.statuses = {Variant::original(), Variant::final_image()};
  p.include_same_status = false;
  p.sample_size = 100;
  // Original x Final across 3 identities: 3*3 minus the 3 same-identity pairs.
  CHECK(build_pairings(cs, p, testing::hotels()).size() == 6);
  p.include_same_status = true;
  CHECK(build_pairings(cs, p, testing::hotels()).size() == 3 + 6 + 3);
}

TEST_CASE("pairing preconditions") {
  const auto cs = field(3);
  PairingPolicy p;
  p.statuses = {Variant::step(2)};
  CHECK_THROWS_AS(build_pairings(cs, p, testing::hotels()), PreconditionError);
  p.statuses = {Variant::original()};
  CHECK_THROWS_AS(build_pairings(field(1), p, testing::hotels()), PreconditionError);
  p.statuses = {};
  CHECK_THROWS_AS(build_pairings(cs, p, testing::hotels()), PreconditionError);
}

TEST_CASE("within-category pairing only pairs shared categories") {
  TaskSpec task = testing::hotels();
  task.category_labels = std::map<std::string, std::string>{
      {"id0", "sofa"}, {"id1", "sofa"}, {"id2", "lamp"}, {"id3", "lamp"}};
  PairingPolicy p;
  p.statuses = {Variant::original()};
  p.within_category = true;
  const auto pairs = build_pairings(field(4), p, task);
  REQUIRE(pairs.size() == 2);
  for (const auto& pr : pairs) {
    REQUIRE(pr.category.has_value());
    CHECK(task.category_of(pr.left.image.identity_id) == task.category_of(pr.right.image.identity_id));
  }
  task.category_labels->erase("id3");
  CHECK_THROWS_AS(build_pairings(field(4), p, task), PreconditionError);
}

TEST_CASE("every pair is judged in both orders by every evaluator") {
  const auto cs = field(4);
  PairingPolicy p;
  p.statuses = {Variant::original(), Variant::final_image()};
  const auto pairs = build_pairings(cs, p, testing::hotels());
  const std::vector<std::shared_ptr<Judge>> evals{prefers_higher("e1"), prefers_higher("e2")};
  TournamentSettings s;
  s.task = TaskId::Hotels;
  s.tag = StrategyTag::same(Strategy::CVPO);
  Stream stream = Stream::named(1, "t");
  const auto r = run_tournament(pairs, evals, s, stream, logical_clock());
  REQUIRE(r.trials.size() == pairs.size() * 2 * 2);
  REQUIRE(r.raw.size() == r.trials.size());
  for (std::size_t i = 0; i < r.trials.size(); i += 2) {
    const auto& a = r.trials[i];
    const auto& b = r.trials[i + 1];
    CHECK(a.order_index == 0);
    CHECK(b.order_index == 1);
    CHECK(a.trial_id() == b.trial_id());
    CHECK(a.outcome == b.outcome);
    CHECK(a.ts < b.ts);
    CHECK(a.outcome != Outcome::Inconsistent);
  }
  // Outcome is relative to the canonical order: the higher image wins.
  for (const auto& t : r.trials) {
    const auto& pr = *std::find_if(pairs.begin(), pairs.end(), [&](const Pairing& q) { return q.pair_id() == t.pair_id; });
    const bool left_higher = pr.left.image.synth()->presentation[0] >= pr.right.image.synth()->presentation[0];
    CHECK(t.outcome == (left_higher ? Outcome::Left : Outcome::Right));
  }
}

TEST_CASE("order-biased evaluator yields Inconsistent; failures are skipped") {
  const auto cs = field(3);
  PairingPolicy p;
  p.statuses = {Variant::original()};
  const auto pairs = build_pairings(cs, p, testing::hotels());
  struct Failing : Judge {
    Judgment judge(const CallContext&, std::string_view, const ImageRef&, const ImageRef&) override {
      throw BackendError("down");
    }
    std::string id() const override { return "down"; }
  };
  const std::vector<std::shared_ptr<Judge>> evals{
      std::make_shared<ScriptedJudge>("first", [](int, auto&, auto&) { return Side::First; }),
      std::make_shared<Failing>()};
  Stream stream = Stream::named(1, "t");
  const auto r = run_tournament(pairs, evals, {}, stream, logical_clock());
  CHECK(r.trials.size() == pairs.size() * 2);
  for (const auto& t : r.trials) CHECK(t.outcome == Outcome::Inconsistent);
  CHECK(r.skipped.size() == pairs.size());
  // Contexts are consumed for skipped calls too.
  CHECK(stream.counter() == pairs.size() * 4);
}

TEST_CASE("recorded sides override the judged images in the log") {
  auto cs = field(2);
  Pairing pr{cs[0], cs[2], std::nullopt};
  pr.left.record_as = TrialSide{"id0", Variant::original()};
  pr.left.image = derive_image(cs[0].image, "n1", Variant::normalized(1), cs[0].image.payload, "n");
  const std::vector<std::shared_ptr<Judge>> evals{prefers_higher("e")};
  TournamentSettings s;
  s.kappa = 1;
  Stream stream = Stream::named(1, "t");
  const auto r = run_tournament({pr}, evals, s, stream, logical_clock());
  REQUIRE(r.trials.size() == 2);
  CHECK(r.trials[0].left.image_id == "id0");
  CHECK(r.trials[0].left.status == Variant::original());
  CHECK(r.trials[0].kappa == 1);
  CHECK(r.raw[0].first_id == "id0~n1");
}

TEST_CASE("head-to-head pairs finals across strategies") {
  std::map<Strategy, std::vector<ImageRef>> finals;
  for (Strategy s : {Strategy::CVPO, Strategy::VFD, Strategy::VTG})
    for (int i = 0; i < 4; ++i) {
      const ImageRef x0 = synth("id" + std::to_string(i), {0.1 * i});
      finals[s].push_back(derive_image(x0, to_string(s) + "-final", Variant::final_image(), x0.payload, "p"));
    }
  PairingPolicy p;
  p.sample_size = 5;
  const auto pairs = build_head_to_head(finals, p, testing::hotels());
  CHECK(pairs.size() == 15);
  for (const auto& pr : pairs) {
    CHECK(pr.left.strategy != pr.right.strategy);
    CHECK(pr.left.image.identity_id != pr.right.image.identity_id);
  }
  const std::vector<std::shared_ptr<Judge>> evals{prefers_higher("e")};
  Stream stream = Stream::named(1, "h");
  const auto r = head_to_head(finals, evals, p, testing::hotels(), "pick", stream, logical_clock());
  for (const auto& t : r.trials) CHECK(t.strategy.left != t.strategy.right);
}
