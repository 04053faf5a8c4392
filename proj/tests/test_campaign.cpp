#include <doctest.h>

#include <atomic>
#include <set>

#include "support.hpp"
#include "vpo/campaign.hpp"
#include "vpo/report.hpp"

using namespace vpo;
namespace fs = std::filesystem;

namespace {

Json small_config(const std::string& out, int workers = 1) {
  Json j = Json::parse(R"({
    "name": "tiny", "seed": 3, "tasks": ["hotels"],
    "optimizer": {"t_max": 12, "t_min": 4, "challengers": 2, "panel_size": 3, "patience": 3},
    "backend": {"kind": "sim", "sim": {"identities": 4, "evaluators": 2}},
    "tournament": {"sample_size": 6},
    "mitigation": {"kappas": [0, 2], "sample_size": 6},
    "service": {"participants": ["a", "b"], "queue_size": 4}
  })");
  j["output_dir"] = out;
  j["workers"] = workers;
  return j;
}

/// Relative path -> contents of every file under dir.
std::map<std::string, std::string> snapshot(const std::string& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = testing::slurp(e.path().string());
  }
  return out;
}

}  // namespace

TEST_CASE("a full run completes every stage and a rerun changes nothing") {
  testing::TempDir dir("campaign");
  const std::string out = dir / "run";
  {
    Campaign c(config_from_json(small_config(out), "/"));
    c.run({"all"});
    for (const auto& s : kStages) {
      CAPTURE(s);
      CHECK(c.stage_done(s));
      CHECK(c.manifest()["stages"][s]["status"] == "done");
    }
  }
  for (const char* rel : {"manifest.json", "images/hotels/originals.json", "images/hotels/zero_shot.json",
                          "trials/evaluate.jsonl", "trials/head_to_head.jsonl", "trials/mitigate.jsonl",
                          "trials/distill.jsonl", "distill/hotels.json", "analysis/evaluate/emm.csv",
                          "analysis/mitigation/contrasts.json", "report/summary.md", "report/budget.csv"}) {
    CAPTURE(rel);
    CHECK(fs::is_regular_file(fs::path(out) / rel));
  }
  CHECK(fs::is_directory(fs::path(out) / "optimize/hotels/CVPO"));
  CHECK(fs::is_regular_file(fs::path(out) / "interpret/CVPO_hotels.json"));

  const auto before = snapshot(out);
  Campaign again(config_from_json(small_config(out), "/"));
  again.run({"all"});
  CHECK(snapshot(out) == before);

  // The report is a pure function of the run directory.
  const std::string summary = before.at("report/summary.md");
  fs::remove_all(fs::path(out) / "report");
  CHECK(write_report(out) == summary);
  CHECK(snapshot(out) == before);
}

TEST_CASE("worker count does not change any output") {
  testing::TempDir dir("determinism");
  const std::string a = dir / "w1", b = dir / "w4";
  Campaign(config_from_json(small_config(a, 1), "/")).run({"evaluate"});
  Campaign(config_from_json(small_config(b, 4), "/")).run({"evaluate"});
  const auto sa = snapshot(a), sb = snapshot(b);
  CHECK(sa.size() == sb.size());
  for (const auto& [rel, body] : sa) {
    if (rel == "manifest.json") continue;
    CAPTURE(rel);
    REQUIRE(sb.count(rel));
    CHECK(sb.at(rel) == body);
  }
}

TEST_CASE("stages pull in their prerequisites only") {
  testing::TempDir dir("prereq");
  Campaign c(config_from_json(small_config(dir / "run"), "/"));
  c.run({"evaluate"});
  CHECK(c.stage_done("optimize"));
  CHECK(c.stage_done("evaluate"));
  CHECK_FALSE(c.stage_done("interpret"));
  CHECK_FALSE(c.stage_done("report"));
  CHECK_THROWS_AS(c.run({"polish"}), PreconditionError);
}

TEST_CASE("a run directory belongs to one configuration") {
  testing::TempDir dir("hash");
  const std::string out = dir / "run";
  Campaign(config_from_json(small_config(out), "/")).run({"optimize"});
  Json changed = small_config(out);
  changed["seed"] = 4;
  CHECK_THROWS_AS(Campaign(config_from_json(changed, "/")), PreconditionError);
  CampaignOptions force;
  force.force = true;
  Campaign forced(config_from_json(changed, "/"), force);
  CHECK_FALSE(forced.stage_done("optimize"));
  CHECK(forced.manifest()["seed"] == 4);
  // Worker count is not part of the configuration identity.
  changed["workers"] = 4;
  CHECK_NOTHROW(Campaign(config_from_json(changed, "/")));
}

TEST_CASE("interrupted optimization resumes from checkpoints") {
  testing::TempDir dir("resume");
  const std::string a = dir / "a", b = dir / "b";
  Campaign(config_from_json(small_config(a), "/")).run({"optimize"});

  // b: run, then drop one result and all but the earliest checkpoint of it.
  Campaign(config_from_json(small_config(b), "/")).run({"optimize"});
  const fs::path results = fs::path(b) / "optimize/hotels/VFD";
  const fs::path victim = *fs::directory_iterator(results);
  const std::string identity = victim.stem().string();
  fs::remove(victim);
  std::vector<fs::path> steps;
  for (const auto& e : fs::directory_iterator(fs::path(b) / "checkpoints/hotels/VFD" / identity)) steps.push_back(e.path());
  std::sort(steps.begin(), steps.end());
  REQUIRE(steps.size() >= 2);
  for (std::size_t i = 1; i < steps.size(); ++i) fs::remove(steps[i]);
  CampaignOptions redo;
  redo.force = true;
  Campaign(config_from_json(small_config(b), "/"), redo).run_stage("optimize");
  CHECK(testing::slurp((fs::path(b) / "optimize/hotels/VFD" / (identity + ".json")).string()) ==
        testing::slurp((fs::path(a) / "optimize/hotels/VFD" / (identity + ".json")).string()));
}

TEST_CASE("parallel_for covers every index and rethrows") {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 7) throw BackendError("seven");
                               }),
                  BackendError);
  parallel_for(0, 4, [](std::size_t) { FAIL("no work expected"); });
}
