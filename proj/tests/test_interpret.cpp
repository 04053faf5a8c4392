#include <doctest.h>

#include <set>

#include "support.hpp"
#include "vpo/interpret.hpp"

using namespace vpo;
using namespace vpo::interpret;

namespace {

std::vector<std::string> op_texts(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    const int c = static_cast<int>(rng.index(8));
    out.push_back("coordinate " + std::to_string(c) + " increased (add " + std::to_string(c) + " +0." +
                  std::to_string(1 + rng.index(8)) + ")");
  }
  return out;
}

/// Fails whenever it is handed rendered themes, i.e. above level 1.
class FlakySummarizer final : public Summarizer {
 public:
  std::vector<Theme> summarize_many(const CallContext& ctx, std::span<const std::string> items,
                                    std::string_view instruction) override {
    ++calls;
    for (const auto& item : items)
      if (item.rfind("Raise", 0) == 0 || item.rfind("Lower", 0) == 0) throw BackendError("summarizer unavailable");
    return inner_.summarize_many(ctx, items, instruction);
  }
  int calls = 0;

 private:
  sim::SimSummarizer inner_;
};

}  // namespace

TEST_CASE("agglomeration snapshot on a line") {
  Eigen::MatrixXd v(4, 1);
  v << 0, 1, 5, 7;
  const auto avg = agglomerate(v, Linkage::Average, Distance::Euclidean);
  REQUIRE(avg.merges.size() == 3);
  CHECK(avg.merges[0].a == 0);
  CHECK(avg.merges[0].b == 1);
  CHECK(avg.merges[0].distance == 1.0);
  CHECK(avg.merges[1].a == 2);
  CHECK(avg.merges[1].b == 3);
  CHECK(avg.merges[1].distance == 2.0);
  CHECK(avg.merges[2].a == 4);
  CHECK(avg.merges[2].b == 5);
  CHECK(avg.merges[2].distance == 5.5);
  CHECK(avg.merges[2].size == 4);
  CHECK(agglomerate(v, Linkage::Single, Distance::Euclidean).merges[2].distance == 4.0);
  CHECK(agglomerate(v, Linkage::Complete, Distance::Euclidean).merges[2].distance == 7.0);

  CHECK(avg.cut(2) == std::vector<std::vector<int>>{{0, 1}, {2, 3}});
  CHECK(avg.cut(4).size() == 4);
  CHECK(avg.cut(1) == std::vector<std::vector<int>>{{0, 1, 2, 3}});
  CHECK_THROWS_AS(avg.cut(0), PreconditionError);
  CHECK_THROWS_AS(avg.cut(5), PreconditionError);
}

TEST_CASE("distance ties merge the lowest slot pair first") {
  Eigen::MatrixXd v(3, 1);
  v << 0, 1, 2;
  const auto t = agglomerate(v, Linkage::Single, Distance::Euclidean);
  CHECK(t.merges[0].a == 0);
  CHECK(t.merges[0].b == 1);
}

TEST_CASE("cosine distance ignores scale") {
  Eigen::MatrixXd v(3, 2);
  v << 1, 0, 10, 0.5, 0, 1;
  const auto t = agglomerate(v);
  CHECK(t.merges[0].a == 0);
  CHECK(t.merges[0].b == 1);
}

TEST_CASE("level targets halve with ceiling down to one") {
  CHECK(level_targets(1) == std::vector<int>{1});
  CHECK(level_targets(2) == std::vector<int>{1});
  CHECK(level_targets(7) == std::vector<int>{4, 2, 1});
  CHECK(level_targets(100) == std::vector<int>{50, 25, 13, 7, 4, 2, 1});
  CHECK_THROWS_AS(level_targets(0), PreconditionError);
  for (int n = 1; n < 300; ++n) {
    const auto t = level_targets(n);
    CHECK(t.front() == (n + 1) / 2);
    for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] == (t[i - 1] + 1) / 2);
    CHECK(t.back() == 1);
  }
}

TEST_CASE("summarize contract") {
  sim::SimSummarizer s;
  CHECK_THROWS_AS(summarize(s, {}, {}, ""), PreconditionError);
  FlakySummarizer counting;
  const std::vector<std::string> one{"Raise only text"};
  const auto t = summarize(counting, {}, one, "");
  CHECK(counting.calls == 0);
  REQUIRE(t.size() == 1);
  CHECK(t[0].name == "Raise only text");
}

TEST_CASE("matryoshka levels nest and climb one level at a time") {
  for (int n : {1, 7, 100}) {
    CAPTURE(n);
    const auto texts = op_texts(n, static_cast<std::uint64_t>(n));
    sim::SimEmbedder emb(3);
    sim::SimSummarizer sum;
    Stream stream = Stream::named(1, "m");
    const auto r = matryoshka(texts, emb, sum, stream, {});
    REQUIRE(r.complete());
    CHECK(r.targets == level_targets(n));
    REQUIRE(r.levels.size() == r.targets.size());
    for (std::size_t li = 0; li < r.levels.size(); ++li) {
      CHECK(static_cast<int>(r.levels[li].size()) == r.targets[li]);
      std::set<int> covered;
      for (const auto& node : r.levels[li]) covered.insert(node.members.begin(), node.members.end());
      CHECK(static_cast<int>(covered.size()) == n);
      if (li == 0) continue;
      // Every finer node sits entirely inside one coarser node.
      for (const auto& fine : r.levels[li - 1]) {
        int parents = 0;
        for (const auto& coarse : r.levels[li]) {
          const std::set<int> cm(coarse.members.begin(), coarse.members.end());
          const bool all = std::all_of(fine.members.begin(), fine.members.end(), [&](int m) { return cm.count(m) > 0; });
          const bool any = std::any_of(fine.members.begin(), fine.members.end(), [&](int m) { return cm.count(m) > 0; });
          CHECK(all == any);
          parents += all;
        }
        CHECK(parents == 1);
      }
    }
    for (const auto& call : r.log) {
      for (int lvl : call.input_levels) CHECK(lvl == (call.level == 1 ? 0 : call.level - 1));
    }
    CHECK(r.root->members.size() == static_cast<std::size_t>(n));
    CHECK_FALSE(r.root->themes.empty());
    CHECK(to_json(r)["levels"].size() == r.levels.size());
  }
}

TEST_CASE("matryoshka is deterministic under concurrency") {
  const auto texts = op_texts(40, 9);
  sim::SimEmbedder emb(3);
  sim::SimSummarizer sum;
  Stream s1 = Stream::named(1, "m");
  Stream s4 = Stream::named(1, "m");
  MatryoshkaOptions o4;
  o4.concurrency = 4;
  const auto a = matryoshka(texts, emb, sum, s1, {});
  const auto b = matryoshka(texts, emb, sum, s4, o4);
  CHECK(to_json(a) == to_json(b));
  CHECK(levels_csv(a) == levels_csv(b));
}

TEST_CASE("a failing summarizer keeps the completed levels") {
  const auto texts = op_texts(16, 4);
  sim::SimEmbedder emb(3);
  FlakySummarizer sum;
  Stream s = Stream::named(1, "m");
  const auto r = matryoshka(texts, emb, sum, s, {});
  CHECK_FALSE(r.complete());
  REQUIRE(r.error.has_value());
  CHECK(r.error->find("level 2") != std::string::npos);
  CHECK(r.levels.size() == 1);
}

TEST_CASE("description grouping") {
  std::vector<DescriptionItem> items{{Strategy::CVPO, TaskId::Hotels, "a", "x"},
                                     {Strategy::VFD, TaskId::Hotels, "b", "y"},
                                     {Strategy::CVPO, TaskId::Hotels, "c", "z"}};
  const auto g = group_inputs(items, {Strategy::CVPO, Strategy::VFD, Strategy::VTG}, {TaskId::Hotels});
  REQUIRE(g.size() == 2);
  CHECK(g[0].key() == "CVPO/hotels");
  CHECK(g[0].items.size() == 2);
  items.push_back({Strategy::VTG, TaskId::People, "d", "w"});
  CHECK_THROWS_AS(group_inputs(items, {Strategy::CVPO, Strategy::VFD}, {TaskId::Hotels}), PreconditionError);
}

TEST_CASE("describe_difference rejects cross-identity pairs") {
  auto env = testing::sim_env();
  sim::SimDescriber d(env);
  const auto xs = sim::make_originals(*env, 2, 1);
  CHECK_THROWS_AS(describe_difference(d, {}, "", xs[0], xs[1]), PreconditionError);
  CHECK(describe_difference(d, {}, "", xs[0], xs[0]) == sim::kNoSalientChanges);
}
