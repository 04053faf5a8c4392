// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "oracles.hpp"
#include "support.hpp"
#include "vpo/campaign.hpp"
#include "vpo/countermeasures.hpp"
#include "vpo/interpret.hpp"
#include "vpo/trial_log.hpp"

using namespace vpo;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int number, const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s [%02d] %s: %s\n", pass ? "PASS" : "FAIL", number, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

template <typename F>
void criterion(int number, const std::string& name, F&& body) {
  try {
    std::string detail;
    const bool pass = body(detail);
    report(number, name, pass, detail);
  } catch (const std::exception& e) {
    report(number, name, false, std::string("threw: ") + e.what());
  }
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? NAN : s / static_cast<double>(v.size());
}

Json campaign_json(const std::string& out, double gamma) {
  Json j = Json::parse(R"({
    "name": "acceptance", "seed": 2024, "tasks": ["hotels"], "workers": 4,
    "strategies": ["CVPO", "VFD", "VTG"],
    "backend": {"kind": "sim", "sim": {"identities": 50, "evaluators": 3}},
    "tournament": {"sample_size": 1000, "head_to_head": false},
    "mitigation": {"kappas": [0, 1, 3], "sample_size": 1000}
  })");
  j["output_dir"] = out;
  j["backend"]["sim"]["gamma"] = gamma;
  return j;
}

bool is_final(const TrialSide& s) { return s.status == Variant::final_image(); }
bool is_original(const TrialSide& s) { return s.status == Variant::original(); }

/// Final-vs-original trials decided consistently, counted once per judgment
/// (the two order rows of a judgment share one outcome).
struct Share {
  int final_wins = 0;
  int decisive = 0;
  double value() const { return decisive ? static_cast<double>(final_wins) / decisive : NAN; }
};

Share final_share(const std::vector<TrialRecord>& trials, const std::function<bool(const TrialRecord&)>& keep) {
  Share s;
  for (const auto& t : trials) {
    if (t.order_index != 0 || t.outcome == Outcome::Inconsistent || !keep(t)) continue;
    const bool lf = is_final(t.left) && is_original(t.right), rf = is_final(t.right) && is_original(t.left);
    if (!lf && !rf) continue;
    ++s.decisive;
    s.final_wins += (t.outcome == Outcome::Left) == lf;
  }
  return s;
}

std::map<std::string, std::string> files_under(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = testing::slurp(e.path().string());
  }
  return out;
}

std::vector<ImageRef> images_in(const fs::path& file) {
  Json j = read_json_file(file.string());
  if (j.is_object()) j = j["images"];
  return j.get<std::vector<ImageRef>>();
}

// Scripted harnesses for the stopping rules.
struct Harness {
  std::shared_ptr<sim::SimEnvironment> env = testing::sim_env(21);
  TaskSpec task = testing::hotels();
  Backends backends = sim::make_backends(env, 3);
  ImageRef x0 = sim::make_originals(*env, 1, 5).front();
  OptimizerConfig cfg;

  Harness() { cfg.seed = 99; }
  OptRunResult run(Strategy s) {
    const ImageRef zs = make_zero_shot(x0, task, backends, cfg.seed);
    return run_optimizer(s, RunInputs{x0, zs, task, cfg, backends, nullptr});
  }
};

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  testing::TempDir dir("acceptance");
  const std::string run_a = dir / "a", run_b = dir / "b", run_full = dir / "full";

  // The main campaign backs criteria 1, 2, 8, 9 and 10.
  double seconds = NAN;
  std::unique_ptr<Campaign> campaign;
  std::string campaign_error;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    campaign = std::make_unique<Campaign>(config_from_json(campaign_json(run_a, 0.5), "/"));
    campaign->run({"all"});
    seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  } catch (const std::exception& e) {
    campaign_error = e.what();
  }
  auto need_campaign = [&] {
    if (!campaign) throw Error("campaign failed: " + campaign_error);
  };

  criterion(1, "simulated optimization lift", [&](std::string& detail) {
    need_campaign();
    TaskContext& ctx = campaign->task_context("hotels");
    const sim::SimEnvironment& env = *ctx.env;
    std::map<std::string, double> u0, uz;
    for (const auto& im : ctx.originals) u0[im.identity_id] = sim::sim_utility(env, im);
    for (const auto& im : images_in(fs::path(run_a) / "images/hotels/zero_shot.json"))
      uz[im.identity_id] = sim::sim_utility(env, im);
    const auto trials = read_trial_log((fs::path(run_a) / "trials/evaluate.jsonl").string());
    bool ok = seconds < 300.0;
    detail = fmt::format("runtime {:.1f}s", seconds);
    for (Strategy s : {Strategy::CVPO, Strategy::VFD}) {
      std::vector<double> o, z, f;
      for (const auto& r : campaign->load_results(ctx, s)) {
        o.push_back(u0.at(r.identity_id));
        z.push_back(uz.at(r.identity_id));
        f.push_back(sim::sim_utility(env, r.final_image));
      }
      const Share share = final_share(trials, [&](const TrialRecord& t) { return t.strategy == StrategyTag::same(s); });
      ok = ok && f.size() == 50 && mean(f) > mean(z) && mean(z) > mean(o) && share.value() >= 0.80;
      detail += fmt::format("; {} n={} U orig {:.3f} < zero-shot {:.3f} < final {:.3f}, win rate {:.3f} ({}/{})",
                            to_string(s), f.size(), mean(o), mean(z), mean(f), share.value(), share.final_wins,
                            share.decisive);
    }
    return ok;
  });

  criterion(2, "VTG budget", [&](std::string& detail) {
    need_campaign();
    TaskContext& ctx = campaign->task_context("hotels");
    const auto& cfg = campaign->config().optimizer;
    const auto results = campaign->load_results(ctx, Strategy::VTG);
    int full = 0;
    double iters = 0;
    for (const auto& r : results) {
      full += r.iterations_used == 30;
      iters += r.iterations_used;
    }
    const double fraction = budget_fraction(iters / static_cast<double>(results.size()), cfg.t_min, cfg.t_max);
    detail = fmt::format("{}/{} runs used 30 iterations, budget fraction {}", full, results.size(), fraction);
    return !results.empty() && full == static_cast<int>(results.size()) && fraction == 1.0;
  });

  criterion(3, "stopping exactness", [&](std::string& detail) {
    // CVPO: judge j2 splits the panel on chosen rounds; the run must stop at
    // the first split round >= t_min, or use the whole budget.
    int cvpo_cases = 0, cvpo_ok = 0;
    Rng rng(77);
    for (int rep = 0; rep < 30; ++rep) {
      Harness h;
      h.cfg.t_min = static_cast<int>(rng.index(15));
      std::set<int> splits;
      for (int k = 0, n = static_cast<int>(rng.index(4)); k < n; ++k) splits.insert(1 + static_cast<int>(rng.index(30)));
      auto round_of = [](int call) { return call / 2 + 1; };
      h.backends.judges = {
          std::make_shared<testing::ScriptedJudge>("j0", [](int, auto&, auto&) { return Side::First; }),
          std::make_shared<testing::ScriptedJudge>("j1", [](int c, auto&, auto&) { return testing::vote_a(c); }),
          std::make_shared<testing::ScriptedJudge>("j2", [&, round_of](int c, auto&, auto&) {
            return splits.count(round_of(c)) ? testing::vote_b(c) : testing::vote_a(c);
          })};
      int expect = h.cfg.t_max;
      for (int s : splits) {
        if (s >= h.cfg.t_min) {
          expect = s;
          break;
        }
      }
      const auto r = h.run(Strategy::CVPO);
      const StopReason why = expect < h.cfg.t_max || splits.count(h.cfg.t_max) ? StopReason::Equilibrium : StopReason::Budget;
      ++cvpo_cases;
      cvpo_ok += r.iterations_used == expect && r.stop_reason == why;
    }
    // VFD: a win at round w (or none) followed by rejections stops after
    // exactly `patience` consecutive rejections.
    int vfd_cases = 0, vfd_ok = 0;
    for (int patience = 1; patience <= 6; ++patience) {
      for (int win : {0, 2, 5}) {
        Harness h;
        h.cfg.patience = patience;
        h.cfg.vfd_respect_t_min = false;
        h.backends.judges = {std::make_shared<testing::ScriptedJudge>("j", [win](int c, auto&, auto&) {
          return c / 2 + 1 == win ? testing::vote_b(c) : testing::vote_a(c);
        })};
        const int expect = win > 0 && win <= patience ? win + patience : patience;
        const auto r = h.run(Strategy::VFD);
        ++vfd_cases;
        vfd_ok += r.iterations_used == expect && r.stop_reason == StopReason::Patience;
      }
    }
    detail = fmt::format("CVPO {}/{} scripted schedules, VFD {}/{} patience schedules", cvpo_ok, cvpo_cases, vfd_ok,
                         vfd_cases);
    return cvpo_ok == cvpo_cases && vfd_ok == vfd_cases;
  });

  criterion(4, "consistency protocol", [&](std::string& detail) {
    auto env = testing::sim_env(404);
    const auto xs = sim::make_originals(*env, 100, 9, 0.0, 1.0);
    std::vector<Contestant> cs;
    for (const auto& x : xs) cs.push_back({x, Strategy::CVPO, std::nullopt});
    PairingPolicy policy;
    policy.statuses = {Variant::original()};
    policy.sample_size = 2000;
    policy.seed = 4;
    const auto pairs = build_pairings(cs, policy, testing::hotels());
    std::map<std::string, const Pairing*> by_id;
    for (const auto& p : pairs) by_id[p.pair_id()] = &p;

    const double beta = 4.0;
    const auto zero = std::make_shared<sim::SimJudge>(env, "zero-noise", 0.0, 0.0);
    const auto biased = std::make_shared<sim::SimJudge>(env, "position-biased", beta);
    Stream stream = Stream::named(404, "consistency");
    const std::vector<std::shared_ptr<Judge>> evaluators{zero, biased};
    const auto r = run_tournament(pairs, evaluators, {}, stream, logical_clock());

    // Analytic expectation per pair: both first-shown wins or both second-shown wins.
    double expected = 0, variance = 0;
    for (const auto& p : pairs) {
      const double gap = sim::sim_utility(*env, p.left.image) - sim::sim_utility(*env, p.right.image);
      const double ab = sim::first_win_probability(gap, biased->noise_scale(), beta);
      const double ba = sim::first_win_probability(-gap, biased->noise_scale(), beta);
      const double q = ab * ba + (1 - ab) * (1 - ba);
      expected += q;
      variance += q * (1 - q);
    }
    int zero_inc = 0, biased_inc = 0, n = 0;
    for (const auto& t : r.trials) {
      if (t.order_index != 0) continue;
      const bool inc = t.outcome == Outcome::Inconsistent;
      if (t.evaluator == zero->id()) {
        ++n;
        zero_inc += inc;
      } else {
        biased_inc += inc;
      }
    }
    const double bound = 2.576 * std::sqrt(variance);
    const double rate = static_cast<double>(biased_inc) / n;
    detail = fmt::format("{} trials; zero-noise {} inconsistent (expected 0); biased {} = {:.4f} (expected {:.1f} +/- {:.1f})",
                         n, zero_inc, biased_inc, rate, expected, bound);
    return n == 2000 && zero_inc == 0 && rate >= 0.95 && std::abs(biased_inc - expected) <= bound;
  });

  criterion(5, "analysis fixture reproduction", [&](std::string& detail) {
    analysis::Observations o;
    oracle::add_cell(o, {{"strategy", "CVPO"}}, 1000, 771);
    oracle::add_cell(o, {{"strategy", "VFD"}}, 1000, 601);
    oracle::add_cell(o, {{"strategy", "VTG"}}, 1000, 131);
    analysis::ModelSpec spec;
    spec.factors = {"strategy"};
    spec.clusters = {"id"};
    const auto table = analysis::emm(analysis::fit_lpm(o, spec), {"strategy"});
    const auto cs = analysis::treatment_contrasts(table, "CVPO");
    double err = 0;
    err = std::max(err, std::abs(table.at({"CVPO"}).estimate - 0.771));
    err = std::max(err, std::abs(table.at({"VFD"}).estimate - 0.601));
    err = std::max(err, std::abs(table.at({"VTG"}).estimate - 0.131));
    err = std::max(err, std::abs(cs.at(0).delta + 0.170));
    err = std::max(err, std::abs(cs.at(1).delta + 0.640));

    Rng rng(31);
    int bh_cases = 0, bh_ok = 0;
    std::vector<std::vector<double>> sets{{0.01, 0.02, 0.04}, {0.5}, {0.05, 0.05, 0.05, 0.001}};
    for (int rep = 0; rep < 500; ++rep) {
      std::vector<double> p(1 + rng.index(10));
      for (auto& v : p) v = rng.bernoulli(0.25) ? 0.01 * static_cast<double>(1 + rng.index(5)) : rng.uniform();
      sets.push_back(p);
    }
    for (const auto& p : sets) {
      ++bh_cases;
      bh_ok += analysis::bh_adjust(p) == oracle::bh(p);
    }
    detail = fmt::format("max EMM/contrast error {:.2e}; BH exact on {}/{} sets", err, bh_ok, bh_cases);
    return err <= 1e-9 && bh_ok == bh_cases;
  });

  criterion(6, "OLS and CR1 oracle", [&](std::string& detail) {
    Rng rng(606);
    double beta_err = 0, cov_err = 0;
    std::size_t max_cols = 0, max_clusters = 0;
    for (int rep = 0; rep < 20; ++rep) {
      const auto [o, spec] = oracle::random_design(rng);
      const auto fit = analysis::fit_lpm(o, spec);
      const Eigen::MatrixXd X = oracle::design(o, fit.kept_names());
      const Eigen::Map<const Eigen::VectorXd> y(o.y.data(), static_cast<Eigen::Index>(o.rows()));
      const Eigen::VectorXd beta = oracle::normal_equations(X, y);
      const Eigen::MatrixXd v = oracle::cr1(X, y - X * beta, o.clusters.at("g"));
      beta_err = std::max(beta_err, (beta - fit.coefficients).cwiseAbs().maxCoeff());
      cov_err = std::max(cov_err, (v - fit.covariance).cwiseAbs().maxCoeff());
      max_cols = std::max<std::size_t>(max_cols, X.cols());
      max_clusters = std::max(max_clusters, std::set<std::string>(o.clusters.at("g").begin(), o.clusters.at("g").end()).size());
    }
    detail = fmt::format("20 designs (<= {} columns, <= {} clusters): max |beta| error {:.2e}, max |V| error {:.2e}",
                         max_cols, max_clusters, beta_err, cov_err);
    return max_cols <= 8 && max_clusters <= 12 && beta_err <= 1e-10 && cov_err <= 1e-10;
  });

  criterion(7, "matryoshka structure", [&](std::string& detail) {
    bool ok = true;
    for (int n : {1, 7, 100}) {
      Rng rng(static_cast<std::uint64_t>(n));
      std::vector<std::string> texts;
      for (int i = 0; i < n; ++i) {
        const auto c = rng.index(8);
        texts.push_back(fmt::format("coordinate {} increased (add {} +0.{})", c, c, 1 + rng.index(8)));
      }
      std::vector<int> halving;
      for (int t = n; halving.empty() || t > 1;) halving.push_back(t = (t + 1) / 2);
      sim::SimEmbedder emb(3);
      sim::SimSummarizer sum;
      Stream stream = Stream::named(7, "matryoshka");
      const auto r = interpret::matryoshka(texts, emb, sum, stream, {});
      bool nested = true, inputs = true;
      for (std::size_t li = 1; li < r.levels.size(); ++li) {
        for (const auto& fine : r.levels[li - 1]) {
          int parents = 0;
          for (const auto& coarse : r.levels[li]) {
            const std::set<int> cm(coarse.members.begin(), coarse.members.end());
            const auto inside = std::count_if(fine.members.begin(), fine.members.end(), [&](int m) { return cm.count(m) > 0; });
            if (inside != 0 && inside != static_cast<long>(fine.members.size())) nested = false;
            parents += inside > 0;
          }
          nested = nested && parents == 1;
        }
      }
      for (const auto& call : r.log)
        for (int lvl : call.input_levels) inputs = inputs && lvl == (call.level == 1 ? 0 : call.level - 1);
      std::vector<int> sizes;
      for (const auto& level : r.levels) sizes.push_back(static_cast<int>(level.size()));
      const bool good = r.complete() && r.targets == halving && sizes == halving && nested && inputs;
      ok = ok && good;
      detail += fmt::format("{}n={}: levels {}{}", detail.empty() ? "" : "; ", n, fmt::join(sizes, "/"),
                            good ? "" : " (violated)");
    }
    return ok;
  });

  criterion(8, "mitigation property", [&](std::string& detail) {
    need_campaign();
    auto shares = [](const std::string& run) {
      const auto trials = read_trial_log((fs::path(run) / "trials/mitigate.jsonl").string());
      std::map<int, Share> out;
      for (int k : {0, 1, 3}) out[k] = final_share(trials, [k](const TrialRecord& t) { return t.kappa == k; });
      return out;
    };
    const auto half = shares(run_a);
    Campaign full(config_from_json(campaign_json(run_full, 1.0), "/"));
    full.run({"mitigate"});
    const auto whole = shares(run_full);
    bool ok = half.at(0).value() > half.at(1).value() && half.at(1).value() > half.at(3).value() &&
              half.at(3).value() > 0.5;
    detail = fmt::format("gamma 0.5: {:.3f} > {:.3f} > {:.3f} > 0.5", half.at(0).value(), half.at(1).value(),
                         half.at(3).value());
    for (int k : {1, 3}) {
      const Share& s = whole.at(k);
      const double tol = 2.576 * std::sqrt(0.25 / s.decisive);
      ok = ok && std::abs(s.value() - 0.5) <= tol;
      detail += fmt::format("; gamma 1, kappa {}: {:.3f} (n={}, 0.5 +/- {:.3f})", k, s.value(), s.decisive, tol);
    }
    return ok;
  });

  criterion(9, "distillation property", [&](std::string& detail) {
    need_campaign();
    TaskContext& ctx = campaign->task_context("hotels");
    std::map<std::string, double> finals;
    for (const auto& r : campaign->load_results(ctx, Strategy::CVPO))
      finals[r.identity_id] = sim::sim_utility(*ctx.env, r.final_image);
    std::vector<double> d, f;
    for (const auto& im : images_in(fs::path(run_a) / "distill/hotels.json")) {
      d.push_back(sim::sim_utility(*ctx.env, im));
      f.push_back(finals.at(im.identity_id));
    }
    const double ratio = mean(d) / mean(f);
    detail = fmt::format("{} identities: distilled {:.3f} vs CVPO final {:.3f} (ratio {:.3f})", d.size(), mean(d),
                         mean(f), ratio);
    return d.size() == 50 && std::abs(mean(d) - mean(f)) <= 0.10 * std::abs(mean(f));
  });

  criterion(10, "determinism", [&](std::string& detail) {
    need_campaign();
    Campaign(config_from_json(campaign_json(run_b, 0.5), "/")).run({"all"});
    const auto a = files_under(fs::path(run_a) / "trials"), b = files_under(fs::path(run_b) / "trials");
    std::size_t same = 0, bytes = 0;
    for (const auto& [name, body] : a) {
      if (b.count(name) && b.at(name) == body) {
        ++same;
        bytes += body.size();
      }
    }
    detail = fmt::format("{}/{} trial logs byte-identical across two runs with 4 workers ({} bytes)", same, a.size(), bytes);
    return !a.empty() && a.size() == b.size() && same == a.size();
  });

  std::printf("%s\n", failures ? fmt::format("{} criteria FAILED", failures).c_str() : "all criteria passed");
  return failures ? 1 : 0;
}
