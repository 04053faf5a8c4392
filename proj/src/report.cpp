#include "vpo/report.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "vpo/optimizers.hpp"
#include "vpo/trial_log.hpp"

namespace vpo {

namespace fs = std::filesystem;

AnalysisResult run_analysis(const std::vector<TrialRecord>& trials, const AnalysisSpec& spec) {
  AnalysisResult out;
  out.spec = spec;
  auto obs = analysis::expand_rows(trials, spec.mode);
  if (spec.filter) obs = obs.filter(spec.filter->first, spec.filter->second);
  if (obs.rows() == 0) throw PreconditionError("analysis " + spec.name + ": no rows to fit");
  out.fit = analysis::fit_lpm(obs, spec.model);
  out.table = analysis::emm(out.fit, spec.emm.empty() ? spec.model.factors : spec.emm);
  out.contrasts = spec.reference ? analysis::treatment_contrasts(out.table, *spec.reference)
                                 : analysis::pairwise_contrasts(out.table);
  analysis::adjust(out.contrasts);
  return out;
}

void write_analysis(const std::string& dir, const AnalysisResult& r) {
  fs::create_directories(dir);
  Json fit = analysis::to_json(r.fit);
  fit["analysis"] = r.spec.name;
  fit["source"] = r.spec.source;
  write_json_file(dir + "/fit.json", fit);
  write_json_file(dir + "/emm.json", analysis::to_json(r.table));
  write_text_file(dir + "/emm.csv", analysis::emm_csv(r.table));
  write_json_file(dir + "/contrasts.json", analysis::to_json(r.contrasts));
}

std::string emm_markdown(const analysis::EmmTable& table) {
  std::ostringstream os;
  os << '|';
  for (const auto& f : table.factors) os << ' ' << f << " |";
  os << " estimate | se | 95% CI |\n|";
  for (std::size_t i = 0; i < table.factors.size() + 3; ++i) os << "---|";
  os << '\n';
  for (const auto& e : table.rows) {
    os << '|';
    for (const auto& l : e.levels) os << ' ' << l << " |";
    os << fmt::format(" {:.3f} | {:.3f} | [{:.3f}, {:.3f}] |\n", e.estimate, e.se, e.ci_lo, e.ci_hi);
  }
  return os.str();
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct BudgetRow {
  std::string task, strategy;
  int runs = 0;
  double mean_iterations = 0, fraction = 0;
  std::map<std::string, int> stops;
  CallCounters counters;
};

struct Weights {
  Eigen::VectorXd w;
  double utility(const ImageRef& im) const {
    const auto* s = im.synth();
    return s ? w.dot(s->presentation) : std::numeric_limits<double>::quiet_NaN();
  }
};

std::string num(double v) { return std::isnan(v) ? std::string() : fmt::format("{:.6f}", v); }

}  // namespace

std::string write_report(const std::string& run_dir) {
  const fs::path root(run_dir);
  const fs::path out = root / "report";
  fs::create_directories(out);
  const Json manifest = fs::exists(root / "manifest.json") ? read_json_file((root / "manifest.json").string()) : Json();
  int t_min = 10, t_max = 30;
  if (manifest.contains("config")) {
    t_min = manifest["config"]["optimizer"].value("t_min", t_min);
    t_max = manifest["config"]["optimizer"].value("t_max", t_max);
  }

  // Budget per task and strategy.
  std::vector<BudgetRow> budget;
  std::map<std::string, std::map<std::string, std::vector<OptRunResult>>> runs;
  for (const auto& task_dir : sorted_entries(root / "optimize", true)) {
    for (const auto& strat_dir : sorted_entries(task_dir, true)) {
      BudgetRow row;
      row.task = task_dir.filename().string();
      row.strategy = strat_dir.filename().string();
      auto& bucket = runs[row.task][row.strategy];
      double iters = 0;
      for (const auto& f : sorted_entries(strat_dir, false)) {
        auto r = read_json_file(f.string()).get<OptRunResult>();
        iters += r.iterations_used;
        ++row.stops[to_string(r.stop_reason)];
        row.counters += r.counters;
        bucket.push_back(std::move(r));
      }
      row.runs = static_cast<int>(bucket.size());
      if (row.runs == 0) continue;
      row.mean_iterations = iters / row.runs;
      row.fraction = budget_fraction(row.mean_iterations, t_min, t_max);
      budget.push_back(std::move(row));
    }
  }
  {
    std::ostringstream os;
    os << "task,strategy,runs,mean_iterations,budget_fraction,stop_budget,stop_equilibrium,stop_patience,"
          "judge_calls,edit_calls,proposer_calls,critic_calls\n";
    for (const auto& b : budget) {
      auto stop = [&](const char* k) { return b.stops.count(k) ? b.stops.at(k) : 0; };
      os << fmt::format("{},{},{},{:.4f},{:.4f},{},{},{},{},{},{},{}\n", b.task, b.strategy, b.runs,
                        b.mean_iterations, b.fraction, stop("budget"), stop("equilibrium"), stop("patience"),
                        b.counters.judge_calls, b.counters.edit_calls, b.counters.proposer_calls,
                        b.counters.critic_calls);
    }
    write_text_file((out / "budget.csv").string(), os.str());
  }

  // Sim utilities, when the run used the simulator.
  std::map<std::string, std::map<std::string, std::pair<double, int>>> utility_means;
  {
    std::ostringstream os;
    os << "task,strategy,identity_id,original,zero_shot,final,distilled\n";
    for (const auto& [task, by_strategy] : runs) {
      const fs::path env = root / "sim" / (task + ".json");
      if (!fs::exists(env)) continue;
      const auto w = read_json_file(env.string())["weights"].get<std::vector<double>>();
      Weights weights{Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()))};
      std::map<std::string, ImageRef> originals, zero_shots, distilled;
      auto load = [&](const fs::path& p, std::map<std::string, ImageRef>& into) {
        if (!fs::exists(p)) return;
        Json arr = read_json_file(p.string());
        if (arr.is_object()) arr = arr["images"];
        for (const auto& j : arr) {
          auto im = j.get<ImageRef>();
          into[im.identity_id] = im;
        }
      };
      load(root / "images" / task / "originals.json", originals);
      load(root / "images" / task / "zero_shot.json", zero_shots);
      const fs::path distill_file = root / "distill" / (task + ".json");
      std::string distill_strategy;
      if (fs::exists(distill_file)) {
        load(distill_file, distilled);
        distill_strategy = read_json_file(distill_file.string()).value("strategy", "");
      }
      auto add = [&](const std::string& s, const std::string& col, double v) {
        auto& m = utility_means[task + "/" + s][col];
        m.first += v;
        ++m.second;
      };
      for (const auto& [strategy, results] : by_strategy) {
        for (const auto& r : results) {
          const double u0 = originals.count(r.identity_id) ? weights.utility(originals.at(r.identity_id)) : NAN;
          const double uz = zero_shots.count(r.identity_id) ? weights.utility(zero_shots.at(r.identity_id)) : NAN;
          const double uf = weights.utility(r.final_image);
          double ud = NAN;
          if (strategy == distill_strategy && distilled.count(r.identity_id)) ud = weights.utility(distilled.at(r.identity_id));
          os << fmt::format("{},{},{},{},{},{},{}\n", task, strategy, r.identity_id, num(u0), num(uz), num(uf), num(ud));
          add(strategy, "original", u0);
          add(strategy, "zero_shot", uz);
          add(strategy, "final", uf);
          if (!std::isnan(ud)) add(strategy, "distilled", ud);
        }
      }
    }
    write_text_file((out / "utility.csv").string(), os.str());
  }

  // Trial counts per log and status cell.
  std::ostringstream trials_csv;
  trials_csv << "source,task,strategy,kappa,left_status,right_status,trials,inconsistent,left_wins,right_wins\n";
  std::map<std::string, std::pair<int, int>> final_vs_original;  // task/strategy -> (final wins, decisive)
  for (const auto& f : sorted_entries(root / "trials", false)) {
    const std::string name = f.stem().string();
    if (f.extension() != ".jsonl" || name.rfind("raw_", 0) == 0) continue;
    struct Cell { int trials = 0, inconsistent = 0, left = 0, right = 0; };
    std::map<std::tuple<std::string, std::string, int, std::string, std::string>, Cell> cells;
    std::set<std::string> seen;
    for (const auto& t : read_trial_log(f.string())) {
      if (!seen.insert(to_string(t.task) + "/" + t.trial_id()).second) continue;
      std::string ls = to_string(t.left.status), rs = to_string(t.right.status);
      bool swapped = rs < ls;
      if (swapped) std::swap(ls, rs);
      auto& c = cells[{to_string(t.task), to_string(t.strategy), t.kappa, ls, rs}];
      ++c.trials;
      if (t.outcome == Outcome::Inconsistent) {
        ++c.inconsistent;
      } else {
        const bool left_won = (t.outcome == Outcome::Left) != swapped;
        ++(left_won ? c.left : c.right);
      }
      if (name == "evaluate" && t.outcome != Outcome::Inconsistent) {
        const bool lf = t.left.status == Variant::final_image(), rf = t.right.status == Variant::final_image();
        const bool lo = t.left.status == Variant::original(), ro = t.right.status == Variant::original();
        if ((lf && ro) || (lo && rf)) {
          auto& fo = final_vs_original[to_string(t.task) + "/" + to_string(t.strategy.left)];
          ++fo.second;
          if ((lf && t.outcome == Outcome::Left) || (rf && t.outcome == Outcome::Right)) ++fo.first;
        }
      }
    }
    for (const auto& [k, c] : cells) {
      trials_csv << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", name, std::get<0>(k), std::get<1>(k), std::get<2>(k),
                                std::get<3>(k), std::get<4>(k), c.trials, c.inconsistent, c.left, c.right);
    }
  }
  write_text_file((out / "trials.csv").string(), trials_csv.str());

  std::ostringstream md;
  md << "# Run report: " << manifest.value("name", root.filename().string()) << "\n\n";
  if (manifest.contains("stages")) {
    // The report's own entry is left out so regenerating it is a fixed point.
    md << "Stages:";
    for (const auto& [stage, info] : manifest["stages"].items()) {
      if (stage != "report") md << ' ' << stage << '(' << info.value("status", "?") << ')';
    }
    md << "\n\n";
  }
  md << "## Budget\n\n| task | strategy | runs | mean iterations | budget fraction |\n|---|---|---|---|---|\n";
  for (const auto& b : budget) {
    md << fmt::format("| {} | {} | {} | {:.2f} | {:.1f}% |\n", b.task, b.strategy, b.runs, b.mean_iterations,
                      100.0 * b.fraction);
  }
  if (!utility_means.empty()) {
    md << "\n## Sim utility (means)\n\n| task/strategy | original | zero-shot | final | distilled |\n|---|---|---|---|---|\n";
    for (const auto& [key, cols] : utility_means) {
      auto mean = [&](const char* c) {
        auto it = cols.find(c);
        return it == cols.end() || it->second.second == 0 ? std::string("-")
                                                           : fmt::format("{:.3f}", it->second.first / it->second.second);
      };
      md << fmt::format("| {} | {} | {} | {} | {} |\n", key, mean("original"), mean("zero_shot"), mean("final"),
                        mean("distilled"));
    }
  }
  if (!final_vs_original.empty()) {
    md << "\n## Final vs original (consistent trials)\n\n| task/strategy | final wins | trials | rate |\n|---|---|---|---|\n";
    for (const auto& [key, fo] : final_vs_original) {
      md << fmt::format("| {} | {} | {} | {:.3f} |\n", key, fo.first, fo.second,
                        fo.second ? static_cast<double>(fo.first) / fo.second : 0.0);
    }
  }
  for (const auto& dir : sorted_entries(root / "analysis", true)) {
    const fs::path emm_file = dir / "emm.json";
    if (!fs::exists(emm_file)) continue;
    const Json emm = read_json_file(emm_file.string());
    md << "\n## Analysis: " << dir.filename().string() << "\n\n";
    analysis::EmmTable table;
    table.factors = emm["factors"].get<std::vector<std::string>>();
    for (const auto& r : emm["rows"]) {
      analysis::Emm e;
      e.levels = r["levels"].get<std::vector<std::string>>();
      e.estimate = r["estimate"];
      e.se = r["se"];
      e.ci_lo = r["ci_lo"];
      e.ci_hi = r["ci_hi"];
      table.rows.push_back(e);
    }
    md << emm_markdown(table);
    const fs::path cfile = dir / "contrasts.json";
    if (fs::exists(cfile)) {
      md << "\n| contrast | delta | se | p_adj |\n|---|---|---|---|\n";
      for (const auto& c : read_json_file(cfile.string())) {
        md << fmt::format("| {} | {:.3f} | {:.3f} | {:.4g} |\n", c["contrast"].get<std::string>(), c["delta"].get<double>(),
                          c["se"].get<double>(), c["p_adj"].get<double>());
      }
    }
  }
  const std::string text = md.str();
  write_text_file((out / "summary.md").string(), text);
  return text;
}

}  // namespace vpo
