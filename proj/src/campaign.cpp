#include "vpo/campaign.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "vpo/analysis.hpp"
#include "vpo/countermeasures.hpp"
#include "vpo/gateway.hpp"
#include "vpo/interpret.hpp"
#include "vpo/report.hpp"
#include "vpo/tasks.hpp"
#include "vpo/trial_log.hpp"

#ifndef VPO_VERSION
#define VPO_VERSION "0.0.0"
#endif

namespace vpo {

namespace fs = std::filesystem;

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t width = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (width <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < width; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

sim::SimEnvironment campaign_environment(const CampaignConfig& cfg, const TaskSpec& task) {
  const auto& s = cfg.sim;
  sim::SimEnvironment env =
      sim::standard_environment(mix_keys(cfg.seed_value(), fnv1a("env/" + to_string(task.task_id))), task.base_prior);
  env.weights = Eigen::Map<const Eigen::VectorXd>(s.weights.data(), static_cast<Eigen::Index>(s.weights.size()));
  env.noise_scale = s.noise_scale.value_or(sim::noise_scale_for_max_win_prob(env.weights, s.max_win_prob));
  env.order_bias = s.order_bias;
  env.edit_noise = s.edit_noise;
  env.identity_dim = s.identity_dim;
  env.prior_target = Eigen::VectorXd::Constant(env.weights.size(), s.prior_target);
  env.prior_pull = s.prior_pull;
  env.max_themes = s.max_themes;
  env.validate();
  return env;
}

Campaign::Campaign(CampaignConfig cfg, CampaignOptions options) : cfg_(std::move(cfg)), options_(options) {
  cfg_.preflight();
  fs::create_directories(cfg_.output_dir);
  const std::string mpath = path("manifest.json");
  if (fs::exists(mpath)) {
    manifest_ = read_json_file(mpath);
    if (manifest_.value("config_hash", "") != cfg_.hash()) {
      if (!options_.force) {
        throw PreconditionError(fmt::format(
            "{} holds a run of a different configuration; use a fresh output_dir or --force", cfg_.output_dir));
      }
      spdlog::warn("campaign: configuration changed, discarding the previous manifest");
      manifest_ = Json();
    }
  }
  if (manifest_.is_null()) {
    manifest_ = Json{{"name", cfg_.name},
                     {"version", VPO_VERSION},
                     {"config_hash", cfg_.hash()},
                     {"seed", cfg_.seed ? Json(*cfg_.seed) : Json(nullptr)},
                     {"backend", to_string(cfg_.backend)},
                     {"config", cfg_.to_json()},
                     {"stages", Json::object()}};
    save_manifest();
  }
}

std::string Campaign::path(const std::string& relative) const { return (fs::path(cfg_.output_dir) / relative).string(); }

bool Campaign::stage_done(const std::string& stage) const {
  return manifest_["stages"].contains(stage) && manifest_["stages"][stage].value("status", "") == "done";
}

void Campaign::save_manifest() { write_json_file(path("manifest.json"), manifest_); }

void Campaign::mark_done(const std::string& stage, Json summary) {
  manifest_["stages"][stage] = Json{{"status", "done"}, {"summary", std::move(summary)}};
  save_manifest();
}

std::vector<std::string> Campaign::prerequisites(const std::string& stage) const {
  if (stage == "evaluate" || stage == "interpret" || stage == "mitigate") return {"optimize"};
  if (stage == "distill") return {"optimize", "interpret"};
  return {};
}

void Campaign::run(const std::vector<std::string>& stages) {
  std::vector<std::string> wanted;
  for (const auto& s : stages) {
    if (s == "all" || s == "run") {
      wanted = kStages;
      break;
    }
    if (std::find(kStages.begin(), kStages.end(), s) == kStages.end()) {
      throw PreconditionError("unknown stage '" + s + "'");
    }
    wanted.push_back(s);
  }
  std::set<std::string> explicit_stages(wanted.begin(), wanted.end());
  // Prerequisites run only when missing; requested stages honour --force.
  std::function<void(const std::string&)> visit = [&](const std::string& s) {
    for (const auto& p : prerequisites(s)) {
      if (!stage_done(p) && !explicit_stages.count(p)) visit(p);
    }
    run_stage(s);
  };
  for (const auto& s : kStages) {
    if (explicit_stages.count(s)) visit(s);
  }
}

void Campaign::run_stage(const std::string& stage) {
  if (stage_done(stage) && !options_.force) {
    spdlog::info("stage {}: already done, skipping", stage);
    return;
  }
  if ((stage == "interpret" && !cfg_.interpret.enabled) || (stage == "mitigate" && !cfg_.mitigation.enabled) ||
      (stage == "distill" && !cfg_.distill.enabled)) {
    spdlog::info("stage {}: disabled in the configuration", stage);
    mark_done(stage, Json{{"disabled", true}});
    return;
  }
  spdlog::info("stage {}: starting", stage);
  if (stage == "optimize") optimize();
  else if (stage == "evaluate") evaluate();
  else if (stage == "interpret") interpret();
  else if (stage == "mitigate") mitigate();
  else if (stage == "distill") distill();
  else if (stage == "analyze") analyze();
  else if (stage == "report") report();
  else throw PreconditionError("unknown stage '" + stage + "'");
  spdlog::info("stage {}: done", stage);
}

TaskContext& Campaign::task_context(const std::string& task_name) {
  if (auto it = tasks_.find(task_name); it != tasks_.end()) return *it->second;
  auto ctx = std::make_unique<TaskContext>();
  ctx->spec = load_task(task_name);
  const std::string key = to_string(ctx->spec.task_id);
  if (cfg_.backend == BackendKind::Sim) {
    ctx->env = std::make_shared<sim::SimEnvironment>(campaign_environment(cfg_, ctx->spec));
    ctx->backends = sim::make_backends(ctx->env, cfg_.optimizer.panel_size, cfg_.sim.gamma);
    for (int e = 0; e < cfg_.sim.evaluators; ++e) {
      ctx->evaluators.push_back(std::make_shared<sim::SimJudge>(ctx->env, fmt::format("sim-eval-{}", e)));
    }
    ctx->originals = sim::make_originals(*ctx->env, cfg_.sim.identities, mix_keys(cfg_.seed_value(), fnv1a("originals/" + key)),
                                         cfg_.sim.originals_lo, cfg_.sim.originals_hi);
    Json env_j{{"weights", cfg_.sim.weights},
               {"noise_scale", ctx->env->noise_scale},
               {"order_bias", ctx->env->order_bias},
               {"seed", ctx->env->seed},
               {"gamma", cfg_.sim.gamma}};
    write_json_file(path("sim/" + key + ".json"), env_j);
  } else {
    auto transport = std::make_shared<gateway::HttplibTransport>();
    ctx->backends = gateway::make_backends(cfg_.gateway->setup, transport);
    if (cfg_.gateway->evaluators.empty()) {
      ctx->evaluators = ctx->backends.judges;
    } else {
      std::shared_ptr<gateway::AuditLog> audit;
      if (cfg_.gateway->setup.audit_log) audit = std::make_shared<gateway::AuditLog>(*cfg_.gateway->setup.audit_log);
      ctx->evaluators = gateway::make_judges(cfg_.gateway->evaluators, transport, gateway::real_sleeper(), audit);
    }
    const fs::path dir = fs::path(cfg_.gateway->images_dir) / key;
    if (!fs::is_directory(dir)) throw PreconditionError("no image directory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) ctx->originals.push_back(make_original(f.stem().string(), FileImage{f.string()}));
    if (ctx->originals.size() < 2) throw PreconditionError("need at least two originals in " + dir.string());
  }
  save_images("images/" + key + "/originals.json", ctx->originals);
  auto& ref = *ctx;
  tasks_[task_name] = std::move(ctx);
  return ref;
}

std::string Campaign::task_key(const TaskContext& ctx) const { return to_string(ctx.spec.task_id); }

void Campaign::save_images(const std::string& relative, const std::vector<ImageRef>& images) const {
  Json arr = Json::array();
  for (const auto& im : images) arr.push_back(im);
  write_json_file(path(relative), arr);
}

std::vector<ImageRef> Campaign::load_images(const std::string& relative) const {
  const Json arr = read_json_file(path(relative));
  std::vector<ImageRef> out;
  for (const auto& j : arr) out.push_back(j.get<ImageRef>());
  return out;
}

std::vector<ImageRef> Campaign::zero_shots(const TaskContext& ctx) const {
  return load_images("images/" + task_key(ctx) + "/zero_shot.json");
}

std::vector<OptRunResult> Campaign::load_results(const TaskContext& ctx, Strategy strategy) const {
  std::vector<OptRunResult> out;
  for (const auto& o : ctx.originals) {
    const std::string p = path(fmt::format("optimize/{}/{}/{}.json", task_key(ctx), to_string(strategy), o.identity_id));
    out.push_back(read_json_file(p).get<OptRunResult>());
  }
  return out;
}

void Campaign::optimize() {
  Json summary = Json::object();
  if (!options_.resume) fs::remove_all(path("checkpoints"));
  DirectoryCheckpointer checkpointer(path("checkpoints"));
  for (const auto& name : cfg_.tasks) {
    TaskContext& ctx = task_context(name);
    const std::string key = task_key(ctx);
    const std::size_t n = ctx.originals.size();

    std::vector<ImageRef> zs(n);
    parallel_for(n, cfg_.workers, [&](std::size_t i) {
      zs[i] = make_zero_shot(ctx.originals[i], ctx.spec, ctx.backends, cfg_.seed_value());
    });
    save_images("images/" + key + "/zero_shot.json", zs);

    for (Strategy s : cfg_.strategies) {
      std::vector<OptRunResult> results(n);
      parallel_for(n, cfg_.workers, [&](std::size_t i) {
        RunInputs in{ctx.originals[i], zs[i], ctx.spec, cfg_.optimizer, ctx.backends, &checkpointer};
        results[i] = run_optimizer(s, in);
        write_json_file(path(fmt::format("optimize/{}/{}/{}.json", key, to_string(s), ctx.originals[i].identity_id)),
                        Json(results[i]));
      });
      double iters = 0;
      CallCounters total;
      std::map<std::string, int> stops;
      for (const auto& r : results) {
        iters += r.iterations_used;
        total += r.counters;
        ++stops[to_string(r.stop_reason)];
      }
      const double mean = iters / static_cast<double>(n);
      summary[key][to_string(s)] = {{"runs", n},
                                    {"mean_iterations", mean},
                                    {"budget_fraction", budget_fraction(mean, cfg_.optimizer.t_min, cfg_.optimizer.t_max)},
                                    {"stop_reasons", stops},
                                    {"counters", total}};
      spdlog::info("optimize {}/{}: {} runs, mean iterations {:.2f}", key, to_string(s), n, mean);
    }
  }
  mark_done("optimize", summary);
}

namespace {

Json tournament_summary(const TournamentResult& r) {
  std::set<std::string> trials;
  std::size_t inconsistent = 0;
  for (const auto& t : r.trials) {
    if (trials.insert(t.trial_id()).second && t.outcome == Outcome::Inconsistent) ++inconsistent;
  }
  return Json{{"rows", r.trials.size()},
              {"trials", trials.size()},
              {"inconsistent", inconsistent},
              {"skipped", r.skipped.size()}};
}

void write_raw(const std::string& p, const TournamentResult& r) {
  std::vector<Json> rows;
  for (const auto& x : r.raw) {
    Json j;
    to_json(j, x);
    rows.push_back(std::move(j));
  }
  for (const auto& s : r.skipped) {
    rows.push_back(Json{{"pair_id", s.pair_id}, {"evaluator", s.evaluator}, {"skipped", s.reason}});
  }
  write_jsonl(p, rows);
}

}  // namespace

void Campaign::evaluate() {
  TournamentResult within, h2h;
  Clock clock = cfg_.backend == BackendKind::Sim ? logical_clock() : wall_clock_ms();
  for (const auto& name : cfg_.tasks) {
    TaskContext& ctx = task_context(name);
    const std::string key = task_key(ctx);
    const auto zs = zero_shots(ctx);
    std::map<Strategy, std::vector<ImageRef>> finals;
    for (Strategy s : cfg_.strategies) {
      std::vector<Contestant> cs;
      for (const auto& o : ctx.originals) cs.push_back({o, s, std::nullopt});
      for (const auto& z : zs) cs.push_back({z, s, std::nullopt});
      for (const auto& r : load_results(ctx, s)) {
        cs.push_back({r.final_image, s, std::nullopt});
        finals[s].push_back(r.final_image);
      }
      PairingPolicy policy;
      policy.statuses = {Variant::original(), Variant::zero_shot(), Variant::final_image()};
      policy.include_same_status = cfg_.tournament.include_same_status;
      policy.within_category = cfg_.tournament.within_category;
      policy.sample_size = cfg_.tournament.sample_size;
      policy.seed = mix_keys(cfg_.seed_value(), fnv1a("pairs/" + key + "/" + to_string(s)));
      const auto pairs = build_pairings(cs, policy, ctx.spec);
      TournamentSettings ts;
      ts.task = ctx.spec.task_id;
      ts.instruction = ctx.spec.evaluator_instruction;
      ts.tag = StrategyTag::same(s);
      Stream stream = Stream::named(cfg_.seed_value(), key + "/evaluate/" + to_string(s));
      within.append(run_tournament(pairs, ctx.evaluators, ts, stream, clock));
    }
    if (cfg_.tournament.head_to_head && finals.size() >= 2) {
      PairingPolicy policy;
      policy.within_category = cfg_.tournament.within_category;
      policy.sample_size = cfg_.tournament.sample_size;
      policy.seed = mix_keys(cfg_.seed_value(), fnv1a("pairs/" + key + "/head-to-head"));
      Stream stream = Stream::named(cfg_.seed_value(), key + "/head-to-head");
      h2h.append(head_to_head(finals, ctx.evaluators, policy, ctx.spec, ctx.spec.evaluator_instruction, stream, clock));
    }
  }
  write_trial_log(path("trials/evaluate.jsonl"), within.trials);
  write_raw(path("trials/raw_evaluate.jsonl"), within);
  Json summary{{"evaluate", tournament_summary(within)}};
  if (!h2h.trials.empty()) {
    write_trial_log(path("trials/head_to_head.jsonl"), h2h.trials);
    write_raw(path("trials/raw_head_to_head.jsonl"), h2h);
    summary["head_to_head"] = tournament_summary(h2h);
  }
  mark_done("evaluate", summary);
}

void Campaign::interpret() {
  const InterpretPrompts prompts = load_interpret_prompts();
  std::vector<interpret::DescriptionItem> items;
  std::vector<Json> rows;
  std::vector<TaskId> task_ids;
  for (const auto& name : cfg_.tasks) {
    TaskContext& ctx = task_context(name);
    const std::string key = task_key(ctx);
    task_ids.push_back(ctx.spec.task_id);
    if (!ctx.backends.describer) throw PreconditionError("interpret: no describer backend");
    for (Strategy s : cfg_.strategies) {
      const auto results = load_results(ctx, s);
      std::vector<std::string> texts(results.size());
      parallel_for(results.size(), cfg_.workers, [&](std::size_t i) {
        Stream stream = Stream::named(cfg_.seed_value(), key + "/describe/" + to_string(s) + "/" +
                                                             ctx.originals[i].identity_id);
        texts[i] = interpret::describe_difference(*ctx.backends.describer, stream.next(),
                                                  prompts.detector_instruction, ctx.originals[i],
                                                  results[i].final_image);
      });
      for (std::size_t i = 0; i < results.size(); ++i) {
        items.push_back({s, ctx.spec.task_id, ctx.originals[i].identity_id, texts[i]});
        rows.push_back(Json{{"task", key},
                            {"strategy", to_string(s)},
                            {"identity_id", ctx.originals[i].identity_id},
                            {"final_id", results[i].final_image.id},
                            {"description", texts[i]}});
      }
    }
  }
  write_jsonl(path("interpret/descriptions.jsonl"), rows);

  Json summary = Json::object();
  for (auto& group : interpret::group_inputs(items, cfg_.strategies, task_ids)) {
    TaskContext* ctx = nullptr;
    for (const auto& name : cfg_.tasks) {
      if (task_context(name).spec.task_id == group.task) ctx = &task_context(name);
    }
    std::vector<std::string> texts;
    for (const auto& it : group.items) texts.push_back(it.text);
    interpret::MatryoshkaOptions opts;
    opts.linkage = cfg_.interpret.linkage;
    opts.distance = cfg_.interpret.distance;
    opts.instruction = prompts.summarizer_instruction;
    opts.concurrency = cfg_.interpret.concurrency;
    Stream stream = Stream::named(cfg_.seed_value(), group.key() + "/interpret");
    const auto result = interpret::matryoshka(texts, *ctx->backends.embedder, *ctx->backends.summarizer, stream, opts);
    const std::string stem = fmt::format("interpret/{}_{}", to_string(group.strategy), to_string(group.task));
    // Partial trees are persisted too; the error field says where it stopped.
    write_json_file(path(stem + ".json"), interpret::to_json(result));
    write_text_file(path(stem + ".csv"), interpret::levels_csv(result));
    if (!result.complete()) throw BackendError("interpret " + group.key() + ": " + result.error.value_or("incomplete"));
    Json themes = Json::array();
    for (const auto& t : result.root->themes) themes.push_back(t);
    summary[group.key()] = {{"items", texts.size()}, {"levels", result.levels.size()}, {"top_themes", themes}};
  }
  mark_done("interpret", summary);
}

void Campaign::mitigate() {
  TournamentResult all;
  Clock clock = cfg_.backend == BackendKind::Sim ? logical_clock() : wall_clock_ms();
  const Strategy s = cfg_.mitigation.strategy;
  for (const auto& name : cfg_.tasks) {
    TaskContext& ctx = task_context(name);
    const std::string key = task_key(ctx);
    std::vector<Contestant> cs;
    for (const auto& o : ctx.originals) cs.push_back({o, s, std::nullopt});
    for (const auto& r : load_results(ctx, s)) cs.push_back({r.final_image, s, std::nullopt});
    PairingPolicy policy;
    policy.statuses = {Variant::original(), Variant::final_image()};
    policy.include_same_status = false;
    policy.within_category = cfg_.tournament.within_category;
    policy.sample_size = cfg_.mitigation.sample_size;
    policy.seed = mix_keys(cfg_.seed_value(), fnv1a("pairs/" + key + "/mitigation"));
    const auto pairs = build_pairings(cs, policy, ctx.spec);
    MitigationSettings ms;
    ms.kappas = cfg_.mitigation.kappas;
    ms.instruction = ctx.spec.evaluator_instruction;
    ms.seed = cfg_.seed_value();
    all.append(evaluate_mitigation(pairs, ctx.spec, ctx.backends, ctx.evaluators, ms, clock));
  }
  write_trial_log(path("trials/mitigate.jsonl"), all.trials);
  write_raw(path("trials/raw_mitigate.jsonl"), all);
  mark_done("mitigate", Json{{"mitigate", tournament_summary(all)}});
}

void Campaign::distill() {
  TournamentResult all;
  Clock clock = cfg_.backend == BackendKind::Sim ? logical_clock() : wall_clock_ms();
  const Strategy s = cfg_.distill.strategy;
  Json summary = Json::object();
  for (const auto& name : cfg_.tasks) {
    TaskContext& ctx = task_context(name);
    const std::string key = task_key(ctx);
    const Json tree = read_json_file(path(fmt::format("interpret/{}_{}.json", to_string(s), key)));
    if (tree["root"].is_null()) throw PreconditionError("distill: interpret tree for " + key + " is incomplete");
    std::vector<Theme> themes;
    for (const auto& t : tree["root"]["themes"]) themes.push_back(t.get<Theme>());
    const std::string prompt = distill_prompt(themes, ctx.spec);

    std::vector<ImageRef> distilled(ctx.originals.size());
    parallel_for(ctx.originals.size(), cfg_.workers, [&](std::size_t i) {
      Stream stream = Stream::named(cfg_.seed_value(), key + "/distill/" + ctx.originals[i].identity_id);
      distilled[i] = apply_distilled(ctx.originals[i], prompt, ctx.backends, stream.next());
    });
    Json images = Json::array();
    for (const auto& d : distilled) images.push_back(d);
    write_json_file(path("distill/" + key + ".json"), Json{{"strategy", to_string(s)}, {"prompt", prompt}, {"images", images}});

    std::vector<Contestant> cs;
    for (const auto& o : ctx.originals) cs.push_back({o, s, std::nullopt});
    for (const auto& z : zero_shots(ctx)) cs.push_back({z, s, std::nullopt});
    for (const auto& d : distilled) cs.push_back({d, s, std::nullopt});
    for (const auto& r : load_results(ctx, s)) cs.push_back({r.final_image, s, std::nullopt});
    PairingPolicy policy;
    policy.statuses = {Variant::original(), Variant::zero_shot(), Variant::final_image(), Variant::distilled()};
    policy.include_same_status = false;
    policy.within_category = cfg_.tournament.within_category;
    policy.sample_size = cfg_.tournament.sample_size;
    policy.seed = mix_keys(cfg_.seed_value(), fnv1a("pairs/" + key + "/distill"));
    TournamentSettings ts;
    ts.task = ctx.spec.task_id;
    ts.instruction = ctx.spec.evaluator_instruction;
    ts.tag = StrategyTag::same(s);
    Stream stream = Stream::named(cfg_.seed_value(), key + "/distill-tournament");
    all.append(run_tournament(build_pairings(cs, policy, ctx.spec), ctx.evaluators, ts, stream, clock));
    summary[key] = {{"themes", themes.size()}, {"images", distilled.size()}};
  }
  write_trial_log(path("trials/distill.jsonl"), all.trials);
  write_raw(path("trials/raw_distill.jsonl"), all);
  summary["tournament"] = tournament_summary(all);
  mark_done("distill", summary);
}

void Campaign::analyze() {
  Json summary = Json::object();
  for (const auto& spec : cfg_.analyses) {
    const std::string log = path("trials/" + spec.source + ".jsonl");
    if (!fs::exists(log)) {
      spdlog::warn("analysis {}: no {} trials, skipped", spec.name, spec.source);
      continue;
    }
    const auto result = run_analysis(read_trial_log(log), spec);
    write_analysis(path("analysis/" + spec.name), result);
    summary[spec.name] = {{"n", result.fit.n}, {"aliased", result.fit.aliased}};
  }
  mark_done("analyze", summary);
}

void Campaign::report() {
  const auto text = write_report(cfg_.output_dir);
  mark_done("report", Json{{"summary", "report/summary.md"}, {"bytes", text.size()}});
}

}  // namespace vpo
