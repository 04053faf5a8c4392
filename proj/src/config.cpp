#include "vpo/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <regex>
#include <set>

#include <fmt/format.h>

#include "vpo/tasks.hpp"

namespace vpo {

namespace fs = std::filesystem;

namespace {

std::string join_errors(const std::vector<std::string>& errors) {
  std::string msg = fmt::format("invalid configuration ({} problem{}):", errors.size(), errors.size() == 1 ? "" : "s");
  for (const auto& e : errors) msg += "\n  - " + e;
  return msg;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errs) : PreconditionError(join_errors(errs)), errors(std::move(errs)) {}

std::string to_string(BackendKind kind) { return kind == BackendKind::Sim ? "sim" : "gateway"; }

std::string interpolate_env(const std::string& text, std::vector<std::string>& missing) {
  static const std::regex var(R"(\$\{([A-Za-z_][A-Za-z0-9_]*)\})");
  std::string out;
  auto begin = std::sregex_iterator(text.begin(), text.end(), var);
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    out.append(text, last, static_cast<std::size_t>(m.position()) - last);
    const std::string name = m[1].str();
    if (const char* v = std::getenv(name.c_str())) {
      out += v;
    } else {
      missing.push_back(name);
    }
    last = static_cast<std::size_t>(m.position() + m.length());
  }
  out.append(text, last, std::string::npos);
  return out;
}

namespace {

void interpolate_tree(Json& j, std::vector<std::string>& errors, const std::string& path) {
  if (j.is_string()) {
    std::vector<std::string> missing;
    j = interpolate_env(j.get<std::string>(), missing);
    for (const auto& m : missing) errors.push_back(fmt::format("{}: environment variable {} is not set", path, m));
  } else if (j.is_object()) {
    for (auto& [k, v] : j.items()) interpolate_tree(v, errors, path.empty() ? k : path + "." + k);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) interpolate_tree(j[i], errors, fmt::format("{}[{}]", path, i));
  }
}

/// Typed field access that records problems instead of throwing, and flags
/// keys nobody asked for.
class Reader {
 public:
  Reader(const Json* j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (j_ && !j_->is_object()) {
      errors_.push_back(where() + "must be an object");
      j_ = nullptr;
    }
  }

  bool has(const char* key) const { return j_ && j_->contains(key); }

  template <typename T>
  bool get(const char* key, T& out) {
    seen_.insert(key);
    if (!has(key)) return false;
    try {
      out = (*j_)[key].get<T>();
      return true;
    } catch (const Json::exception&) {
      errors_.push_back(fmt::format("{}{}: wrong type ({})", where(), key, (*j_)[key].type_name()));
      return false;
    }
  }

  template <typename T>
  void get_optional(const char* key, std::optional<T>& out) {
    T v{};
    if (get(key, v)) out = v;
  }

  template <typename T>
  void require(const char* key, T& out) {
    if (!has(key)) {
      seen_.insert(key);
      errors_.push_back(where() + key + ": required");
      return;
    }
    get(key, out);
  }

  Reader child(const char* key) {
    seen_.insert(key);
    return Reader(has(key) ? &(*j_)[key] : nullptr, path_.empty() ? key : path_ + "." + key, errors_);
  }

  const Json* raw(const char* key) {
    seen_.insert(key);
    return has(key) ? &(*j_)[key] : nullptr;
  }

  const std::string& path() const { return path_; }
  std::vector<std::string>& errors() { return errors_; }

  void finish() const {
    if (!j_) return;
    for (const auto& [k, _] : j_->items()) {
      if (!seen_.count(k)) errors_.push_back(where() + k + ": unknown key");
    }
  }

 private:
  std::string where() const { return path_.empty() ? std::string() : path_ + "."; }

  const Json* j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

template <typename Parse>
auto parse_or_record(Reader& r, const std::string& what, Parse parse) -> std::optional<decltype(parse())> {
  try {
    return parse();
  } catch (const std::exception& e) {
    r.errors().push_back(r.path() + (r.path().empty() ? "" : ".") + what + ": " + e.what());
    return std::nullopt;
  }
}

void read_gateway_config(Reader r, gateway::GatewayConfig& out) {
  if (!r.has("endpoint") && !r.has("model")) {
    // Missing section; validation reports it.
  }
  r.get("endpoint", out.endpoint);
  r.get("model", out.model);
  r.get("auth_env", out.auth_env);
  r.get("timeout_ms", out.timeout_ms);
  r.get("retries", out.retries);
  r.get("backoff_initial_ms", out.backoff_initial_ms);
  r.get("backoff_multiplier", out.backoff_multiplier);
  r.get("backoff_max_ms", out.backoff_max_ms);
  r.get("rate_limit", out.rate_limit);
  r.finish();
}

std::vector<gateway::GatewayConfig> read_gateway_list(Reader& parent, const char* key) {
  std::vector<gateway::GatewayConfig> out;
  const Json* arr = parent.raw(key);
  if (!arr) return out;
  if (!arr->is_array()) {
    parent.errors().push_back(parent.path() + "." + key + ": must be an array");
    return out;
  }
  for (std::size_t i = 0; i < arr->size(); ++i) {
    gateway::GatewayConfig c;
    read_gateway_config(Reader(&(*arr)[i], fmt::format("{}.{}[{}]", parent.path(), key, i), parent.errors()), c);
    out.push_back(std::move(c));
  }
  return out;
}

AnalysisSpec read_analysis(Reader r) {
  AnalysisSpec s;
  r.require("name", s.name);
  r.get("source", s.source);
  std::string mode = "standard";
  if (r.get("mode", mode)) {
    if (mode == "standard") s.mode = analysis::ExpandMode::Standard;
    else if (mode == "mitigation") s.mode = analysis::ExpandMode::Mitigation;
    else r.errors().push_back(r.path() + ".mode: expected standard or mitigation");
  }
  r.require("factors", s.model.factors);
  r.get("interaction_depth", s.model.interaction_depth);
  r.get("fixed_effects", s.model.fixed_effects);
  r.get("clusters", s.model.clusters);
  r.get("level_order", s.model.level_order);
  r.get("emm", s.emm);
  if (s.emm.empty()) s.emm = s.model.factors;
  r.get_optional("reference", s.reference);
  std::vector<std::string> filter;
  if (r.get("filter", filter)) {
    if (filter.size() == 2) s.filter = std::pair{filter[0], filter[1]};
    else r.errors().push_back(r.path() + ".filter: expected [column, value]");
  }
  r.finish();
  return s;
}

}  // namespace

std::vector<AnalysisSpec> default_analyses() {
  auto spec = [](std::string name, std::string source, analysis::ExpandMode mode, std::vector<std::string> factors,
                 int depth, std::optional<std::string> reference) {
    AnalysisSpec s;
    s.name = std::move(name);
    s.source = std::move(source);
    s.mode = mode;
    s.model.factors = factors;
    s.model.interaction_depth = depth;
    s.model.fixed_effects = {"task", "evaluator"};
    s.model.clusters = {"pair"};
    s.emm = std::move(factors);
    s.reference = std::move(reference);
    return s;
  };
  using analysis::ExpandMode;
  return {spec("evaluate", "evaluate", ExpandMode::Standard, {"strategy", "status"}, 2, std::nullopt),
          spec("head_to_head", "head_to_head", ExpandMode::Standard, {"strategy"}, 1, "CVPO"),
          spec("mitigation", "mitigate", ExpandMode::Mitigation, {"kappa", "status"}, 2, std::nullopt),
          spec("distill", "distill", ExpandMode::Standard, {"status"}, 1, "Original")};
}

CampaignConfig config_from_json(const Json& input, const std::string& base_dir) {
  std::vector<std::string> errors;
  Json j = input;
  interpolate_tree(j, errors, "");
  CampaignConfig c;
  c.base_dir = base_dir;
  Reader r(&j, "", errors);

  r.get("name", c.name);
  r.get_optional("seed", c.seed);
  r.require("output_dir", c.output_dir);
  r.require("tasks", c.tasks);
  std::vector<std::string> strategies;
  if (r.get("strategies", strategies)) {
    c.strategies.clear();
    for (const auto& s : strategies) {
      if (auto v = parse_or_record(r, "strategies", [&] { return parse_strategy(s); })) c.strategies.push_back(*v);
    }
  }
  r.get("workers", c.workers);
  {
    Reader o = r.child("optimizer");
    auto& oc = c.optimizer;
    o.get("t_max", oc.t_max);
    o.get("t_min", oc.t_min);
    o.get("epsilon", oc.epsilon);
    o.get("challengers", oc.challengers);
    o.get("panel_size", oc.panel_size);
    o.get("patience", oc.patience);
    o.get("vfd_attempts", oc.vfd_attempts);
    o.get("vtg_memory", oc.vtg_memory);
    o.get("vfd_respect_t_min", oc.vfd_respect_t_min);
    o.finish();
  }
  {
    Reader b = r.child("backend");
    std::string kind = "sim";
    b.get("kind", kind);
    if (kind == "sim") c.backend = BackendKind::Sim;
    else if (kind == "gateway") c.backend = BackendKind::Gateway;
    else errors.push_back("backend.kind: expected sim or gateway, got '" + kind + "'");
    {
      Reader s = b.child("sim");
      auto& sc = c.sim;
      s.get("identities", sc.identities);
      s.get("weights", sc.weights);
      s.get("max_win_prob", sc.max_win_prob);
      s.get_optional("noise_scale", sc.noise_scale);
      s.get("order_bias", sc.order_bias);
      s.get("edit_noise", sc.edit_noise);
      s.get("identity_dim", sc.identity_dim);
      s.get("prior_target", sc.prior_target);
      s.get("prior_pull", sc.prior_pull);
      s.get("originals_lo", sc.originals_lo);
      s.get("originals_hi", sc.originals_hi);
      s.get("gamma", sc.gamma);
      s.get("evaluators", sc.evaluators);
      s.get("max_themes", sc.max_themes);
      s.finish();
    }
    if (b.has("gateway")) {
      Reader g = b.child("gateway");
      GatewaySettings gs;
      read_gateway_config(g.child("editor"), gs.setup.editor);
      gs.setup.judges = read_gateway_list(g, "judges");
      read_gateway_config(g.child("text"), gs.setup.text);
      read_gateway_config(g.child("embedder"), gs.setup.embedder);
      gs.evaluators = read_gateway_list(g, "evaluators");
      g.get_optional("verifier_instruction", gs.setup.verifier_instruction);
      g.get("image_store", gs.setup.image_store);
      g.get_optional("audit_log", gs.setup.audit_log);
      g.require("images_dir", gs.images_dir);
      g.finish();
      c.gateway = std::move(gs);
    }
    b.finish();
  }
  {
    Reader t = r.child("tournament");
    t.get("sample_size", c.tournament.sample_size);
    t.get("include_same_status", c.tournament.include_same_status);
    t.get("within_category", c.tournament.within_category);
    t.get("head_to_head", c.tournament.head_to_head);
    t.finish();
  }
  if (const Json* a = r.raw("analysis")) {
    if (!a->is_array()) {
      errors.push_back("analysis: must be an array");
    } else {
      for (std::size_t i = 0; i < a->size(); ++i) {
        c.analyses.push_back(read_analysis(Reader(&(*a)[i], fmt::format("analysis[{}]", i), errors)));
      }
    }
  } else {
    c.analyses = default_analyses();
  }
  {
    Reader in = r.child("interpret");
    in.get("enabled", c.interpret.enabled);
    std::string s;
    if (in.get("linkage", s)) {
      if (auto v = parse_or_record(in, "linkage", [&] { return interpret::parse_linkage(s); })) c.interpret.linkage = *v;
    }
    if (in.get("distance", s)) {
      if (auto v = parse_or_record(in, "distance", [&] { return interpret::parse_distance(s); })) c.interpret.distance = *v;
    }
    in.get("concurrency", c.interpret.concurrency);
    in.finish();
  }
  {
    Reader m = r.child("mitigation");
    m.get("enabled", c.mitigation.enabled);
    m.get("kappas", c.mitigation.kappas);
    m.get("sample_size", c.mitigation.sample_size);
    std::string s;
    if (m.get("strategy", s)) {
      if (auto v = parse_or_record(m, "strategy", [&] { return parse_strategy(s); })) c.mitigation.strategy = *v;
    }
    m.finish();
  }
  {
    Reader d = r.child("distill");
    d.get("enabled", c.distill.enabled);
    std::string s;
    if (d.get("strategy", s)) {
      if (auto v = parse_or_record(d, "strategy", [&] { return parse_strategy(s); })) c.distill.strategy = *v;
    }
    d.finish();
  }
  {
    Reader s = r.child("service");
    s.get("host", c.service.host);
    s.get("port", c.service.port);
    s.get("queue_size", c.service.queue_size);
    s.get("participants", c.service.participants);
    s.get("pairs_source", c.service.pairs_source);
    s.get("static_dir", c.service.static_dir);
    s.get("image_root", c.service.image_root);
    s.finish();
  }
  r.finish();

  c.optimizer.seed = c.seed_value();
  // Relative paths follow the config file.
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (fs::path(base_dir) / p).lexically_normal().string();
  };
  resolve(c.output_dir);
  if (c.gateway) {
    resolve(c.gateway->images_dir);
    resolve(c.gateway->setup.image_store);
    if (c.gateway->setup.audit_log) resolve(*c.gateway->setup.audit_log);
  }
  resolve(c.service.static_dir);
  resolve(c.service.image_root);
  for (auto& t : c.tasks) {
    const bool builtin = t == "hotels" || t == "houses" || t == "people" || t == "products";
    if (!builtin) resolve(t);
  }

  if (!errors.empty()) throw ConfigError(errors);
  c.validate();
  return c;
}

void CampaignConfig::validate() const {
  std::vector<std::string> e;
  if (backend == BackendKind::Sim && !seed) e.push_back("seed: required for the sim backend");
  if (output_dir.empty()) e.push_back("output_dir: required");
  if (tasks.empty()) e.push_back("tasks: at least one task is required");
  std::set<TaskId> task_ids;
  for (const auto& t : tasks) {
    try {
      const TaskSpec spec = load_task(t);
      if (!task_ids.insert(spec.task_id).second && spec.task_id != TaskId::Custom) {
        e.push_back("tasks: '" + t + "' listed twice");
      }
    } catch (const std::exception& ex) {
      e.push_back("tasks: cannot load '" + t + "': " + ex.what());
    }
  }
  if (strategies.empty()) e.push_back("strategies: at least one strategy is required");
  std::set<Strategy> seen;
  for (Strategy s : strategies) {
    if (s == Strategy::None) e.push_back("strategies: 'none' is not an optimizer");
    if (!seen.insert(s).second) e.push_back("strategies: " + vpo::to_string(s) + " listed twice");
  }
  try {
    optimizer.validate();
  } catch (const PreconditionError& ex) {
    e.push_back(std::string("optimizer: ") + ex.what());
  }
  if (workers < 1) e.push_back("workers: must be >= 1");

  if (backend == BackendKind::Sim) {
    const auto& s = sim;
    if (s.identities < 2) e.push_back("backend.sim.identities: need at least 2");
    if (s.weights.empty()) e.push_back("backend.sim.weights: must be non-empty");
    if (!(s.max_win_prob > 0.5 && s.max_win_prob < 1.0)) e.push_back("backend.sim.max_win_prob: must lie in (0.5, 1)");
    if (s.noise_scale && *s.noise_scale < 0) e.push_back("backend.sim.noise_scale: must be >= 0");
    if (s.edit_noise < 0) e.push_back("backend.sim.edit_noise: must be >= 0");
    if (s.identity_dim < 1) e.push_back("backend.sim.identity_dim: must be >= 1");
    if (!(s.prior_pull >= 0 && s.prior_pull <= 1)) e.push_back("backend.sim.prior_pull: must lie in [0,1]");
    if (!(s.prior_target >= 0 && s.prior_target <= 1)) e.push_back("backend.sim.prior_target: must lie in [0,1]");
    if (!(0 <= s.originals_lo && s.originals_lo <= s.originals_hi && s.originals_hi <= 1)) {
      e.push_back("backend.sim.originals_lo/hi: need 0 <= lo <= hi <= 1");
    }
    if (!(s.gamma >= 0 && s.gamma <= 1)) e.push_back("backend.sim.gamma: must lie in [0,1]");
    if (s.evaluators < 1) e.push_back("backend.sim.evaluators: must be >= 1");
    if (s.max_themes < 1) e.push_back("backend.sim.max_themes: must be >= 1");
  } else {
    if (!gateway) {
      e.push_back("backend.gateway: required when backend.kind is gateway");
    } else {
      gateway->setup.validate(e);
      for (std::size_t i = 0; i < gateway->evaluators.size(); ++i) {
        gateway->evaluators[i].validate(fmt::format("gateway.evaluators[{}]", i), e);
      }
      if (!fs::is_directory(gateway->images_dir)) {
        e.push_back("backend.gateway.images_dir: '" + gateway->images_dir + "' is not a directory");
      }
    }
  }

  if (tournament.sample_size < 1) e.push_back("tournament.sample_size: must be >= 1");

  static const std::set<std::string> sources{"evaluate", "head_to_head", "mitigate", "distill"};
  static const std::set<std::string> factor_cols{"status", "strategy", "evaluator", "task", "kappa", "category"};
  static const std::set<std::string> cluster_cols{"pair", "evaluator", "image", "trial"};
  std::set<std::string> names;
  for (std::size_t i = 0; i < analyses.size(); ++i) {
    const auto& a = analyses[i];
    const std::string at = fmt::format("analysis[{}] ({})", i, a.name);
    if (!names.insert(a.name).second) e.push_back(at + ": duplicate name");
    if (!sources.count(a.source)) e.push_back(at + ": unknown source '" + a.source + "'");
    try {
      a.model.validate();
    } catch (const PreconditionError& ex) {
      e.push_back(at + ": " + ex.what());
    }
    for (const auto* list : {&a.model.factors, &a.model.fixed_effects, &a.emm}) {
      for (const auto& f : *list) {
        if (!factor_cols.count(f)) e.push_back(at + ": unknown factor '" + f + "'");
      }
    }
    for (const auto& f : a.emm) {
      const bool in_model =
          std::find(a.model.factors.begin(), a.model.factors.end(), f) != a.model.factors.end() ||
          std::find(a.model.fixed_effects.begin(), a.model.fixed_effects.end(), f) != a.model.fixed_effects.end();
      if (!in_model) e.push_back(at + ": emm factor '" + f + "' is not in the model");
    }
    for (const auto& cl : a.model.clusters) {
      if (!cluster_cols.count(cl)) e.push_back(at + ": unknown cluster variable '" + cl + "'");
    }
  }

  if (interpret.concurrency < 1) e.push_back("interpret.concurrency: must be >= 1");
  if (mitigation.enabled) {
    if (mitigation.kappas.empty()) e.push_back("mitigation.kappas: must be non-empty");
    for (int k : mitigation.kappas) {
      if (k < 0) e.push_back("mitigation.kappas: negative pass count");
    }
    if (mitigation.sample_size < 1) e.push_back("mitigation.sample_size: must be >= 1");
    if (!seen.count(mitigation.strategy)) e.push_back("mitigation.strategy: not among the campaign strategies");
  }
  if (distill.enabled) {
    if (!seen.count(distill.strategy)) e.push_back("distill.strategy: not among the campaign strategies");
    if (!interpret.enabled) e.push_back("distill: needs interpret.enabled for its themes");
  }
  if (service.port < 0 || service.port > 65535) e.push_back("service.port: out of range");
  if (service.queue_size < 1) e.push_back("service.queue_size: must be >= 1");
  if (!sources.count(service.pairs_source)) e.push_back("service.pairs_source: unknown source");

  if (!e.empty()) throw ConfigError(e);
}

void CampaignConfig::preflight() const {
  validate();
  if (backend != BackendKind::Gateway) return;
  std::vector<std::string> e;
  gateway->setup.preflight(e);
  for (const auto& ev : gateway->evaluators) {
    try {
      gateway::auth_token(ev);
    } catch (const PreconditionError& ex) {
      e.push_back(ex.what());
    }
  }
  if (!e.empty()) throw ConfigError(e);
}

Json CampaignConfig::to_json() const {
  Json strategies_j = Json::array();
  for (Strategy s : strategies) strategies_j.push_back(vpo::to_string(s));
  Json analyses_j = Json::array();
  for (const auto& a : analyses) {
    analyses_j.push_back({{"name", a.name},
                          {"source", a.source},
                          {"mode", a.mode == analysis::ExpandMode::Standard ? "standard" : "mitigation"},
                          {"factors", a.model.factors},
                          {"interaction_depth", a.model.interaction_depth},
                          {"fixed_effects", a.model.fixed_effects},
                          {"clusters", a.model.clusters},
                          {"level_order", a.model.level_order},
                          {"emm", a.emm},
                          {"reference", a.reference ? Json(*a.reference) : Json(nullptr)},
                          {"filter", a.filter ? Json::array({a.filter->first, a.filter->second}) : Json(nullptr)}});
  }
  Json backend_j{{"kind", vpo::to_string(backend)}};
  if (backend == BackendKind::Sim) {
    backend_j["sim"] = {{"identities", sim.identities},
                        {"weights", sim.weights},
                        {"max_win_prob", sim.max_win_prob},
                        {"noise_scale", sim.noise_scale ? Json(*sim.noise_scale) : Json(nullptr)},
                        {"order_bias", sim.order_bias},
                        {"edit_noise", sim.edit_noise},
                        {"identity_dim", sim.identity_dim},
                        {"prior_target", sim.prior_target},
                        {"prior_pull", sim.prior_pull},
                        {"originals_lo", sim.originals_lo},
                        {"originals_hi", sim.originals_hi},
                        {"gamma", sim.gamma},
                        {"evaluators", sim.evaluators},
                        {"max_themes", sim.max_themes}};
  } else if (gateway) {
    Json judges = Json::array(), evaluators = Json::array();
    for (const auto& g : gateway->setup.judges) judges.push_back(g);
    for (const auto& g : gateway->evaluators) evaluators.push_back(g);
    backend_j["gateway"] = {{"editor", gateway->setup.editor},
                            {"judges", judges},
                            {"text", gateway->setup.text},
                            {"embedder", gateway->setup.embedder},
                            {"evaluators", evaluators},
                            {"images_dir", gateway->images_dir}};
  }
  return Json{{"name", name},
              {"seed", seed ? Json(*seed) : Json(nullptr)},
              {"tasks", tasks},
              {"strategies", strategies_j},
              {"optimizer",
               {{"t_max", optimizer.t_max},
                {"t_min", optimizer.t_min},
                {"epsilon", optimizer.epsilon},
                {"challengers", optimizer.challengers},
                {"panel_size", optimizer.panel_size},
                {"patience", optimizer.patience},
                {"vfd_attempts", optimizer.vfd_attempts},
                {"vtg_memory", optimizer.vtg_memory},
                {"vfd_respect_t_min", optimizer.vfd_respect_t_min}}},
              {"backend", backend_j},
              {"tournament",
               {{"sample_size", tournament.sample_size},
                {"include_same_status", tournament.include_same_status},
                {"within_category", tournament.within_category},
                {"head_to_head", tournament.head_to_head}}},
              {"analysis", analyses_j},
              {"interpret",
               {{"enabled", interpret.enabled},
                {"linkage", interpret::to_string(interpret.linkage)},
                {"distance", interpret::to_string(interpret.distance)}}},
              {"mitigation",
               {{"enabled", mitigation.enabled},
                {"kappas", mitigation.kappas},
                {"sample_size", mitigation.sample_size},
                {"strategy", vpo::to_string(mitigation.strategy)}}},
              {"distill", {{"enabled", distill.enabled}, {"strategy", vpo::to_string(distill.strategy)}}}};
}

std::string CampaignConfig::hash() const { return hex64(fnv1a(to_json().dump())); }

CampaignConfig load_config(const std::string& path) {
  const Json j = read_json_file(path);
  return config_from_json(j, fs::absolute(path).parent_path().string());
}

}  // namespace vpo
