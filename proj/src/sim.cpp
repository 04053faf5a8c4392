#include "vpo/sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace vpo::sim {

namespace {

const SynthImage& require_synth(const ImageRef& image, std::string_view who) {
  const SynthImage* s = image.synth();
  if (s == nullptr)
    throw PreconditionError(std::string(who) + ": image '" + image.id + "' has no synthetic payload");
  return *s;
}

std::vector<std::string_view> split_ws(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string_view trim_punct(std::string_view tok) {
  constexpr std::string_view lead = "([{\"'*`";
  constexpr std::string_view trail = ")]},;:\"'`";
  while (!tok.empty() && lead.find(tok.front()) != std::string_view::npos) tok.remove_prefix(1);
  while (!tok.empty() && trail.find(tok.back()) != std::string_view::npos) tok.remove_suffix(1);
  // A sentence-final period, but not the one in "0.".
  if (tok.size() > 1 && tok.back() == '.' && !std::isdigit(static_cast<unsigned char>(tok[tok.size() - 2])))
    tok.remove_suffix(1);
  return tok;
}

std::optional<int> parse_int(std::string_view tok) {
  int v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size() || tok.empty()) return std::nullopt;
  return v;
}

std::optional<double> parse_real(std::string_view tok) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  if (tok.size() > 1 && tok.back() == '.') tok.remove_suffix(1);
  double v = 0.0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size() || tok.empty() || !std::isfinite(v))
    return std::nullopt;
  return v;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

std::string signed_number(double v) {
  std::string s = format_number(v);
  return v >= 0 ? "+" + s : s;
}

}  // namespace

void SimEnvironment::validate() const {
  if (weights.size() == 0) throw PreconditionError("sim: utility weights must be non-empty");
  if (!(noise_scale >= 0.0)) throw PreconditionError("sim: noise_scale must be >= 0");
  if (!(edit_noise >= 0.0)) throw PreconditionError("sim: edit_noise must be >= 0");
  if (std::isnan(order_bias)) throw PreconditionError("sim: order_bias is NaN");
  if (identity_dim < 1) throw PreconditionError("sim: identity_dim must be >= 1");
  if (prior_pull < 0.0 || prior_pull > 1.0) throw PreconditionError("sim: prior_pull must lie in [0,1]");
  if (prior_pull > 0.0 && prior_target.size() != weights.size())
    throw PreconditionError("sim: prior_target must match the presentation dimension");
  if (step_min <= 0.0 || step_max < step_min) throw PreconditionError("sim: bad proposal step range");
  if (feedback_coordinates < 1 || max_named < 1 || max_themes < 1)
    throw PreconditionError("sim: feedback_coordinates, max_named, max_themes must be >= 1");
}

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double noise_scale_for_max_win_prob(const Eigen::VectorXd& weights, double p_max) {
  if (!(p_max > 0.5 && p_max < 1.0)) throw PreconditionError("p_max must lie in (0.5, 1)");
  return weights.cwiseAbs().sum() / std::log(p_max / (1.0 - p_max));
}

double sim_utility(const SimEnvironment& env, const SynthImage& image) {
  if (image.presentation.size() != env.weights.size())
    throw PreconditionError("sim_utility: presentation dimension mismatch");
  return utility(env.weights, image.presentation);
}

double sim_utility(const SimEnvironment& env, const ImageRef& image) {
  return sim_utility(env, require_synth(image, "sim_utility"));
}

double first_win_probability(double utility_gap, double noise_scale, double order_bias) {
  if (std::isinf(order_bias)) return order_bias > 0 ? 1.0 : 0.0;
  if (noise_scale > 0.0) return logistic(utility_gap / noise_scale + order_bias);
  // Zero temperature: strict argmax; an exact tie goes to the first-shown
  // image unless the order bias says otherwise.
  if (utility_gap > 0.0) return 1.0;
  if (utility_gap < 0.0) return 0.0;
  return order_bias < 0.0 ? 0.0 : 1.0;
}

std::string format_number(double value) {
  if (value == 0.0) value = 0.0;  // drops the sign of -0
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw Error("format_number failed");
  return std::string(buf, p);
}

std::string format_op(const EditOp& op) {
  std::string head = op.kind == EditOp::Kind::Set ? "set " : "add ";
  if (op.identity) head += "id ";
  head += std::to_string(op.index) + " ";
  return head + (op.kind == EditOp::Kind::Add ? signed_number(op.value) : format_number(op.value));
}

std::string format_ops(const std::vector<EditOp>& ops) {
  std::string out;
  for (const auto& op : ops) {
    if (!out.empty()) out += '\n';
    out += format_op(op);
  }
  return out;
}

EditProgram parse_edit_program(std::string_view text, std::string_view prior_text) {
  EditProgram program;
  program.applies_prior = !prior_text.empty() && text.find(prior_text) != std::string_view::npos;
  const auto raw = split_ws(text);
  std::vector<std::string_view> toks;
  toks.reserve(raw.size());
  for (auto t : raw) toks.push_back(trim_punct(t));
  auto at = [&](std::size_t k) -> std::string_view { return k < toks.size() ? toks[k] : std::string_view{}; };

  std::size_t i = 0;
  while (i < toks.size()) {
    const std::string kw = lower(toks[i]);
    if (kw != "set" && kw != "add") {
      ++program.unknown_tokens;
      ++i;
      continue;
    }
    EditOp op;
    op.kind = kw == "set" ? EditOp::Kind::Set : EditOp::Kind::Add;
    std::size_t k = i + 1;
    if (lower(at(k)) == "id") {
      op.identity = true;
      ++k;
    }
    auto idx = parse_int(at(k));
    auto val = parse_real(at(k + 1));
    if (!idx || !val || *idx < 0) {
      ++program.malformed_ops;
      ++i;
      continue;
    }
    op.index = *idx;
    op.value = *val;
    program.ops.push_back(op);
    i = k + 2;
  }
  if (program.malformed_ops > 0)
    spdlog::warn("edit program: ignored {} malformed op(s)", program.malformed_ops);
  if (program.unknown_tokens > 0)
    spdlog::debug("edit program: ignored {} unknown token(s)", program.unknown_tokens);
  return program;
}

EditResult apply_edit_program(const SimEnvironment& env, const SynthImage& image,
                              const EditProgram& program, Rng& rng) {
  EditResult result{image, 0};
  Eigen::VectorXd& x = result.image.presentation;
  const int d = static_cast<int>(x.size());
  if (d != env.presentation_dim()) throw PreconditionError("edit: presentation dimension mismatch");

  if (program.applies_prior && env.prior_pull > 0.0) {
    for (int i = 0; i < d; ++i) {
      const double target = env.prior_target[i];
      const double dir = target >= 0.5 ? 1.0 : -1.0;
      const double gap = target - x[i];
      if (gap * dir > 0.0) x[i] += env.prior_pull * gap;
    }
  }

  std::vector<bool> touched(d, false);
  for (const auto& op : program.ops) {
    if (op.identity) {
      ++result.identity_violations;
      continue;
    }
    if (op.index >= d) {
      spdlog::warn("edit program: coordinate {} out of range (d={})", op.index, d);
      continue;
    }
    if (op.kind == EditOp::Kind::Set)
      x[op.index] = op.value;
    else
      x[op.index] += op.value;
    touched[op.index] = true;
  }
  if (env.edit_noise > 0.0)
    for (int i = 0; i < d; ++i)
      if (touched[i]) x[i] += env.edit_noise * rng.normal();
  x = x.cwiseMax(0.0).cwiseMin(1.0);
  return result;
}

ImageRef SimEditor::edit(const CallContext& ctx, const ImageRef& image,
                         std::string_view composed_prompt, std::span<const ImageRef>) {
  const SynthImage& src = require_synth(image, "sim edit");
  const EditProgram program = parse_edit_program(composed_prompt, env_->prior_text);
  Rng rng(ctx.seed);
  EditResult r = apply_edit_program(*env_, src, program, rng);
  if (r.identity_violations > 0) {
    violations_ += static_cast<std::uint64_t>(r.identity_violations);
    spdlog::warn("sim edit of {}: {} identity op(s) projected out", image.id, r.identity_violations);
  }
  const std::string suffix =
      "e" + hex64(mix_keys(ctx.seed, fnv1a(image.id + "\n" + std::string(composed_prompt))));
  return derive_image(image, suffix, Variant::step(1), std::move(r.image),
                      std::string(composed_prompt));
}

SimJudge::SimJudge(std::shared_ptr<const SimEnvironment> env, std::string id,
                   std::optional<double> order_bias, std::optional<double> noise_scale)
    : env_(std::move(env)),
      id_(std::move(id)),
      order_bias_(order_bias.value_or(env_->order_bias)),
      noise_scale_(noise_scale.value_or(env_->noise_scale)) {
  if (!(noise_scale_ >= 0.0)) throw PreconditionError("sim judge: noise_scale must be >= 0");
}

Judgment SimJudge::judge(const CallContext& ctx, std::string_view, const ImageRef& first,
                         const ImageRef& second) {
  const SynthImage& a = require_synth(first, "sim judge");
  const SynthImage& b = require_synth(second, "sim judge");
  const double gap = sim_utility(*env_, a) - sim_utility(*env_, b);
  const double p = first_win_probability(gap, noise_scale_, order_bias_);
  Side winner;
  if (p >= 1.0)
    winner = Side::First;
  else if (p <= 0.0)
    winner = Side::Second;
  else
    winner = Rng(ctx.seed).uniform() < p ? Side::First : Side::Second;
  const bool first_won = winner == Side::First;
  return {winner, describe_advantage(*env_, first_won ? a : b, first_won ? b : a)};
}

std::string describe_advantage(const SimEnvironment& env, const SynthImage& winner,
                               const SynthImage& loser) {
  const int limit = env.feedback_coordinates;
  auto top = [limit](const Eigen::VectorXd& score) {
    std::vector<int> idx;
    for (int i = 0; i < score.size(); ++i)
      if (score[i] > 1e-12) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](int l, int r) { return score[l] > score[r]; });
    if (idx.size() > static_cast<std::size_t>(limit)) idx.resize(limit);
    return idx;
  };
  const Eigen::VectorXd& w = env.weights;
  const Eigen::VectorXd gaps = w.cwiseProduct(winner.presentation - loser.presentation);
  // What would have made the other image preferable: its largest
  // utility-weighted headroom.
  Eigen::VectorXd headroom(w.size());
  for (int i = 0; i < w.size(); ++i)
    headroom[i] = w[i] > 0 ? w[i] * (1.0 - loser.presentation[i]) : -w[i] * loser.presentation[i];

  std::string out;
  const auto stronger = top(gaps);
  if (stronger.empty()) {
    out = "Preferred image shows no clear presentation advantage.";
  } else {
    out = "Preferred image is stronger on: ";
    for (std::size_t k = 0; k < stronger.size(); ++k) {
      const int i = stronger[k];
      const bool higher = winner.presentation[i] > loser.presentation[i];
      if (k > 0) out += "; ";
      out += fmt::format("coordinate {} ({}, gap {:.3f})", i, higher ? "higher" : "lower", gaps[i]);
    }
    out += ".";
  }
  const auto missing = top(headroom);
  if (!missing.empty()) {
    out += " The other image would need: ";
    for (std::size_t k = 0; k < missing.size(); ++k) {
      const int i = missing[k];
      if (k > 0) out += "; ";
      out += fmt::format("coordinate {} ({}, headroom {:.3f})", i, w[i] > 0 ? "higher" : "lower",
                         headroom[i]);
    }
    out += ".";
  }
  return out;
}

std::vector<std::string> SimProposer::propose(const CallContext& ctx, std::string_view,
                                              std::string_view context_prompt,
                                              std::span<const std::string> feedback_history,
                                              int count) {
  if (count < 1) throw PreconditionError("propose: count must be >= 1");
  static const std::regex named(R"(coordinate (\d+) \((higher|lower))");
  const int d = env_->presentation_dim();
  std::map<int, double> votes;
  // The current prompt's own ops count as half a vote each: keep pushing the
  // directions that have already been adopted.
  for (const auto& op : parse_edit_program(context_prompt).ops)
    if (!op.identity && op.kind == EditOp::Kind::Add && op.index < d && op.value != 0.0)
      votes[op.index] += op.value > 0 ? 0.5 : -0.5;
  for (const auto& fb : feedback_history)
    for (std::sregex_iterator it(fb.begin(), fb.end(), named), end; it != end; ++it) {
      const int i = std::stoi((*it)[1].str());
      if (i >= 0 && i < d) votes[i] += (*it)[2].str() == "higher" ? 1 : -1;
    }
  std::vector<std::pair<int, double>> ranked;  // (coordinate, net vote)
  for (auto [i, v] : votes)
    if (v != 0) ranked.emplace_back(i, v);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](auto l, auto r) { return std::abs(l.second) > std::abs(r.second); });
  if (ranked.size() > static_cast<std::size_t>(env_->max_named)) ranked.resize(env_->max_named);

  Rng rng(ctx.seed);
  auto step = [&] { return round3(rng.uniform(env_->step_min, env_->step_max)); };
  auto explore = [&](std::vector<EditOp>& ops) {
    std::vector<int> free;
    for (int i = 0; i < d; ++i)
      if (std::none_of(ops.begin(), ops.end(), [i](const EditOp& op) { return op.index == i; }))
        free.push_back(i);
    if (free.empty()) return;
    const int i = free[rng.index(free.size())];
    ops.push_back({EditOp::Kind::Add, false, i, rng.bernoulli(0.5) ? step() : -step()});
  };

  std::vector<std::string> out;
  std::set<std::string> seen;
  while (static_cast<int>(out.size()) < count) {
    std::string text;
    for (int attempt = 0; attempt < 16; ++attempt) {
      std::vector<EditOp> ops;
      for (auto [i, v] : ranked) ops.push_back({EditOp::Kind::Add, false, i, v > 0 ? step() : -step()});
      if (ranked.empty() || rng.bernoulli(env_->explore_probability)) explore(ops);
      text = format_ops(ops);
      if (!seen.count(text)) break;
    }
    seen.insert(text);
    out.push_back(std::move(text));
  }
  return out;
}

Eigen::VectorXd SimEmbedder::embed(const CallContext&, std::string_view text) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
  for (auto raw : split_ws(text)) {
    const std::string tok = lower(trim_punct(raw));
    if (tok.empty()) continue;
    Rng rng(mix_keys(seed_, fnv1a(tok)));
    for (int i = 0; i < dim_; ++i) v[i] += rng.normal();
  }
  const double n = v.norm();
  if (n == 0.0) {
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / n;
}

std::vector<Theme> SimSummarizer::summarize_many(const CallContext&,
                                                 std::span<const std::string> items,
                                                 std::string_view) {
  struct Group {
    int items = 0;
    double total = 0.0;
  };
  std::map<std::pair<int, int>, Group> groups;  // (coordinate, sign)
  for (const auto& item : items) {
    std::set<std::pair<int, int>> in_item;
    for (const auto& op : parse_edit_program(item).ops) {
      if (op.identity || op.kind != EditOp::Kind::Add || op.value == 0.0) continue;
      const std::pair<int, int> key{op.index, op.value > 0 ? 1 : -1};
      auto& g = groups[key];
      g.total += op.value;
      if (in_item.insert(key).second) ++g.items;
    }
  }
  const int n = static_cast<int>(items.size());
  if (!groups.empty()) {
    std::vector<std::pair<std::pair<int, int>, Group>> ranked(groups.begin(), groups.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& l, const auto& r) {
      if (l.second.items != r.second.items) return l.second.items > r.second.items;
      return std::abs(l.second.total) > std::abs(r.second.total);
    });
    if (ranked.size() > static_cast<std::size_t>(max_themes_)) ranked.resize(max_themes_);
    std::vector<Theme> themes;
    for (const auto& [key, g] : ranked) {
      const double mean = round3(g.total / g.items);
      themes.push_back({fmt::format("{} coordinate {}", key.second > 0 ? "Raise" : "Lower", key.first),
                        fmt::format("add {} {} (in {} of {} items)", key.first,
                                    signed_number(mean), g.items, n)});
    }
    return themes;
  }
  // No ops anywhere: report the most frequent words.
  std::map<std::string, int> freq;
  for (const auto& item : items)
    for (auto raw : split_ws(item)) {
      std::string tok = lower(trim_punct(raw));
      if (tok.size() >= 3) ++freq[tok];
    }
  if (freq.empty()) return {Theme{items.front(), std::nullopt}};
  std::vector<std::pair<std::string, int>> words(freq.begin(), freq.end());
  std::stable_sort(words.begin(), words.end(),
                   [](const auto& l, const auto& r) { return l.second > r.second; });
  std::string name;
  for (std::size_t k = 0; k < words.size() && k < 3; ++k) name += (k ? " " : "") + words[k].first;
  return {Theme{name, std::nullopt}};
}

std::string SimDescriber::describe(const CallContext&, std::string_view, const ImageRef& original,
                                   const ImageRef& edited) {
  if (original.identity_id != edited.identity_id)
    throw PreconditionError("describe: images belong to different identities");
  const Eigen::VectorXd delta =
      require_synth(edited, "describe").presentation - require_synth(original, "describe").presentation;
  std::string out;
  for (int i = 0; i < delta.size(); ++i) {
    if (std::abs(delta[i]) < env_->describe_threshold) continue;
    if (!out.empty()) out += '\n';
    out += fmt::format("coordinate {} {} by {:.2f} (add {} {})", i,
                       delta[i] > 0 ? "increased" : "decreased", std::abs(delta[i]), i,
                       signed_number(round3(delta[i])));
  }
  return out.empty() ? std::string(kNoSalientChanges) : out;
}

std::pair<std::string, std::string> SimNormalizer::plan(const CallContext&, std::string_view,
                                                        const ImageRef& a, const ImageRef& b) {
  const Eigen::VectorXd& xa = require_synth(a, "normalize").presentation;
  const Eigen::VectorXd& xb = require_synth(b, "normalize").presentation;
  if (xa.size() != xb.size()) throw PreconditionError("normalize: dimension mismatch");
  const Eigen::VectorXd mean = 0.5 * (xa + xb);
  auto ops_toward = [&](const Eigen::VectorXd& x) {
    std::vector<EditOp> ops;
    const Eigen::VectorXd target = x + gamma_ * (mean - x);
    for (int i = 0; i < x.size(); ++i) ops.push_back({EditOp::Kind::Set, false, i, target[i]});
    return format_ops(ops);
  };
  return {ops_toward(xa), ops_toward(xb)};
}

std::string SimCritic::loss(const CallContext& ctx, std::string_view, const ImageRef& image,
                            std::string_view) {
  const SynthImage& x = require_synth(image, "critic loss");
  const Eigen::VectorXd& w = env_->weights;
  Rng rng(ctx.seed);
  std::vector<std::pair<double, int>> headroom;
  for (int i = 0; i < w.size(); ++i) {
    const double room = w[i] > 0 ? w[i] * (1.0 - x.presentation[i]) : -w[i] * x.presentation[i];
    headroom.emplace_back(room + env_->critic_noise * rng.normal(), i);
  }
  std::stable_sort(headroom.begin(), headroom.end(),
                   [](auto l, auto r) { return l.first > r.first; });
  std::string out = fmt::format("Estimated appeal {:.3f}. Weakest aspects:", sim_utility(*env_, x));
  const int named = std::min<int>(env_->feedback_coordinates, static_cast<int>(headroom.size()));
  for (int k = 0; k < named; ++k) {
    const int i = headroom[k].second;
    out += fmt::format("{} coordinate {} should be {} (current {:.3f})", k ? ";" : "", i,
                       w[i] > 0 ? "higher" : "lower", x.presentation[i]);
  }
  return out + ".";
}

std::string SimCritic::gradient(const CallContext&, std::string_view loss, std::string_view) {
  static const std::regex aspect(R"(coordinate (\d+) should be (higher|lower) \(current ([0-9.]+)\))");
  const std::string text(loss);
  std::string out;
  for (std::sregex_iterator it(text.begin(), text.end(), aspect), end; it != end; ++it) {
    if (!out.empty()) out += '\n';
    out += fmt::format("coordinate {} {} from {}", (*it)[1].str(), (*it)[2].str(), (*it)[3].str());
  }
  return out;
}

std::string SimCritic::direction(const CallContext&, std::span<const std::string> gradients,
                                 std::string_view) {
  static const std::regex line(R"(coordinate (\d+) (higher|lower) from ([0-9.]+))");
  struct Agg {
    int votes = 0;
    double from = 0.0;
  };
  std::map<int, Agg> agg;
  for (const auto& g : gradients)  // oldest first, so `from` ends at the latest reading
    for (std::sregex_iterator it(g.begin(), g.end(), line), end; it != end; ++it) {
      auto& a = agg[std::stoi((*it)[1].str())];
      a.votes += (*it)[2].str() == "higher" ? 1 : -1;
      a.from = std::stod((*it)[3].str());
    }
  std::vector<EditOp> ops;
  for (auto [i, a] : agg) {
    if (a.votes == 0) continue;
    const double target = std::clamp(a.from + (a.votes > 0 ? 1 : -1) * env_->critic_step, 0.0, 1.0);
    ops.push_back({EditOp::Kind::Set, false, i, round3(target)});
  }
  return format_ops(ops);
}

std::string SimCritic::apply(const CallContext&, std::string_view prompt,
                             std::string_view direction) {
  std::map<int, EditOp> merged;
  std::vector<EditOp> identity_ops;
  for (auto text : {prompt, direction})
    for (const auto& op : parse_edit_program(text).ops) {
      if (op.identity)
        identity_ops.push_back(op);
      else
        merged[op.index] = op;
    }
  std::vector<EditOp> ops;
  for (auto& [i, op] : merged) ops.push_back(op);
  ops.insert(ops.end(), identity_ops.begin(), identity_ops.end());
  return format_ops(ops);
}

std::string SimCritic::project(const CallContext&, std::string_view prompt, std::string_view) {
  std::vector<EditOp> ops;
  for (const auto& op : parse_edit_program(prompt).ops)
    if (!op.identity && op.index < env_->presentation_dim()) ops.push_back(op);
  return format_ops(ops);
}

bool SimIdentityVerifier::same_identity(const CallContext&, const ImageRef& x, const ImageRef& x0) {
  const SynthImage& a = require_synth(x, "identity check");
  const SynthImage& b = require_synth(x0, "identity check");
  return a.identity.size() == b.identity.size() && a.identity == b.identity;
}

std::vector<ImageRef> make_originals(const SimEnvironment& env, int count, std::uint64_t seed,
                                     double lo, double hi, std::string_view prefix) {
  if (count < 0 || lo < 0.0 || hi > 1.0 || lo > hi)
    throw PreconditionError("make_originals: bad count or range");
  Rng rng(seed);
  std::vector<ImageRef> out;
  for (int n = 0; n < count; ++n) {
    SynthImage img;
    img.identity.resize(env.identity_dim);
    for (int j = 0; j < env.identity_dim; ++j) img.identity[j] = static_cast<int>(rng.index(1000));
    img.presentation.resize(env.presentation_dim());
    for (int i = 0; i < env.presentation_dim(); ++i) img.presentation[i] = rng.uniform(lo, hi);
    out.push_back(make_original(fmt::format("{}{:03d}", prefix, n), std::move(img)));
  }
  return out;
}

SimEnvironment standard_environment(std::uint64_t seed, std::string prior_text) {
  SimEnvironment env;
  env.weights.resize(8);
  env.weights << 1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, -0.3;
  env.noise_scale = noise_scale_for_max_win_prob(env.weights, 0.75);
  env.seed = seed;
  env.prior_text = std::move(prior_text);
  // The generic prior helps on most coordinates but also raises the one the
  // judge dislikes.
  env.prior_target = Eigen::VectorXd::Constant(8, 0.65);
  env.prior_pull = 0.5;
  env.validate();
  return env;
}

Backends make_backends(std::shared_ptr<const SimEnvironment> env, int panel_size,
                       double normalization_gamma) {
  if (panel_size < 1) throw PreconditionError("make_backends: panel_size must be >= 1");
  env->validate();
  Backends b;
  b.editor = std::make_shared<SimEditor>(env);
  for (int j = 0; j < panel_size; ++j)
    b.judges.push_back(std::make_shared<SimJudge>(env, fmt::format("sim-judge-{}", j)));
  b.proposer = std::make_shared<SimProposer>(env);
  b.embedder = std::make_shared<SimEmbedder>(mix_keys(env->seed, fnv1a("embedder")));
  b.summarizer = std::make_shared<SimSummarizer>(env->max_themes);
  b.describer = std::make_shared<SimDescriber>(env);
  b.normalizer = std::make_shared<SimNormalizer>(normalization_gamma);
  b.critic = std::make_shared<SimCritic>(env);
  b.verifier = std::make_shared<SimIdentityVerifier>();
  return b;
}

}  // namespace vpo::sim
