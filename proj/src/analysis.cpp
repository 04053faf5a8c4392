#include "vpo/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

namespace vpo::analysis {

void Observations::validate() const {
  for (const auto* group : {&factors, &clusters}) {
    for (const auto& [name, values] : *group) {
      if (values.size() != y.size()) {
        throw PreconditionError(fmt::format("column '{}' has {} rows, outcome has {}", name,
                                            values.size(), y.size()));
      }
    }
  }
}

Observations Observations::filter(const std::string& column, const std::string& value) const {
  const std::vector<std::string>* col = nullptr;
  if (auto it = factors.find(column); it != factors.end()) col = &it->second;
  else if (auto jt = clusters.find(column); jt != clusters.end()) col = &jt->second;
  if (!col) throw PreconditionError("unknown column '" + column + "'");
  Observations out;
  for (const auto& [name, _] : factors) out.factors[name];
  for (const auto& [name, _] : clusters) out.clusters[name];
  for (std::size_t i = 0; i < rows(); ++i) {
    if ((*col)[i] != value) continue;
    out.y.push_back(y[i]);
    for (const auto& [name, values] : factors) out.factors[name].push_back(values[i]);
    for (const auto& [name, values] : clusters) out.clusters[name].push_back(values[i]);
  }
  return out;
}

namespace {

struct RowWriter {
  Observations& obs;

  void add(double chosen, const std::string& status, const std::string& strategy,
           const TrialRecord& t, const std::string& image) {
    obs.y.push_back(chosen);
    obs.factors["status"].push_back(status);
    obs.factors["strategy"].push_back(strategy);
    obs.factors["evaluator"].push_back(t.evaluator);
    obs.factors["task"].push_back(to_string(t.task));
    obs.factors["kappa"].push_back(std::to_string(t.kappa));
    obs.factors["category"].push_back(t.category.value_or(""));
    // Ids are only unique within a task.
    const std::string task = to_string(t.task) + "/";
    obs.clusters["pair"].push_back(task + t.pair_id);
    obs.clusters["evaluator"].push_back(t.evaluator);
    obs.clusters["image"].push_back(task + image);
    obs.clusters["trial"].push_back(task + t.trial_id());
  }
};

}  // namespace

Observations expand_rows(const std::vector<TrialRecord>& trials, ExpandMode mode) {
  Observations obs;
  for (const char* f : {"status", "strategy", "evaluator", "task", "kappa", "category"}) obs.factors[f];
  for (const char* c : {"pair", "evaluator", "image", "trial"}) obs.clusters[c];
  RowWriter w{obs};
  std::unordered_set<std::string> seen;
  for (const auto& t : trials) {
    if (!seen.insert(to_string(t.task) + "/" + t.trial_id()).second) continue;
    const bool inconsistent = t.outcome == Outcome::Inconsistent;
    if (mode == ExpandMode::Standard && inconsistent) continue;
    w.add(t.outcome == Outcome::Left ? 1.0 : 0.0, to_string(t.left.status), to_string(t.strategy.left),
          t, t.left.image_id);
    w.add(t.outcome == Outcome::Right ? 1.0 : 0.0, to_string(t.right.status),
          to_string(t.strategy.right), t, t.right.image_id);
    if (mode == ExpandMode::Mitigation) {
      w.add(inconsistent ? 1.0 : 0.0, kInconsistentLevel, to_string(t.strategy.left), t,
            t.pair_id + "~inconsistent");
    }
  }
  return obs;
}

void ModelSpec::validate() const {
  std::vector<std::string> errors;
  if (factors.empty() && fixed_effects.empty()) errors.push_back("model has no factors");
  if (interaction_depth < 1) errors.push_back("interaction depth must be at least 1");
  if (!factors.empty() && interaction_depth > static_cast<int>(factors.size())) {
    errors.push_back(fmt::format("interaction depth {} exceeds {} factors", interaction_depth,
                                 factors.size()));
  }
  std::set<std::string> all;
  for (const auto* list : {&factors, &fixed_effects}) {
    for (const auto& f : *list) {
      if (!all.insert(f).second) errors.push_back("factor '" + f + "' listed twice");
    }
  }
  if (clusters.size() > 2) errors.push_back("at most two cluster variables");
  if (clusters.size() == 2 && clusters[0] == clusters[1]) errors.push_back("cluster variables must differ");
  if (!errors.empty()) {
    std::string msg = "invalid model spec:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw PreconditionError(msg);
  }
}

namespace {

std::optional<long long> as_integer(const std::string& s) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::optional<Variant> as_variant(const std::string& s) {
  try {
    return parse_variant(s);
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace

std::vector<std::string> default_levels(const std::string& factor,
                                        const std::vector<std::string>& values) {
  std::set<std::string> unique(values.begin(), values.end());
  std::vector<std::string> levels(unique.begin(), unique.end());
  if (factor == "status") {
    auto rank = [](const std::string& s) {
      if (s == kInconsistentLevel) return std::pair{1, Variant{}};
      auto v = as_variant(s);
      return v ? std::pair{0, *v} : std::pair{2, Variant{}};
    };
    std::stable_sort(levels.begin(), levels.end(),
                     [&](const auto& a, const auto& b) { return rank(a) < rank(b); });
    return levels;
  }
  if (std::all_of(levels.begin(), levels.end(), [](const auto& s) { return as_integer(s).has_value(); })) {
    std::sort(levels.begin(), levels.end(),
              [](const auto& a, const auto& b) { return *as_integer(a) < *as_integer(b); });
  }
  return levels;
}

namespace {

Design make_design(const Observations& obs, const ModelSpec& spec) {
  Design d;
  d.model_factors = spec.factors;
  d.model_factors.insert(d.model_factors.end(), spec.fixed_effects.begin(), spec.fixed_effects.end());
  for (const auto& f : d.model_factors) {
    auto it = obs.factors.find(f);
    if (it == obs.factors.end()) throw PreconditionError("factor '" + f + "' not present in the data");
    auto present = default_levels(f, it->second);
    if (auto lo = spec.level_order.find(f); lo != spec.level_order.end()) {
      std::set<std::string> listed(lo->second.begin(), lo->second.end());
      for (const auto& l : present) {
        if (!listed.count(l)) throw PreconditionError(fmt::format("level '{}' of '{}' missing from level order", l, f));
      }
      std::set<std::string> in_data(present.begin(), present.end());
      present.clear();
      for (const auto& l : lo->second) {
        if (in_data.count(l)) present.push_back(l);
      }
    }
    d.levels[f] = present;
  }

  d.terms.push_back({});
  const int k = static_cast<int>(spec.factors.size());
  for (int depth = 1; depth <= std::min(spec.interaction_depth, k); ++depth) {
    // Lexicographic combinations of factor indices.
    std::vector<int> idx(depth);
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
      std::vector<std::string> term;
      for (int i : idx) term.push_back(spec.factors[i]);
      d.terms.push_back(term);
      int pos = depth - 1;
      while (pos >= 0 && idx[pos] == k - depth + pos) --pos;
      if (pos < 0) break;
      ++idx[pos];
      for (int q = pos + 1; q < depth; ++q) idx[q] = idx[q - 1] + 1;
    }
  }
  for (const auto& f : spec.fixed_effects) d.terms.push_back({f});

  for (const auto& term : d.terms) {
    std::vector<std::vector<std::pair<std::string, std::string>>> cells{{}};
    for (const auto& f : term) {
      std::vector<std::vector<std::pair<std::string, std::string>>> next;
      const auto& lv = d.levels.at(f);
      for (const auto& c : cells) {
        for (std::size_t l = 1; l < lv.size(); ++l) {
          auto e = c;
          e.emplace_back(f, lv[l]);
          next.push_back(std::move(e));
        }
      }
      cells = std::move(next);
    }
    for (auto& c : cells) {
      std::string name;
      for (const auto& [f, l] : c) name += (name.empty() ? "" : ":") + f + "[" + l + "]";
      d.column_names.push_back(name.empty() ? "(Intercept)" : name);
      d.column_cells.push_back(std::move(c));
    }
  }
  return d;
}

Eigen::MatrixXd build_matrix(const Design& d, const Observations& obs) {
  const auto n = static_cast<Eigen::Index>(obs.rows());
  const auto p = static_cast<Eigen::Index>(d.column_names.size());
  // Level index per row per factor.
  std::map<std::string, std::vector<int>> coded;
  for (const auto& f : d.model_factors) {
    std::unordered_map<std::string, int> pos;
    const auto& lv = d.levels.at(f);
    for (std::size_t i = 0; i < lv.size(); ++i) pos[lv[i]] = static_cast<int>(i);
    auto& c = coded[f];
    for (const auto& v : obs.factors.at(f)) c.push_back(pos.at(v));
  }
  std::vector<std::vector<std::pair<const std::vector<int>*, int>>> cols(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (const auto& [f, l] : d.column_cells[j]) {
      const auto& lv = d.levels.at(f);
      const int li = static_cast<int>(std::find(lv.begin(), lv.end(), l) - lv.begin());
      cols[j].emplace_back(&coded.at(f), li);
    }
  }
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      bool on = true;
      for (const auto& [c, li] : cols[j]) on = on && (*c)[i] == li;
      X(i, j) = on ? 1.0 : 0.0;
    }
  }
  return X;
}

/// Greedy left-to-right column selection on the Gram matrix: a column is
/// aliased when its residual after projecting on the kept ones vanishes.
std::vector<int> independent_columns(const Eigen::MatrixXd& gram) {
  std::vector<int> kept;
  for (Eigen::Index j = 0; j < gram.cols(); ++j) {
    const double gjj = gram(j, j);
    if (gjj <= 0.0) continue;
    double resid = gjj;
    if (!kept.empty()) {
      const auto m = static_cast<Eigen::Index>(kept.size());
      Eigen::MatrixXd gkk(m, m);
      Eigen::VectorXd gkj(m);
      for (Eigen::Index a = 0; a < m; ++a) {
        gkj[a] = gram(kept[a], j);
        for (Eigen::Index b = 0; b < m; ++b) gkk(a, b) = gram(kept[a], kept[b]);
      }
      resid = gjj - gkj.dot(gkk.ldlt().solve(gkj));
    }
    if (resid > 1e-10 * gjj) kept.push_back(static_cast<int>(j));
  }
  return kept;
}

}  // namespace

Eigen::RowVectorXd design_row(const Design& design, const std::map<std::string, std::string>& cell) {
  for (const auto& f : design.model_factors) {
    auto it = cell.find(f);
    if (it == cell.end()) throw PreconditionError("grid cell lacks factor '" + f + "'");
    const auto& lv = design.levels.at(f);
    if (std::find(lv.begin(), lv.end(), it->second) == lv.end()) {
      throw PreconditionError(fmt::format("level '{}' of '{}' is outside the fitted grid", it->second, f));
    }
  }
  Eigen::RowVectorXd row(design.column_names.size());
  for (std::size_t j = 0; j < design.column_cells.size(); ++j) {
    bool on = true;
    for (const auto& [f, l] : design.column_cells[j]) on = on && cell.at(f) == l;
    row[static_cast<Eigen::Index>(j)] = on ? 1.0 : 0.0;
  }
  return row;
}

Eigen::MatrixXd psd_truncate(const Eigen::MatrixXd& v) {
  const Eigen::MatrixXd sym = 0.5 * (v + v.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.eigenvalues().minCoeff() >= 0.0) return sym;
  const Eigen::VectorXd clamped = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
}

std::vector<int> dense_ids(const std::vector<std::string>& labels) {
  std::unordered_map<std::string, int> ids;
  std::vector<int> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(ids.emplace(l, static_cast<int>(ids.size())).first->second);
  return out;
}

Fit fit_lpm(const Observations& obs, const ModelSpec& spec) {
  spec.validate();
  obs.validate();
  for (const auto& c : spec.clusters) {
    if (!obs.clusters.count(c)) throw PreconditionError("cluster variable '" + c + "' not present in the data");
  }
  Fit fit;
  fit.design = make_design(obs, spec);
  fit.n = obs.rows();
  const Eigen::MatrixXd X_full = build_matrix(fit.design, obs);
  const Eigen::Map<const Eigen::VectorXd> y(obs.y.data(), static_cast<Eigen::Index>(obs.y.size()));

  fit.kept = independent_columns(X_full.transpose() * X_full);
  for (std::size_t j = 0, q = 0; j < fit.design.column_names.size(); ++j) {
    if (q < fit.kept.size() && fit.kept[q] == static_cast<int>(j)) ++q;
    else fit.aliased.push_back(fit.design.column_names[j]);
  }
  const auto k = static_cast<Eigen::Index>(fit.kept.size());
  if (static_cast<Eigen::Index>(fit.n) <= k) {
    throw PreconditionError(fmt::format("{} observations cannot identify {} coefficients", fit.n, k));
  }
  Eigen::MatrixXd X(X_full.rows(), k);
  for (Eigen::Index j = 0; j < k; ++j) X.col(j) = X_full.col(fit.kept[j]);

  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
  fit.coefficients = qr.solve(y);
  fit.fitted = X * fit.coefficients;
  fit.residuals = y - fit.fitted;
  const Eigen::MatrixXd R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv =
      R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::MatrixXd bread = r_inv * r_inv.transpose();

  auto one_way = [&](const std::vector<std::string>& labels) {
    const auto ids = dense_ids(labels);
    fit.cluster_counts.push_back(static_cast<std::size_t>(*std::max_element(ids.begin(), ids.end()) + 1));
    return cr1_covariance(X, fit.residuals, ids, bread);
  };

  Eigen::MatrixXd v;
  if (spec.clusters.empty()) {
    std::vector<int> own(fit.n);
    std::iota(own.begin(), own.end(), 0);
    fit.cluster_counts.push_back(fit.n);
    v = cr1_covariance(X, fit.residuals, own, bread);
  } else if (spec.clusters.size() == 1) {
    v = one_way(obs.clusters.at(spec.clusters[0]));
  } else {
    const auto& a = obs.clusters.at(spec.clusters[0]);
    const auto& b = obs.clusters.at(spec.clusters[1]);
    std::vector<std::string> ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) ab[i] = a[i] + '\x1f' + b[i];
    v = one_way(a) + one_way(b) - one_way(ab);
  }
  fit.covariance = psd_truncate(v);
  return fit;
}

std::vector<std::string> Fit::kept_names() const {
  std::vector<std::string> out;
  for (int j : kept) out.push_back(design.column_names[j]);
  return out;
}

double Fit::coefficient(const std::string& column) const {
  for (std::size_t q = 0; q < kept.size(); ++q) {
    if (design.column_names[kept[q]] == column) return coefficients[static_cast<Eigen::Index>(q)];
  }
  if (std::find(design.column_names.begin(), design.column_names.end(), column) == design.column_names.end()) {
    throw PreconditionError("no design column '" + column + "'");
  }
  return 0.0;
}

Eigen::RowVectorXd Fit::restrict(const Eigen::RowVectorXd& full_row) const {
  Eigen::RowVectorXd out(kept.size());
  for (std::size_t q = 0; q < kept.size(); ++q) out[static_cast<Eigen::Index>(q)] = full_row[kept[q]];
  return out;
}

std::size_t EmmTable::index_of(const std::vector<std::string>& levels) const {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].levels == levels) return i;
  }
  std::string joined;
  for (const auto& l : levels) joined += (joined.empty() ? "" : ":") + l;
  throw PreconditionError("cell '" + joined + "' is outside the EMM grid");
}

const Emm& EmmTable::at(const std::vector<std::string>& levels) const { return rows[index_of(levels)]; }

namespace {

using Cell = std::map<std::string, std::string>;

void enumerate(const Design& d, const std::vector<std::string>& factors, std::size_t pos, Cell& cell,
               const std::function<void(const Cell&)>& visit) {
  if (pos == factors.size()) {
    visit(cell);
    return;
  }
  for (const auto& l : d.levels.at(factors[pos])) {
    cell[factors[pos]] = l;
    enumerate(d, factors, pos + 1, cell, visit);
  }
  cell.erase(factors[pos]);
}

}  // namespace

EmmTable emm(const Fit& fit, const std::vector<std::string>& factors) {
  const auto& d = fit.design;
  std::vector<std::string> others;
  for (const auto& f : factors) {
    if (std::find(d.model_factors.begin(), d.model_factors.end(), f) == d.model_factors.end()) {
      throw PreconditionError("factor '" + f + "' is not in the model");
    }
  }
  for (const auto& f : d.model_factors) {
    if (std::find(factors.begin(), factors.end(), f) == factors.end()) others.push_back(f);
  }
  EmmTable table;
  table.factors = factors;
  table.covariance = fit.covariance;
  Cell target;
  enumerate(d, factors, 0, target, [&](const Cell& focal) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(d.column_names.size()));
    std::size_t count = 0;
    Cell cell = focal;
    enumerate(d, others, 0, cell, [&](const Cell& full) {
      sum += design_row(d, full);
      ++count;
    });
    Emm e;
    for (const auto& f : factors) e.levels.push_back(focal.at(f));
    e.weights = fit.restrict(sum / static_cast<double>(count));
    e.estimate = e.weights.dot(fit.coefficients);
    e.se = std::sqrt(std::max(0.0, (e.weights * fit.covariance * e.weights.transpose())(0, 0)));
    e.ci_lo = e.estimate - kZ975 * e.se;
    e.ci_hi = e.estimate + kZ975 * e.se;
    table.rows.push_back(std::move(e));
  });
  return table;
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

namespace {

std::string label_of(const Emm& e) {
  std::string out;
  for (const auto& l : e.levels) out += (out.empty() ? "" : ":") + l;
  return out;
}

}  // namespace

std::vector<Contrast> contrasts(const EmmTable& table,
                                const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  std::vector<Contrast> out;
  for (auto [i, j] : pairs) {
    if (i >= table.rows.size() || j >= table.rows.size()) throw PreconditionError("contrast index out of range");
    const auto& a = table.rows[i];
    const auto& b = table.rows[j];
    const Eigen::RowVectorXd w = a.weights - b.weights;
    Contrast c;
    c.label = label_of(a) + " - " + label_of(b);
    c.delta = a.estimate - b.estimate;
    c.se = std::sqrt(std::max(0.0, (w * table.covariance * w.transpose())(0, 0)));
    if (c.se > 0.0) {
      c.z = c.delta / c.se;
      c.p = normal_two_sided_p(c.z);
    } else if (c.delta == 0.0) {
      c.z = 0.0;
      c.p = 1.0;
    } else {
      c.z = std::copysign(std::numeric_limits<double>::infinity(), c.delta);
      c.p = 0.0;
    }
    c.p_adj = c.p;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Contrast> treatment_contrasts(const EmmTable& table, const std::string& reference) {
  std::optional<std::size_t> ref;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (label_of(table.rows[i]) == reference) ref = i;
  }
  if (!ref) throw PreconditionError("reference cell '" + reference + "' is outside the EMM grid");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (i != *ref) pairs.emplace_back(i, *ref);
  }
  return contrasts(table, pairs);
}

std::vector<Contrast> pairwise_contrasts(const EmmTable& table) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    for (std::size_t j = i + 1; j < table.rows.size(); ++j) pairs.emplace_back(i, j);
  }
  return contrasts(table, pairs);
}

std::vector<double> bh_adjust(const std::vector<double>& p) {
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw PreconditionError(fmt::format("p-value {} outside [0,1]", v));
  }
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  std::vector<double> out(m);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const double scaled = p[order[r]] * static_cast<double>(m) / static_cast<double>(r + 1);
    running = std::min(running, scaled);
    out[order[r]] = std::min(1.0, running);
  }
  return out;
}

void adjust(std::vector<Contrast>& family) {
  std::vector<double> p;
  for (const auto& c : family) p.push_back(c.p);
  const auto adj = bh_adjust(p);
  for (std::size_t i = 0; i < family.size(); ++i) family[i].p_adj = adj[i];
}

namespace {

Json matrix_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(row);
  }
  return out;
}

}  // namespace

Json to_json(const Fit& fit) {
  Json coef = Json::object();
  for (std::size_t q = 0; q < fit.kept.size(); ++q) {
    const auto i = static_cast<Eigen::Index>(q);
    coef[fit.design.column_names[fit.kept[q]]] = {{"estimate", fit.coefficients[i]},
                                                   {"se", std::sqrt(std::max(0.0, fit.covariance(i, i)))}};
  }
  Json levels = Json::object();
  for (const auto& f : fit.design.model_factors) levels[f] = fit.design.levels.at(f);
  return Json{{"n", fit.n},
              {"levels", levels},
              {"coefficients", coef},
              {"aliased", fit.aliased},
              {"cluster_counts", fit.cluster_counts},
              {"covariance", matrix_json(fit.covariance)}};
}

Json to_json(const EmmTable& table) {
  Json rows = Json::array();
  for (const auto& e : table.rows) {
    rows.push_back({{"levels", e.levels},
                    {"estimate", e.estimate},
                    {"se", e.se},
                    {"ci_lo", e.ci_lo},
                    {"ci_hi", e.ci_hi}});
  }
  return Json{{"factors", table.factors}, {"rows", rows}};
}

Json to_json(const std::vector<Contrast>& contrasts) {
  Json out = Json::array();
  for (const auto& c : contrasts) {
    Json z = std::isfinite(c.z) ? Json(c.z) : Json(c.z > 0 ? "inf" : "-inf");
    out.push_back({{"contrast", c.label}, {"delta", c.delta}, {"se", c.se}, {"z", z}, {"p", c.p},
                   {"p_adj", c.p_adj}});
  }
  return out;
}

std::string emm_csv(const EmmTable& table) {
  std::vector<std::optional<double>> p_adj(table.rows.size());
  if (table.rows.size() > 1) {
    auto family = treatment_contrasts(table, label_of(table.rows.front()));
    adjust(family);
    for (std::size_t i = 1; i < table.rows.size(); ++i) p_adj[i] = family[i - 1].p_adj;
  }
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
  };
  std::ostringstream os;
  for (const auto& f : table.factors) os << quote(f) << ',';
  os << "estimate,se,ci_lo,ci_hi,p_adj\n";
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& e = table.rows[i];
    for (const auto& l : e.levels) os << quote(l) << ',';
    os << fmt::format("{:.6f},{:.6f},{:.6f},{:.6f},", e.estimate, e.se, e.ci_lo, e.ci_hi);
    if (p_adj[i]) os << fmt::format("{:.6g}", *p_adj[i]);
    os << '\n';
  }
  return os.str();
}

}  // namespace vpo::analysis
