#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vpo/core.hpp"
#include "vpo/serialization.hpp"

// Linear probability models on choice rows, cluster-robust covariance,
// estimated marginal means, contrasts and Benjamini-Hochberg adjustment.

namespace vpo::analysis {

/// Columnar observation table: one outcome, categorical factor columns and
/// cluster-id columns, all of equal length.
struct Observations {
  std::vector<double> y;
  std::map<std::string, std::vector<std::string>> factors;
  std::map<std::string, std::vector<std::string>> clusters;

  std::size_t rows() const { return y.size(); }
  void validate() const;
  /// Rows whose `column` (factor or cluster) equals `value`.
  Observations filter(const std::string& column, const std::string& value) const;
};

enum class ExpandMode {
  /// Two rows per consistent trial; inconsistent trials are left out.
  Standard,
  /// Three rows per trial, the third being the Inconsistent pseudo-image.
  Mitigation,
};

/// Factor columns: status, strategy, evaluator, task, kappa, category.
/// Cluster columns: pair, evaluator, image, trial. Each logical trial
/// (pair, evaluator, kappa) contributes once however many order rows it has.
Observations expand_rows(const std::vector<TrialRecord>& trials, ExpandMode mode);

inline const std::string kInconsistentLevel = "Inconsistent";

struct ModelSpec {
  std::string outcome = "chosen";
  std::vector<std::string> factors;
  int interaction_depth = 1;
  /// Main effects only, never interacted.
  std::vector<std::string> fixed_effects;
  /// Zero (heteroskedasticity-robust), one or two cluster columns.
  std::vector<std::string> clusters;
  /// Optional level order per factor; the first level is the reference.
  std::map<std::string, std::vector<std::string>> level_order;

  void validate() const;
};

/// Default level order: statuses in lineage order, everything else sorted.
std::vector<std::string> default_levels(const std::string& factor,
                                        const std::vector<std::string>& values);

struct Design {
  std::vector<std::string> model_factors;  // factors then fixed effects
  std::map<std::string, std::vector<std::string>> levels;
  /// Each term is a list of factor names; the empty term is the intercept.
  std::vector<std::vector<std::string>> terms;
  std::vector<std::string> column_names;
  /// Per column: (factor, level) for each factor in its term.
  std::vector<std::vector<std::pair<std::string, std::string>>> column_cells;
};

/// Row vector of the design for one complete cell (factor -> level).
Eigen::RowVectorXd design_row(const Design& design, const std::map<std::string, std::string>& cell);

struct Fit {
  Design design;
  /// Columns kept after dropping aliased ones; indices into design columns.
  std::vector<int> kept;
  std::vector<std::string> aliased;
  Eigen::VectorXd coefficients;  // over `kept`
  Eigen::VectorXd residuals;
  Eigen::VectorXd fitted;
  Eigen::MatrixXd covariance;  // over `kept`
  std::size_t n = 0;
  std::vector<std::size_t> cluster_counts;

  std::vector<std::string> kept_names() const;
  /// Coefficient of a design column, zero when aliased.
  double coefficient(const std::string& column) const;
  /// Restricts a full-design row to the kept columns.
  Eigen::RowVectorXd restrict(const Eigen::RowVectorXd& full_row) const;
};

Fit fit_lpm(const Observations& obs, const ModelSpec& spec);

/// Least squares via Householder QR.
template <typename DerivedX, typename DerivedY>
Eigen::VectorXd ols(const Eigen::MatrixBase<DerivedX>& X, const Eigen::MatrixBase<DerivedY>& y) {
  return X.householderQr().solve(y);
}

/// One-way CR1 sandwich: bread * sum_g (X_g'u_g)(X_g'u_g)' * bread, scaled
/// by G/(G-1) * (N-1)/(N-K). `groups` holds dense ids 0..G-1.
template <typename DerivedX>
Eigen::MatrixXd cr1_covariance(const Eigen::MatrixBase<DerivedX>& X, const Eigen::VectorXd& u,
                               const std::vector<int>& groups, const Eigen::MatrixXd& bread) {
  const Eigen::Index n = X.rows(), k = X.cols();
  int g_count = 0;
  for (int g : groups) g_count = std::max(g_count, g + 1);
  if (g_count < 2) throw PreconditionError("cluster-robust covariance needs at least two clusters");
  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(g_count, k);
  for (Eigen::Index i = 0; i < n; ++i) scores.row(groups[i]) += u[i] * X.row(i);
  const Eigen::MatrixXd meat = scores.transpose() * scores;
  const double scale = static_cast<double>(g_count) / (g_count - 1) *
                       static_cast<double>(n - 1) / static_cast<double>(n - k);
  return scale * bread * meat * bread;
}

/// Clamps negative eigenvalues of a symmetric matrix to zero.
Eigen::MatrixXd psd_truncate(const Eigen::MatrixXd& v);

/// Dense 0..G-1 ids in order of first appearance.
std::vector<int> dense_ids(const std::vector<std::string>& labels);

struct Emm {
  std::vector<std::string> levels;
  double estimate = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  Eigen::RowVectorXd weights;  // linear combination over kept coefficients
};

struct EmmTable {
  std::vector<std::string> factors;
  std::vector<Emm> rows;
  Eigen::MatrixXd covariance;  // of the kept coefficients

  const Emm& at(const std::vector<std::string>& levels) const;
  std::size_t index_of(const std::vector<std::string>& levels) const;
};

inline constexpr double kZ975 = 1.959963984540054;

/// Equal-weight average over the reference grid of the remaining factors.
EmmTable emm(const Fit& fit, const std::vector<std::string>& factors);

struct Contrast {
  std::string label;
  double delta = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p = 1.0;
  double p_adj = 1.0;
};

/// EMM_i - EMM_j for each (i, j); p from the normal reference, two-sided.
std::vector<Contrast> contrasts(const EmmTable& table,
                                const std::vector<std::pair<std::size_t, std::size_t>>& pairs);
/// Every level against `reference` within a one-factor table.
std::vector<Contrast> treatment_contrasts(const EmmTable& table, const std::string& reference);
/// All unordered pairs i < j.
std::vector<Contrast> pairwise_contrasts(const EmmTable& table);

double normal_two_sided_p(double z);

/// Benjamini-Hochberg step-up, monotone, clipped at 1, in input order.
std::vector<double> bh_adjust(const std::vector<double>& p);

/// Fills p_adj across the whole family.
void adjust(std::vector<Contrast>& family);

Json to_json(const Fit& fit);
Json to_json(const EmmTable& table);
Json to_json(const std::vector<Contrast>& contrasts);

/// CSV: one column per factor, then estimate,se,ci_lo,ci_hi,p_adj (p_adj is
/// the BH-adjusted p of the level against the first row).
std::string emm_csv(const EmmTable& table);

}  // namespace vpo::analysis
