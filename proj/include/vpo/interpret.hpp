#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vpo/ports.hpp"
#include "vpo/serialization.hpp"

// Difference descriptions and nested (matryoshka) theme summaries over a
// single agglomerative merge tree.

namespace vpo::interpret {

/// Describer call on (original, final). Both must share an identity.
std::string describe_difference(Describer& describer, const CallContext& ctx,
                                std::string_view instruction, const ImageRef& original,
                                const ImageRef& final_image);

enum class Linkage { Average, Single, Complete };
enum class Distance { Cosine, Euclidean };
std::string to_string(Linkage linkage);
std::string to_string(Distance distance);
Linkage parse_linkage(std::string_view text);
Distance parse_distance(std::string_view text);

/// Leaves are 0..n-1; merge i creates node n+i.
struct Merge {
  int a = 0;
  int b = 0;
  double distance = 0.0;
  int size = 0;
};

struct MergeTree {
  int leaves = 0;
  std::vector<Merge> merges;

  /// Partition into k clusters by replaying the first n-k merges. Clusters
  /// hold sorted leaf indices and are ordered by their smallest leaf.
  std::vector<std::vector<int>> cut(int k) const;
};

/// Rows of `vectors` are the items. Ties go to the lowest (i, j) slot pair.
MergeTree agglomerate(const Eigen::MatrixXd& vectors, Linkage linkage = Linkage::Average,
                      Distance distance = Distance::Cosine);

/// ceil-halving from n down to 1, duplicates collapsed.
std::vector<int> level_targets(int n);

struct ThemeNode {
  int level = 1;
  std::vector<int> members;
  /// Raw texts at level 1, rendered child themes above.
  std::vector<std::string> inputs;
  std::vector<Theme> themes;
  std::vector<ThemeNode> children;
};

std::string render_theme(const Theme& theme);

/// One summarize() invocation; input_levels[i] is 0 for a raw text.
struct SummaryCall {
  int level = 0;
  std::size_t cluster = 0;
  std::vector<int> input_levels;
  bool passthrough = false;
};

struct MatryoshkaOptions {
  Linkage linkage = Linkage::Average;
  Distance distance = Distance::Cosine;
  std::string instruction;
  /// Summaries in flight at once within a level.
  int concurrency = 1;
};

struct MatryoshkaResult {
  std::vector<int> targets;
  MergeTree tree;
  /// Flat per-level nodes (children omitted), finest first.
  std::vector<std::vector<ThemeNode>> levels;
  /// Nested tree, present when every level completed.
  std::optional<ThemeNode> root;
  std::vector<SummaryCall> log;
  std::optional<std::string> error;

  bool complete() const { return root.has_value(); }
};

/// A failing backend aborts the current level; completed levels are kept.
MatryoshkaResult matryoshka(const std::vector<std::string>& texts, Embedder& embedder,
                            Summarizer& summarizer, Stream& stream,
                            const MatryoshkaOptions& options);

struct DescriptionItem {
  Strategy strategy = Strategy::None;
  TaskId task = TaskId::Custom;
  std::string identity_id;
  std::string text;
};

struct DescriptionGroup {
  Strategy strategy = Strategy::None;
  TaskId task = TaskId::Custom;
  std::vector<DescriptionItem> items;

  std::string key() const;
};

/// Partition by strategy x task in the given orders; empty groups are logged
/// and skipped, items outside the grid are an error.
std::vector<DescriptionGroup> group_inputs(const std::vector<DescriptionItem>& items,
                                           const std::vector<Strategy>& strategies,
                                           const std::vector<TaskId>& tasks);

Json to_json(const ThemeNode& node);
Json to_json(const MatryoshkaResult& result);
/// level,cluster,members,theme,description
std::string levels_csv(const MatryoshkaResult& result);

}  // namespace vpo::interpret
