#include "vpo/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace vpo::interpret {

std::string describe_difference(Describer& describer, const CallContext& ctx,
                                std::string_view instruction, const ImageRef& original,
                                const ImageRef& final_image) {
  if (original.identity_id != final_image.identity_id) {
    throw PreconditionError(fmt::format("describe_difference: identities differ ({} vs {})",
                                        original.identity_id, final_image.identity_id));
  }
  return describer.describe(ctx, instruction, original, final_image);
}

std::string to_string(Linkage linkage) {
  switch (linkage) {
    case Linkage::Average: return "average";
    case Linkage::Single: return "single";
    case Linkage::Complete: return "complete";
  }
  return "average";
}

std::string to_string(Distance distance) {
  return distance == Distance::Cosine ? "cosine" : "euclidean";
}

Linkage parse_linkage(std::string_view text) {
  if (text == "average") return Linkage::Average;
  if (text == "single") return Linkage::Single;
  if (text == "complete") return Linkage::Complete;
  throw SchemaError("unknown linkage '" + std::string(text) + "'");
}

Distance parse_distance(std::string_view text) {
  if (text == "cosine") return Distance::Cosine;
  if (text == "euclidean") return Distance::Euclidean;
  throw SchemaError("unknown distance '" + std::string(text) + "'");
}

MergeTree agglomerate(const Eigen::MatrixXd& vectors, Linkage linkage, Distance distance) {
  const int n = static_cast<int>(vectors.rows());
  if (n < 1) throw PreconditionError("agglomerate needs at least one vector");
  Eigen::MatrixXd d(n, n);
  if (distance == Distance::Cosine) {
    Eigen::MatrixXd unit = vectors;
    for (int i = 0; i < n; ++i) {
      const double norm = unit.row(i).norm();
      if (norm > 0.0) unit.row(i) /= norm;
    }
    d = (Eigen::MatrixXd::Ones(n, n) - unit * unit.transpose()).cwiseMax(0.0);
  } else {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) d(i, j) = (vectors.row(i) - vectors.row(j)).norm();
    }
  }

  MergeTree tree;
  tree.leaves = n;
  std::vector<int> node(n), size(n, 1);
  std::vector<bool> active(n, true);
  for (int i = 0; i < n; ++i) node[i] = i;
  for (int m = 0; m < n - 1; ++m) {
    int bi = -1, bj = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (int j = i + 1; j < n; ++j) {
        if (active[j] && d(i, j) < best) {
          best = d(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    if (bi < 0) {
      // Only non-finite distances remain: merge the first two slots.
      for (int i = 0; i < n && bj < 0; ++i) {
        if (!active[i]) continue;
        if (bi < 0) bi = i;
        else bj = i;
      }
      best = d(bi, bj);
    }
    tree.merges.push_back({node[bi], node[bj], best, size[bi] + size[bj]});
    for (int k = 0; k < n; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      double v = 0.0;
      switch (linkage) {
        case Linkage::Average:
          v = (size[bi] * d(k, bi) + size[bj] * d(k, bj)) / (size[bi] + size[bj]);
          break;
        case Linkage::Single: v = std::min(d(k, bi), d(k, bj)); break;
        case Linkage::Complete: v = std::max(d(k, bi), d(k, bj)); break;
      }
      d(k, bi) = d(bi, k) = v;
    }
    size[bi] += size[bj];
    node[bi] = n + m;
    active[bj] = false;
  }
  return tree;
}

std::vector<std::vector<int>> MergeTree::cut(int k) const {
  if (k < 1 || k > leaves) throw PreconditionError(fmt::format("cannot cut {} leaves into {} clusters", leaves, k));
  std::vector<std::vector<int>> members(leaves + merges.size());
  std::vector<bool> live(leaves + merges.size(), false);
  for (int i = 0; i < leaves; ++i) {
    members[i] = {i};
    live[i] = true;
  }
  for (int m = 0; m < leaves - k; ++m) {
    const auto& mg = merges[m];
    auto& into = members[leaves + m];
    into = members[mg.a];
    into.insert(into.end(), members[mg.b].begin(), members[mg.b].end());
    std::sort(into.begin(), into.end());
    live[mg.a] = live[mg.b] = false;
    live[leaves + m] = true;
  }
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < live.size(); ++i) {
    if (live[i]) out.push_back(members[i]);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

std::vector<int> level_targets(int n) {
  if (n < 1) throw PreconditionError("level_targets needs n >= 1");
  std::vector<int> out;
  int k = n;
  do {
    k = (k + 1) / 2;
    if (out.empty() || out.back() != k) out.push_back(k);
  } while (k > 1);
  return out;
}

std::string render_theme(const Theme& theme) {
  return theme.description ? theme.name + ": " + *theme.description : theme.name;
}

namespace {

struct Job {
  std::size_t cluster = 0;
  std::vector<std::string> inputs;
  CallContext ctx;
};

/// Runs the summaries of one level, `concurrency` at a time. The first
/// failure in cluster order is rethrown after the batch drains.
std::vector<std::vector<Theme>> run_jobs(std::vector<Job>& jobs, Summarizer& summarizer,
                                         const std::string& instruction, int concurrency) {
  std::vector<std::vector<Theme>> out(jobs.size());
  const std::size_t width = static_cast<std::size_t>(std::max(1, concurrency));
  for (std::size_t start = 0; start < jobs.size(); start += width) {
    const std::size_t end = std::min(jobs.size(), start + width);
    if (width == 1) {
      out[start] = summarize(summarizer, jobs[start].ctx, jobs[start].inputs, instruction);
      continue;
    }
    std::vector<std::future<std::vector<Theme>>> futures;
    for (std::size_t i = start; i < end; ++i) {
      futures.push_back(std::async(std::launch::async, [&, i] {
        return summarize(summarizer, jobs[i].ctx, jobs[i].inputs, instruction);
      }));
    }
    std::exception_ptr first;
    for (std::size_t i = start; i < end; ++i) {
      try {
        out[i] = futures[i - start].get();
      } catch (...) {
        if (!first) first = std::current_exception();
      }
    }
    if (first) std::rethrow_exception(first);
  }
  return out;
}

}  // namespace

MatryoshkaResult matryoshka(const std::vector<std::string>& texts, Embedder& embedder,
                            Summarizer& summarizer, Stream& stream,
                            const MatryoshkaOptions& options) {
  if (texts.empty()) throw PreconditionError("matryoshka needs at least one text");
  MatryoshkaResult result;
  const int n = static_cast<int>(texts.size());
  result.targets = level_targets(n);

  try {
    Eigen::MatrixXd vectors;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd v = embedder.embed(stream.next(), texts[i]);
      if (i == 0) vectors.resize(n, v.size());
      if (v.size() != vectors.cols()) throw BackendError("embedder returned vectors of varying length");
      vectors.row(i) = v.transpose();
    }
    result.tree = agglomerate(vectors, options.linkage, options.distance);
  } catch (const Error& e) {
    result.error = std::string("embedding failed: ") + e.what();
    spdlog::error("matryoshka: {}", *result.error);
    return result;
  }

  std::vector<ThemeNode> previous;
  for (std::size_t li = 0; li < result.targets.size(); ++li) {
    const int level = static_cast<int>(li) + 1;
    const auto clusters = result.tree.cut(result.targets[li]);
    std::vector<ThemeNode> nodes(clusters.size());
    std::vector<Job> jobs;
    std::vector<SummaryCall> calls;

    // Leaf -> owning node of the previous level.
    std::vector<int> owner(n, -1);
    for (std::size_t p = 0; p < previous.size(); ++p) {
      for (int m : previous[p].members) owner[m] = static_cast<int>(p);
    }

    for (std::size_t c = 0; c < clusters.size(); ++c) {
      auto& node = nodes[c];
      node.level = level;
      node.members = clusters[c];
      SummaryCall call{level, c, {}, false};
      if (level == 1) {
        for (int m : node.members) {
          node.inputs.push_back(texts[m]);
          call.input_levels.push_back(0);
        }
        call.passthrough = node.inputs.size() == 1;
      } else {
        std::vector<int> child_ids;
        for (int m : node.members) {
          if (child_ids.empty() || std::find(child_ids.begin(), child_ids.end(), owner[m]) == child_ids.end()) {
            child_ids.push_back(owner[m]);
          }
        }
        std::sort(child_ids.begin(), child_ids.end());
        for (int ch : child_ids) {
          node.children.push_back(previous[ch]);
          for (const auto& t : previous[ch].themes) {
            node.inputs.push_back(render_theme(t));
            call.input_levels.push_back(level - 1);
          }
        }
        call.passthrough = child_ids.size() == 1;
        if (call.passthrough) node.themes = node.children.front().themes;
      }
      if (!call.passthrough || level == 1) jobs.push_back({c, node.inputs, stream.next()});
      calls.push_back(std::move(call));
    }

    try {
      auto themes = run_jobs(jobs, summarizer, options.instruction, options.concurrency);
      for (std::size_t j = 0; j < jobs.size(); ++j) nodes[jobs[j].cluster].themes = std::move(themes[j]);
    } catch (const Error& e) {
      result.error = fmt::format("level {} aborted: {}", level, e.what());
      spdlog::error("matryoshka: {}", *result.error);
      return result;
    }

    result.log.insert(result.log.end(), calls.begin(), calls.end());
    std::vector<ThemeNode> flat;
    for (const auto& node : nodes) {
      ThemeNode f = node;
      f.children.clear();
      flat.push_back(std::move(f));
    }
    result.levels.push_back(std::move(flat));
    previous = std::move(nodes);
  }
  result.root = previous.front();
  return result;
}

std::string DescriptionGroup::key() const { return to_string(strategy) + "/" + to_string(task); }

std::vector<DescriptionGroup> group_inputs(const std::vector<DescriptionItem>& items,
                                           const std::vector<Strategy>& strategies,
                                           const std::vector<TaskId>& tasks) {
  std::map<std::pair<Strategy, TaskId>, std::vector<DescriptionItem>> buckets;
  for (const auto& item : items) {
    const bool known = std::find(strategies.begin(), strategies.end(), item.strategy) != strategies.end() &&
                       std::find(tasks.begin(), tasks.end(), item.task) != tasks.end();
    if (!known) {
      throw PreconditionError(fmt::format("description for {} has group {}/{} outside the requested grid",
                                          item.identity_id, to_string(item.strategy), to_string(item.task)));
    }
    buckets[{item.strategy, item.task}].push_back(item);
  }
  std::vector<DescriptionGroup> out;
  for (Strategy s : strategies) {
    for (TaskId t : tasks) {
      auto it = buckets.find({s, t});
      if (it == buckets.end()) {
        spdlog::info("interpret: no descriptions for {}/{}, group skipped", to_string(s), to_string(t));
        continue;
      }
      out.push_back({s, t, std::move(it->second)});
    }
  }
  return out;
}

namespace {

Json themes_json(const std::vector<Theme>& themes) {
  Json out = Json::array();
  for (const auto& t : themes) out.push_back(t);
  return out;
}

}  // namespace

Json to_json(const ThemeNode& node) {
  Json children = Json::array();
  for (const auto& c : node.children) children.push_back(to_json(c));
  return Json{{"level", node.level},
              {"members", node.members},
              {"inputs", node.inputs},
              {"themes", themes_json(node.themes)},
              {"children", children}};
}

Json to_json(const MatryoshkaResult& result) {
  Json merges = Json::array();
  for (const auto& m : result.tree.merges) merges.push_back({m.a, m.b, m.distance, m.size});
  Json levels = Json::array();
  for (const auto& level : result.levels) {
    Json nodes = Json::array();
    for (const auto& node : level) nodes.push_back({{"members", node.members}, {"themes", themes_json(node.themes)}});
    levels.push_back(nodes);
  }
  Json log = Json::array();
  for (const auto& c : result.log) {
    log.push_back({{"level", c.level}, {"cluster", c.cluster}, {"input_levels", c.input_levels},
                   {"passthrough", c.passthrough}});
  }
  return Json{{"targets", result.targets},
              {"merges", merges},
              {"levels", levels},
              {"root", result.root ? to_json(*result.root) : Json(nullptr)},
              {"log", log},
              {"error", result.error ? Json(*result.error) : Json(nullptr)}};
}

std::string levels_csv(const MatryoshkaResult& result) {
  auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
  };
  std::ostringstream os;
  os << "level,cluster,members,theme,description\n";
  for (std::size_t l = 0; l < result.levels.size(); ++l) {
    for (std::size_t c = 0; c < result.levels[l].size(); ++c) {
      const auto& node = result.levels[l][c];
      std::string members;
      for (int m : node.members) members += (members.empty() ? "" : " ") + std::to_string(m);
      for (const auto& t : node.themes) {
        os << l + 1 << ',' << c << ',' << quote(members) << ',' << quote(t.name) << ','
           << quote(t.description.value_or("")) << '\n';
      }
    }
  }
  return os.str();
}

}  // namespace vpo::interpret
