#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vpo/ports.hpp"

namespace vpo {

/// Every judge in a panel round was order-inconsistent.
struct NoQuorum : Error {
  using Error::Error;
};

/// Result of querying one pair in both orders, up to k times. `winner` is
/// relative to the (a, b) argument order; empty means Inconsistent.
struct ConsistentOutcome {
  std::optional<Side> winner;
  std::string feedback;
  int attempts_used = 0;

  bool inconsistent() const { return !winner.has_value(); }
  int judge_calls() const { return 2 * attempts_used; }
};

/// One attempt: judge (a,b) then (b,a); agreeing mapped winners return the
/// (a,b)-order feedback. Each judge call draws its own context from `stream`.
ConsistentOutcome consistent_pairwise(Judge& judge, Stream& stream, std::string_view instruction,
                                      const ImageRef& a, const ImageRef& b, int k);

struct VoteTally {
  std::vector<Side> votes;
  std::vector<std::string> feedbacks;
  Side winner = Side::First;
  double share = 0.0;
  int judge_calls = 0;
};

/// Each judge votes once if its two orders agree. Majority wins; an even
/// split goes to `a` (the first argument, the incumbent champion).
/// Throws NoQuorum when no judge was order-consistent.
VoteTally panel_vote(std::span<const std::shared_ptr<Judge>> judges,
                     std::span<const std::string> instructions, Stream& stream, const ImageRef& a,
                     const ImageRef& b);

bool equilibrium_reached(double share, int t, int t_min, double epsilon);

}  // namespace vpo
