#include "vpo/judging.hpp"

#include <cmath>

namespace vpo {

ConsistentOutcome consistent_pairwise(Judge& judge, Stream& stream, std::string_view instruction,
                                      const ImageRef& a, const ImageRef& b, int k) {
  if (k < 1) throw PreconditionError("consistent_pairwise: k must be >= 1");
  ConsistentOutcome out;
  for (int attempt = 1; attempt <= k; ++attempt) {
    out.attempts_used = attempt;
    Judgment ab = judge.judge(stream.next(), instruction, a, b);
    Judgment ba = judge.judge(stream.next(), instruction, b, a);
    // In the reversed query, First means b.
    if (ab.winner == flip(ba.winner)) {
      out.winner = ab.winner;
      out.feedback = std::move(ab.feedback);
      return out;
    }
  }
  return out;
}

VoteTally panel_vote(std::span<const std::shared_ptr<Judge>> judges,
                     std::span<const std::string> instructions, Stream& stream, const ImageRef& a,
                     const ImageRef& b) {
  if (judges.empty() || judges.size() != instructions.size())
    throw PreconditionError("panel_vote: need one instruction per judge and at least one judge");
  VoteTally tally;
  for (std::size_t j = 0; j < judges.size(); ++j) {
    ConsistentOutcome o = consistent_pairwise(*judges[j], stream, instructions[j], a, b, 1);
    tally.judge_calls += o.judge_calls();
    if (o.inconsistent()) continue;
    tally.votes.push_back(*o.winner);
    tally.feedbacks.push_back(std::move(o.feedback));
  }
  if (tally.votes.empty()) throw NoQuorum("panel_vote: every judge was order-inconsistent");
  std::size_t first = 0;
  for (Side s : tally.votes) first += s == Side::First;
  const std::size_t second = tally.votes.size() - first;
  tally.winner = first >= second ? Side::First : Side::Second;
  tally.share = static_cast<double>(std::max(first, second)) / static_cast<double>(tally.votes.size());
  return tally;
}

bool equilibrium_reached(double share, int t, int t_min, double epsilon) {
  if (!(share >= 0.0 && share <= 1.0)) throw PreconditionError("equilibrium: share must lie in [0,1]");
  return t >= t_min && std::abs(share - 0.5) < epsilon;
}

}  // namespace vpo
