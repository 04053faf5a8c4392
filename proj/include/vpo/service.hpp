#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vpo/config.hpp"
#include "vpo/tournament.hpp"
#include "vpo/trial_log.hpp"

namespace httplib {
class Server;
}

// Human-judgment collection. StudyState is the whole protocol (queues, order
// balancing, duplicate detection, append-then-ack); StudyServer maps it onto
// HTTP and serves images plus the UI bundle.

namespace vpo::service {

/// A pair offered to participants, in canonical order.
struct StudyPair {
  std::string pair_id;
  TaskId task = TaskId::Custom;
  StrategyTag strategy;
  TrialSide left;
  TrialSide right;
  int kappa = 0;
  std::optional<std::string> category;
};

/// Unique pairs of a trial log, in first-appearance order.
std::vector<StudyPair> pairs_from_trials(const std::vector<TrialRecord>& trials);

struct QueueItem {
  std::size_t pair = 0;  // index into the study's pairs
  int order_index = 0;   // 1: the canonical right image is shown on the left
  bool answered = false;
};

struct SessionState {
  std::string token;
  std::vector<QueueItem> queue;
  std::size_t progress = 0;
  std::string completion_code;

  bool complete() const { return progress == queue.size(); }
};

/// Protocol errors, mapped to HTTP statuses by the server.
struct UnknownToken : Error {
  using Error::Error;
};
struct DuplicateChoice : Error {
  using Error::Error;
};
struct BadRequest : Error {
  using Error::Error;
};

struct StudySettings {
  std::vector<std::string> participants;
  int queue_size = 30;
  std::uint64_t seed = 0;
  /// Instruction shown with each pair, per task.
  std::map<TaskId, std::string> instructions;
  /// image id -> URL the browser loads.
  std::function<std::string(const std::string&)> image_url;
};

class StudyState {
 public:
  /// Choices already in the log (same token and pair) count as answered, so
  /// a restarted service resumes every session where it stopped.
  StudyState(std::vector<StudyPair> pairs, StudySettings settings, std::shared_ptr<TrialLogWriter> log,
             Clock clock);

  Json session(const std::string& token) const;
  /// The first unanswered pair, or {"done": true, "completion_code": ...}.
  Json next_pair(const std::string& token) const;
  /// Validates, appends the row, then returns the ack.
  Json choose(const Json& body);

  const std::vector<StudyPair>& pairs() const { return pairs_; }
  const SessionState& state(const std::string& token) const;

 private:
  Json pair_json(const SessionState& s, const QueueItem& item) const;

  std::vector<StudyPair> pairs_;
  StudySettings settings_;
  std::shared_ptr<TrialLogWriter> log_;
  Clock clock_;
  std::map<std::string, SessionState> sessions_;
  mutable std::mutex mu_;
};

/// Queues: participant i walks a seeded permutation of the pairs starting at
/// offset i*q; each pair's order alternates across the participants it is
/// assigned to, so the two orders differ by at most one per pair.
std::vector<SessionState> assign_queues(std::size_t n_pairs, const std::vector<std::string>& participants,
                                        int queue_size, std::uint64_t seed);

struct ServeOptions {
  std::string static_dir;
  /// image id -> image; FileImage payloads are sent as files, synth images
  /// as a small SVG bar chart of their presentation.
  std::map<std::string, ImageRef> images;
};

class StudyServer {
 public:
  StudyServer(std::shared_ptr<StudyState> state, ServeOptions options);
  ~StudyServer();

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  std::shared_ptr<StudyState> state_;
  ServeOptions options_;
  std::unique_ptr<httplib::Server> server_;
};

std::string svg_for(const ImageRef& image);

/// Every image the campaign persisted, by id.
std::map<std::string, ImageRef> load_image_index(const std::string& run_dir);

/// Study over the campaign's `service.pairs_source` log; choices go to
/// trials/human.jsonl.
std::shared_ptr<StudyState> make_study(const CampaignConfig& cfg, Clock clock);

}  // namespace vpo::service
