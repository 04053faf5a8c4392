#include "vpo/service.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "vpo/optimizers.hpp"
#include "vpo/tasks.hpp"

namespace vpo::service {

namespace fs = std::filesystem;

std::vector<StudyPair> pairs_from_trials(const std::vector<TrialRecord>& trials) {
  std::vector<StudyPair> out;
  std::set<std::string> seen;
  for (const auto& t : trials) {
    if (!seen.insert(to_string(t.task) + "/" + t.pair_id + "/k" + std::to_string(t.kappa)).second) continue;
    out.push_back({t.pair_id, t.task, t.strategy, t.left, t.right, t.kappa, t.category});
  }
  return out;
}

std::vector<SessionState> assign_queues(std::size_t n_pairs, const std::vector<std::string>& participants,
                                        int queue_size, std::uint64_t seed) {
  if (queue_size < 1) throw PreconditionError("queue_size must be >= 1");
  std::vector<std::size_t> perm(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) perm[i] = i;
  Rng rng(mix_keys(seed, fnv1a("study/queues")));
  for (std::size_t i = n_pairs; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);

  const std::size_t q = std::min<std::size_t>(static_cast<std::size_t>(queue_size), n_pairs);
  std::vector<int> served(n_pairs, 0);
  std::vector<SessionState> out;
  std::set<std::string> tokens;
  for (std::size_t p = 0; p < participants.size(); ++p) {
    if (participants[p].empty() || !tokens.insert(participants[p]).second) {
      throw PreconditionError("participant tokens must be non-empty and unique");
    }
    SessionState s;
    s.token = participants[p];
    s.completion_code = hex64(mix_keys(seed, fnv1a("completion/" + s.token))).substr(0, 8);
    for (std::size_t j = 0; j < q; ++j) {
      const std::size_t pair = perm[(p * q + j) % n_pairs];
      s.queue.push_back({pair, served[pair]++ % 2, false});
    }
    out.push_back(std::move(s));
  }
  return out;
}

StudyState::StudyState(std::vector<StudyPair> pairs, StudySettings settings, std::shared_ptr<TrialLogWriter> log,
                       Clock clock)
    : pairs_(std::move(pairs)), settings_(std::move(settings)), log_(std::move(log)), clock_(std::move(clock)) {
  if (pairs_.empty()) throw PreconditionError("study: no pairs to serve");
  if (!settings_.image_url) settings_.image_url = [](const std::string& id) { return "/images/" + id; };
  for (auto& s : assign_queues(pairs_.size(), settings_.participants, settings_.queue_size, settings_.seed)) {
    sessions_.emplace(s.token, std::move(s));
  }
  if (log_ && fs::exists(log_->path()) && fs::file_size(log_->path()) > 0) {
    std::size_t restored = 0;
    for (const auto& t : read_trial_log(log_->path())) {
      auto it = sessions_.find(t.evaluator);
      if (it == sessions_.end()) continue;
      for (auto& item : it->second.queue) {
        const auto& p = pairs_[item.pair];
        if (!item.answered && p.pair_id == t.pair_id && p.task == t.task && p.kappa == t.kappa) {
          item.answered = true;
          ++it->second.progress;
          ++restored;
          break;
        }
      }
    }
    if (restored) spdlog::info("study: restored {} choices from {}", restored, log_->path());
  }
}

const SessionState& StudyState::state(const std::string& token) const {
  auto it = sessions_.find(token);
  if (it == sessions_.end()) throw UnknownToken("unknown token");
  return it->second;
}

Json StudyState::pair_json(const SessionState& s, const QueueItem& item) const {
  const auto& p = pairs_[item.pair];
  const auto& shown_left = item.order_index == 0 ? p.left : p.right;
  const auto& shown_right = item.order_index == 0 ? p.right : p.left;
  auto instr = settings_.instructions.find(p.task);
  Json j{{"pair_id", p.pair_id},
         {"left_url", settings_.image_url(shown_left.image_id)},
         {"right_url", settings_.image_url(shown_right.image_id)},
         {"order_index", item.order_index},
         {"instruction", instr == settings_.instructions.end() ? std::string() : instr->second},
         {"task", to_string(p.task)},
         {"position", &item - s.queue.data()},
         {"total", s.queue.size()}};
  return j;
}

Json StudyState::session(const std::string& token) const {
  std::lock_guard lock(mu_);
  const auto& s = state(token);
  Json queue = Json::array();
  for (const auto& item : s.queue) {
    queue.push_back({{"pair_id", pairs_[item.pair].pair_id},
                     {"order_index", item.order_index},
                     {"answered", item.answered}});
  }
  return Json{{"token", s.token},
              {"progress", s.progress},
              {"total", s.queue.size()},
              {"complete", s.complete()},
              {"completion_code", s.complete() ? Json(s.completion_code) : Json(nullptr)},
              {"queue", queue}};
}

Json StudyState::next_pair(const std::string& token) const {
  std::lock_guard lock(mu_);
  const auto& s = state(token);
  for (const auto& item : s.queue) {
    if (!item.answered) return pair_json(s, item);
  }
  return Json{{"done", true}, {"completion_code", s.completion_code}};
}

Json StudyState::choose(const Json& body) {
  if (!body.is_object()) throw BadRequest("body must be a JSON object");
  for (const char* key : {"token", "pair_id", "choice"}) {
    if (!body.contains(key) || !body[key].is_string()) throw BadRequest(fmt::format("'{}' must be a string", key));
  }
  if (!body.contains("latency_ms") || !body["latency_ms"].is_number() || body["latency_ms"].get<double>() < 0) {
    throw BadRequest("'latency_ms' must be a non-negative number");
  }
  const std::string choice = body["choice"];
  if (choice != "left" && choice != "right") throw BadRequest("'choice' must be left or right");
  const std::string pair_id = body["pair_id"];
  std::optional<TaskId> task;
  if (body.contains("task")) {
    if (!body["task"].is_string()) throw BadRequest("'task' must be a string");
    try {
      task = parse_task(body["task"].get<std::string>());
    } catch (const Error& e) {
      throw BadRequest(e.what());
    }
  }

  std::lock_guard lock(mu_);
  auto it = sessions_.find(body["token"].get<std::string>());
  if (it == sessions_.end()) throw UnknownToken("unknown token");
  SessionState& s = it->second;
  std::vector<QueueItem*> matches;
  for (auto& item : s.queue) {
    const auto& p = pairs_[item.pair];
    if (p.pair_id == pair_id && (!task || p.task == *task)) matches.push_back(&item);
  }
  if (matches.empty()) throw BadRequest("pair " + pair_id + " is not in this session's queue");
  // Same pair id in two tasks: the first unanswered one, in queue order.
  QueueItem* item = nullptr;
  for (auto* m : matches) {
    if (!m->answered) {
      item = m;
      break;
    }
  }
  if (!item) throw DuplicateChoice("pair " + pair_id + " already answered");

  const auto& p = pairs_[item->pair];
  const bool shown_left_chosen = choice == "left";
  // Displayed left is the canonical left only when order_index is 0.
  const bool canonical_left_won = shown_left_chosen == (item->order_index == 0);
  TrialRecord r;
  r.pair_id = p.pair_id;
  r.task = p.task;
  r.strategy = p.strategy;
  r.evaluator = s.token;
  r.left = p.left;
  r.right = p.right;
  r.order_index = item->order_index;
  r.outcome = canonical_left_won ? Outcome::Left : Outcome::Right;
  r.kappa = p.kappa;
  r.category = p.category;
  r.ts = clock_();
  if (log_) log_->append(r);
  item->answered = true;
  ++s.progress;
  return Json{{"ok", true}, {"progress", s.progress}, {"total", s.queue.size()}, {"complete", s.complete()}};
}

std::string svg_for(const ImageRef& image) {
  std::ostringstream os;
  const auto* s = image.synth();
  const int n = s ? static_cast<int>(s->presentation.size()) : 0;
  const int w = 40 * std::max(1, n) + 20, h = 220;
  os << fmt::format(R"svg(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">)svg", w, h, w, h);
  os << fmt::format(R"svg(<rect width="{}" height="{}" fill="#f4f1ea"/>)svg", w, h);
  for (int i = 0; i < n; ++i) {
    const double v = std::clamp(s->presentation[i], 0.0, 1.0);
    const int bh = static_cast<int>(v * 180);
    os << fmt::format(R"svg(<rect x="{}" y="{}" width="30" height="{}" fill="hsl({},55%,50%)"/>)svg", 15 + 40 * i,
                      200 - bh, bh, i * 45);
  }
  os << fmt::format(R"svg(<text x="10" y="215" font-size="10" font-family="sans-serif">{}</text></svg>)svg",
                    image.identity_id);
  return os.str();
}

namespace {

std::string content_type_for(const std::string& path) {
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  if (ext == ".svg") return "image/svg+xml";
  return "application/octet-stream";
}

void send_json(httplib::Response& res, int status, const Json& j) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    send_json(res, 200, f());
  } catch (const UnknownToken& e) {
    send_json(res, 403, Json{{"error", e.what()}});
  } catch (const DuplicateChoice& e) {
    send_json(res, 409, Json{{"error", e.what()}});
  } catch (const BadRequest& e) {
    send_json(res, 400, Json{{"error", e.what()}});
  } catch (const std::exception& e) {
    spdlog::error("service: {}", e.what());
    send_json(res, 500, Json{{"error", "internal error"}});
  }
}

}  // namespace

StudyServer::StudyServer(std::shared_ptr<StudyState> state, ServeOptions options)
    : state_(std::move(state)), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;
  srv.Get("/api/session", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return state_->session(req.get_param_value("token")); });
  });
  srv.Get("/api/next-pair", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return state_->next_pair(req.get_param_value("token")); });
  });
  srv.Post("/api/choice", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      Json body;
      try {
        body = Json::parse(req.body);
      } catch (const nlohmann::json::parse_error&) {
        throw BadRequest("body is not JSON");
      }
      return state_->choose(body);
    });
  });
  srv.Get(R"(/images/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto it = options_.images.find(req.matches[1].str());
    if (it == options_.images.end()) {
      res.status = 404;
      return;
    }
    if (const auto* f = it->second.file()) {
      std::ifstream in(f->path, std::ios::binary);
      if (!in) {
        res.status = 404;
        return;
      }
      std::ostringstream buf;
      buf << in.rdbuf();
      res.set_content(buf.str(), content_type_for(f->path));
    } else {
      res.set_content(svg_for(it->second), "image/svg+xml");
    }
  });
  if (!options_.static_dir.empty() && !srv.set_mount_point("/", options_.static_dir)) {
    throw PreconditionError("static_dir does not exist: " + options_.static_dir);
  }
}

StudyServer::~StudyServer() { stop(); }

int StudyServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = server_->bind_to_any_port(host);
    if (p < 0) throw Error("cannot bind " + host);
    return p;
  }
  if (!server_->bind_to_port(host, port)) throw Error(fmt::format("cannot bind {}:{}", host, port));
  return port;
}

void StudyServer::listen() { server_->listen_after_bind(); }

void StudyServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

std::map<std::string, ImageRef> load_image_index(const std::string& run_dir) {
  std::map<std::string, ImageRef> out;
  const fs::path root(run_dir);
  auto add_array = [&](const Json& arr) {
    for (const auto& j : arr) {
      auto im = j.get<ImageRef>();
      out.emplace(im.id, std::move(im));
    }
  };
  auto files_in = [](const fs::path& dir) {
    std::vector<fs::path> v;
    if (fs::is_directory(dir)) {
      for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".json") v.push_back(e.path());
      }
    }
    std::sort(v.begin(), v.end());
    return v;
  };
  for (const auto& f : files_in(root / "images")) add_array(read_json_file(f.string()));
  for (const auto& f : files_in(root / "distill")) add_array(read_json_file(f.string())["images"]);
  for (const auto& f : files_in(root / "optimize")) {
    const auto r = read_json_file(f.string()).get<OptRunResult>();
    out.emplace(r.final_image.id, r.final_image);
    for (const auto& im : r.images) out.emplace(im.id, im);
  }
  return out;
}

std::shared_ptr<StudyState> make_study(const CampaignConfig& cfg, Clock clock) {
  const std::string log = (fs::path(cfg.output_dir) / "trials" / (cfg.service.pairs_source + ".jsonl")).string();
  if (!fs::exists(log)) {
    throw PreconditionError("no trial log " + log + "; run the " + cfg.service.pairs_source + " stage first");
  }
  StudySettings settings;
  settings.participants = cfg.service.participants;
  settings.queue_size = cfg.service.queue_size;
  settings.seed = cfg.seed_value();
  for (const auto& name : cfg.tasks) {
    const TaskSpec task = load_task(name);
    settings.instructions[task.task_id] = task.evaluator_instruction;
  }
  auto writer =
      std::make_shared<TrialLogWriter>((fs::path(cfg.output_dir) / "trials" / "human.jsonl").string());
  return std::make_shared<StudyState>(pairs_from_trials(read_trial_log(log)), std::move(settings), writer,
                                      std::move(clock));
}

}  // namespace vpo::service
