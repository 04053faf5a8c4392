#include "vpo/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "vpo/rng.hpp"

namespace vpo::gateway {

namespace fs = std::filesystem;

void GatewayConfig::validate(const std::string& label, std::vector<std::string>& errors) const {
  auto err = [&](const std::string& m) { errors.push_back(label + ": " + m); };
  if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0) {
    err("endpoint must be an http(s) URL, got '" + endpoint + "'");
  }
  if (model.empty()) err("model is required");
  if (timeout_ms <= 0) err("timeout_ms must be positive");
  if (retries < 0) err("retries must be >= 0");
  if (backoff_initial_ms < 0 || backoff_max_ms < 0) err("backoff delays must be >= 0");
  if (backoff_multiplier < 1.0) err("backoff_multiplier must be >= 1");
  if (rate_limit < 0.0) err("rate_limit must be >= 0");
}

std::string auth_token(const GatewayConfig& cfg) {
  if (cfg.auth_env.empty()) return {};
  const char* v = std::getenv(cfg.auth_env.c_str());
  if (!v || !*v) throw PreconditionError("environment variable " + cfg.auth_env + " is not set");
  return v;
}

std::pair<std::string, std::string> split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw PreconditionError("malformed URL '" + url + "'");
  return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

HttpResponse HttplibTransport::post(const HttpRequest& request) {
  const auto [base, path] = split_url(request.url);
  httplib::Client cli(base);
  const auto secs = std::chrono::milliseconds(request.timeout_ms);
  cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(secs).count(),
                             static_cast<long>(request.timeout_ms % 1000) * 1000);
  cli.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(secs).count(),
                       static_cast<long>(request.timeout_ms % 1000) * 1000);
  httplib::Headers headers;
  for (const auto& [k, v] : request.headers) headers.emplace(k, v);
  auto res = cli.Post(path, headers, request.body, "application/json");
  if (!res) throw TransportError("POST " + request.url + ": " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

RateLimiter::RateLimiter(double per_second, Sleeper sleeper, Now now)
    : interval_(per_second > 0 ? std::chrono::nanoseconds(static_cast<long long>(1e9 / per_second))
                               : std::chrono::nanoseconds(0)),
      sleeper_(std::move(sleeper)),
      now_(std::move(now)) {}

void RateLimiter::acquire() {
  if (interval_.count() == 0) return;
  std::chrono::nanoseconds wait{0};
  {
    std::lock_guard lock(mu_);
    const auto t = now_();
    const auto slot = next_ && *next_ > t ? *next_ : t;
    wait = slot - t;
    next_ = slot + interval_;
  }
  if (wait.count() > 0) sleeper_(std::chrono::ceil<std::chrono::milliseconds>(wait));
}

std::shared_ptr<RateLimiter> RateLimiter::for_endpoint(const std::string& endpoint, double per_second,
                                                       Sleeper sleeper) {
  static std::mutex mu;
  static std::map<std::string, std::weak_ptr<RateLimiter>> registry;
  std::lock_guard lock(mu);
  if (auto existing = registry[endpoint].lock()) return existing;
  auto limiter = std::make_shared<RateLimiter>(per_second, std::move(sleeper));
  registry[endpoint] = limiter;
  return limiter;
}

void AuditLog::record(const std::string& endpoint, int attempt, const std::string& request, int status,
                      const std::string& response) {
  Json row{{"ts", std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::system_clock::now().time_since_epoch())
                      .count()},
           {"endpoint", endpoint},
           {"attempt", attempt},
           {"request", request},
           {"status", status},
           {"response", response}};
  std::lock_guard lock(mu_);
  if (auto dir = fs::path(path_).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path_, std::ios::app);
  out << row.dump() << '\n';
}

RetryingClient::RetryingClient(GatewayConfig cfg, std::shared_ptr<Transport> transport, Sleeper sleeper,
                               std::shared_ptr<AuditLog> audit)
    : cfg_(std::move(cfg)),
      transport_(std::move(transport)),
      sleeper_(std::move(sleeper)),
      audit_(std::move(audit)),
      limiter_(RateLimiter::for_endpoint(cfg_.endpoint, cfg_.rate_limit, sleeper_)) {}

Json RetryingClient::post_json(const Json& body) {
  HttpRequest req;
  req.url = cfg_.endpoint;
  req.body = body.dump();
  req.timeout_ms = cfg_.timeout_ms;
  req.headers["Content-Type"] = "application/json";
  if (const auto token = auth_token(cfg_); !token.empty()) req.headers["Authorization"] = "Bearer " + token;

  std::string last_error;
  double delay = cfg_.backoff_initial_ms;
  for (int attempt = 1; attempt <= cfg_.retries + 1; ++attempt) {
    last_attempts_ = attempt;
    ++total_attempts_;
    limiter_->acquire();
    try {
      const HttpResponse res = transport_->post(req);
      if (audit_) audit_->record(cfg_.endpoint, attempt, req.body, res.status, res.body);
      if (res.status >= 200 && res.status < 300) {
        try {
          return Json::parse(res.body);
        } catch (const Json::parse_error& e) {
          throw BackendError(fmt::format("{}: response is not JSON: {}", cfg_.endpoint, e.what()));
        }
      }
      last_error = fmt::format("HTTP {}: {}", res.status, res.body.substr(0, 200));
      if (res.status < 500) throw BackendError(cfg_.endpoint + ": " + last_error);
    } catch (const TransportError& e) {
      if (audit_) audit_->record(cfg_.endpoint, attempt, req.body, 0, e.what());
      last_error = e.what();
    }
    if (attempt <= cfg_.retries) {
      spdlog::warn("gateway: {} attempt {} failed ({}), retrying", cfg_.endpoint, attempt, last_error);
      sleeper_(std::chrono::milliseconds(static_cast<long long>(std::min<double>(delay, cfg_.backoff_max_ms))));
      delay *= cfg_.backoff_multiplier;
    }
  }
  throw BackendError(fmt::format("{}: giving up after {} attempts: {}", cfg_.endpoint, cfg_.retries + 1,
                                 last_error));
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  std::string clean;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) clean += c;
  }
  if (clean.size() % 4 != 0) throw BackendError("base64 payload has invalid length");
  std::string out(3 * clean.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw BackendError("invalid base64 payload");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

namespace {

std::string mime_for(const fs::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  return "image/png";
}

std::string extension_for(const std::string& mime) {
  if (mime == "image/jpeg") return ".jpg";
  if (mime == "image/webp") return ".webp";
  return ".png";
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot read image " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

Json text_block(std::string_view text) { return Json{{"type", "text"}, {"text", std::string(text)}}; }

Json image_block(const ImageRef& image) {
  const FileImage* f = image.file();
  if (!f) throw PreconditionError("gateway backends need file-backed images, " + image.id + " is synthetic");
  return Json{{"type", "image"}, {"mime_type", mime_for(f->path)}, {"data", base64_encode(read_bytes(f->path))}};
}

Json chat_request(const std::string& model, const Json& content) {
  return Json{{"model", model}, {"messages", Json::array({Json{{"role", "user"}, {"content", content}}})}};
}

std::string chat_text(const Json& response) {
  try {
    const Json& content = response.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    std::string out;
    for (const auto& block : content) {
      if (block.value("type", "") == "text") out += block.at("text").get<std::string>();
    }
    return out;
  } catch (const Json::exception& e) {
    throw BackendError(std::string("unexpected chat response shape: ") + e.what());
  }
}

std::optional<Json> extract_json(std::string_view text) {
  for (std::size_t start = 0; start < text.size(); ++start) {
    const char open = text[start];
    if (open != '{' && open != '[') continue;
    const char close = open == '{' ? '}' : ']';
    for (std::size_t end = text.size(); end-- > start;) {
      if (text[end] != close) continue;
      try {
        return Json::parse(text.substr(start, end - start + 1));
      } catch (const Json::parse_error&) {
      }
    }
  }
  return std::nullopt;
}

ImageRef GatewayEditor::edit(const CallContext& ctx, const ImageRef& image, std::string_view composed_prompt,
                             std::span<const ImageRef> references) {
  Json content = Json::array({text_block(composed_prompt), image_block(image)});
  for (const auto& r : references) {
    if (r.id != image.id) content.push_back(image_block(r));
  }
  Json body = chat_request(client_->config().model, content);
  body["response_modalities"] = Json::array({"image"});
  const Json res = client_->post_json(body);

  std::optional<std::pair<std::string, std::string>> found;  // data, mime
  if (res.contains("images") && !res["images"].empty()) {
    found = {res["images"][0].at("data").get<std::string>(), res["images"][0].value("mime_type", "image/png")};
  } else if (res.contains("choices")) {
    const Json& c = res["choices"][0]["message"]["content"];
    if (c.is_array()) {
      for (const auto& b : c) {
        if (b.value("type", "") == "image") {
          found = {b.at("data").get<std::string>(), b.value("mime_type", "image/png")};
          break;
        }
      }
    }
  }
  if (!found) throw BackendError("editor response carried no image");

  const std::string suffix =
      "e" + hex64(mix_keys(ctx.seed, fnv1a(image.id + "\n" + std::string(composed_prompt))));
  const fs::path dir = fs::path(store_) / image.identity_id;
  fs::create_directories(dir);
  const fs::path path = dir / (suffix + extension_for(found->second));
  {
    std::ofstream out(path, std::ios::binary);
    const std::string bytes = base64_decode(found->first);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw BackendError("cannot write " + path.string());
  }
  return derive_image(image, suffix, Variant::step(1), FileImage{path.string()}, std::string(composed_prompt));
}

namespace {

constexpr std::string_view kJudgeFormat =
    "Reply with a JSON object {\"winner\": \"first\" or \"second\", \"feedback\": \"<one short paragraph>\"}.";
constexpr std::string_view kJudgeStrict =
    "Your previous reply could not be parsed. Reply with ONLY the JSON object "
    "{\"winner\": \"first\" or \"second\", \"feedback\": \"...\"} and nothing else.";

std::optional<Side> side_of(const Json& v) {
  if (v.is_number_integer()) {
    if (v.get<int>() == 1) return Side::First;
    if (v.get<int>() == 2) return Side::Second;
    return std::nullopt;
  }
  if (!v.is_string()) return std::nullopt;
  std::string s = trim(v.get<std::string>());
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "first" || s == "1" || s == "image 1" || s == "a") return Side::First;
  if (s == "second" || s == "2" || s == "image 2" || s == "b") return Side::Second;
  return std::nullopt;
}

}  // namespace

std::optional<Judgment> parse_judgment(std::string_view text) {
  if (auto j = extract_json(text); j && j->is_object() && j->contains("winner")) {
    auto side = side_of((*j)["winner"]);
    if (!side) return std::nullopt;
    Judgment out{*side, {}};
    if (j->contains("feedback") && (*j)["feedback"].is_string()) out.feedback = (*j)["feedback"].get<std::string>();
    return out;
  }
  if (auto side = side_of(Json(trim(text)))) return Judgment{*side, {}};
  return std::nullopt;
}

Judgment GatewayJudge::judge(const CallContext&, std::string_view instruction, const ImageRef& first,
                             const ImageRef& second) {
  const Json images = Json::array({text_block("First image:"), image_block(first), text_block("Second image:"),
                                   image_block(second)});
  for (const std::string_view reminder : {kJudgeFormat, kJudgeStrict}) {
    Json content = Json::array({text_block(std::string(instruction) + "\n\n" + std::string(reminder))});
    content.insert(content.end(), images.begin(), images.end());
    const std::string reply = chat_text(client_->post_json(chat_request(client_->config().model, content)));
    if (auto j = parse_judgment(reply)) return *j;
    spdlog::warn("judge {}: unparseable verdict '{}'", id_, reply.substr(0, 120));
  }
  throw BackendError("judge " + id_ + ": no parseable verdict after one re-ask");
}

std::vector<std::string> parse_proposals(std::string_view text) {
  std::vector<std::string> out;
  if (auto j = extract_json(text)) {
    const Json* arr = j->is_array() ? &*j : (j->is_object() && j->contains("prompts") ? &(*j)["prompts"] : nullptr);
    if (arr && arr->is_array()) {
      for (const auto& v : *arr) {
        if (v.is_string() && !trim(v.get<std::string>()).empty()) out.push_back(trim(v.get<std::string>()));
      }
      return out;
    }
  }
  static const std::regex item(R"(^\s*(?:\d+[.)]|[-*])\s+(.+)$)");
  std::istringstream is{std::string(text)};
  std::string line;
  std::smatch m;
  while (std::getline(is, line)) {
    if (std::regex_match(line, m, item)) out.push_back(trim(m[1].str()));
  }
  return out;
}

std::vector<std::string> GatewayProposer::propose(const CallContext&, std::string_view instruction,
                                                  std::string_view context_prompt,
                                                  std::span<const std::string> feedback_history, int count) {
  if (count < 1) throw PreconditionError("propose: count must be >= 1");
  std::string base = std::string(instruction) + "\n\nCurrent prompt:\n" + std::string(context_prompt);
  if (!feedback_history.empty()) {
    base += "\n\nFeedback:";
    for (const auto& f : feedback_history) base += "\n- " + f;
  }
  std::vector<std::string> out;
  for (int round = 0; round < 2 && static_cast<int>(out.size()) < count; ++round) {
    const int want = count - static_cast<int>(out.size());
    const std::string text =
        base + fmt::format("\n\nReturn exactly {} new prompt{} as a JSON array of strings.", want, want == 1 ? "" : "s");
    auto got = parse_proposals(chat_text(client_->post_json(chat_request(client_->config().model,
                                                                          Json::array({text_block(text)})))));
    for (auto& g : got) {
      if (static_cast<int>(out.size()) < count) out.push_back(std::move(g));
    }
  }
  if (static_cast<int>(out.size()) < count) {
    throw BackendError(fmt::format("proposer returned {} of {} prompts after one re-ask", out.size(), count));
  }
  return out;
}

Eigen::VectorXd GatewayEmbedder::embed(const CallContext&, std::string_view text) {
  const Json res = client_->post_json(Json{{"model", client_->config().model}, {"input", std::string(text)}});
  const Json* vec = nullptr;
  if (res.contains("data") && !res["data"].empty()) vec = &res["data"][0]["embedding"];
  else if (res.contains("embedding")) vec = &res["embedding"];
  if (!vec || !vec->is_array() || vec->empty()) throw BackendError("embedding response carried no vector");
  Eigen::VectorXd v(static_cast<Eigen::Index>(vec->size()));
  for (std::size_t i = 0; i < vec->size(); ++i) v[static_cast<Eigen::Index>(i)] = (*vec)[i].get<double>();
  const double norm = v.norm();
  if (!(norm > 0.0)) throw BackendError("embedding has zero norm");
  return v / norm;
}

std::optional<std::vector<Theme>> parse_themes(std::string_view text) {
  auto j = extract_json(text);
  if (!j || !j->is_object() || !j->contains("themes") || !(*j)["themes"].is_array()) return std::nullopt;
  std::vector<Theme> out;
  for (const auto& t : (*j)["themes"]) {
    if (!t.is_object() || !t.contains("name") || !t["name"].is_string()) return std::nullopt;
    Theme theme{t["name"].get<std::string>(), std::nullopt};
    if (t.contains("description")) {
      if (t["description"].is_string()) theme.description = t["description"].get<std::string>();
      else if (!t["description"].is_null()) return std::nullopt;
    }
    out.push_back(std::move(theme));
  }
  if (out.empty()) return std::nullopt;
  return out;
}

std::vector<Theme> GatewaySummarizer::summarize_many(const CallContext&, std::span<const std::string> items,
                                                     std::string_view schema_instruction) {
  std::string text = std::string(schema_instruction) + "\n\nInput descriptions:";
  for (const auto& i : items) text += "\n- \"" + i + "\"";
  for (int round = 0; round < 2; ++round) {
    if (round == 1) text += "\n\nYour previous reply did not match the JSON schema. Reply with only the JSON object.";
    const std::string reply =
        chat_text(client_->post_json(chat_request(client_->config().model, Json::array({text_block(text)}))));
    if (auto themes = parse_themes(reply)) return *themes;
  }
  throw BackendError("summarizer output failed schema validation after one re-ask");
}

std::string GatewayDescriber::describe(const CallContext&, std::string_view instruction, const ImageRef& original,
                                       const ImageRef& edited) {
  const Json content = Json::array({text_block(instruction), image_block(original), image_block(edited)});
  auto text = trim(chat_text(client_->post_json(chat_request(client_->config().model, content))));
  if (text.empty()) throw BackendError("describer returned an empty description");
  return text;
}

std::pair<std::string, std::string> GatewayNormalizer::plan(const CallContext&, std::string_view instruction,
                                                            const ImageRef& a, const ImageRef& b) {
  const Json content = Json::array({text_block(instruction), image_block(a), image_block(b)});
  auto text = trim(chat_text(client_->post_json(chat_request(client_->config().model, content))));
  if (text.empty()) throw BackendError("normalization planner returned no instructions");
  return {text, text};
}

std::string GatewayCritic::ask(const Json& content) {
  auto text = trim(chat_text(client_->post_json(chat_request(client_->config().model, content))));
  if (text.empty()) throw BackendError("critic returned an empty reply");
  return text;
}

std::string GatewayCritic::loss(const CallContext&, std::string_view loss_instruction, const ImageRef& image,
                                std::string_view prompt_and_context) {
  return ask(Json::array({text_block(std::string(loss_instruction) + "\n\nPrompt:\n" +
                                     std::string(prompt_and_context)),
                          image_block(image)}));
}

std::string GatewayCritic::gradient(const CallContext&, std::string_view loss, std::string_view prompt) {
  return ask(Json::array({text_block("Critique of the edited image:\n" + std::string(loss) +
                                     "\n\nState concretely how the prompt below should change to address "
                                     "the critique.\n\nPrompt:\n" +
                                     std::string(prompt))}));
}

std::string GatewayCritic::direction(const CallContext&, std::span<const std::string> gradients,
                                     std::string_view constraints) {
  std::string text = "Recent suggested prompt changes, oldest first:";
  for (std::size_t i = 0; i < gradients.size(); ++i) text += fmt::format("\n[{}] {}", i + 1, gradients[i]);
  text += "\n\nMerge them into one consistent update direction.\nConstraints:\n" + std::string(constraints);
  return ask(Json::array({text_block(text)}));
}

std::string GatewayCritic::apply(const CallContext&, std::string_view prompt, std::string_view direction) {
  return ask(Json::array({text_block("Rewrite the prompt following the update direction. Reply with the new "
                                     "prompt only.\n\nPrompt:\n" +
                                     std::string(prompt) + "\n\nUpdate direction:\n" + std::string(direction))}));
}

std::string GatewayCritic::project(const CallContext&, std::string_view prompt, std::string_view constraints) {
  return ask(Json::array({text_block("Revise the prompt so it satisfies every constraint, changing nothing "
                                     "else. Reply with the prompt only.\n\nConstraints:\n" +
                                     std::string(constraints) + "\n\nPrompt:\n" + std::string(prompt))}));
}

bool GatewayVerifier::same_identity(const CallContext&, const ImageRef& x, const ImageRef& x0) {
  const Json content = Json::array({text_block(instruction_ + "\n\nAnswer yes or no."), image_block(x0), image_block(x)});
  auto text = trim(chat_text(client_->post_json(chat_request(client_->config().model, content))));
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
  return text.rfind("yes", 0) == 0;
}

void GatewaySetup::validate(std::vector<std::string>& errors) const {
  editor.validate("gateway.editor", errors);
  if (judges.empty()) errors.push_back("gateway.judges: at least one judge is required");
  for (std::size_t i = 0; i < judges.size(); ++i) judges[i].validate(fmt::format("gateway.judges[{}]", i), errors);
  text.validate("gateway.text", errors);
  embedder.validate("gateway.embedder", errors);
  if (image_store.empty()) errors.push_back("gateway.image_store is required");
}

void GatewaySetup::preflight(std::vector<std::string>& errors) const {
  std::vector<const GatewayConfig*> all{&editor, &text, &embedder};
  for (const auto& j : judges) all.push_back(&j);
  std::set<std::string> reported;
  for (const auto* c : all) {
    try {
      auth_token(*c);
    } catch (const PreconditionError& e) {
      if (reported.insert(c->auth_env).second) errors.push_back(e.what());
    }
  }
}

std::vector<std::shared_ptr<Judge>> make_judges(const std::vector<GatewayConfig>& configs,
                                                std::shared_ptr<Transport> transport, Sleeper sleeper,
                                                std::shared_ptr<AuditLog> audit) {
  std::vector<std::shared_ptr<Judge>> out;
  std::map<std::string, int> seen;
  for (const auto& c : configs) {
    const int n = seen[c.model]++;
    const std::string id = n == 0 ? c.model : fmt::format("{}#{}", c.model, n + 1);
    out.push_back(std::make_shared<GatewayJudge>(std::make_shared<RetryingClient>(c, transport, sleeper, audit), id));
  }
  return out;
}

Backends make_backends(const GatewaySetup& setup, std::shared_ptr<Transport> transport, Sleeper sleeper) {
  std::shared_ptr<AuditLog> audit = setup.audit_log ? std::make_shared<AuditLog>(*setup.audit_log) : nullptr;
  auto text = std::make_shared<RetryingClient>(setup.text, transport, sleeper, audit);
  Backends b;
  b.editor = std::make_shared<GatewayEditor>(std::make_shared<RetryingClient>(setup.editor, transport, sleeper, audit),
                                             setup.image_store);
  b.judges = make_judges(setup.judges, transport, sleeper, audit);
  b.proposer = std::make_shared<GatewayProposer>(text);
  b.embedder = std::make_shared<GatewayEmbedder>(std::make_shared<RetryingClient>(setup.embedder, transport, sleeper, audit));
  b.summarizer = std::make_shared<GatewaySummarizer>(text);
  b.describer = std::make_shared<GatewayDescriber>(text);
  b.normalizer = std::make_shared<GatewayNormalizer>(text);
  b.critic = std::make_shared<GatewayCritic>(text);
  if (setup.verifier_instruction) b.verifier = std::make_shared<GatewayVerifier>(text, *setup.verifier_instruction);
  return b;
}

void from_json(const Json& j, GatewayConfig& cfg) {
  static const std::set<std::string> known{"endpoint",           "model",          "auth_env",  "timeout_ms", "retries",
                                           "backoff_initial_ms", "backoff_multiplier", "backoff_max_ms", "rate_limit"};
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw SchemaError("unknown gateway field '" + k + "'");
  }
  GatewayConfig d;
  cfg.endpoint = j.at("endpoint").get<std::string>();
  cfg.model = j.at("model").get<std::string>();
  cfg.auth_env = j.value("auth_env", d.auth_env);
  cfg.timeout_ms = j.value("timeout_ms", d.timeout_ms);
  cfg.retries = j.value("retries", d.retries);
  cfg.backoff_initial_ms = j.value("backoff_initial_ms", d.backoff_initial_ms);
  cfg.backoff_multiplier = j.value("backoff_multiplier", d.backoff_multiplier);
  cfg.backoff_max_ms = j.value("backoff_max_ms", d.backoff_max_ms);
  cfg.rate_limit = j.value("rate_limit", d.rate_limit);
}

void to_json(Json& j, const GatewayConfig& cfg) {
  j = Json{{"endpoint", cfg.endpoint},
           {"model", cfg.model},
           {"auth_env", cfg.auth_env},
           {"timeout_ms", cfg.timeout_ms},
           {"retries", cfg.retries},
           {"backoff_initial_ms", cfg.backoff_initial_ms},
           {"backoff_multiplier", cfg.backoff_multiplier},
           {"backoff_max_ms", cfg.backoff_max_ms},
           {"rate_limit", cfg.rate_limit}};
}

}  // namespace vpo::gateway
