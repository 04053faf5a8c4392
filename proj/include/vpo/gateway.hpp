#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "vpo/ports.hpp"
#include "vpo/serialization.hpp"

// HTTP adapters for every port. Requests use one generic chat+image JSON
// shape (see README); transports are injectable so tests never touch the
// network.

namespace vpo::gateway {

struct GatewayConfig {
  std::string endpoint;  // full URL, e.g. https://host/v1/chat
  std::string model;
  std::string auth_env;  // name of the env var holding the bearer token
  int timeout_ms = 60000;
  int retries = 3;  // extra attempts after the first
  int backoff_initial_ms = 500;
  double backoff_multiplier = 2.0;
  int backoff_max_ms = 30000;
  /// Requests per second per endpoint; 0 disables the ceiling.
  double rate_limit = 0.0;

  void validate(const std::string& label, std::vector<std::string>& errors) const;
};

/// Resolves the bearer token; throws PreconditionError when the variable is
/// unset or empty.
std::string auth_token(const GatewayConfig& cfg);

struct HttpRequest {
  std::string url;
  std::map<std::string, std::string> headers;
  std::string body;
  int timeout_ms = 60000;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Connection-level failure (DNS, refused, timeout); always retryable.
struct TransportError : BackendError {
  using BackendError::BackendError;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const HttpRequest& request) = 0;
};

class HttplibTransport final : public Transport {
 public:
  HttpResponse post(const HttpRequest& request) override;
};

/// scheme://host[:port] and path of a URL.
std::pair<std::string, std::string> split_url(const std::string& url);

using Sleeper = std::function<void(std::chrono::milliseconds)>;
Sleeper real_sleeper();

/// Minimum spacing between requests to one endpoint, shared by every client
/// in the process that targets it.
class RateLimiter {
 public:
  using Now = std::function<std::chrono::steady_clock::time_point()>;
  RateLimiter(double per_second, Sleeper sleeper, Now now = std::chrono::steady_clock::now);
  void acquire();

  static std::shared_ptr<RateLimiter> for_endpoint(const std::string& endpoint, double per_second,
                                                   Sleeper sleeper);

 private:
  std::chrono::nanoseconds interval_;
  Sleeper sleeper_;
  Now now_;
  std::mutex mu_;
  std::optional<std::chrono::steady_clock::time_point> next_;
};

/// JSONL mirror of every raw request and response.
class AuditLog {
 public:
  explicit AuditLog(std::string path) : path_(std::move(path)) {}
  void record(const std::string& endpoint, int attempt, const std::string& request, int status,
              const std::string& response);

 private:
  std::string path_;
  std::mutex mu_;
};

/// Posts JSON with auth, rate limiting and retries on transport errors and
/// 5xx. 4xx fails immediately.
class RetryingClient {
 public:
  RetryingClient(GatewayConfig cfg, std::shared_ptr<Transport> transport, Sleeper sleeper = real_sleeper(),
                 std::shared_ptr<AuditLog> audit = nullptr);

  Json post_json(const Json& body);
  /// Attempts made by the most recent post_json.
  int last_attempts() const { return last_attempts_; }
  long total_attempts() const { return total_attempts_; }
  const GatewayConfig& config() const { return cfg_; }

 private:
  GatewayConfig cfg_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  std::shared_ptr<AuditLog> audit_;
  std::shared_ptr<RateLimiter> limiter_;
  std::atomic<int> last_attempts_{0};
  std::atomic<long> total_attempts_{0};
};

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

/// Message content blocks for the chat+image request shape.
Json text_block(std::string_view text);
Json image_block(const ImageRef& image);
Json chat_request(const std::string& model, const Json& content);
/// Text of the first choice in a chat response.
std::string chat_text(const Json& response);

/// First JSON object or array embedded in free text (models often wrap JSON
/// in prose or code fences).
std::optional<Json> extract_json(std::string_view text);

class GatewayEditor final : public Editor {
 public:
  GatewayEditor(std::shared_ptr<RetryingClient> client, std::string image_store)
      : client_(std::move(client)), store_(std::move(image_store)) {}
  ImageRef edit(const CallContext& ctx, const ImageRef& image, std::string_view composed_prompt,
                std::span<const ImageRef> references) override;

 private:
  std::shared_ptr<RetryingClient> client_;
  std::string store_;
};

class GatewayJudge final : public Judge {
 public:
  GatewayJudge(std::shared_ptr<RetryingClient> client, std::string id)
      : client_(std::move(client)), id_(std::move(id)) {}
  Judgment judge(const CallContext& ctx, std::string_view instruction, const ImageRef& first,
                 const ImageRef& second) override;
  std::string id() const override { return id_; }

 private:
  std::shared_ptr<RetryingClient> client_;
  std::string id_;
};

/// Parses {"winner": "first"|"second", "feedback": ...} or a bare verdict.
std::optional<Judgment> parse_judgment(std::string_view text);

class GatewayProposer final : public Proposer {
 public:
  explicit GatewayProposer(std::shared_ptr<RetryingClient> client) : client_(std::move(client)) {}
  std::vector<std::string> propose(const CallContext& ctx, std::string_view instruction,
                                   std::string_view context_prompt,
                                   std::span<const std::string> feedback_history, int count) override;

 private:
  std::shared_ptr<RetryingClient> client_;
};

/// Prompts from a JSON array, {"prompts": [...]}, or numbered lines.
std::vector<std::string> parse_proposals(std::string_view text);

class GatewayEmbedder final : public Embedder {
 public:
  explicit GatewayEmbedder(std::shared_ptr<RetryingClient> client) : client_(std::move(client)) {}
  Eigen::VectorXd embed(const CallContext& ctx, std::string_view text) override;

 private:
  std::shared_ptr<RetryingClient> client_;
};

class GatewaySummarizer final : public Summarizer {
 public:
  explicit GatewaySummarizer(std::shared_ptr<RetryingClient> client) : client_(std::move(client)) {}
  std::vector<Theme> summarize_many(const CallContext& ctx, std::span<const std::string> items,
                                    std::string_view schema_instruction) override;

 private:
  std::shared_ptr<RetryingClient> client_;
};

/// Validates {"themes": [{"name": str, "description": str|null}, ...]}.
std::optional<std::vector<Theme>> parse_themes(std::string_view text);

class GatewayDescriber final : public Describer {
 public:
  explicit GatewayDescriber(std::shared_ptr<RetryingClient> client) : client_(std::move(client)) {}
  std::string describe(const CallContext& ctx, std::string_view instruction, const ImageRef& original,
                       const ImageRef& edited) override;

 private:
  std::shared_ptr<RetryingClient> client_;
};

/// One call per pass; the same instruction list is applied to both images.
class GatewayNormalizer final : public NormalizationPlanner {
 public:
  explicit GatewayNormalizer(std::shared_ptr<RetryingClient> client) : client_(std::move(client)) {}
  std::pair<std::string, std::string> plan(const CallContext& ctx, std::string_view instruction,
                                           const ImageRef& a, const ImageRef& b) override;

 private:
  std::shared_ptr<RetryingClient> client_;
};

class GatewayCritic final : public Critic {
 public:
  explicit GatewayCritic(std::shared_ptr<RetryingClient> client) : client_(std::move(client)) {}
  std::string loss(const CallContext& ctx, std::string_view loss_instruction, const ImageRef& image,
                   std::string_view prompt_and_context) override;
  std::string gradient(const CallContext& ctx, std::string_view loss, std::string_view prompt) override;
  std::string direction(const CallContext& ctx, std::span<const std::string> gradients,
                        std::string_view constraints) override;
  std::string apply(const CallContext& ctx, std::string_view prompt, std::string_view direction) override;
  std::string project(const CallContext& ctx, std::string_view prompt, std::string_view constraints) override;

 private:
  std::string ask(const Json& content);
  std::shared_ptr<RetryingClient> client_;
};

class GatewayVerifier final : public IdentityVerifier {
 public:
  GatewayVerifier(std::shared_ptr<RetryingClient> client, std::string instruction)
      : client_(std::move(client)), instruction_(std::move(instruction)) {}
  bool same_identity(const CallContext& ctx, const ImageRef& x, const ImageRef& x0) override;

 private:
  std::shared_ptr<RetryingClient> client_;
  std::string instruction_;
};

struct GatewaySetup {
  GatewayConfig editor;
  std::vector<GatewayConfig> judges;
  GatewayConfig text;  // proposer, summarizer, describer, normalizer, critic
  GatewayConfig embedder;
  std::optional<std::string> verifier_instruction;
  std::string image_store;
  std::optional<std::string> audit_log;

  void validate(std::vector<std::string>& errors) const;
  /// Every auth env var resolves; collects one error per missing variable.
  void preflight(std::vector<std::string>& errors) const;
};

/// Judge ids are the judge model names (suffixed when repeated).
Backends make_backends(const GatewaySetup& setup, std::shared_ptr<Transport> transport,
                       Sleeper sleeper = real_sleeper());
std::vector<std::shared_ptr<Judge>> make_judges(const std::vector<GatewayConfig>& configs,
                                                std::shared_ptr<Transport> transport, Sleeper sleeper,
                                                std::shared_ptr<AuditLog> audit = nullptr);

void from_json(const Json& j, GatewayConfig& cfg);
void to_json(Json& j, const GatewayConfig& cfg);

}  // namespace vpo::gateway
