#include <doctest.h>

#include <cstdlib>
#include <deque>
#include <thread>

#include "support.hpp"
#include "vpo/gateway.hpp"

// After Eigen: resolv.h defines a _res macro.
#include <httplib.h>

using namespace vpo;
using namespace vpo::gateway;
using namespace std::chrono_literals;

namespace {

/// Replays canned responses; a status of 0 throws a TransportError.
class MockTransport final : public Transport {
 public:
  void push(int status, std::string body = "{}") { replies_.push_back({status, std::move(body)}); }
  void push_chat(const std::string& text) { push(200, Json{{"choices", {{{"message", {{"content", text}}}}}}}.dump()); }

  HttpResponse post(const HttpRequest& request) override {
    requests.push_back(request);
    if (replies_.empty()) throw TransportError("no scripted reply");
    HttpResponse r = replies_.front();
    replies_.pop_front();
    if (r.status == 0) throw TransportError("connection refused");
    return r;
  }
  std::vector<HttpRequest> requests;

 private:
  std::deque<HttpResponse> replies_;
};

GatewayConfig config(const std::string& tag) {
  GatewayConfig c;
  c.endpoint = "https://gw.test/" + tag;  // limiters are shared per endpoint
  c.model = "m";
  c.retries = 3;
  c.backoff_initial_ms = 100;
  c.backoff_multiplier = 2.0;
  c.backoff_max_ms = 250;
  return c;
}

struct SleepLog {
  std::vector<std::chrono::milliseconds> waits;
  Sleeper sleeper() {
    return [this](std::chrono::milliseconds d) { waits.push_back(d); };
  }
};

}  // namespace

TEST_CASE("n transient failures take n+1 attempts with capped backoff") {
  for (int failures : {0, 1, 2, 3}) {
    CAPTURE(failures);
    auto t = std::make_shared<MockTransport>();
    for (int i = 0; i < failures; ++i) i % 2 ? t->push(0) : t->push(503, "busy");
    t->push(200, R"({"ok": true})");
    SleepLog sleeps;
    RetryingClient c(config("retry" + std::to_string(failures)), t, sleeps.sleeper());
    CHECK(c.post_json({{"q", 1}})["ok"] == true);
    CHECK(c.last_attempts() == failures + 1);
    CHECK(t->requests.size() == static_cast<std::size_t>(failures + 1));
    std::vector<std::chrono::milliseconds> expected{100ms, 200ms, 250ms};
    expected.resize(failures);
    CHECK(sleeps.waits == expected);
  }
}

TEST_CASE("retries are bounded and 4xx is final") {
  auto t = std::make_shared<MockTransport>();
  for (int i = 0; i < 4; ++i) t->push(500, "boom");
  SleepLog sleeps;
  RetryingClient c(config("bounded"), t, sleeps.sleeper());
  CHECK_THROWS_AS(c.post_json({}), BackendError);
  CHECK(c.last_attempts() == 4);

  auto t2 = std::make_shared<MockTransport>();
  t2->push(400, "bad request");
  t2->push(200, "{}");
  RetryingClient c2(config("fourxx"), t2, sleeps.sleeper());
  CHECK_THROWS_AS(c2.post_json({}), BackendError);
  CHECK(t2->requests.size() == 1);

  auto t3 = std::make_shared<MockTransport>();
  t3->push(200, "not json");
  RetryingClient c3(config("notjson"), t3, sleeps.sleeper());
  CHECK_THROWS_AS(c3.post_json({}), BackendError);
}

TEST_CASE("requests carry the bearer token and JSON body") {
  ::setenv("VPO_TEST_TOKEN", "s3cret", 1);
  auto t = std::make_shared<MockTransport>();
  t->push(200, "{}");
  GatewayConfig cfg = config("auth");
  cfg.auth_env = "VPO_TEST_TOKEN";
  RetryingClient c(cfg, t, SleepLog{}.sleeper());
  c.post_json({{"x", 1}});
  REQUIRE(t->requests.size() == 1);
  CHECK(t->requests[0].headers.at("Authorization") == "Bearer s3cret");
  CHECK(t->requests[0].headers.at("Content-Type") == "application/json");
  CHECK(Json::parse(t->requests[0].body)["x"] == 1);

  cfg.auth_env = "VPO_TEST_TOKEN_UNSET_XYZ";
  CHECK_THROWS_AS(auth_token(cfg), PreconditionError);
  GatewaySetup setup;
  setup.editor = setup.text = setup.embedder = cfg;
  setup.judges = {cfg, cfg};
  std::vector<std::string> errors;
  setup.preflight(errors);
  CHECK(errors.size() == 1);  // one error per missing variable
}

TEST_CASE("audit log mirrors every attempt") {
  testing::TempDir dir("audit");
  auto audit = std::make_shared<AuditLog>(dir / "audit/log.jsonl");
  auto t = std::make_shared<MockTransport>();
  t->push(502, "gw");
  t->push(200, R"({"a": 1})");
  RetryingClient c(config("audit"), t, SleepLog{}.sleeper(), audit);
  c.post_json({});
  std::istringstream in(testing::slurp(dir / "audit/log.jsonl"));
  std::string line;
  std::vector<Json> rows;
  while (std::getline(in, line)) rows.push_back(Json::parse(line));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0]["status"] == 502);
  CHECK(rows[1]["attempt"] == 2);
}

TEST_CASE("rate limiter spaces requests on a fake clock") {
  auto now = std::chrono::steady_clock::time_point{};
  SleepLog sleeps;
  RateLimiter lim(4.0, sleeps.sleeper(), [&] { return now; });
  lim.acquire();
  lim.acquire();
  lim.acquire();
  CHECK(sleeps.waits == std::vector<std::chrono::milliseconds>{250ms, 500ms});
  now += 2s;
  lim.acquire();
  CHECK(sleeps.waits.size() == 2);

  RateLimiter off(0.0, sleeps.sleeper(), [&] { return now; });
  for (int i = 0; i < 5; ++i) off.acquire();
  CHECK(sleeps.waits.size() == 2);

  auto a = RateLimiter::for_endpoint("https://shared.test/x", 2.0, sleeps.sleeper());
  auto b = RateLimiter::for_endpoint("https://shared.test/x", 2.0, sleeps.sleeper());
  CHECK(a == b);
}

TEST_CASE("base64 round trip") {
  for (std::string s : {std::string(""), std::string("f"), std::string("fo"), std::string("foo"),
                        std::string("foob"), std::string("\0\xff\x10 binary", 10)}) {
    CHECK(base64_decode(base64_encode(s)) == s);
  }
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  CHECK(base64_decode("Zm9v\nYmE=") == "fooba");
  CHECK_THROWS_AS(base64_decode("abc"), BackendError);
}

TEST_CASE("verdict, proposal and theme parsers") {
  CHECK(parse_judgment(R"(Sure! {"winner": "second", "feedback": "brighter"})")->winner == Side::Second);
  CHECK(parse_judgment(R"(```json
{"winner": 1, "feedback": "x"}
```)")->feedback == "x");
  CHECK(parse_judgment(" First ")->winner == Side::First);
  CHECK_FALSE(parse_judgment("both are nice").has_value());
  CHECK_FALSE(parse_judgment(R"({"winner": "tie"})").has_value());

  CHECK(parse_proposals(R"(["a", " b ", ""])") == std::vector<std::string>{"a", "b"});
  CHECK(parse_proposals(R"({"prompts": ["x"]})") == std::vector<std::string>{"x"});
  CHECK(parse_proposals("1. warm light\n2) add plants\n- more staff") ==
        std::vector<std::string>{"warm light", "add plants", "more staff"});

  const auto themes = parse_themes(R"(Here: {"themes": [{"name": "Light", "description": "warmer"}, {"name": "Plants", "description": null}]})");
  REQUIRE(themes.has_value());
  CHECK(themes->size() == 2);
  CHECK_FALSE((*themes)[1].description.has_value());
  CHECK_FALSE(parse_themes(R"({"themes": []})").has_value());
  CHECK_FALSE(parse_themes(R"({"themes": [{"description": "no name"}]})").has_value());
  CHECK_FALSE(parse_themes(R"({"themes": [{"name": "x", "description": 3}]})").has_value());

  CHECK(extract_json("noise [1, 2] tail")->size() == 2);
  CHECK_FALSE(extract_json("no json here").has_value());
  CHECK(chat_text(Json::parse(R"({"choices": [{"message": {"content": [{"type": "text", "text": "hi"}]}}]})")) == "hi");
  CHECK_THROWS_AS(chat_text(Json::object()), BackendError);
}

TEST_CASE("gateway judge re-asks once on an unparseable verdict") {
  testing::TempDir dir("judge");
  std::ofstream(dir / "a.png") << "png-a";
  std::ofstream(dir / "b.jpg") << "jpg-b";
  const ImageRef a = make_original("a", FileImage{dir / "a.png"});
  const ImageRef b = make_original("b", FileImage{dir / "b.jpg"});
  auto t = std::make_shared<MockTransport>();
  t->push_chat("I like both");
  t->push_chat(R"({"winner": "second", "feedback": "tidier"})");
  GatewayJudge j(std::make_shared<RetryingClient>(config("judge"), t, SleepLog{}.sleeper()), "m");
  const Judgment v = j.judge({}, "Which hotel?", a, b);
  CHECK(v.winner == Side::Second);
  CHECK(v.feedback == "tidier");
  REQUIRE(t->requests.size() == 2);
  const Json body = Json::parse(t->requests[0].body);
  const Json& content = body["messages"][0]["content"];
  CHECK(content[0]["text"].get<std::string>().rfind("Which hotel?", 0) == 0);
  CHECK(content[2]["mime_type"] == "image/png");
  CHECK(base64_decode(content[2]["data"].get<std::string>()) == "png-a");
  CHECK(content[4]["mime_type"] == "image/jpeg");

  t->push_chat("?");
  t->push_chat("??");
  CHECK_THROWS_AS(j.judge({}, "Which hotel?", a, b), BackendError);
  CHECK_THROWS_AS(j.judge({}, "x", testing::synth("s", {0.1}), b), PreconditionError);
}

TEST_CASE("gateway editor stores the returned image under its identity") {
  testing::TempDir dir("editor");
  std::ofstream(dir / "x.png") << "orig";
  const ImageRef x0 = make_original("hotel1", FileImage{dir / "x.png"});
  auto t = std::make_shared<MockTransport>();
  t->push(200, Json{{"images", {{{"data", base64_encode("edited-bytes")}, {"mime_type", "image/webp"}}}}}.dump());
  GatewayEditor e(std::make_shared<RetryingClient>(config("editor"), t, SleepLog{}.sleeper()), dir / "store");
  const ImageRef out = e.edit({5, "r"}, x0, "make it warm", {});
  CHECK(out.identity_id == "hotel1");
  CHECK(out.parent == "hotel1");
  REQUIRE(out.file());
  CHECK(out.file()->path.find("/store/hotel1/") != std::string::npos);
  CHECK(out.file()->path.substr(out.file()->path.size() - 5) == ".webp");
  CHECK(testing::slurp(out.file()->path) == "edited-bytes");

  t->push(200, R"({"choices": [{"message": {"content": "sorry"}}]})");
  CHECK_THROWS_AS(e.edit({5, "r"}, x0, "p", {}), BackendError);
}

TEST_CASE("proposer tops up a short reply with one re-ask") {
  auto t = std::make_shared<MockTransport>();
  t->push_chat(R"(["one"])");
  t->push_chat(R"(["two", "three", "four"])");
  GatewayProposer p(std::make_shared<RetryingClient>(config("proposer"), t, SleepLog{}.sleeper()));
  const std::vector<std::string> fb{"too dark"};
  CHECK(p.propose({}, "improve", "base", fb, 3) == std::vector<std::string>{"one", "two", "three"});
  CHECK(Json::parse(t->requests[0].body).dump().find("too dark") != std::string::npos);
  t->push_chat("[]");
  t->push_chat("[]");
  CHECK_THROWS_AS(p.propose({}, "improve", "base", fb, 1), BackendError);
}

TEST_CASE("summarizer and embedder response handling") {
  auto t = std::make_shared<MockTransport>();
  t->push_chat("not json");
  t->push_chat(R"({"themes": [{"name": "Light", "description": "warm"}]})");
  GatewaySummarizer s(std::make_shared<RetryingClient>(config("summ"), t, SleepLog{}.sleeper()));
  const std::vector<std::string> items{"a", "b"};
  CHECK(s.summarize_many({}, items, "schema")[0].name == "Light");

  t->push(200, R"({"data": [{"embedding": [3, 4]}]})");
  GatewayEmbedder e(std::make_shared<RetryingClient>(config("emb"), t, SleepLog{}.sleeper()));
  const auto v = e.embed({}, "x");
  CHECK(v[0] == doctest::Approx(0.6));
  t->push(200, R"({"data": [{"embedding": [0, 0]}]})");
  CHECK_THROWS_AS(e.embed({}, "x"), BackendError);
}

TEST_CASE("gateway config is strict") {
  const Json ok = Json::parse(R"({"endpoint": "https://h/v1", "model": "m", "retries": 2})");
  const GatewayConfig c = ok.get<GatewayConfig>();
  CHECK(c.retries == 2);
  CHECK(c.timeout_ms == 60000);
  Json bad = ok;
  bad["retry"] = 2;
  CHECK_THROWS_AS(bad.get<GatewayConfig>(), SchemaError);
  CHECK_THROWS(Json::parse(R"({"model": "m"})").get<GatewayConfig>());

  GatewayConfig v;
  v.endpoint = "ftp://x";
  v.timeout_ms = 0;
  v.backoff_multiplier = 0.5;
  std::vector<std::string> errors;
  v.validate("judge", errors);
  CHECK(errors.size() == 4);  // endpoint, model, timeout, multiplier
  CHECK(split_url("https://h:8080/a/b") == std::pair<std::string, std::string>{"https://h:8080", "/a/b"});
  CHECK(split_url("http://h") == std::pair<std::string, std::string>{"http://h", "/"});
  CHECK_THROWS_AS(split_url("h/a"), PreconditionError);
}

TEST_CASE("repeated judge models get distinct ids") {
  auto t = std::make_shared<MockTransport>();
  const auto js = make_judges({config("j1"), config("j2"), config("j3")}, t, SleepLog{}.sleeper());
  CHECK(js[0]->id() == "m");
  CHECK(js[1]->id() == "m#2");
  CHECK(js[2]->id() == "m#3");
}

TEST_CASE("httplib transport talks to a loopback server") {
  httplib::Server srv;
  srv.Post("/v1/chat", [](const httplib::Request& req, httplib::Response& res) {
    res.set_content(Json{{"echo", Json::parse(req.body)["q"]}, {"auth", req.get_header_value("Authorization")}}.dump(),
                    "application/json");
  });
  srv.Post("/v1/fail", [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  GatewayConfig cfg = config("loop");
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat";
  RetryingClient c(cfg, std::make_shared<HttplibTransport>(), SleepLog{}.sleeper());
  CHECK(c.post_json({{"q", "ping"}})["echo"] == "ping");

  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/fail";
  cfg.retries = 1;
  RetryingClient f(cfg, std::make_shared<HttplibTransport>(), SleepLog{}.sleeper());
  CHECK_THROWS_AS(f.post_json({}), BackendError);
  CHECK(f.last_attempts() == 2);
  srv.stop();
  th.join();

  // Nothing listens any more: a transport error, retried.
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat";
  cfg.timeout_ms = 500;
  RetryingClient gone(cfg, std::make_shared<HttplibTransport>(), SleepLog{}.sleeper());
  CHECK_THROWS_AS(gone.post_json({}), BackendError);
  CHECK(gone.last_attempts() == 2);
}
