#include <gtest/gtest.h>

#include <httplib.h>

#include <cstdlib>
#include <random>
#include <thread>

#include "convsim/errors.hpp"
#include "convsim/llm_gateway.hpp"
#include "test_support.hpp"

using namespace convsim;
using testing_support::FunctionBackend;

namespace {

// Local chat endpoint whose behaviour is set per test.
class StubServer {
 public:
  explicit StubServer(httplib::Server::Handler handler) {
    server_.Post("/v1/chat/completions", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

std::string chat_body(const std::string& content) {
  return json{{"choices", json::array({json{{"message", json{{"role", "assistant"}, {"content", content}}}}})},
              {"usage", json{{"prompt_tokens", 12}, {"completion_tokens", 3}}}}
      .dump();
}

BackendDescriptor http_descriptor(const std::string& url) {
  BackendDescriptor d;
  d.kind = BackendKind::http_chat;
  d.endpoint_url = url;
  d.model_id = "stub-model";
  d.retry.base_delay = std::chrono::milliseconds(1);
  d.retry.max_delay = std::chrono::milliseconds(5);
  return d;
}

ChatPrompt simple_prompt(const std::string& user = "hello") {
  ChatPrompt p;
  p.system = "system text";
  p.user = user;
  return p;
}

// Test-side reference: scan every (start, end) span in order of start, then
// shortest balanced end, and return the first that parses.
std::optional<json> brute_force_first_json(const std::string& s) {
  for (std::size_t a = 0; a < s.size(); ++a) {
    if (s[a] != '{' && s[a] != '[') continue;
    for (std::size_t b = a + 1; b <= s.size(); ++b) {
      const json j = json::parse(s.substr(a, b - a), nullptr, false);
      if (!j.is_discarded() && (j.is_object() || j.is_array())) return j;
    }
  }
  return std::nullopt;
}

}  // namespace

TEST(PromptHash, StableAndSensitive) {
  ChatPrompt a = simple_prompt();
  ChatPrompt b = simple_prompt();
  EXPECT_EQ(prompt_hash(a), prompt_hash(b));
  EXPECT_EQ(prompt_hash(a).size(), 16u);
  b.user += " ";
  EXPECT_NE(prompt_hash(a), prompt_hash(b));
  // the boundary between system and user text matters
  ChatPrompt c{"ab", "c", {}};
  ChatPrompt d{"a", "bc", {}};
  EXPECT_NE(prompt_hash(c), prompt_hash(d));
}

TEST(WhitespaceTokens, Counts) {
  EXPECT_EQ(count_whitespace_tokens(""), 0);
  EXPECT_EQ(count_whitespace_tokens("   "), 0);
  EXPECT_EQ(count_whitespace_tokens("one"), 1);
  EXPECT_EQ(count_whitespace_tokens(" two  words\n\tthree "), 3);
}

TEST(HttpBackend, RetriesServerErrorsThenSucceeds) {
  std::atomic<int> hits{0};
  StubServer server([&](const httplib::Request&, httplib::Response& res) {
    if (++hits <= 2) {
      res.status = 503;
      return;
    }
    res.set_content(chat_body("pong"), "application/json");
  });
  HttpChatBackend backend(http_descriptor(server.url()));
  const auto r = backend.complete(simple_prompt());
  EXPECT_EQ(r.reply_text, "pong");
  EXPECT_EQ(r.attempt, 3);
  EXPECT_EQ(r.input_tokens, 12);
  EXPECT_EQ(r.output_tokens, 3);
  EXPECT_EQ(hits.load(), 3);
}

TEST(HttpBackend, SendsModelAndMessages) {
  json seen;
  StubServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    res.set_content(chat_body("ok"), "application/json");
  });
  HttpChatBackend backend(http_descriptor(server.url()));
  backend.complete(simple_prompt("question"));
  EXPECT_EQ(seen.at("model"), "stub-model");
  ASSERT_EQ(seen.at("messages").size(), 2u);
  EXPECT_EQ(seen.at("messages")[0].at("role"), "system");
  EXPECT_EQ(seen.at("messages")[1].at("content"), "question");
  EXPECT_FALSE(seen.contains("temperature"));
}

TEST(HttpBackend, ClientErrorIsNotRetried) {
  std::atomic<int> hits{0};
  StubServer server([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 400;
  });
  HttpChatBackend backend(http_descriptor(server.url()));
  try {
    backend.complete(simple_prompt());
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_EQ(e.status(), 400);
  }
  EXPECT_EQ(hits.load(), 1);
}

TEST(HttpBackend, GivesUpAfterMaxAttempts) {
  std::atomic<int> hits{0};
  StubServer server([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 429;
  });
  auto d = http_descriptor(server.url());
  d.retry.max_attempts = 4;
  HttpChatBackend backend(d);
  EXPECT_THROW(backend.complete(simple_prompt()), BackendError);
  EXPECT_EQ(hits.load(), 4);
}

TEST(HttpBackend, ApiKeyComesFromEnvironmentAndNeverLeaks) {
  const std::string secret = "sk-test-secret-value-123";
  ::setenv("CONVSIM_TEST_KEY", secret.c_str(), 1);
  std::string auth;
  StubServer server([&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    res.status = 401;
    res.set_content("bad key " + auth, "text/plain");
  });
  auto d = http_descriptor(server.url());
  d.api_key_env_var = "CONVSIM_TEST_KEY";
  HttpChatBackend backend(d);
  try {
    backend.complete(simple_prompt());
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_EQ(std::string(e.what()).find(secret), std::string::npos);
  }
  EXPECT_EQ(auth, "Bearer " + secret);

  ::unsetenv("CONVSIM_TEST_KEY");
  try {
    backend.complete(simple_prompt());
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find("CONVSIM_TEST_KEY"), std::string::npos);
  }
}

TEST(HttpBackend, ConcurrencyLimitIsRespected) {
  std::atomic<int> current{0}, peak{0};
  StubServer server([&](const httplib::Request&, httplib::Response& res) {
    const int now = ++current;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --current;
    res.set_content(chat_body("ok"), "application/json");
  });
  set_http_max_concurrency(2);
  HttpChatBackend backend(http_descriptor(server.url()));
  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i) threads.emplace_back([&] { backend.complete(simple_prompt()); });
  for (auto& t : threads) t.join();
  EXPECT_LE(peak.load(), 2);
  set_http_max_concurrency(4);
}

TEST(ScriptedMock, FirstMatchWinsAndDefault) {
  auto mock = ScriptedMockBackend::from_json(json::parse(R"([
    {"match": {"user_substring": "alpha"}, "reply": "A"},
    {"match": {"user_substring": ["beta", "gamma"]}, "reply": "BG"},
    {"match": {"user_substring": "alpha beta"}, "reply": "never"},
    {"default": "D"}
  ])"));
  EXPECT_EQ(mock->complete(simple_prompt("alpha beta")).reply_text, "A");
  EXPECT_EQ(mock->complete(simple_prompt("gamma and beta")).reply_text, "BG");
  EXPECT_EQ(mock->complete(simple_prompt("beta only")).reply_text, "D");
}

TEST(ScriptedMock, HashMatchAndMiss) {
  const ChatPrompt p = simple_prompt("exact");
  auto mock = ScriptedMockBackend::from_json(
      json::array({json{{"match", json{{"prompt_hash", prompt_hash(p)}}}, {"reply", "H"}}}));
  EXPECT_EQ(mock->complete(p).reply_text, "H");
  EXPECT_THROW(mock->complete(simple_prompt("other")), MockMissError);
}

TEST(IdentityMock, Echoes) {
  IdentityMockBackend mock;
  EXPECT_EQ(mock.complete(simple_prompt("same text")).reply_text, "same text");
}

TEST(ExtractJson, FencesAndProse) {
  EXPECT_EQ(*extract_first_json("```json\n{\"a\": 1}\n```"), json::parse(R"({"a":1})"));
  EXPECT_EQ(*extract_first_json("Sure! Here it is: {\"a\": [1, 2]} Hope this helps."),
            json::parse(R"({"a":[1,2]})"));
  EXPECT_EQ(*extract_first_json("{not json} then {\"b\": \"}\"}"), json::parse(R"({"b":"}"})"));
  EXPECT_EQ(*extract_first_json("[1, {\"x\": 2}]"), json::parse("[1,{\"x\":2}]"));
  EXPECT_FALSE(extract_first_json("no json here").has_value());
  EXPECT_FALSE(extract_first_json("{\"unterminated\": 1").has_value());
}

TEST(ExtractJson, AgreesWithBruteForceOracle) {
  const std::vector<std::string> pieces{"{", "}", "[", "]", "\"", "a", "1", ",", ":", " ", "\\", "x{\"k\":1}",
                                        "[2]", "\"s\""};
  std::mt19937_64 gen(99);
  for (int trial = 0; trial < 3000; ++trial) {
    std::string s;
    const int n = 1 + static_cast<int>(gen() % 12);
    for (int i = 0; i < n; ++i) s += pieces[gen() % pieces.size()];
    const auto got = extract_first_json(s);
    const auto want = brute_force_first_json(s);
    ASSERT_EQ(got.has_value(), want.has_value()) << s;
    if (got) EXPECT_EQ(*got, *want) << s;
  }
}

TEST(CompleteJson, RepromptsWithCorrectiveSentence) {
  FunctionBackend backend([](const ChatPrompt&, int call) {
    return call == 0 ? std::string("I cannot produce JSON.") : std::string("{\"v\": 7}");
  });
  auto r = complete_json(backend, simple_prompt("task"), [](const json& j) { return j.at("v").get<int>(); });
  EXPECT_EQ(r.value, 7);
  EXPECT_EQ(r.attempts, 2);
  const auto prompts = backend.prompts();
  ASSERT_EQ(prompts.size(), 2u);
  EXPECT_EQ(prompts[0].user, "task");
  EXPECT_EQ(prompts[1].user.rfind("task", 0), 0u);
  EXPECT_GT(prompts[1].user.size(), prompts[0].user.size());
}

TEST(CompleteJson, SchemaErrorAfterExhaustingAttempts) {
  FunctionBackend backend([](const ChatPrompt&, int) { return std::string("{\"wrong\": true}"); });
  auto parse = [](const json& j) {
    if (!j.contains("v")) throw ReplyRejected("missing v");
    return j.at("v").get<int>();
  };
  try {
    complete_json(backend, simple_prompt(), parse, JsonRetryPolicy{2});
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.last_reply(), "{\"wrong\": true}");
  }
  EXPECT_EQ(backend.calls(), 2u);
}

TEST(CompleteJson, OtherErrorsPropagate) {
  FunctionBackend backend([](const ChatPrompt&, int) -> std::string { throw BackendError("down", 500); });
  EXPECT_THROW(complete_json(backend, simple_prompt(), [](const json& j) { return j; }), BackendError);
  EXPECT_EQ(backend.calls(), 1u);
}

TEST(TokenEstimate, Examples) {
  auto e = estimate_run_tokens({300, 1, 4000, 50});
  EXPECT_EQ(e.input_total, 36'000'000);
  EXPECT_EQ(e.output_total, 450'000);
  e = estimate_run_tokens({1, 30, 4000, 50});
  EXPECT_EQ(e.input_total, 4'000);
  EXPECT_EQ(e.output_total, 1'500);
  e = estimate_run_tokens({300, 5, 4000, 50});
  EXPECT_EQ(e.input_total, 7'200'000);
  EXPECT_EQ(e.output_total, 450'000);
  e = estimate_run_tokens({10, 7, 100, 1});
  EXPECT_EQ(e.input_total, 10 * 5 * 100);
  EXPECT_THROW(estimate_run_tokens({0, 1, 4000, 50}), PreconditionError);
  EXPECT_THROW(estimate_run_tokens({1, 0, 4000, 50}), PreconditionError);
}

TEST(BackendDescriptor, FromJson) {
  auto d = backend_descriptor_from_json(
      json::parse(R"({"kind": "http_chat", "endpoint_url": "http://x/y", "model": "m",
                      "api_key_env_var": "K", "temperature": 0.5, "max_attempts": 2})"));
  EXPECT_EQ(d.kind, BackendKind::http_chat);
  EXPECT_EQ(d.model_id, "m");
  EXPECT_EQ(d.temperature, 0.5);
  EXPECT_EQ(d.retry.max_attempts, 2);
  EXPECT_THROW(backend_descriptor_from_json(json::parse(R"({"kind": "http_chat"})")), ConfigError);
  EXPECT_THROW(backend_descriptor_from_json(json::parse(R"({"kind": "nonsense"})")), ConfigError);
}
