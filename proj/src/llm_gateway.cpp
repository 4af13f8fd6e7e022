#include "convsim/llm_gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

namespace convsim {

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, std::string_view bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  // field separator so ("ab","c") and ("a","bc") differ
  h ^= 0x1f;
  h *= kFnvPrime;
}

std::string to_hex(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_retryable_status(int status) {
  return status == 408 || status == 429 || status >= 500;
}

}  // namespace

std::string prompt_hash(const ChatPrompt& prompt) {
  std::uint64_t h = kFnvOffset;
  fnv_mix(h, prompt.system);
  fnv_mix(h, prompt.user);
  fnv_mix(h, prompt.params.model_id);
  fnv_mix(h, prompt.params.temperature ? std::to_string(*prompt.params.temperature) : "");
  fnv_mix(h, prompt.params.max_output_tokens ? std::to_string(*prompt.params.max_output_tokens)
                                             : "");
  fnv_mix(h, prompt.params.seed ? std::to_string(*prompt.params.seed) : "");
  return to_hex(h);
}

long count_whitespace_tokens(std::string_view text) {
  long n = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++n;
    }
  }
  return n;
}

json to_json(const CompletionRecord& record) {
  return json{{"prompt_hash", record.prompt_hash},
              {"reply_text", record.reply_text},
              {"input_tokens", record.input_tokens},
              {"output_tokens", record.output_tokens},
              {"latency_ms", record.latency_ms},
              {"attempt", record.attempt}};
}

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::http_chat: return "http_chat";
    case BackendKind::scripted_mock: return "scripted_mock";
    case BackendKind::identity_mock: return "identity_mock";
  }
  return "unknown";
}

BackendKind backend_kind_from_string(std::string_view name) {
  if (name == "http_chat") return BackendKind::http_chat;
  if (name == "scripted_mock") return BackendKind::scripted_mock;
  if (name == "identity_mock") return BackendKind::identity_mock;
  throw ConfigError("unknown backend kind '" + std::string(name) + "'");
}

void validate(const BackendDescriptor& d) {
  switch (d.kind) {
    case BackendKind::http_chat:
      if (d.endpoint_url.empty()) throw ConfigError("http_chat backend requires endpoint_url");
      break;
    case BackendKind::scripted_mock:
      if (d.script_path.empty()) throw ConfigError("scripted_mock backend requires script_path");
      break;
    case BackendKind::identity_mock:
      break;
  }
  if (d.retry.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
}

BackendDescriptor backend_descriptor_from_json(const json& j,
                                               const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("backend descriptor must be an object");
  BackendDescriptor d;
  d.kind = backend_kind_from_string(j.value("kind", std::string{}));
  d.endpoint_url = j.value("endpoint_url", std::string{});
  d.api_key_env_var = j.value("api_key_env_var", std::string{});
  d.api_key_header = j.value("api_key_header", std::string{"Authorization"});
  if (j.contains("script_path")) {
    std::filesystem::path p = j.at("script_path").get<std::string>();
    d.script_path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  }
  d.model_id = j.value("model", std::string{});
  if (j.contains("temperature")) d.temperature = j.at("temperature").get<double>();
  if (j.contains("max_output_tokens")) d.max_output_tokens = j.at("max_output_tokens").get<int>();
  d.retry.max_attempts = j.value("max_attempts", d.retry.max_attempts);
  if (j.contains("base_delay_ms"))
    d.retry.base_delay = std::chrono::milliseconds(j.at("base_delay_ms").get<long>());
  validate(d);
  return d;
}

// --- mocks -----------------------------------------------------------------

CompletionRecord IdentityMockBackend::complete(const ChatPrompt& prompt) {
  CompletionRecord r;
  r.prompt_hash = prompt_hash(prompt);
  r.reply_text = prompt.user;
  r.input_tokens = count_whitespace_tokens(prompt.system) + count_whitespace_tokens(prompt.user);
  r.output_tokens = count_whitespace_tokens(r.reply_text);
  return r;
}

ScriptedMockBackend::ScriptedMockBackend(std::vector<Entry> entries,
                                         std::optional<std::string> default_reply)
    : entries_(std::move(entries)), default_reply_(std::move(default_reply)) {}

std::shared_ptr<ScriptedMockBackend> ScriptedMockBackend::from_json(const json& script) {
  if (!script.is_array()) throw ConfigError("mock script must be a JSON array");
  std::vector<Entry> entries;
  std::optional<std::string> fallback;
  for (const auto& item : script) {
    if (item.contains("default")) {
      fallback = item.at("default").get<std::string>();
      continue;
    }
    if (!item.contains("match") || !item.contains("reply"))
      throw ConfigError("mock script entry needs 'match' and 'reply'");
    Entry e;
    const auto& match = item.at("match");
    if (match.contains("prompt_hash")) e.prompt_hash = match.at("prompt_hash").get<std::string>();
    if (match.contains("user_substring")) {
      const auto& sub = match.at("user_substring");
      if (sub.is_array()) {
        for (const auto& s : sub) e.user_substrings.push_back(s.get<std::string>());
      } else {
        e.user_substrings.push_back(sub.get<std::string>());
      }
    }
    if (!e.prompt_hash && e.user_substrings.empty())
      throw ConfigError("mock script match needs prompt_hash or user_substring");
    e.reply = item.at("reply").get<std::string>();
    entries.push_back(std::move(e));
  }
  return std::make_shared<ScriptedMockBackend>(std::move(entries), std::move(fallback));
}

std::shared_ptr<ScriptedMockBackend> ScriptedMockBackend::from_file(
    const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json script;
  try {
    script = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  return from_json(script);
}

CompletionRecord ScriptedMockBackend::complete(const ChatPrompt& prompt) {
  const std::string hash = prompt_hash(prompt);
  const std::string* reply = nullptr;
  for (const auto& e : entries_) {
    if (e.prompt_hash && *e.prompt_hash == hash) {
      reply = &e.reply;
      break;
    }
    if (!e.user_substrings.empty() &&
        std::all_of(e.user_substrings.begin(), e.user_substrings.end(),
                    [&](const std::string& s) { return prompt.user.find(s) != std::string::npos; })) {
      reply = &e.reply;
      break;
    }
  }
  if (!reply && default_reply_) reply = &*default_reply_;
  if (!reply) throw MockMissError("scripted mock has no entry for prompt " + hash);

  CompletionRecord r;
  r.prompt_hash = hash;
  r.reply_text = *reply;
  r.input_tokens = count_whitespace_tokens(prompt.system) + count_whitespace_tokens(prompt.user);
  r.output_tokens = count_whitespace_tokens(r.reply_text);
  return r;
}

// --- concurrency cap -------------------------------------------------------

void ConcurrencyLimiter::set_limit(int limit) {
  {
    std::lock_guard lock(mutex_);
    limit_ = limit < 1 ? 1 : limit;
  }
  cv_.notify_all();
}

void ConcurrencyLimiter::acquire() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return in_flight_ < limit_; });
  ++in_flight_;
}

void ConcurrencyLimiter::release() {
  {
    std::lock_guard lock(mutex_);
    --in_flight_;
  }
  cv_.notify_one();
}

int ConcurrencyLimiter::in_flight() const {
  std::lock_guard lock(mutex_);
  return in_flight_;
}

ConcurrencyLimiter& http_limiter() {
  static ConcurrencyLimiter limiter(4);
  return limiter;
}

void set_http_max_concurrency(int limit) { http_limiter().set_limit(limit); }

// --- http ------------------------------------------------------------------

HttpChatBackend::HttpChatBackend(BackendDescriptor descriptor)
    : descriptor_(std::move(descriptor)) {
  validate(descriptor_);
  const std::string& url = descriptor_.endpoint_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint_url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (url.rfind("https://", 0) == 0)
    throw ConfigError("https endpoints need a build with OpenSSL support");
#endif
}

CompletionRecord HttpChatBackend::complete(const ChatPrompt& prompt) {
  json body{{"model", prompt.params.model_id.empty() ? descriptor_.model_id
                                                     : prompt.params.model_id},
            {"messages", json::array({json{{"role", "system"}, {"content", prompt.system}},
                                      json{{"role", "user"}, {"content", prompt.user}}})}};
  if (auto t = prompt.params.temperature ? prompt.params.temperature : descriptor_.temperature)
    body["temperature"] = *t;
  if (auto m = prompt.params.max_output_tokens ? prompt.params.max_output_tokens
                                               : descriptor_.max_output_tokens)
    body["max_tokens"] = *m;
  if (prompt.params.seed) body["seed"] = *prompt.params.seed;

  httplib::Headers headers;
  if (!descriptor_.api_key_env_var.empty()) {
    const char* key = std::getenv(descriptor_.api_key_env_var.c_str());
    if (!key || !*key)
      throw BackendError("environment variable " + descriptor_.api_key_env_var + " is not set");
    if (descriptor_.api_key_header == "Authorization")
      headers.emplace("Authorization", std::string("Bearer ") + key);
    else
      headers.emplace(descriptor_.api_key_header, key);
  }

  const std::string payload = body.dump();
  const RetryPolicy& retry = descriptor_.retry;
  int last_status = 0;
  std::string last_problem;
  for (int attempt = 1; attempt <= retry.max_attempts; ++attempt) {
    const auto started = std::chrono::steady_clock::now();
    httplib::Result res{nullptr, httplib::Error::Unknown};
    {
      ConcurrencyLimiter::Slot slot(http_limiter());
      httplib::Client client(scheme_host_port_);
      client.set_connection_timeout(30);
      client.set_read_timeout(300);
      res = client.Post(path_, headers, payload, "application/json");
    }
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - started);

    bool retryable = true;
    if (!res) {
      last_status = 0;
      last_problem = "transport error: " + httplib::to_string(res.error());
    } else if (res->status == 200) {
      json reply;
      try {
        reply = json::parse(res->body);
      } catch (const nlohmann::json::parse_error& e) {
        throw BackendError(std::string("malformed response body: ") + e.what(), 200);
      }
      CompletionRecord r;
      r.prompt_hash = prompt_hash(prompt);
      try {
        r.reply_text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        throw BackendError("response lacks choices[0].message.content", 200);
      }
      const json usage = reply.value("usage", json::object());
      r.input_tokens = usage.value("prompt_tokens", count_whitespace_tokens(prompt.system) +
                                                        count_whitespace_tokens(prompt.user));
      r.output_tokens = usage.value("completion_tokens", count_whitespace_tokens(r.reply_text));
      r.latency_ms = elapsed.count();
      r.attempt = attempt;
      return r;
    } else {
      last_status = res->status;
      last_problem = "HTTP status " + std::to_string(res->status);
      retryable = is_retryable_status(res->status);
    }
    if (!retryable) break;
    if (attempt < retry.max_attempts) {
      auto delay = retry.base_delay * (1LL << std::min(attempt - 1, 20));
      std::this_thread::sleep_for(std::min<std::chrono::milliseconds>(
          std::chrono::duration_cast<std::chrono::milliseconds>(delay), retry.max_delay));
    }
  }
  throw BackendError("chat request to " + scheme_host_port_ + " failed: " + last_problem,
                     last_status);
}

std::shared_ptr<Backend> make_backend(const BackendDescriptor& descriptor) {
  validate(descriptor);
  switch (descriptor.kind) {
    case BackendKind::identity_mock: return std::make_shared<IdentityMockBackend>();
    case BackendKind::scripted_mock: return ScriptedMockBackend::from_file(descriptor.script_path);
    case BackendKind::http_chat: return std::make_shared<HttpChatBackend>(descriptor);
  }
  throw ConfigError("unknown backend kind");
}

// --- JSON replies ----------------------------------------------------------

namespace {

// Index one past the bracket that closes the one at `open`, or npos.
std::size_t balanced_end(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{' || c == '[') ++depth;
    else if (c == '}' || c == ']') {
      if (--depth == 0) return i + 1;
      if (depth < 0) return std::string_view::npos;
    }
  }
  return std::string_view::npos;
}

}  // namespace

std::optional<json> extract_first_json(std::string_view reply) {
  for (std::size_t i = 0; i < reply.size(); ++i) {
    if (reply[i] != '{' && reply[i] != '[') continue;
    const std::size_t end = balanced_end(reply, i);
    if (end == std::string_view::npos) continue;
    json value = json::parse(reply.substr(i, end - i), nullptr, /*allow_exceptions=*/false);
    if (!value.is_discarded()) return value;
  }
  return std::nullopt;
}

std::string corrective_sentence(std::string_view reason) {
  return "\n\nYour previous reply could not be used (" + std::string(reason) +
         "). Reply again with a single valid JSON value in exactly the requested format.";
}

TokenEstimate estimate_run_tokens(const TokenPlan& plan) {
  if (plan.instances <= 0 || plan.turns_per_call <= 0 || plan.avg_input_tokens <= 0 ||
      plan.avg_turn_tokens <= 0)
    throw PreconditionError("token plan inputs must be positive");
  const long long calls = (30 + plan.turns_per_call - 1) / plan.turns_per_call;
  return TokenEstimate{plan.instances * calls * plan.avg_input_tokens,
                       plan.instances * 30LL * plan.avg_turn_tokens};
}

}  // namespace convsim
