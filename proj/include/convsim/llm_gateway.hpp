#pragma once

// Uniform access to chat-completion backends: a remote HTTP service speaking the
// common chat-completion JSON protocol, and two deterministic local mocks.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "convsim/errors.hpp"

namespace convsim {

using json = nlohmann::ordered_json;

struct ChatParams {
  std::string model_id;
  std::optional<double> temperature;  // omitted from requests when unset
  std::optional<int> max_output_tokens;
  std::optional<std::uint64_t> seed;
};

struct ChatPrompt {
  std::string system;
  std::string user;
  ChatParams params;
};

/// 16 hex digits of FNV-1a/64 over every prompt field. Stable across runs and
/// platforms; scripted mocks key on it.
std::string prompt_hash(const ChatPrompt& prompt);

/// Number of whitespace-separated tokens. Used wherever a backend reports no
/// usage and for corpus statistics.
long count_whitespace_tokens(std::string_view text);

struct CompletionRecord {
  std::string prompt_hash;
  std::string reply_text;
  long input_tokens = 0;
  long output_tokens = 0;
  long latency_ms = 0;
  int attempt = 1;
};

json to_json(const CompletionRecord& record);

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{1000};
  std::chrono::milliseconds max_delay{30000};
};

enum class BackendKind { http_chat, scripted_mock, identity_mock };

std::string_view to_string(BackendKind kind);
BackendKind backend_kind_from_string(std::string_view name);

struct BackendDescriptor {
  BackendKind kind = BackendKind::identity_mock;
  std::string endpoint_url;     // http_chat
  std::string api_key_env_var;  // http_chat; the key itself is never stored
  std::string api_key_header = "Authorization";  // "Authorization" sends "Bearer <key>"
  std::filesystem::path script_path;  // scripted_mock
  std::string model_id;
  std::optional<double> temperature;
  std::optional<int> max_output_tokens;
  RetryPolicy retry;
};

/// Throws ConfigError when required fields for the kind are missing.
void validate(const BackendDescriptor& descriptor);

/// Reads {kind, endpoint_url, api_key_env_var, script_path, model,
/// temperature, max_output_tokens, max_attempts, base_delay_ms}. Relative
/// script paths resolve against base_dir.
BackendDescriptor backend_descriptor_from_json(const json& j,
                                               const std::filesystem::path& base_dir = {});

/// A chat backend. Implementations must be safe to call from several threads.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual CompletionRecord complete(const ChatPrompt& prompt) = 0;
  virtual std::string model_id() const { return {}; }
};

/// Echoes the user text.
class IdentityMockBackend final : public Backend {
 public:
  CompletionRecord complete(const ChatPrompt& prompt) override;
};

/// Replies from a fixed table. Entries are tried in order, first match wins;
/// a match is either an exact prompt hash or a set of substrings that must all
/// occur in the user text.
class ScriptedMockBackend final : public Backend {
 public:
  struct Entry {
    std::optional<std::string> prompt_hash;
    std::vector<std::string> user_substrings;
    std::string reply;
  };

  ScriptedMockBackend(std::vector<Entry> entries, std::optional<std::string> default_reply);

  /// Loads a script file: a JSON array of {match:{prompt_hash|user_substring},
  /// reply} objects with an optional trailing {default: text}.
  static std::shared_ptr<ScriptedMockBackend> from_file(const std::filesystem::path& path);
  static std::shared_ptr<ScriptedMockBackend> from_json(const json& script);

  CompletionRecord complete(const ChatPrompt& prompt) override;

 private:
  std::vector<Entry> entries_;
  std::optional<std::string> default_reply_;
};

/// Caps in-flight HTTP requests across every HttpChatBackend in the process.
class ConcurrencyLimiter {
 public:
  explicit ConcurrencyLimiter(int limit) : limit_(limit < 1 ? 1 : limit) {}
  void set_limit(int limit);
  void acquire();
  void release();
  int in_flight() const;

  class Slot {
   public:
    explicit Slot(ConcurrencyLimiter& owner) : owner_(owner) { owner_.acquire(); }
    ~Slot() { owner_.release(); }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    ConcurrencyLimiter& owner_;
  };

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  int limit_;
  int in_flight_ = 0;
};

ConcurrencyLimiter& http_limiter();
void set_http_max_concurrency(int limit);

/// POSTs {model, messages:[{role,content}], temperature?, max_tokens?, seed?}
/// and reads choices[0].message.content. Retries transport failures, 408, 429
/// and 5xx with exponential backoff; other statuses fail immediately.
class HttpChatBackend final : public Backend {
 public:
  explicit HttpChatBackend(BackendDescriptor descriptor);
  CompletionRecord complete(const ChatPrompt& prompt) override;
  std::string model_id() const override { return descriptor_.model_id; }

 private:
  BackendDescriptor descriptor_;
  std::string scheme_host_port_;
  std::string path_;
};

std::shared_ptr<Backend> make_backend(const BackendDescriptor& descriptor);

/// Returns the first balanced top-level JSON object or array that parses,
/// skipping prose and code fences around it.
std::optional<json> extract_first_json(std::string_view reply);

struct JsonRetryPolicy {
  int max_attempts = 3;
};

template <typename T>
struct JsonCompletion {
  T value;
  CompletionRecord record;
  int attempts = 1;
};

/// Appended to the user text when re-prompting after a rejected reply.
std::string corrective_sentence(std::string_view reason);

/// Issues the prompt, extracts the first JSON value and hands it to `parse`.
/// If no JSON is found or `parse` throws ReplyRejected, the prompt is re-issued
/// with a corrective sentence, up to policy.max_attempts times. Other
/// exceptions propagate untouched.
template <typename Parse>
auto complete_json(Backend& backend, const ChatPrompt& prompt, Parse&& parse,
                   JsonRetryPolicy policy = {})
    -> JsonCompletion<std::invoke_result_t<Parse&, const json&>> {
  using Value = std::invoke_result_t<Parse&, const json&>;
  ChatPrompt attempt_prompt = prompt;
  std::string last_reply;
  std::string last_reason = "no attempts made";
  const int attempts = policy.max_attempts < 1 ? 1 : policy.max_attempts;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    CompletionRecord record = backend.complete(attempt_prompt);
    last_reply = record.reply_text;
    auto parsed = extract_first_json(record.reply_text);
    if (!parsed) {
      last_reason = "reply contains no JSON value";
    } else {
      try {
        Value value = parse(*parsed);
        return JsonCompletion<Value>{std::move(value), std::move(record), attempt};
      } catch (const ReplyRejected& e) {
        last_reason = e.what();
      } catch (const nlohmann::json::exception& e) {
        last_reason = e.what();
      }
    }
    attempt_prompt.user = prompt.user + corrective_sentence(last_reason);
  }
  throw SchemaError("no valid JSON reply after " + std::to_string(attempts) +
                        " attempts: " + last_reason,
                    last_reply);
}

struct TokenPlan {
  long instances = 0;
  int turns_per_call = 1;
  long avg_input_tokens = 0;
  long avg_turn_tokens = 0;
};

struct TokenEstimate {
  long long input_total = 0;
  long long output_total = 0;
};

/// input = n * ceil(30/k) * t_in, output = n * 30 * t_out.
TokenEstimate estimate_run_tokens(const TokenPlan& plan);

}  // namespace convsim
