#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "convsim/corpus.hpp"
#include "convsim/io.hpp"
#include "convsim/llm_gateway.hpp"

namespace testing_support {

namespace fs = std::filesystem;

inline fs::path fixture_dir() { return fs::path(CONVSIM_FIXTURE_DIR); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("convsim_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

/// Backend driven by a callback; records every prompt it receives.
class FunctionBackend final : public convsim::Backend {
 public:
  using Fn = std::function<std::string(const convsim::ChatPrompt&, int call_index)>;
  explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}

  convsim::CompletionRecord complete(const convsim::ChatPrompt& prompt) override {
    int index = 0;
    {
      std::lock_guard lock(mutex_);
      index = static_cast<int>(prompts_.size());
      prompts_.push_back(prompt);
    }
    convsim::CompletionRecord r;
    r.prompt_hash = convsim::prompt_hash(prompt);
    r.reply_text = fn_(prompt, index);
    r.input_tokens = convsim::count_whitespace_tokens(prompt.user);
    r.output_tokens = convsim::count_whitespace_tokens(r.reply_text);
    return r;
  }

  std::vector<convsim::ChatPrompt> prompts() const {
    std::lock_guard lock(mutex_);
    return prompts_;
  }
  std::size_t calls() const {
    std::lock_guard lock(mutex_);
    return prompts_.size();
  }

 private:
  Fn fn_;
  mutable std::mutex mutex_;
  std::vector<convsim::ChatPrompt> prompts_;
};

inline const std::vector<std::string>& roster() {
  static const std::vector<std::string> ids{"Project Manager", "Industrial Designer",
                                            "User Interface", "Marketing"};
  return ids;
}

inline convsim::ConversationMetadata sample_metadata() {
  convsim::ConversationMetadata m;
  m.task_goal = "Agree on the conceptual design of a new remote control.";
  m.task_category = "design meeting";
  m.org_context = "Product team.";
  for (const auto& id : roster()) {
    convsim::ParticipantProfile p;
    p.id = id;
    p.name = id;
    p.role = id;
    m.participants.push_back(p);
  }
  return m;
}

inline std::vector<convsim::Turn> synthetic_turns(int first, int count, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<convsim::Turn> turns;
  for (int i = 0; i < count; ++i) {
    const auto& speaker = roster()[gen() % roster().size()];
    turns.push_back({first + i, speaker,
                     "utterance " + std::to_string(first + i) + " token" + std::to_string(gen() % 1000)});
  }
  return turns;
}

inline convsim::SourceConversation synthetic_conversation(int length, std::uint64_t seed) {
  convsim::SourceConversation c;
  c.conversation_id = "conv_" + std::to_string(length) + "_" + std::to_string(seed);
  c.turns = synthetic_turns(0, length, seed);
  return c;
}

/// Instance whose first generated turn is `first`.
inline convsim::ContinuationInstance synthetic_instance(int first, std::uint64_t seed = 1) {
  const auto block = synthetic_turns(first - 30, 60, seed);
  convsim::ContinuationInstance inst;
  inst.instance_id = "inst_" + std::to_string(first);
  inst.metadata = sample_metadata();
  inst.summary = "Summary before turn " + std::to_string(first - 30) + ".";
  inst.history.assign(block.begin(), block.begin() + 30);
  inst.reference.assign(block.begin() + 30, block.end());
  inst.first_generated_turn_number = first;
  return inst;
}

/// Reply that echoes the five turns before `first` and emits `count` turns.
inline std::string generation_reply(const std::vector<convsim::Turn>& echo,
                                    const std::vector<convsim::Turn>& generated) {
  convsim::json j{{"five_previous_turns", convsim::turns_to_json(echo)},
                  {"generated_turns", convsim::turns_to_json(generated)}};
  return "```json\n" + j.dump(2) + "\n```";
}

}  // namespace testing_support
