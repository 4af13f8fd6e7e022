#pragma once

// Generates 30-turn continuations for an instance, k turns per backend call.

#include <cstdint>
#include <string>
#include <vector>

#include "convsim/corpus.hpp"
#include "convsim/llm_gateway.hpp"

namespace convsim {

enum class PromptingMode { vanilla, taxonomy_guided };

std::string_view to_string(PromptingMode mode);
PromptingMode prompting_mode_from_string(std::string_view name);

inline constexpr int kEchoTurns = 5;

struct SimulationConfig {
  std::string model;  // label of the backend in the run configuration
  PromptingMode prompting_mode = PromptingMode::vanilla;
  int turns_per_call = 30;
  int history_window = 30;
  std::uint64_t rng_seed = 0;
  bool repair_speakers = false;
  JsonRetryPolicy json_retry;

  /// "<model>.<mode>.k<k>"; used in subjects and file names.
  std::string label() const;
};

/// 1 <= k <= 30 and history_window >= 5.
void validate(const SimulationConfig& config);

json to_json(const SimulationConfig& config);
SimulationConfig simulation_config_from_json(const json& j);

struct CallRecord {
  int call_index = 0;
  std::string prompt_hash;
  std::string reply_text;
  int first_turn = 0;  // parsed_turn_range, inclusive
  int last_turn = 0;
  int attempts = 1;
  long input_tokens = 0;
  long output_tokens = 0;
};

struct GeneratedContinuation {
  std::string instance_id;
  std::vector<Turn> turns;
  std::vector<CallRecord> calls;
  std::vector<std::string> warnings;  // echo-block content drift, speaker repairs
  SimulationConfig config;
};

json to_json(const GeneratedContinuation& continuation);
GeneratedContinuation continuation_from_json(const json& j);

/// Carries the turns produced before the failure.
class SimulationError : public Error {
 public:
  SimulationError(const std::string& what, std::vector<Turn> partial)
      : Error(what), partial_(std::move(partial)) {}
  const std::vector<Turn>& partial_turns() const noexcept { return partial_; }

 private:
  std::vector<Turn> partial_;
};

/// System text: the generation instructions (plus the behavior taxonomy block
/// in taxonomy-guided mode). User text: requested turn range, metadata,
/// summary and the last `history_window` turns of history + generated.
ChatPrompt render_generation_prompt(const ContinuationInstance& instance,
                                    const std::vector<Turn>& generated_so_far,
                                    const SimulationConfig& config);

struct GenerationParse {
  std::vector<Turn> turns;
  std::vector<std::string> warnings;
};

/// Validates a {five_previous_turns, generated_turns} reply. Structure and
/// numbering problems throw StructureError; a speaker outside the roster throws
/// SpeakerError unless `repair_speakers` maps it onto the roster.
GenerationParse parse_generation_reply(const json& reply, int expected_first, int expected_count,
                                       const std::vector<Turn>& echo_expected,
                                       const ConversationMetadata& metadata,
                                       bool repair_speakers);

/// Same, starting from raw reply text.
GenerationParse parse_generation_response(std::string_view reply, int expected_first,
                                          int expected_count,
                                          const std::vector<Turn>& echo_expected,
                                          const ConversationMetadata& metadata,
                                          bool repair_speakers);

/// Roster id matching `speaker` case-insensitively, exact match first, then
/// prefix in either direction. Empty when nothing matches.
std::string nearest_roster_id(std::string_view speaker, const ConversationMetadata& metadata);

/// ceil(30 / k) calls; the last call may request fewer than k turns.
std::vector<int> call_sizes(int turns_per_call);

GeneratedContinuation simulate_continuation(const ContinuationInstance& instance,
                                            const SimulationConfig& config, Backend& backend);

}  // namespace convsim
