#pragma once

// LLM-as-judge: conversation-level scores and turn-level behavior detection.

#include <array>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "convsim/behaviors.hpp"
#include "convsim/corpus.hpp"
#include "convsim/llm_gateway.hpp"

namespace convsim {

struct OverallScores {
  int consistency = 0;
  int collaborativeness = 0;
  std::string consistency_explanation;
  std::string collaborativeness_explanation;

  friend bool operator==(const OverallScores&, const OverallScores&) = default;
};

struct BehaviorReport {
  std::array<int, kBehaviorCount> counts{};
  std::array<std::string, kBehaviorCount> explanations{};
  std::optional<std::array<std::set<int>, kBehaviorCount>> turn_indices;

  int count(BehaviorKind kind) const { return counts[index_of(kind)]; }

  friend bool operator==(const BehaviorReport&, const BehaviorReport&) = default;
};

json to_json(const OverallScores& scores);
OverallScores overall_scores_from_json(const json& j);
/// {behavior_key: {count, explanation, indices?}}
json to_json(const BehaviorReport& report);
BehaviorReport behavior_report_from_json(const json& j);

ChatPrompt render_overall_prompt(const ContinuationInstance& instance,
                                 const std::vector<Turn>& continuation);
ChatPrompt render_fine_grained_prompt(const ContinuationInstance& instance,
                                      const std::vector<Turn>& continuation, bool want_indices);

/// Reply validators. Throw ReplyRejected on any violation so complete_json
/// re-prompts.
OverallScores parse_overall_reply(const json& reply);
BehaviorReport parse_fine_grained_reply(const json& reply, int first_turn, int num_turns,
                                        bool want_indices);

OverallScores judge_overall(const ContinuationInstance& instance,
                            const std::vector<Turn>& continuation, Backend& backend,
                            JsonRetryPolicy policy = {});
BehaviorReport judge_fine_grained(const ContinuationInstance& instance,
                                  const std::vector<Turn>& continuation, Backend& backend,
                                  bool want_indices, JsonRetryPolicy policy = {});

enum class JudgeMode { overall, fine_grained };

/// Judges the human reference continuation of the instance.
std::variant<OverallScores, BehaviorReport> judge_reference(const ContinuationInstance& instance,
                                                            Backend& backend, JudgeMode mode,
                                                            bool want_indices = false,
                                                            JsonRetryPolicy policy = {});

inline constexpr std::string_view kReferenceSubject = "reference";
std::string simulation_subject(std::string_view config_label);

/// One judged block: file format
/// {instance_id, subject, turn_range:[first,last], overall?, fine_grained?}.
struct Judgment {
  std::string instance_id;
  std::string subject;  // "reference" or "simulation:<config-label>"
  int first_turn = 0;
  int last_turn = 0;
  std::optional<OverallScores> overall;
  std::optional<BehaviorReport> fine_grained;
};

json to_json(const Judgment& judgment);
Judgment judgment_from_json(const json& j);

}  // namespace convsim
