#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace convsim {

enum class BehaviorClass { inconsistent, uncollaborative };

enum class BehaviorKind : std::size_t {
  LogicalContradiction,
  FactualInaccuracy,
  Misunderstanding,
  RedundantInformation,
  Repetition,
  PersistentDisagreement,
  Interruption,
  OffTopic,
  UnderAnswering,
  UnclearIntent,
};

inline constexpr std::size_t kBehaviorCount = 10;

struct BehaviorInfo {
  BehaviorKind kind;
  std::string_view name;        // display name
  std::string_view key;         // JSON field stem, e.g. "off_topic"
  std::string_view definition;  // one sentence
  BehaviorClass behavior_class;
};

inline constexpr std::array<BehaviorInfo, kBehaviorCount> kBehaviors{{
    {BehaviorKind::LogicalContradiction, "Logical Contradictions", "logical_contradiction",
     "Utterances that contradict earlier statements by the same speaker or the speaker's "
     "information in the metadata.",
     BehaviorClass::inconsistent},
    {BehaviorKind::FactualInaccuracy, "Factual Inaccuracies", "factual_inaccuracy",
     "Utterances that contain factually incorrect statements.", BehaviorClass::inconsistent},
    {BehaviorKind::Misunderstanding, "Misunderstandings", "misunderstanding",
     "Utterances that reflect a misinterpretation of information provided by other participants "
     "earlier in the conversation history.",
     BehaviorClass::inconsistent},
    {BehaviorKind::RedundantInformation, "Redundant Information", "redundant_information",
     "Utterances that contain unnecessarily lengthy content and add little new informational "
     "value.",
     BehaviorClass::inconsistent},
    {BehaviorKind::Repetition, "Repetition", "repetition",
     "Utterances that unnecessarily repeat information stated earlier in the conversation.",
     BehaviorClass::inconsistent},
    {BehaviorKind::PersistentDisagreement, "Persistent Disagreement", "persistent_disagreement",
     "Utterances that repeatedly reject or contradict others' positions despite established "
     "consensus or clear supporting evidence.",
     BehaviorClass::uncollaborative},
    {BehaviorKind::Interruption, "Interruptions", "interruptions",
     "Utterances that disrupt the conversation by cutting off another participant.",
     BehaviorClass::uncollaborative},
    {BehaviorKind::OffTopic, "Off-topic Responses", "off_topic",
     "Utterances that deviate substantially from the current conversational topic.",
     BehaviorClass::uncollaborative},
    {BehaviorKind::UnderAnswering, "Under Answering", "under_answering",
     "Utterances that give evasive responses and fail to address preceding questions.",
     BehaviorClass::uncollaborative},
    {BehaviorKind::UnclearIntent, "Unclear Intent", "unclear_intent",
     "Utterances that are ambiguous or fail to clearly convey the speaker's intentions.",
     BehaviorClass::uncollaborative},
}};

constexpr const BehaviorInfo& info(BehaviorKind kind) {
  return kBehaviors[static_cast<std::size_t>(kind)];
}

constexpr std::size_t index_of(BehaviorKind kind) { return static_cast<std::size_t>(kind); }

/// Accepts the JSON key ("off_topic") or the display name ("Off-topic Responses").
std::optional<BehaviorKind> behavior_from_string(std::string_view text);

}  // namespace convsim
