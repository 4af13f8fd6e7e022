#pragma once

// Conversation ingestion and construction of continuation instances: a block of
// 30 history turns, the 30 human turns that followed, participant metadata and
// a summary of everything before the history.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "convsim/llm_gateway.hpp"

namespace convsim {

inline constexpr int kHistoryTurns = 30;
inline constexpr int kContinuationTurns = 30;
inline constexpr std::string_view kEmptyPrefixSummary = "The conversation has just begun.";

struct Turn {
  int turn_number = 0;
  std::string speaker;
  std::string content;

  friend bool operator==(const Turn&, const Turn&) = default;
};

json to_json(const Turn& turn);
Turn turn_from_json(const json& j);
json turns_to_json(const std::vector<Turn>& turns);

struct CommunicationStyle {
  std::string length;
  std::vector<std::string> style_types;
  std::vector<std::string> personality_traits;
  std::string details;

  friend bool operator==(const CommunicationStyle&, const CommunicationStyle&) = default;
};

struct HiddenInformation {
  CommunicationStyle communication_style;
  std::string hidden_agenda;
  std::string knowledge_before_conversation;
  std::string emotion_before_conversation;
  std::string posture;
  std::map<std::string, std::string> beliefs_about_others;  // participant id -> text

  friend bool operator==(const HiddenInformation&, const HiddenInformation&) = default;
};

struct ParticipantProfile {
  std::string id;
  std::string name;
  std::string role;
  std::string department;
  std::string reporting_to;
  std::string expertise_level;
  std::vector<std::string> expertise_areas;
  HiddenInformation hidden_information;

  friend bool operator==(const ParticipantProfile&, const ParticipantProfile&) = default;
};

struct ConversationMetadata {
  std::string task_goal;
  std::string task_category;
  std::string org_context;
  std::vector<ParticipantProfile> participants;

  bool has_participant(std::string_view id) const;
  std::vector<std::string> participant_ids() const;

  friend bool operator==(const ConversationMetadata&, const ConversationMetadata&) = default;
};

json to_json(const ConversationMetadata& metadata);
/// Lenient reader: only "participants[].id" is mandatory, other fields default
/// to blank. Throws ValidationError for a malformed layout.
ConversationMetadata metadata_from_json(const json& j);
/// Non-empty roster, distinct ids, belief keys naming other participants.
void validate(const ConversationMetadata& metadata);

enum class SourceDataset {
  QMSumProduct,
  QMSumAcademic,
  QMSumCommittee,
  NCPC,
  SIM,
  IQ2,
  Custom
};

std::string_view to_string(SourceDataset dataset);
SourceDataset source_dataset_from_string(std::string_view name);

struct ContinuationInstance {
  std::string instance_id;
  SourceDataset source_dataset = SourceDataset::Custom;
  ConversationMetadata metadata;
  std::string summary;
  std::vector<Turn> history;    // exactly 30
  std::vector<Turn> reference;  // exactly 30
  int first_generated_turn_number = 0;

  friend bool operator==(const ContinuationInstance&, const ContinuationInstance&) = default;
};

/// Throws ValidationError on any broken instance invariant.
void validate(const ContinuationInstance& instance);

json to_json(const ContinuationInstance& instance);
/// Unknown fields are ignored; the result is validated.
ContinuationInstance instance_from_json(const json& j);

void save_instance(const std::filesystem::path& path, const ContinuationInstance& instance);
ContinuationInstance load_instance(const std::filesystem::path& path);

struct SourceConversation {
  std::string conversation_id;
  std::vector<Turn> turns;
  json raw_metadata;  // free-form annotations, null when absent
  std::string source_dataset;  // optional dataset name from the file
  std::vector<std::string> warnings;  // e.g. empty utterances kept as-is

  std::vector<std::string> distinct_speakers() const;  // first-appearance order
};

enum class SourceFormat { canonical_json };

SourceConversation parse_source_conversation(const std::filesystem::path& path,
                                             SourceFormat format = SourceFormat::canonical_json);
SourceConversation parse_source_conversation_text(std::string_view text);

/// Rewrites each utterance through the backend, one call per non-empty turn.
/// Count, order, numbering and speakers are preserved.
SourceConversation clean_transcript(const SourceConversation& conv, Backend& backend);

/// Asks the backend for metadata in the participant-profile schema, then
/// reconciles the roster with the transcript: speakers the model left out get
/// blank profiles, invented participants are dropped.
ConversationMetadata extract_metadata(const SourceConversation& conv, Backend& backend,
                                      JsonRetryPolicy policy = {});

/// Summary of turns [0, end_index). No backend call for an empty prefix.
std::string summarize_prefix(const SourceConversation& conv, std::size_t end_index,
                             Backend& backend);

/// Uniform draw from [30, n - 30] (both ends inclusive), pure in (n, seed).
int select_start_point(std::size_t num_turns, std::uint64_t seed);
int select_start_point(const SourceConversation& conv, std::uint64_t seed);

struct InstanceIds {
  std::string instance_id;
  SourceDataset source_dataset = SourceDataset::Custom;
};

ContinuationInstance assemble_instance(const SourceConversation& conv, int start,
                                       ConversationMetadata metadata, std::string summary,
                                       const InstanceIds& ids);

/// Prompt texts used while building instances.
ChatPrompt render_cleanup_prompt(const Turn& turn);
ChatPrompt render_metadata_prompt(const SourceConversation& conv);
ChatPrompt render_summary_prompt(const SourceConversation& conv, std::size_t end_index);

}  // namespace convsim
