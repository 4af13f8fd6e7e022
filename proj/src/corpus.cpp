#include "convsim/corpus.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <set>

#include "convsim/io.hpp"

namespace convsim {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\f\v");
  return std::string(s.substr(first, last - first + 1));
}

std::string str_field(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  const auto& v = j.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number() || v.is_boolean()) return v.dump();
  throw ValidationError(std::string("field '") + key + "' must be a string");
}

std::vector<std::string> str_list(const json& j, const char* key) {
  std::vector<std::string> out;
  if (!j.contains(key) || j.at(key).is_null()) return out;
  const auto& v = j.at(key);
  if (v.is_string()) {
    out.push_back(v.get<std::string>());
    return out;
  }
  if (!v.is_array()) throw ValidationError(std::string("field '") + key + "' must be a list");
  for (const auto& item : v) {
    if (!item.is_string()) throw ValidationError(std::string("field '") + key + "' must hold strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

const json& object_or_empty(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key) || j.at(key).is_null()) return empty;
  if (!j.at(key).is_object()) throw ValidationError(std::string("field '") + key + "' must be an object");
  return j.at(key);
}

json participant_to_json(const ParticipantProfile& p) {
  const auto& h = p.hidden_information;
  json beliefs = json::object();
  for (const auto& [id, text] : h.beliefs_about_others) beliefs[id] = text;
  return json{
      {"id", p.id},
      {"name", p.name},
      {"role", p.role},
      {"department", p.department},
      {"reporting_to", p.reporting_to},
      {"expertise_level", p.expertise_level},
      {"expertise_areas", p.expertise_areas},
      {"hidden_information",
       json{{"communication_style",
             json{{"length", h.communication_style.length},
                  {"style_types", h.communication_style.style_types},
                  {"personality_traits", h.communication_style.personality_traits},
                  {"details", h.communication_style.details}}},
            {"hidden_agenda", h.hidden_agenda},
            {"knowledge_before_conversation", h.knowledge_before_conversation},
            {"emotion_before_conversation", h.emotion_before_conversation},
            {"posture", h.posture},
            {"beliefs_about_others", beliefs}}}};
}

ParticipantProfile participant_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("participant must be an object");
  ParticipantProfile p;
  p.id = trim(str_field(j, "id"));
  if (p.id.empty()) throw ValidationError("participant is missing 'id'");
  p.name = str_field(j, "name");
  p.role = str_field(j, "role");
  p.department = str_field(j, "department");
  p.reporting_to = str_field(j, "reporting_to");
  p.expertise_level = str_field(j, "expertise_level");
  p.expertise_areas = str_list(j, "expertise_areas");
  const json& hidden = object_or_empty(j, "hidden_information");
  const json& style = object_or_empty(hidden, "communication_style");
  auto& h = p.hidden_information;
  h.communication_style.length = str_field(style, "length");
  h.communication_style.style_types = str_list(style, "style_types");
  h.communication_style.personality_traits = str_list(style, "personality_traits");
  h.communication_style.details = str_field(style, "details");
  h.hidden_agenda = str_field(hidden, "hidden_agenda");
  h.knowledge_before_conversation = str_field(hidden, "knowledge_before_conversation");
  h.emotion_before_conversation = str_field(hidden, "emotion_before_conversation");
  h.posture = str_field(hidden, "posture");
  for (const auto& [id, text] : object_or_empty(hidden, "beliefs_about_others").items())
    h.beliefs_about_others[id] = text.is_string() ? text.get<std::string>() : text.dump();
  return p;
}

std::vector<Turn> turns_from_json(const json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + " must be a list of turns");
  std::vector<Turn> out;
  out.reserve(j.size());
  for (const auto& t : j) out.push_back(turn_from_json(t));
  return out;
}

}  // namespace

// --- turns -----------------------------------------------------------------

json to_json(const Turn& turn) {
  return json{{"turn_number", turn.turn_number}, {"speaker", turn.speaker}, {"content", turn.content}};
}

Turn turn_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("turn must be an object");
  if (!j.contains("turn_number") || !j.at("turn_number").is_number_integer())
    throw ValidationError("turn is missing an integer 'turn_number'");
  if (!j.contains("speaker") || !j.at("speaker").is_string())
    throw ValidationError("turn is missing 'speaker'");
  Turn t;
  t.turn_number = j.at("turn_number").get<int>();
  t.speaker = j.at("speaker").get<std::string>();
  const auto& content = j.contains("content") ? j.at("content") : json();
  if (!content.is_null() && !content.is_string())
    throw ValidationError("turn 'content' must be a string");
  t.content = content.is_string() ? content.get<std::string>() : std::string{};
  return t;
}

json turns_to_json(const std::vector<Turn>& turns) {
  json arr = json::array();
  for (const auto& t : turns) arr.push_back(to_json(t));
  return arr;
}

// --- metadata --------------------------------------------------------------

bool ConversationMetadata::has_participant(std::string_view id) const {
  return std::any_of(participants.begin(), participants.end(),
                     [&](const ParticipantProfile& p) { return p.id == id; });
}

std::vector<std::string> ConversationMetadata::participant_ids() const {
  std::vector<std::string> ids;
  ids.reserve(participants.size());
  for (const auto& p : participants) ids.push_back(p.id);
  return ids;
}

json to_json(const ConversationMetadata& m) {
  json participants = json::array();
  for (const auto& p : m.participants) participants.push_back(participant_to_json(p));
  return json{{"task_goal", m.task_goal},
              {"task_category", m.task_category},
              {"org_context", m.org_context},
              {"participants", participants}};
}

ConversationMetadata metadata_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("metadata must be an object");
  ConversationMetadata m;
  m.task_goal = str_field(j, "task_goal");
  m.task_category = str_field(j, "task_category");
  m.org_context = str_field(j, "org_context");
  if (!j.contains("participants") || !j.at("participants").is_array())
    throw ValidationError("metadata is missing the 'participants' list");
  for (const auto& p : j.at("participants")) m.participants.push_back(participant_from_json(p));
  return m;
}

void validate(const ConversationMetadata& m) {
  if (m.participants.empty()) throw ValidationError("metadata has no participants");
  std::set<std::string> ids;
  for (const auto& p : m.participants) {
    if (p.id.empty()) throw ValidationError("participant with empty id");
    if (!ids.insert(p.id).second) throw ValidationError("duplicate participant id '" + p.id + "'");
  }
  for (const auto& p : m.participants) {
    for (const auto& [other, text] : p.hidden_information.beliefs_about_others) {
      if (other == p.id || !ids.count(other))
        throw ValidationError("participant '" + p.id + "' holds beliefs about unknown id '" +
                              other + "'");
    }
  }
}

// --- datasets --------------------------------------------------------------

std::string_view to_string(SourceDataset d) {
  switch (d) {
    case SourceDataset::QMSumProduct: return "QMSumProduct";
    case SourceDataset::QMSumAcademic: return "QMSumAcademic";
    case SourceDataset::QMSumCommittee: return "QMSumCommittee";
    case SourceDataset::NCPC: return "NCPC";
    case SourceDataset::SIM: return "SIM";
    case SourceDataset::IQ2: return "IQ2";
    case SourceDataset::Custom: return "Custom";
  }
  return "Custom";
}

SourceDataset source_dataset_from_string(std::string_view name) {
  for (auto d : {SourceDataset::QMSumProduct, SourceDataset::QMSumAcademic,
                 SourceDataset::QMSumCommittee, SourceDataset::NCPC, SourceDataset::SIM,
                 SourceDataset::IQ2, SourceDataset::Custom}) {
    if (to_string(d) == name) return d;
  }
  throw ValidationError("unknown source dataset '" + std::string(name) + "'");
}

// --- instances -------------------------------------------------------------

void validate(const ContinuationInstance& inst) {
  if (inst.instance_id.empty()) throw ValidationError("instance_id is empty");
  validate(inst.metadata);
  if (inst.history.size() != static_cast<std::size_t>(kHistoryTurns))
    throw ValidationError("history must hold exactly 30 turns, found " +
                          std::to_string(inst.history.size()));
  if (inst.reference.size() != static_cast<std::size_t>(kContinuationTurns))
    throw ValidationError("reference must hold exactly 30 turns, found " +
                          std::to_string(inst.reference.size()));
  const Turn* prev = nullptr;
  auto check = [&](const Turn& t) {
    if (t.speaker.empty()) throw ValidationError("turn " + std::to_string(t.turn_number) + " has no speaker");
    if (prev && t.turn_number != prev->turn_number + 1)
      throw ValidationError("turn numbers must increase by 1 (" +
                            std::to_string(prev->turn_number) + " -> " +
                            std::to_string(t.turn_number) + ")");
    if (!inst.metadata.has_participant(t.speaker))
      throw ValidationError("speaker '" + t.speaker + "' of turn " + std::to_string(t.turn_number) +
                            " is not a participant");
    prev = &t;
  };
  for (const auto& t : inst.history) check(t);
  for (const auto& t : inst.reference) check(t);
  if (inst.first_generated_turn_number != inst.reference.front().turn_number)
    throw ValidationError("first_generated_turn_number must equal the first reference turn");
}

json to_json(const ContinuationInstance& inst) {
  return json{{"instance_id", inst.instance_id},
              {"source_dataset", to_string(inst.source_dataset)},
              {"metadata", to_json(inst.metadata)},
              {"summary", inst.summary},
              {"history", turns_to_json(inst.history)},
              {"reference", turns_to_json(inst.reference)},
              {"first_generated_turn_number", inst.first_generated_turn_number}};
}

ContinuationInstance instance_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("instance must be a JSON object");
  for (const char* key : {"instance_id", "source_dataset", "metadata", "summary", "history",
                          "reference", "first_generated_turn_number"}) {
    if (!j.contains(key)) throw ValidationError(std::string("instance is missing '") + key + "'");
  }
  ContinuationInstance inst;
  try {
    inst.instance_id = j.at("instance_id").get<std::string>();
    inst.source_dataset = source_dataset_from_string(j.at("source_dataset").get<std::string>());
    inst.summary = j.at("summary").get<std::string>();
    inst.first_generated_turn_number = j.at("first_generated_turn_number").get<int>();
  } catch (const nlohmann::json::type_error& e) {
    throw ValidationError(std::string("instance field has the wrong type: ") + e.what());
  }
  inst.metadata = metadata_from_json(j.at("metadata"));
  inst.history = turns_from_json(j.at("history"), "history");
  inst.reference = turns_from_json(j.at("reference"), "reference");
  validate(inst);
  return inst;
}

void save_instance(const std::filesystem::path& path, const ContinuationInstance& instance) {
  validate(instance);
  io::write_text_atomic(path, io::dump(to_json(instance)));
}

ContinuationInstance load_instance(const std::filesystem::path& path) {
  return instance_from_json(io::read_json(path));
}

// --- source conversations --------------------------------------------------

std::vector<std::string> SourceConversation::distinct_speakers() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& t : turns) {
    if (seen.insert(t.speaker).second) out.push_back(t.speaker);
  }
  return out;
}

SourceConversation parse_source_conversation_text(std::string_view text) {
  const json j = io::parse_json(text, "source conversation");
  if (!j.is_object()) throw ParseError("source conversation must be a JSON object", 0);
  if (!j.contains("turns") || !j.at("turns").is_array())
    throw ValidationError("source conversation is missing the 'turns' list");

  SourceConversation conv;
  conv.conversation_id = j.contains("conversation_id") && j.at("conversation_id").is_string()
                             ? j.at("conversation_id").get<std::string>()
                             : std::string{};
  if (conv.conversation_id.empty()) throw ValidationError("source conversation has no conversation_id");
  if (j.contains("raw_metadata")) conv.raw_metadata = j.at("raw_metadata");
  if (j.contains("source_dataset") && j.at("source_dataset").is_string())
    conv.source_dataset = j.at("source_dataset").get<std::string>();

  for (const auto& tj : j.at("turns")) {
    Turn t = turn_from_json(tj);
    t.speaker = trim(t.speaker);
    if (t.speaker.empty())
      throw ValidationError("turn " + std::to_string(t.turn_number) + " has an empty speaker");
    conv.turns.push_back(std::move(t));
  }
  std::stable_sort(conv.turns.begin(), conv.turns.end(),
                   [](const Turn& a, const Turn& b) { return a.turn_number < b.turn_number; });
  for (std::size_t i = 0; i < conv.turns.size(); ++i) {
    if (conv.turns[i].turn_number != static_cast<int>(i))
      throw ValidationError("turn numbers must be contiguous from 0; expected " +
                            std::to_string(i) + ", found " +
                            std::to_string(conv.turns[i].turn_number));
    if (conv.turns[i].content.empty())
      conv.warnings.push_back("turn " + std::to_string(i) + " has an empty utterance");
  }
  return conv;
}

SourceConversation parse_source_conversation(const std::filesystem::path& path, SourceFormat format) {
  if (format != SourceFormat::canonical_json) throw ConfigError("unsupported source format");
  const std::string text = io::read_text(path);
  try {
    return parse_source_conversation_text(text);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte_offset());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// --- LLM-assisted construction ---------------------------------------------

ChatPrompt render_cleanup_prompt(const Turn& turn) {
  ChatPrompt p;
  p.system =
      "You clean up utterances from spoken meeting transcripts. Remove disfluencies such as "
      "fillers, false starts, stutters, and unnecessary repetitions while preserving the "
      "remaining content, wording, and meaning. Do not add information. Reply with the cleaned "
      "utterance only, without quotes or commentary.";
  p.user = turn.content;
  return p;
}

SourceConversation clean_transcript(const SourceConversation& conv, Backend& backend) {
  SourceConversation out = conv;
  for (std::size_t i = 0; i < out.turns.size(); ++i) {
    Turn& t = out.turns[i];
    if (t.content.empty()) continue;
    try {
      t.content = backend.complete(render_cleanup_prompt(t)).reply_text;
    } catch (const BackendError& e) {
      throw BackendError("cleanup failed at turn " + std::to_string(i) + ": " + e.what(),
                         e.status(), i);
    } catch (const Error& e) {
      throw BackendError("cleanup failed at turn " + std::to_string(i) + ": " + e.what(), 0, i);
    }
  }
  return out;
}

namespace {

// Participant-profile schema requested from the model.
constexpr std::string_view kMetadataSchema = R"(```JSON
{
    "task_goal": "Clear description of what needs to be accomplished in the conversation, expressed in a few concise sentences.",
    "task_category": "e.g., project_planning, problem_solving, decision_making",
    "org_context": "Brief description of the organization and situation",
    "participants": [
        {
            "id": "Speaker identifier shown in the metadata",
            "name": "Full name of the participant. If not mentioned, you can provide first name, last name, nickname, alias, or any other relevant identifier. If none of these are available, leave blank.",
            "role": "Job Title, if available. If not available, leave blank.",
            "department": "Department Name, if available. If not available, leave blank.",
            "reporting_to": "id of the participant's manager or supervisor, if available. If not available, leave blank.",
            "expertise_level": "senior, expert, junior, intern, etc.",
            "expertise_areas": [
                "Area of expertise relevant to the conversation (e.g., software development, marketing, finance).", "Another area of expertise."
            ],
            "hidden_information": {
                "communication_style": {
                    "length": "Participant's preferred length of communication (e.g., concise, detailed). Include specific word numbers (e.g., typically 5-10 words).",
                    "style_types": [
                        "formal", "informal", "assertive", "passive", "concise", "elaborative", "technical", "layman"
                    ],
                    "personality_traits": [
                        "A personality trait that may influence the participant's behavior in the conversation (e.g., assertive, passive, analytical, empathetic).", "Another personality trait."
                    ],
                    "details": "A detailed description of the participant's communication style, including tone, vocabulary, sentence structure, and typical phrasing. Note any recurring patterns, preferred ways of expressing agreement or disagreement, use of technical or layman terms, and any unique habits (e.g., frequent use of questions, metaphors, or specific jargon). This should help someone accurately mimic how this participant communicates in conversation."
                },
                "hidden_agenda": "Participant's initial goals or concerns.",
                "knowledge_before_conversation": "Participant's knowledge about the topic before the conversation starts. You should infer this based on the conversation, but do not include any information that is acquired during the conversation.",
                "emotion_before_conversation": "Participant's emotions before the conversation starts (e.g., anxious, excited, neutral).",
                "posture": "Participant's initial posture toward the conversation (e.g., relaxed, tense, open, closed).",
                "beliefs_about_others": {
                    "participant_1": "Participant's beliefs, feelings, and perceptions about Participant 1 before the conversation, including expectations regarding Participant 1's goals, knowledge, and role in the conversation.",
                    "participant_2": "Participant's beliefs, feelings, and perceptions about Participant 2 before the conversation, including expectations regarding Participant 2's goals, knowledge, and role in the conversation."
                }
            }
        },
        {
            ... # Repeat the structure for each participant in the conversation
        }
    ]
}
```)";

}  // namespace

ChatPrompt render_metadata_prompt(const SourceConversation& conv) {
  ChatPrompt p;
  p.system =
      "We provide a conversation involving multiple participants. Extract conversation-level "
      "metadata describing the goals of the conversation and each participant. Use the speaker "
      "identifiers exactly as they appear in the conversation as participant ids, include every "
      "speaker, and use participant ids as the keys of \"beliefs_about_others\".\n\n"
      "Output the metadata in the following JSON format.\n\n" +
      std::string(kMetadataSchema);
  std::string speakers;
  for (const auto& s : conv.distinct_speakers()) speakers += (speakers.empty() ? "" : ", ") + s;
  p.user = "Participants (speaker identifiers): " + speakers + "\n\n## Conversation\n\n" +
           turns_to_json(conv.turns).dump(4);
  return p;
}

ConversationMetadata extract_metadata(const SourceConversation& conv, Backend& backend,
                                      JsonRetryPolicy policy) {
  if (conv.turns.empty()) throw PreconditionError("cannot extract metadata from an empty conversation");
  const auto speakers = conv.distinct_speakers();

  auto parse = [&](const json& reply) {
    if (!reply.is_object()) throw ReplyRejected("metadata reply must be a JSON object");
    for (const char* key : {"task_goal", "task_category", "org_context", "participants"}) {
      if (!reply.contains(key)) throw ReplyRejected(std::string("metadata reply is missing '") + key + "'");
    }
    ConversationMetadata m;
    try {
      m = metadata_from_json(reply);
    } catch (const ValidationError& e) {
      throw ReplyRejected(e.what());
    }
    std::set<std::string> ids;
    for (const auto& p : m.participants) {
      if (!ids.insert(p.id).second) throw ReplyRejected("duplicate participant id '" + p.id + "'");
    }
    return m;
  };
  ConversationMetadata m = complete_json(backend, render_metadata_prompt(conv), parse, policy).value;

  // Reconcile the roster with the transcript speakers.
  const std::set<std::string> speaker_set(speakers.begin(), speakers.end());
  std::erase_if(m.participants,
                [&](const ParticipantProfile& p) { return !speaker_set.count(p.id); });
  for (const auto& s : speakers) {
    if (!m.has_participant(s)) {
      ParticipantProfile blank;
      blank.id = s;
      m.participants.push_back(std::move(blank));
    }
  }
  for (auto& p : m.participants) {
    std::erase_if(p.hidden_information.beliefs_about_others, [&](const auto& kv) {
      return kv.first == p.id || !speaker_set.count(kv.first);
    });
  }
  validate(m);
  return m;
}

ChatPrompt render_summary_prompt(const SourceConversation& conv, std::size_t end_index) {
  ChatPrompt p;
  p.system =
      "We provide the beginning of a conversation involving multiple participants. Write a "
      "paragraph-length summary of this part of the conversation. Cover the topics discussed, "
      "positions taken by each participant, decisions reached, and open issues. Reply with the "
      "summary text only.";
  const std::vector<Turn> prefix(conv.turns.begin(),
                                 conv.turns.begin() + static_cast<std::ptrdiff_t>(end_index));
  p.user = "## Conversation\n\n" + turns_to_json(prefix).dump(4);
  return p;
}

std::string summarize_prefix(const SourceConversation& conv, std::size_t end_index, Backend& backend) {
  if (end_index > conv.turns.size())
    throw PreconditionError("summary end index " + std::to_string(end_index) + " exceeds " +
                            std::to_string(conv.turns.size()) + " turns");
  if (end_index == 0) return std::string(kEmptyPrefixSummary);
  return trim(backend.complete(render_summary_prompt(conv, end_index)).reply_text);
}

// --- splitting -------------------------------------------------------------

int select_start_point(std::size_t num_turns, std::uint64_t seed) {
  if (num_turns < static_cast<std::size_t>(kHistoryTurns + kContinuationTurns))
    throw TooShortError("conversation has " + std::to_string(num_turns) +
                        " turns; at least 60 are required");
  const std::uint64_t lo = kHistoryTurns;
  const std::uint64_t span = num_turns - kContinuationTurns - lo + 1;
  // Rejection sampling keeps the draw uniform and identical on every standard
  // library (uniform_int_distribution is implementation-defined).
  std::mt19937_64 gen(seed);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t draw = gen();
  while (draw >= limit) draw = gen();
  return static_cast<int>(lo + draw % span);
}

int select_start_point(const SourceConversation& conv, std::uint64_t seed) {
  return select_start_point(conv.turns.size(), seed);
}

ContinuationInstance assemble_instance(const SourceConversation& conv, int start,
                                       ConversationMetadata metadata, std::string summary,
                                       const InstanceIds& ids) {
  const int n = static_cast<int>(conv.turns.size());
  if (start < kHistoryTurns || start + kContinuationTurns > n)
    throw PreconditionError("start point " + std::to_string(start) + " is illegal for " +
                            std::to_string(n) + " turns");
  ContinuationInstance inst;
  inst.instance_id = ids.instance_id.empty() ? conv.conversation_id : ids.instance_id;
  inst.source_dataset = ids.source_dataset;
  inst.metadata = std::move(metadata);
  inst.summary = std::move(summary);
  const auto begin = conv.turns.begin();
  inst.history.assign(begin + (start - kHistoryTurns), begin + start);
  inst.reference.assign(begin + start, begin + start + kContinuationTurns);
  inst.first_generated_turn_number = conv.turns[static_cast<std::size_t>(start)].turn_number;
  validate(inst);
  return inst;
}

}  // namespace convsim
