#include "convsim/judge.hpp"

#include <cmath>

#include "prompt_texts.hpp"

namespace convsim {

namespace {

constexpr std::string_view kOverallSystem =
    R"(Your task is to evaluate the consistency and collaborativeness of Generated Turns, a simulated multi-party conversation generated by LLMs. We provide a history ("Conversation History") of the conversation, which is provided to a response generation model as a context, and the continued turns generated by the model.

If you do not assign a score of 10, your explanation must clearly specify the reasons why the generated turns did not merit a perfect score with specific examples from the conversation history and the generated turns.

## Evaluation Criteria

**Consistency**

Consistency ("consistency") refers to whether the generated turns are internally consistent and whether they align logically with the provided metadata and the overall conversation history. The evaluation should assess whether the generated turns preserve logical flow and relevance to the preceding conversation. Responses should not be penalized for length or phrasing if they remain logically coherent. Provide a detailed analysis of the logical relationships both among the generated turns themselves and between those turns and the prior conversation context, including any implicit premises, dependencies, or inferences that should be maintained.

* 1-3: The response shows severe logical failure. It contradicts prior turns, metadata, or other generated turns, introduces irrelevant or factually incompatible content, or ignores critical contextual information. Logical relations are missing both within the generated turns and between them and the conversation history or metadata, resulting in incoherence.
* 3-5: The response partially addresses the topic but breaks logical continuity. It may misinterpret earlier turns, skip essential reasoning steps, or respond inappropriately to the dialogue act (for example, answering a statement or ignoring a question). Dependencies across generated turns or with metadata and history are broken, causing inconsistencies or reasoning gaps.
* 5-6: The response maintains basic logical order but lacks depth or precision. It stays on topic and avoids direct contradictions, yet misses one or more implicit premises, simplifies or overlooks causal or temporal logic, or exhibits weak internal coherence among generated turns. The reasoning chain is incomplete or loosely connected to metadata or prior context.
* 7: The response correctly follows the main explicit premises and maintains logical validity but fails to incorporate secondary dependencies such as implied goals, indirect constraints, or assumptions. Minor internal inconsistencies may occur between generated turns or with metadata, resulting in an incomplete logical representation of the conversation context.
* 8: The response handles both explicit and most implicit premises accurately. It preserves internal consistency among generated turns and aligns logically with conversation history and metadata. Minor lapses, such as omission of subtle contextual cues, partial causal links, or unaddressed edge conditions, slightly weaken the overall logical precision.
* 9: The response demonstrates precise logical continuity. It fully integrates both explicit and implicit reasoning steps, resolves all dependencies (e.g., causal, temporal, conditional), and reflects accurate understanding of participant intentions. Only minor redundancy or over-specification may prevent it from scoring a 10.
* 10: The response achieves complete logical alignment. It is internally consistent across all generated turns and fully coherent with the conversation history and metadata. All explicit and implicit premises, dependencies, and reasoning chains are correctly maintained, producing a contextually optimal and logically flawless continuation.

**Collaborativeness**

Collaborativeness ("collaborativeness") refers to how well the generated turns demonstrate cooperative engagement among participants. The evaluation should assess whether participants build on each other's contributions, maintain logical and factual agreement, and work together toward shared objectives without introducing unwarranted disagreement or contradiction.

* 1-3: The response exhibits active conflict or contradiction among participants. Turns directly oppose or undermine each other's statements or goals without justification, introduce irrelevant disagreement, or disrupt cooperative progress. The conversation shows no sense of shared purpose.
* 3-5: The response shows limited awareness of collaboration. Participants occasionally acknowledge each other but frequently introduce inconsistencies, dismiss prior reasoning, or pursue divergent directions. Cooperative alignment is weak or fragmented, resulting in partial or stalled progress.
* 5-6: The response maintains surface-level agreement and avoids overt conflict, but collaboration is minimal. Participants operate largely in parallel, with limited evidence of building upon one another's ideas or reasoning. Cooperative structure exists but lacks meaningful integration.
* 7: The response shows general cooperative behavior and maintains logical alignment among participants. However, it may overlook opportunities for deeper coordination, refinement, or joint reasoning. Minor inconsistencies or weak support across turns slightly reduce overall coherence.
* 8: The response reflects strong collaboration. Participants acknowledge and extend each other's ideas, resolve minor inconsistencies effectively, and maintain coherent progress toward shared goals. Small gaps in coordination or limited integration of reasoning may remain.
* 9: The response demonstrates effective and sustained collaboration. All participants engage constructively, align on shared reasoning, and build cohesively on prior turns. Dependencies and agreements are fully maintained, with only negligible inefficiencies in cooperative structure.
* 10: The response achieves complete collaborative alignment. All participants consistently support and extend one another's reasoning, maintain full logical and factual agreement, and jointly advance toward shared objectives with no contradictions or missed opportunities for cooperation.

## Output Format

Output the results in the following JSON format. Each score must be an integer from 1 to 10.

```json
{
    "consistency_explanation": "Explanation of the consistency score.",
    "consistency": an integer from 1 to 10,
    "collaborativeness_explanation": "Explanation of the collaborativeness score.",
    "collaborativeness": an integer from 1 to 10
}
```)";

constexpr std::string_view kFineGrainedIntro =
    R"(Your task is to evaluate the consistency and cooperativeness of Generated Turns, a simulated multi-party conversation generated by LLMs. We provide a history ("Conversation History") of the conversation, which is provided to a response generation model as a context, and the continued turns generated by the model.
You will count the number of utterances in the Generated Turns that include the specified inconsistent or uncollaborative behavior.

### Inconsistent Behaviors to Look For

)";

constexpr std::string_view kFineGrainedOutputIntro =
    R"(## Output Format

Output the results in the following JSON format. For each type of inconsistent or uncollaborative behavior, provide a brief explanation on which utterances were counted, along with the total count of such utterances in the Generated Turns. Then, in the following item, provide the number of utterances that exhibited that behavior. Each count should be in a range of 0 to N, where N is the total number of utterances in the Generated Turns.)";

constexpr std::string_view kIndicesInstruction =
    "For each behavior, also list the turn numbers of the counted utterances in the "
    "corresponding \"_turns\" item. Each listed turn number must belong to the Generated Turns, "
    "must appear at most once, and the length of the list must equal the count.";

// Output order and wording of the count schema.
struct SchemaField {
  BehaviorKind kind;
  std::string_view noun;    // "Explanation of the <noun> found."
  std::string_view plural;  // "number of utterances with <plural>"
};

constexpr std::array<SchemaField, kBehaviorCount> kSchemaOrder{{
    {BehaviorKind::LogicalContradiction, "logical contradiction", "logical contradictions"},
    {BehaviorKind::Misunderstanding, "misunderstanding", "misunderstandings"},
    {BehaviorKind::FactualInaccuracy, "factual inaccuracy", "factual inaccuracies"},
    {BehaviorKind::Repetition, "repetition", "repetitions"},
    {BehaviorKind::RedundantInformation, "redundant information", "redundant information"},
    {BehaviorKind::UnderAnswering, "under-answering", "under-answering"},
    {BehaviorKind::UnclearIntent, "unclear intent", "unclear intent"},
    {BehaviorKind::OffTopic, "off-topic responses", "off-topic responses"},
    {BehaviorKind::Interruption, "interruptions", "interruptions"},
    {BehaviorKind::PersistentDisagreement, "persistent disagreement", "persistent disagreement"},
}};

std::string fine_grained_schema(bool want_indices) {
  std::string out = "```json\n{\n";
  for (std::size_t i = 0; i < kSchemaOrder.size(); ++i) {
    const auto& f = kSchemaOrder[i];
    const std::string key(info(f.kind).key);
    const bool last = i + 1 == kSchemaOrder.size();
    out += "    \"" + key + "_explanation\": \"Explanation of the " + std::string(f.noun) + " found.\",\n";
    out += "    \"" + key + "_count\": an integer representing the number of utterances with " +
           std::string(f.plural);
    if (want_indices) {
      out += ",\n    \"" + key + "_turns\": a list of the turn numbers of the utterances with " +
             std::string(f.plural) + ", with exactly " + key + "_count entries";
    }
    out += last ? "\n" : ",\n";
  }
  out += "}\n```";
  return out;
}

std::string evaluation_context(const ContinuationInstance& instance,
                               const std::vector<Turn>& continuation) {
  const int first = continuation.front().turn_number;
  const int last = continuation.back().turn_number;
  return "## Conversation Metadata\n\n" + to_json(instance.metadata).dump(4) +
         "\n\n## Summary of the Conversation\n\n" + instance.summary +
         "\n\n## Conversation History\n\n" + turns_to_json(instance.history).dump(4) +
         "\n\n## Generated Turns\n\nThe Generated Turns contain " +
         std::to_string(continuation.size()) + " utterances (turn " + std::to_string(first) +
         " to turn " + std::to_string(last) + ").\n\n" + turns_to_json(continuation).dump(4);
}

int integer_field(const json& reply, const std::string& key) {
  if (!reply.contains(key)) throw ReplyRejected("reply is missing '" + key + "'");
  const auto& v = reply.at(key);
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 1e6) return static_cast<int>(d);
  }
  throw ReplyRejected("'" + key + "' must be an integer");
}

std::string text_field(const json& reply, const std::string& key) {
  if (!reply.contains(key) || reply.at(key).is_null()) return {};
  if (!reply.at(key).is_string()) throw ReplyRejected("'" + key + "' must be a string");
  return reply.at(key).get<std::string>();
}

void require_block(const std::vector<Turn>& continuation) {
  if (continuation.empty()) throw PreconditionError("nothing to judge: continuation has no turns");
}

}  // namespace

// --- serialization ---------------------------------------------------------

json to_json(const OverallScores& s) {
  return json{{"consistency", s.consistency},
              {"collaborativeness", s.collaborativeness},
              {"consistency_explanation", s.consistency_explanation},
              {"collaborativeness_explanation", s.collaborativeness_explanation}};
}

OverallScores overall_scores_from_json(const json& j) {
  try {
    return parse_overall_reply(j);
  } catch (const ReplyRejected& e) {
    throw ValidationError(std::string("overall scores: ") + e.what());
  }
}

json to_json(const BehaviorReport& r) {
  json out = json::object();
  for (const auto& b : kBehaviors) {
    const auto i = index_of(b.kind);
    json entry{{"count", r.counts[i]}, {"explanation", r.explanations[i]}};
    if (r.turn_indices) entry["indices"] = (*r.turn_indices)[i];
    out[std::string(b.key)] = entry;
  }
  return out;
}

BehaviorReport behavior_report_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("fine-grained report must be an object");
  BehaviorReport r;
  bool any_indices = false;
  bool all_indices = true;
  std::array<std::set<int>, kBehaviorCount> indices;
  for (const auto& b : kBehaviors) {
    const std::string key(b.key);
    if (!j.contains(key)) throw ValidationError("fine-grained report is missing '" + key + "'");
    const auto& e = j.at(key);
    const auto i = index_of(b.kind);
    try {
      r.counts[i] = e.at("count").get<int>();
      r.explanations[i] = e.value("explanation", std::string{});
      if (e.contains("indices")) {
        any_indices = true;
        for (const auto& t : e.at("indices")) indices[i].insert(t.get<int>());
      } else {
        all_indices = false;
      }
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError("fine-grained entry '" + key + "': " + ex.what());
    }
    if (r.counts[i] < 0 || r.counts[i] > kContinuationTurns)
      throw ValidationError("count for '" + key + "' is outside [0, 30]");
  }
  if (any_indices && !all_indices) throw ValidationError("indices present for only some behaviors");
  if (any_indices) r.turn_indices = indices;
  return r;
}

std::string simulation_subject(std::string_view config_label) {
  return "simulation:" + std::string(config_label);
}

json to_json(const Judgment& j) {
  json out{{"instance_id", j.instance_id},
           {"subject", j.subject},
           {"turn_range", json::array({j.first_turn, j.last_turn})}};
  if (j.overall) out["overall"] = to_json(*j.overall);
  if (j.fine_grained) out["fine_grained"] = to_json(*j.fine_grained);
  return out;
}

Judgment judgment_from_json(const json& j) {
  Judgment out;
  try {
    out.instance_id = j.at("instance_id").get<std::string>();
    out.subject = j.at("subject").get<std::string>();
    if (j.contains("turn_range")) {
      out.first_turn = j.at("turn_range").at(0).get<int>();
      out.last_turn = j.at("turn_range").at(1).get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("judgment file: ") + e.what());
  }
  if (j.contains("overall")) out.overall = overall_scores_from_json(j.at("overall"));
  if (j.contains("fine_grained")) out.fine_grained = behavior_report_from_json(j.at("fine_grained"));
  return out;
}

// --- prompts ---------------------------------------------------------------

ChatPrompt render_overall_prompt(const ContinuationInstance& instance,
                                 const std::vector<Turn>& continuation) {
  require_block(continuation);
  ChatPrompt p;
  p.system = std::string(kOverallSystem);
  p.user = evaluation_context(instance, continuation) +
           "\n\nEvaluate the overall consistency and collaborativeness of the Generated Turns "
           "and output the scores in the specified JSON format.";
  return p;
}

ChatPrompt render_fine_grained_prompt(const ContinuationInstance& instance,
                                      const std::vector<Turn>& continuation, bool want_indices) {
  require_block(continuation);
  ChatPrompt p;
  p.system = std::string(kFineGrainedIntro);
  p.system += prompts::kInconsistentBullets;
  p.system += "\n\n### Uncollaborative Behaviors to Look For\n\n";
  p.system += prompts::kUncollaborativeBullets;
  p.system += "\n\n### Behavior Definitions\n\n";
  p.system += prompts::behavior_definitions_block();
  p.system += "\n";
  p.system += kFineGrainedOutputIntro;
  if (want_indices) {
    p.system += " ";
    p.system += kIndicesInstruction;
  }
  p.system += "\n\n" + fine_grained_schema(want_indices);
  p.user = evaluation_context(instance, continuation) +
           "\n\nCount the utterances in the Generated Turns that exhibit each inconsistent or "
           "uncollaborative behavior and output the results in the specified JSON format.";
  return p;
}

// --- reply validation ------------------------------------------------------

OverallScores parse_overall_reply(const json& reply) {
  if (!reply.is_object()) throw ReplyRejected("overall reply must be a JSON object");
  OverallScores s;
  s.consistency = integer_field(reply, "consistency");
  s.collaborativeness = integer_field(reply, "collaborativeness");
  if (s.consistency < 1 || s.consistency > 10)
    throw ReplyRejected("consistency score " + std::to_string(s.consistency) + " is outside [1, 10]");
  if (s.collaborativeness < 1 || s.collaborativeness > 10)
    throw ReplyRejected("collaborativeness score " + std::to_string(s.collaborativeness) +
                        " is outside [1, 10]");
  s.consistency_explanation = text_field(reply, "consistency_explanation");
  s.collaborativeness_explanation = text_field(reply, "collaborativeness_explanation");
  return s;
}

BehaviorReport parse_fine_grained_reply(const json& reply, int first_turn, int num_turns,
                                        bool want_indices) {
  if (!reply.is_object()) throw ReplyRejected("fine-grained reply must be a JSON object");
  BehaviorReport r;
  std::array<std::set<int>, kBehaviorCount> indices;
  for (const auto& b : kBehaviors) {
    const std::string key(b.key);
    const auto i = index_of(b.kind);
    const int count = integer_field(reply, key + "_count");
    if (count < 0 || count > num_turns)
      throw ReplyRejected(key + "_count " + std::to_string(count) + " is outside [0, " +
                          std::to_string(num_turns) + "]");
    r.counts[i] = count;
    r.explanations[i] = text_field(reply, key + "_explanation");
    if (!want_indices) continue;
    const std::string list_key = key + "_turns";
    if (!reply.contains(list_key) || !reply.at(list_key).is_array())
      throw ReplyRejected("reply is missing the list '" + list_key + "'");
    for (const auto& t : reply.at(list_key)) {
      if (!t.is_number_integer()) throw ReplyRejected("'" + list_key + "' must hold integers");
      const int turn = t.get<int>();
      if (turn < first_turn || turn >= first_turn + num_turns)
        throw ReplyRejected("turn " + std::to_string(turn) + " in '" + list_key +
                            "' is outside the evaluated block");
      if (!indices[i].insert(turn).second)
        throw ReplyRejected("turn " + std::to_string(turn) + " listed twice in '" + list_key + "'");
    }
    if (static_cast<int>(indices[i].size()) != count)
      throw ReplyRejected("'" + list_key + "' lists " + std::to_string(indices[i].size()) +
                          " turns but " + key + "_count is " + std::to_string(count));
  }
  if (want_indices) r.turn_indices = indices;
  return r;
}

// --- judging ---------------------------------------------------------------

OverallScores judge_overall(const ContinuationInstance& instance,
                            const std::vector<Turn>& continuation, Backend& backend,
                            JsonRetryPolicy policy) {
  ChatPrompt prompt = render_overall_prompt(instance, continuation);
  prompt.params.model_id = backend.model_id();
  return complete_json(backend, prompt, parse_overall_reply, policy).value;
}

BehaviorReport judge_fine_grained(const ContinuationInstance& instance,
                                  const std::vector<Turn>& continuation, Backend& backend,
                                  bool want_indices, JsonRetryPolicy policy) {
  ChatPrompt prompt = render_fine_grained_prompt(instance, continuation, want_indices);
  prompt.params.model_id = backend.model_id();
  const int first = continuation.front().turn_number;
  const int n = static_cast<int>(continuation.size());
  auto parse = [&](const json& reply) {
    return parse_fine_grained_reply(reply, first, n, want_indices);
  };
  return complete_json(backend, prompt, parse, policy).value;
}

std::variant<OverallScores, BehaviorReport> judge_reference(const ContinuationInstance& instance,
                                                            Backend& backend, JudgeMode mode,
                                                            bool want_indices,
                                                            JsonRetryPolicy policy) {
  if (mode == JudgeMode::overall) return judge_overall(instance, instance.reference, backend, policy);
  return judge_fine_grained(instance, instance.reference, backend, want_indices, policy);
}

}  // namespace convsim
