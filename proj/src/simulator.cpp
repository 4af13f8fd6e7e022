#include "convsim/simulator.hpp"

#include <algorithm>
#include <cctype>

#include "prompt_texts.hpp"

namespace convsim {

namespace {

constexpr std::string_view kVanillaSystem =
    R"(We provide a conversation history involving multiple participants. Your task is to generate {num_generation_turn} responses to simulate the continuation of the conversation.

### Instructions

* Your task is to mimic human-like conversation by referring to the conversation history.
* Your task is to mimic the communication style and content in the metadata and the conversation history.
  * Try to closely mimic the user's style. Your response should match the specified speaker's tone, structure, formatting, and length. Pay attention to stylistic elements such as punctuation, sentence flow, and vocabulary to ensure your reply is consistent with previous messages from that speaker.
  * Conversation metadata may include specific instructions about styles of each participant. You need to follow the instructions to improve the simulation.

### Strict Requirements

* The "speaker" should be selected from the list of participants provided in the metadata. You should not introduce new participants not listed in the metadata.
* Don't finish the conversation. If the current topic concludes, smoothly transition to a related topic to keep the conversation going.

### Output Format

* You first need to copy the last five turns from the conversation history as they are. Then, generate the specified number of new turns in the conversation. Each generated turn should include the turn number, speaker, and the generated response.
* When writing strings in JSON (for example, in "content" fields), ensure that all special characters, especially double quotes ("), are properly escaped using \".

```JSON
{
  "five_previous_turns": [
    {
      "turn_number": first_generated_turn_number - 5,
      "speaker": "speaker_name",
      "content": "Copy the utterance provided in the input, five turns before the first generated turn."
    },
    {
      "turn_number": first_generated_turn_number - 4,
      "speaker": "speaker_name",
      "content": "Copy the utterance provided in the input, four turns before the first generated turn."
    },
    {
      "turn_number": first_generated_turn_number - 3,
      "speaker": "speaker_name",
      "content": "Copy the utterance provided in the input, three turns before the first generated turn."
    },
    {
      "turn_number": first_generated_turn_number - 2,
      "speaker": "speaker_name",
      "content": "Copy the utterance provided in the input, two turns before the first generated turn."
    },
    {
      "turn_number": first_generated_turn_number - 1,
      "speaker": "speaker_name",
      "content": "Copy the utterance provided in the input, one turn before the first generated turn."
    }
  ],
  "generated_turns": [
    {
      "turn_number": first_generated_turn_number,
      "speaker": "next_speaker",
      "content": "The response generated by the specified speaker in this turn, based on the conversation history and conversation metadata."
    },
    {
      "turn_number": first_generated_turn_number + 1,
      "speaker": "next_speaker",
      "content": "The response generated by the specified speaker in this turn, based on the conversation history and conversation metadata."
    },
    ...
  ]
}
```)";

constexpr std::string_view kTaxonomyIntro =
    R"(### Additional Instructions for Inconsistent and Uncollaborative Behaviors

Human conversations may involve inconsistent and uncollaborative behaviors, arising either intentionally or unintentionally. By referring to the conversation history and metadata, identify possible inconsistent and uncollaborative behaviors that may arise in the dialogue, and incorporate such behaviors naturally into the simulated conversation when appropriate. The following list outlines representative inconsistent and uncollaborative behaviors:

#### Possible Inconsistent Behaviors

)";

constexpr std::string_view kTaxonomyUncollaborativeHeading =
    "\n\n#### Possible uncollaborative Behaviors\n\n";

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  for (auto pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size()))
    text.replace(pos, from.size(), to);
  return text;
}

std::vector<Turn> last_n(const std::vector<Turn>& a, const std::vector<Turn>& b, std::size_t n) {
  std::vector<Turn> joined;
  joined.reserve(a.size() + b.size());
  joined.insert(joined.end(), a.begin(), a.end());
  joined.insert(joined.end(), b.begin(), b.end());
  if (joined.size() > n) joined.erase(joined.begin(), joined.end() - static_cast<std::ptrdiff_t>(n));
  return joined;
}

Turn reply_turn(const json& t, const char* block) {
  if (!t.is_object()) throw StructureError(std::string(block) + " entries must be objects");
  if (!t.contains("turn_number") || !t.at("turn_number").is_number_integer())
    throw StructureError(std::string(block) + " entry lacks an integer turn_number");
  if (!t.contains("speaker") || !t.at("speaker").is_string())
    throw StructureError(std::string(block) + " entry lacks a speaker");
  if (!t.contains("content") || !t.at("content").is_string())
    throw StructureError(std::string(block) + " entry lacks content");
  return Turn{t.at("turn_number").get<int>(), t.at("speaker").get<std::string>(),
              t.at("content").get<std::string>()};
}

}  // namespace

std::string_view to_string(PromptingMode mode) {
  return mode == PromptingMode::vanilla ? "vanilla" : "taxonomy_guided";
}

PromptingMode prompting_mode_from_string(std::string_view name) {
  if (name == "vanilla") return PromptingMode::vanilla;
  if (name == "taxonomy_guided") return PromptingMode::taxonomy_guided;
  throw ConfigError("unknown prompting mode '" + std::string(name) + "'");
}

std::string SimulationConfig::label() const {
  return model + "." + std::string(to_string(prompting_mode)) + ".k" + std::to_string(turns_per_call);
}

void validate(const SimulationConfig& config) {
  if (config.turns_per_call < 1 || config.turns_per_call > kContinuationTurns)
    throw ConfigError("turns_per_call must lie in [1, 30]");
  if (config.history_window < kEchoTurns) throw ConfigError("history_window must be at least 5");
  if (config.json_retry.max_attempts < 1) throw ConfigError("json retry attempts must be >= 1");
}

json to_json(const SimulationConfig& c) {
  return json{{"model", c.model},
              {"prompting_mode", to_string(c.prompting_mode)},
              {"turns_per_call", c.turns_per_call},
              {"history_window", c.history_window},
              {"rng_seed", c.rng_seed},
              {"repair_speakers", c.repair_speakers}};
}

SimulationConfig simulation_config_from_json(const json& j) {
  SimulationConfig c;
  try {
    c.model = j.value("model", std::string{});
    c.prompting_mode = prompting_mode_from_string(j.value("prompting_mode", std::string{"vanilla"}));
    c.turns_per_call = j.value("turns_per_call", 30);
    c.history_window = j.value("history_window", 30);
    c.rng_seed = j.value("rng_seed", std::uint64_t{0});
    c.repair_speakers = j.value("repair_speakers", false);
  } catch (const nlohmann::json::type_error& e) {
    throw ConfigError(std::string("simulation config: ") + e.what());
  }
  validate(c);
  return c;
}

json to_json(const GeneratedContinuation& g) {
  json calls = json::array();
  for (const auto& c : g.calls) {
    calls.push_back(json{{"call_index", c.call_index},
                         {"prompt_hash", c.prompt_hash},
                         {"reply_text", c.reply_text},
                         {"parsed_turn_range", json::array({c.first_turn, c.last_turn})},
                         {"attempts", c.attempts},
                         {"input_tokens", c.input_tokens},
                         {"output_tokens", c.output_tokens}});
  }
  return json{{"instance_id", g.instance_id},
              {"config", to_json(g.config)},
              {"turns", turns_to_json(g.turns)},
              {"calls", calls},
              {"warnings", g.warnings}};
}

GeneratedContinuation continuation_from_json(const json& j) {
  GeneratedContinuation g;
  try {
    g.instance_id = j.at("instance_id").get<std::string>();
    g.config = simulation_config_from_json(j.at("config"));
    for (const auto& t : j.at("turns")) g.turns.push_back(turn_from_json(t));
    for (const auto& c : j.value("calls", json::array())) {
      CallRecord r;
      r.call_index = c.at("call_index").get<int>();
      r.prompt_hash = c.at("prompt_hash").get<std::string>();
      r.reply_text = c.at("reply_text").get<std::string>();
      r.first_turn = c.at("parsed_turn_range").at(0).get<int>();
      r.last_turn = c.at("parsed_turn_range").at(1).get<int>();
      r.attempts = c.value("attempts", 1);
      r.input_tokens = c.value("input_tokens", 0L);
      r.output_tokens = c.value("output_tokens", 0L);
      g.calls.push_back(std::move(r));
    }
    for (const auto& w : j.value("warnings", json::array())) g.warnings.push_back(w.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("continuation file: ") + e.what());
  }
  if (g.turns.size() != static_cast<std::size_t>(kContinuationTurns))
    throw ValidationError("continuation must hold exactly 30 turns");
  return g;
}

ChatPrompt render_generation_prompt(const ContinuationInstance& instance,
                                    const std::vector<Turn>& generated_so_far,
                                    const SimulationConfig& config) {
  const int done = static_cast<int>(generated_so_far.size());
  const int remaining = kContinuationTurns - done;
  if (remaining <= 0) throw PreconditionError("all 30 turns have already been generated");
  const int request = std::min(config.turns_per_call, remaining);
  const int first = instance.first_generated_turn_number + done;
  const int last = first + request - 1;

  ChatPrompt p;
  p.system = replace_all(std::string(kVanillaSystem), "{num_generation_turn}", std::to_string(request));
  if (config.prompting_mode == PromptingMode::taxonomy_guided) {
    p.system += "\n\n";
    p.system += kTaxonomyIntro;
    p.system += prompts::kInconsistentBullets;
    p.system += kTaxonomyUncollaborativeHeading;
    p.system += prompts::kUncollaborativeBullets;
    p.system += "\n\n#### Behavior Definitions\n\n";
    p.system += prompts::behavior_definitions_block();
  }

  const auto window =
      last_n(instance.history, generated_so_far, static_cast<std::size_t>(config.history_window));
  p.user = "Your task is to generate " + std::to_string(request) + " responses from turn " +
           std::to_string(first) + " to turn " + std::to_string(last) + ".\n\n" +
           "## Conversation Metadata\n\n" + to_json(instance.metadata).dump(4) + "\n\n" +
           "## Summary of the Conversation\n\n" + instance.summary + "\n\n" +
           "## Recent Conversation History\n\n" + turns_to_json(window).dump(4);
  return p;
}

std::string nearest_roster_id(std::string_view speaker, const ConversationMetadata& metadata) {
  const std::string wanted = lower(speaker);
  if (wanted.empty()) return {};
  for (const auto& p : metadata.participants) {
    if (lower(p.id) == wanted) return p.id;
  }
  for (const auto& p : metadata.participants) {
    const std::string id = lower(p.id);
    if (id.rfind(wanted, 0) == 0 || wanted.rfind(id, 0) == 0) return p.id;
  }
  return {};
}

GenerationParse parse_generation_reply(const json& reply, int expected_first, int expected_count,
                                       const std::vector<Turn>& echo_expected,
                                       const ConversationMetadata& metadata,
                                       bool repair_speakers) {
  if (!reply.is_object()) throw StructureError("reply must be a JSON object");
  if (!reply.contains("five_previous_turns") || !reply.at("five_previous_turns").is_array())
    throw StructureError("reply lacks the five_previous_turns list");
  if (!reply.contains("generated_turns") || !reply.at("generated_turns").is_array())
    throw StructureError("reply lacks the generated_turns list");

  GenerationParse out;
  const auto& echo = reply.at("five_previous_turns");
  if (echo.size() != echo_expected.size())
    throw StructureError("five_previous_turns holds " + std::to_string(echo.size()) +
                         " turns, expected " + std::to_string(echo_expected.size()));
  for (std::size_t i = 0; i < echo.size(); ++i) {
    const Turn t = reply_turn(echo[i], "five_previous_turns");
    const Turn& want = echo_expected[i];
    if (t.turn_number != want.turn_number)
      throw StructureError("echoed turn number " + std::to_string(t.turn_number) + ", expected " +
                           std::to_string(want.turn_number));
    if (t.speaker != want.speaker || t.content != want.content)
      out.warnings.push_back("echoed turn " + std::to_string(t.turn_number) +
                             " differs from the context");
  }

  const auto& gen = reply.at("generated_turns");
  if (gen.size() != static_cast<std::size_t>(expected_count))
    throw StructureError("generated_turns holds " + std::to_string(gen.size()) +
                         " turns, expected " + std::to_string(expected_count));
  for (std::size_t i = 0; i < gen.size(); ++i) {
    Turn t = reply_turn(gen[i], "generated_turns");
    const int want = expected_first + static_cast<int>(i);
    if (t.turn_number != want)
      throw StructureError("generated turn numbered " + std::to_string(t.turn_number) +
                           ", expected " + std::to_string(want));
    if (!metadata.has_participant(t.speaker)) {
      const std::string repaired = repair_speakers ? nearest_roster_id(t.speaker, metadata) : "";
      if (repaired.empty())
        throw SpeakerError("turn " + std::to_string(t.turn_number) + " speaker '" + t.speaker +
                           "' is not a participant");
      out.warnings.push_back("turn " + std::to_string(t.turn_number) + " speaker '" + t.speaker +
                             "' reassigned to '" + repaired + "'");
      t.speaker = repaired;
    }
    out.turns.push_back(std::move(t));
  }
  return out;
}

GenerationParse parse_generation_response(std::string_view reply, int expected_first,
                                          int expected_count,
                                          const std::vector<Turn>& echo_expected,
                                          const ConversationMetadata& metadata,
                                          bool repair_speakers) {
  auto parsed = extract_first_json(reply);
  if (!parsed) throw StructureError("reply contains no JSON value");
  return parse_generation_reply(*parsed, expected_first, expected_count, echo_expected, metadata,
                                repair_speakers);
}

std::vector<int> call_sizes(int turns_per_call) {
  if (turns_per_call < 1) throw ConfigError("turns_per_call must be positive");
  std::vector<int> sizes;
  for (int done = 0; done < kContinuationTurns; done += turns_per_call)
    sizes.push_back(std::min(turns_per_call, kContinuationTurns - done));
  return sizes;
}

GeneratedContinuation simulate_continuation(const ContinuationInstance& instance,
                                            const SimulationConfig& config, Backend& backend) {
  validate(config);
  GeneratedContinuation out;
  out.instance_id = instance.instance_id;
  out.config = config;

  const auto sizes = call_sizes(config.turns_per_call);
  for (std::size_t call = 0; call < sizes.size(); ++call) {
    const int first = instance.first_generated_turn_number + static_cast<int>(out.turns.size());
    const int count = sizes[call];
    ChatPrompt prompt = render_generation_prompt(instance, out.turns, config);
    prompt.params.model_id = backend.model_id();
    const auto echo = last_n(instance.history, out.turns, kEchoTurns);

    auto parse = [&](const json& reply) {
      return parse_generation_reply(reply, first, count, echo, instance.metadata,
                                    config.repair_speakers);
    };
    try {
      auto result = complete_json(backend, prompt, parse, config.json_retry);
      for (auto& w : result.value.warnings) out.warnings.push_back(std::move(w));
      out.turns.insert(out.turns.end(), result.value.turns.begin(), result.value.turns.end());
      CallRecord rec;
      rec.call_index = static_cast<int>(call);
      rec.prompt_hash = result.record.prompt_hash;
      rec.reply_text = result.record.reply_text;
      rec.first_turn = first;
      rec.last_turn = first + count - 1;
      rec.attempts = result.attempts;
      rec.input_tokens = result.record.input_tokens;
      rec.output_tokens = result.record.output_tokens;
      out.calls.push_back(std::move(rec));
    } catch (const Error& e) {
      throw SimulationError("instance " + instance.instance_id + ", call " +
                                std::to_string(call) + ": " + e.what(),
                            out.turns);
    }
  }
  return out;
}

}  // namespace convsim
