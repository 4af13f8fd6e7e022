#pragma once

// Prompt blocks shared by the generator and the judge.

#include <string>
#include <string_view>

#include "convsim/behaviors.hpp"

namespace convsim::prompts {

inline constexpr std::string_view kInconsistentBullets =
    R"(* Logical Contradictions: Statements that directly contradict earlier statements by the same speaker in the conversation history or Generated Turns, or that contradict the speaker's information in the metadata. For example, if a participant first states they are allergic to peanuts and later says they enjoy eating peanut butter.
* Misunderstandings: Instances where a participant misinterprets or misunderstands information provided earlier in the conversation. For example, if one participant says they will arrive at 3 PM and another participant responds as if they said 5 PM.
* Factual Inaccuracies: Statements that are factually incorrect based on widely accepted knowledge. For example, if a participant claims that the capital of France is Berlin.
* Repetition: Instances where a participant unnecessarily repeats information that has already been clearly stated in the conversation. For example, if one participant says "I will bring the documents" and another participant later says "So you will bring the documents, right?" without any new context.
* Redundant Information: Providing overly long responses that do not add value to the conversation.)";

inline constexpr std::string_view kUncollaborativeBullets =
    R"(* Under-answering: Responses that do not fully address the questions or try to evade providing complete information.
* Unclear Intent: Responses that are ambiguous or do not clearly convey the participant's intentions. For example, if a participant responds with "Maybe" when asked a direct question about their plans.
* Off-topic Responses: Statements that diverge significantly from the main topic of the conversation without a clear reason. For example, if a discussion about project deadlines suddenly shifts to unrelated personal anecdotes.
* Interruptions: Instances where a participant cuts off another participant mid-sentence or speaks over them in a way that disrupts the flow of conversation. For example, if one participant is explaining something and another participant interjects before they finish.
* Persistent disagreement: When a participant continues to disagree with another participant's point of view despite clear evidence or consensus in the conversation.)";

/// "* Name: definition" for all ten behaviors, grouped by class.
inline std::string behavior_definitions_block() {
  std::string out;
  for (auto cls : {BehaviorClass::inconsistent, BehaviorClass::uncollaborative}) {
    out += cls == BehaviorClass::inconsistent ? "Inconsistent behaviors:\n"
                                              : "\nUncollaborative behaviors:\n";
    for (const auto& b : kBehaviors) {
      if (b.behavior_class != cls) continue;
      out += "* ";
      out += b.name;
      out += ": ";
      out += b.definition;
      out += "\n";
    }
  }
  return out;
}

}  // namespace convsim::prompts
