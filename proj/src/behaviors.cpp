#include "convsim/behaviors.hpp"

namespace convsim {

std::optional<BehaviorKind> behavior_from_string(std::string_view text) {
  for (const auto& b : kBehaviors) {
    if (b.key == text || b.name == text) return b.kind;
  }
  return std::nullopt;
}

}  // namespace convsim
