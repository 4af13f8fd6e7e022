#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "convsim/llm_gateway.hpp"

namespace convsim::io {

std::string read_text(const std::filesystem::path& path);

/// Writes through a sibling temp file and a rename, so readers never observe a
/// partially written file.
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

/// Parses JSON, turning parser failures into ParseError with the byte offset.
json parse_json(std::string_view text, std::string_view origin);
json read_json(const std::filesystem::path& path);

/// Four-space indented dump with a trailing newline.
std::string dump(const json& j);

}  // namespace convsim::io
