#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace convsim {

/// Base class for every error raised by the harness.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the byte offset reported by the JSON parser
/// (0 when unknown).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : Error(what), byte_offset_(byte_offset) {}
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class TooShortError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Transport or service failure after retries were exhausted.
class BackendError : public Error {
 public:
  explicit BackendError(const std::string& what, int status = 0,
                        std::optional<std::size_t> turn_index = std::nullopt)
      : Error(what), status_(status), turn_index_(turn_index) {}
  int status() const noexcept { return status_; }
  std::optional<std::size_t> turn_index() const noexcept { return turn_index_; }

 private:
  int status_;
  std::optional<std::size_t> turn_index_;
};

/// Scripted mock has neither a matching entry nor a default reply.
class MockMissError : public Error {
 public:
  using Error::Error;
};

/// A reply was received but rejected by a validator. complete_json re-prompts
/// on this family only.
class ReplyRejected : public Error {
 public:
  using Error::Error;
};

/// Generated-turn block has wrong keys, count, or numbering.
class StructureError : public ReplyRejected {
 public:
  using ReplyRejected::ReplyRejected;
};

/// Every semantic attempt produced an invalid reply.
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what, std::string last_reply = {})
      : Error(what), last_reply_(std::move(last_reply)) {}
  const std::string& last_reply() const noexcept { return last_reply_; }

 private:
  std::string last_reply_;
};

/// A generated speaker is not on the roster and repair is disabled.
class SpeakerError : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class UniverseMismatch : public Error {
 public:
  using Error::Error;
};

class MissingInputs : public Error {
 public:
  explicit MissingInputs(std::vector<std::string> missing)
      : Error(describe(missing)), missing_(std::move(missing)) {}
  const std::vector<std::string>& missing() const noexcept { return missing_; }

 private:
  static std::string describe(const std::vector<std::string>& missing) {
    std::string out = "missing inputs:";
    for (const auto& m : missing) out += " " + m;
    return out;
  }
  std::vector<std::string> missing_;
};

}  // namespace convsim
