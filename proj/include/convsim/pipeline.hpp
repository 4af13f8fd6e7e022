#pragma once

// Batch orchestration behind the command-line tool: configuration, the
// resumable run ledger and one function per subcommand.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "convsim/corpus.hpp"
#include "convsim/judge.hpp"
#include "convsim/llm_gateway.hpp"
#include "convsim/simulator.hpp"
#include "convsim/stats.hpp"

namespace convsim {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitPartial = 1, kExitConfig = 2 };

struct RunConfig {
  fs::path instances_dir;
  fs::path output_dir;
  fs::path sources_dir;
  std::map<std::string, BackendDescriptor> backends;

  struct Ingest {
    std::string backend;
    bool clean = false;
    SourceDataset dataset = SourceDataset::Custom;
    std::uint64_t seed = 0;
  } ingest;

  std::vector<SimulationConfig> simulations;

  struct Judge {
    std::string backend;
    bool want_indices = false;
    bool reference = true;
    bool simulations = true;
  } judge;

  BootstrapOptions stats;

  struct Agreement {
    fs::path judge_labels;  // empty: derive from judgment files
    std::vector<fs::path> annotators;
    fs::path judge_scores;  // empty: derive from judgment files
    std::vector<fs::path> annotator_scores;
  } agreement;

  struct Tokens {
    long avg_input_tokens = 4000;
    long avg_turn_tokens = 50;
  } tokens;

  int max_concurrency = 4;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> max_concurrency;
  std::optional<std::string> backend;
};

/// Relative paths resolve against the config file's directory. Throws
/// ConfigError for unknown backend names or malformed fields.
RunConfig load_run_config(const fs::path& path);
RunConfig run_config_from_json(const json& j, const fs::path& base_dir);
void apply_overrides(RunConfig& config, const Overrides& overrides);

enum class PairStatus { pending, simulated, judged, failed };

std::string_view to_string(PairStatus status);
PairStatus pair_status_from_string(std::string_view text);

struct LedgerEntry {
  std::string key;    // "<instance>|<config-label>", "<instance>|reference", "ingest|<conversation>"
  std::string stage;  // ingest | simulate | judge
  PairStatus status = PairStatus::pending;
  std::string reason;
  std::string file;
  std::string digest;
};

/// Append-only JSON-lines ledger; the last line for a key wins on replay.
/// Appends are serialized through one writer.
class Ledger {
 public:
  explicit Ledger(fs::path path);

  std::optional<LedgerEntry> latest(const std::string& key) const;
  void append(const LedgerEntry& entry);
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  mutable std::mutex mutex_;
  std::map<std::string, LedgerEntry> latest_;
};

std::string content_digest(std::string_view bytes);

struct CommandResult {
  int exit_code = kExitOk;
  std::size_t processed = 0;
  std::size_t skipped = 0;
  std::vector<std::string> failures;
  std::vector<std::string> warnings;
};

struct CorpusStatsRow {
  std::string dataset;
  std::size_t instances = 0;
  double avg_participants = 0.0;
  double avg_whitespace_tokens_per_turn = 0.0;
};

struct IngestResult : CommandResult {
  std::vector<CorpusStatsRow> stats;
};

/// Builds one instance per source conversation in `sources_dir` (or the
/// configured directory). Conversations whose source digest is already in the
/// ledger with an existing instance file are skipped without backend calls.
IngestResult cmd_ingest(const RunConfig& config, const fs::path& sources_dir = {});

void print_corpus_stats(std::ostream& os, const std::vector<CorpusStatsRow>& rows);

/// Simulates every pending (instance, configuration) pair.
CommandResult cmd_simulate(const RunConfig& config);

enum class JudgeSubjects { all, reference, simulations };

/// Judges reference continuations and/or simulated ones with both schemes.
CommandResult cmd_judge(const RunConfig& config, JudgeSubjects subjects = JudgeSubjects::all);

/// Writes overall_scores.csv, behaviors.csv and group_sizes.csv into
/// <output_dir>/report.
CommandResult cmd_aggregate(const RunConfig& config);

/// Writes <output_dir>/report/agreement.json.
CommandResult cmd_agreement(const RunConfig& config);

/// aggregate + agreement (when annotators are configured) + token estimate.
/// Throws MissingInputs when judgments expected by the configuration are
/// absent and not recorded as failed in the ledger.
CommandResult cmd_report(const RunConfig& config);

// Building blocks exposed for tests.
std::vector<ContinuationInstance> load_instances(const fs::path& dir);
std::vector<Judgment> load_judgments(const fs::path& dir);
std::string aggregate_csv(const std::vector<AggregateStats>& stats, bool behaviors);
std::string format_number(double value);

fs::path simulation_file(const RunConfig& config, const std::string& instance_id,
                         const SimulationConfig& sim);
fs::path judgment_file(const RunConfig& config, const std::string& instance_id,
                       const std::string& subject);

}  // namespace convsim
