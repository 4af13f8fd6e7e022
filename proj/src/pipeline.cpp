#include "convsim/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "convsim/io.hpp"

namespace convsim {

namespace {

std::mutex g_log_mutex;

void log_line(std::string_view level, std::string_view message) {
  std::lock_guard lock(g_log_mutex);
  std::cerr << "[convsim] " << level << ": " << message << "\n";
}

void info(std::string_view m) { log_line("info", m); }
void warn(std::string_view m) { log_line("warning", m); }

fs::path resolve(const fs::path& base, const std::string& value) {
  if (value.empty()) return {};
  fs::path p(value);
  return p.is_relative() ? base / p : p;
}

// File-name-safe version of an id or label.
std::string sanitize(std::string_view s) {
  std::string out;
  for (char c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    out += ok ? c : '_';
  }
  return out;
}

std::vector<fs::path> json_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Runs fn(i) for i in [0, n) on at most `workers` threads.
template <typename Fn>
void run_bounded(std::size_t n, int workers, Fn&& fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  if (threads <= 1) {
    worker();
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
}

std::shared_ptr<Backend> backend_named(const RunConfig& config, const std::string& name) {
  auto it = config.backends.find(name);
  if (it == config.backends.end()) throw ConfigError("unknown backend '" + name + "'");
  return make_backend(it->second);
}

void write_if_changed(const fs::path& path, const std::string& text, bool& written) {
  written = false;
  if (fs::exists(path) && content_digest(io::read_text(path)) == content_digest(text)) return;
  io::write_text_atomic(path, text);
  written = true;
}

fs::path ledger_path(const RunConfig& config) { return config.output_dir / "ledger.jsonl"; }
fs::path report_dir(const RunConfig& config) { return config.output_dir / "report"; }
fs::path judgments_dir(const RunConfig& config) { return config.output_dir / "judgments"; }

std::string pair_key(const std::string& instance_id, const std::string& what) {
  return instance_id + "|" + what;
}

}  // namespace

// --- configuration ---------------------------------------------------------

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  RunConfig c;
  try {
    c.instances_dir = resolve(base_dir, j.value("instances_dir", std::string{"instances"}));
    c.output_dir = resolve(base_dir, j.value("output_dir", std::string{"out"}));
    c.sources_dir = resolve(base_dir, j.value("sources_dir", std::string{}));
    const json backends = j.value("backends", json::object());
    for (const auto& [name, d] : backends.items())
      c.backends[name] = backend_descriptor_from_json(d, base_dir);

    const json ingest = j.value("ingest", json::object());
    c.ingest.backend = ingest.value("backend", std::string{});
    c.ingest.clean = ingest.value("clean", false);
    c.ingest.dataset = source_dataset_from_string(ingest.value("dataset", std::string{"Custom"}));
    c.ingest.seed = ingest.value("seed", std::uint64_t{0});

    for (const auto& s : j.value("simulations", json::array()))
      c.simulations.push_back(simulation_config_from_json(s));

    const json judge = j.value("judge", json::object());
    c.judge.backend = judge.value("backend", std::string{});
    c.judge.want_indices = judge.value("want_indices", false);
    c.judge.reference = judge.value("reference", true);
    c.judge.simulations = judge.value("simulations", true);

    const json stats = j.value("stats", json::object());
    c.stats.resamples = stats.value("bootstrap_resamples", 10000);
    c.stats.seed = stats.value("seed", std::uint64_t{42});
    c.stats.level = stats.value("level", 0.95);

    const json agreement = j.value("agreement", json::object());
    c.agreement.judge_labels = resolve(base_dir, agreement.value("judge", std::string{}));
    for (const auto& p : agreement.value("annotators", json::array()))
      c.agreement.annotators.push_back(resolve(base_dir, p.get<std::string>()));
    c.agreement.judge_scores = resolve(base_dir, agreement.value("judge_scores", std::string{}));
    for (const auto& p : agreement.value("annotator_scores", json::array()))
      c.agreement.annotator_scores.push_back(resolve(base_dir, p.get<std::string>()));

    const json tokens = j.value("token_estimate", json::object());
    c.tokens.avg_input_tokens = tokens.value("avg_input_tokens", 4000L);
    c.tokens.avg_turn_tokens = tokens.value("avg_turn_tokens", 50L);

    c.max_concurrency = j.value("max_concurrency", 4);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("configuration: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("configuration: ") + e.what());
  }

  auto require_backend = [&](const std::string& name, const char* where) {
    if (!name.empty() && !c.backends.count(name))
      throw ConfigError(std::string(where) + " refers to unknown backend '" + name + "'");
  };
  require_backend(c.ingest.backend, "ingest.backend");
  require_backend(c.judge.backend, "judge.backend");
  std::set<std::string> labels;
  for (const auto& s : c.simulations) {
    require_backend(s.model, "simulations[].model");
    if (s.model.empty()) throw ConfigError("simulations[].model is required");
    if (!labels.insert(s.label()).second)
      throw ConfigError("simulation configuration '" + s.label() + "' is listed twice");
  }
  if (c.max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1");
  if (!c.agreement.annotator_scores.empty() &&
      c.agreement.annotator_scores.size() != c.agreement.annotators.size())
    throw ConfigError("agreement.annotator_scores must pair up with agreement.annotators");
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = io::read_json(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j, fs::absolute(path).parent_path());
}

void apply_overrides(RunConfig& config, const Overrides& o) {
  if (o.seed) {
    config.stats.seed = *o.seed;
    config.ingest.seed = *o.seed;
  }
  if (o.max_concurrency) {
    if (*o.max_concurrency < 1) throw ConfigError("--max-concurrency must be >= 1");
    config.max_concurrency = *o.max_concurrency;
  }
  if (o.backend) {
    if (!config.backends.count(*o.backend))
      throw ConfigError("--backend names unknown backend '" + *o.backend + "'");
    config.ingest.backend = *o.backend;
    config.judge.backend = *o.backend;
  }
}

// --- ledger ----------------------------------------------------------------

std::string_view to_string(PairStatus s) {
  switch (s) {
    case PairStatus::pending: return "pending";
    case PairStatus::simulated: return "simulated";
    case PairStatus::judged: return "judged";
    case PairStatus::failed: return "failed";
  }
  return "pending";
}

PairStatus pair_status_from_string(std::string_view t) {
  if (t == "simulated") return PairStatus::simulated;
  if (t == "judged") return PairStatus::judged;
  if (t == "failed") return PairStatus::failed;
  return PairStatus::pending;
}

std::string content_digest(std::string_view bytes) {
  ChatPrompt p;
  p.user = std::string(bytes);
  return prompt_hash(p);
}

Ledger::Ledger(fs::path path) : path_(std::move(path)) {
  if (!fs::exists(path_)) return;
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    // a torn final line from a crash is ignored
    if (j.is_discarded() || !j.is_object()) continue;
    LedgerEntry e;
    e.key = j.value("key", std::string{});
    e.stage = j.value("stage", std::string{});
    e.status = pair_status_from_string(j.value("status", std::string{}));
    e.reason = j.value("reason", std::string{});
    e.file = j.value("file", std::string{});
    e.digest = j.value("digest", std::string{});
    if (!e.key.empty()) latest_[e.key] = e;
  }
}

std::optional<LedgerEntry> Ledger::latest(const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = latest_.find(key);
  if (it == latest_.end()) return std::nullopt;
  return it->second;
}

void Ledger::append(const LedgerEntry& e) {
  json j{{"key", e.key}, {"stage", e.stage}, {"status", to_string(e.status)}};
  if (!e.reason.empty()) j["reason"] = e.reason;
  if (!e.file.empty()) j["file"] = e.file;
  if (!e.digest.empty()) j["digest"] = e.digest;
  std::lock_guard lock(mutex_);
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app);
  out << j.dump() << "\n";
  out.flush();
  latest_[e.key] = e;
}

// --- file layout -----------------------------------------------------------

fs::path simulation_file(const RunConfig& config, const std::string& instance_id,
                         const SimulationConfig& sim) {
  return config.output_dir / "simulations" / (sanitize(instance_id) + "__" + sanitize(sim.label()) + ".json");
}

fs::path judgment_file(const RunConfig& config, const std::string& instance_id,
                       const std::string& subject) {
  return judgments_dir(config) / (sanitize(instance_id) + "__" + sanitize(subject) + ".json");
}

std::vector<ContinuationInstance> load_instances(const fs::path& dir) {
  std::vector<ContinuationInstance> out;
  for (const auto& p : json_files(dir)) out.push_back(load_instance(p));
  return out;
}

std::vector<Judgment> load_judgments(const fs::path& dir) {
  std::vector<Judgment> out;
  for (const auto& p : json_files(dir)) out.push_back(judgment_from_json(io::read_json(p)));
  return out;
}

// --- ingest ----------------------------------------------------------------

IngestResult cmd_ingest(const RunConfig& config, const fs::path& sources_arg) {
  IngestResult result;
  const fs::path sources = sources_arg.empty() ? config.sources_dir : sources_arg;
  if (sources.empty()) throw ConfigError("no sources directory given (sources_dir or --sources)");
  const auto files = json_files(sources);
  if (files.empty()) throw ConfigError("no conversations found in '" + sources.string() + "'");

  Ledger ledger(ledger_path(config));
  std::shared_ptr<Backend> backend;
  auto get_backend = [&]() -> Backend& {
    if (!backend) {
      if (config.ingest.backend.empty()) throw ConfigError("ingest.backend is not configured");
      backend = backend_named(config, config.ingest.backend);
    }
    return *backend;
  };

  std::mutex result_mutex;
  std::vector<std::optional<ContinuationInstance>> built(files.size());
  set_http_max_concurrency(config.max_concurrency);
  run_bounded(files.size(), config.max_concurrency, [&](std::size_t i) {
    const fs::path& file = files[i];
    try {
      const std::string text = io::read_text(file);
      const std::string digest = content_digest(text);
      SourceConversation conv = parse_source_conversation_text(text);
      const fs::path out = config.instances_dir / (sanitize(conv.conversation_id) + ".json");
      const std::string key = "ingest|" + conv.conversation_id;
      if (auto prev = ledger.latest(key);
          prev && prev->digest == digest && prev->status != PairStatus::failed && fs::exists(out)) {
        built[i] = load_instance(out);
        std::lock_guard lock(result_mutex);
        ++result.skipped;
        return;
      }
      for (const auto& w : conv.warnings) warn(file.filename().string() + ": " + w);

      Backend* b = nullptr;
      {
        std::lock_guard lock(result_mutex);
        b = &get_backend();
      }
      if (config.ingest.clean) conv = clean_transcript(conv, *b);
      const int start = select_start_point(conv, config.ingest.seed);
      ConversationMetadata metadata = extract_metadata(conv, *b);
      std::string summary = summarize_prefix(conv, static_cast<std::size_t>(start - kHistoryTurns), *b);
      InstanceIds ids{conv.conversation_id,
                      conv.source_dataset.empty() ? config.ingest.dataset
                                                  : source_dataset_from_string(conv.source_dataset)};
      ContinuationInstance inst =
          assemble_instance(conv, start, std::move(metadata), std::move(summary), ids);
      bool written = false;
      write_if_changed(out, io::dump(to_json(inst)), written);
      ledger.append({key, "ingest", PairStatus::simulated, "", out.string(), digest});
      built[i] = std::move(inst);
      std::lock_guard lock(result_mutex);
      ++result.processed;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      std::lock_guard lock(result_mutex);
      result.failures.push_back(file.filename().string() + ": " + e.what());
    }
  });

  std::map<std::string, std::vector<const ContinuationInstance*>> by_dataset;
  for (const auto& b : built) {
    if (b) by_dataset[std::string(to_string(b->source_dataset))].push_back(&*b);
  }
  for (const auto& [name, insts] : by_dataset) {
    CorpusStatsRow row;
    row.dataset = name;
    row.instances = insts.size();
    double participants = 0, tokens = 0, turns = 0;
    for (const auto* inst : insts) {
      participants += static_cast<double>(inst->metadata.participants.size());
      for (const auto* block : {&inst->history, &inst->reference}) {
        for (const auto& t : *block) {
          tokens += static_cast<double>(count_whitespace_tokens(t.content));
          turns += 1;
        }
      }
    }
    row.avg_participants = participants / static_cast<double>(insts.size());
    row.avg_whitespace_tokens_per_turn = turns > 0 ? tokens / turns : 0.0;
    result.stats.push_back(row);
  }
  std::sort(result.failures.begin(), result.failures.end());
  result.exit_code = result.failures.empty() ? kExitOk : kExitPartial;
  return result;
}

void print_corpus_stats(std::ostream& os, const std::vector<CorpusStatsRow>& rows) {
  os << std::left << std::setw(16) << "dataset" << std::right << std::setw(12) << "instances"
     << std::setw(18) << "avg_participants" << std::setw(30) << "avg_whitespace_tokens_per_turn"
     << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.dataset << std::right << std::setw(12) << r.instances
       << std::setw(18) << std::fixed << std::setprecision(1) << r.avg_participants
       << std::setw(30) << r.avg_whitespace_tokens_per_turn << "\n";
  }
}

// --- simulate --------------------------------------------------------------

CommandResult cmd_simulate(const RunConfig& config) {
  CommandResult result;
  const auto instances = load_instances(config.instances_dir);
  if (instances.empty()) throw ConfigError("no instances in '" + config.instances_dir.string() + "'");
  if (config.simulations.empty()) throw ConfigError("no simulation configurations");

  Ledger ledger(ledger_path(config));
  std::map<std::string, std::shared_ptr<Backend>> backends;
  for (const auto& s : config.simulations) {
    if (!backends.count(s.model)) backends[s.model] = backend_named(config, s.model);
  }

  struct Pair {
    const ContinuationInstance* instance;
    const SimulationConfig* sim;
  };
  std::vector<Pair> todo;
  for (const auto& inst : instances) {
    for (const auto& sim : config.simulations) {
      const auto prev = ledger.latest(pair_key(inst.instance_id, sim.label()));
      const bool done = prev && (prev->status == PairStatus::simulated || prev->status == PairStatus::judged ||
                                 (prev->status == PairStatus::failed && prev->stage == "judge")) &&
                        fs::exists(simulation_file(config, inst.instance_id, sim));
      if (done) {
        ++result.skipped;
        continue;
      }
      todo.push_back({&inst, &sim});
    }
  }

  info(std::to_string(todo.size()) + " simulation(s) to run, " + std::to_string(result.skipped) +
       " already done");
  std::mutex result_mutex;
  set_http_max_concurrency(config.max_concurrency);
  run_bounded(todo.size(), config.max_concurrency, [&](std::size_t i) {
    const auto& [inst, sim] = todo[i];
    const std::string key = pair_key(inst->instance_id, sim->label());
    const fs::path out = simulation_file(config, inst->instance_id, *sim);
    try {
      GeneratedContinuation g = simulate_continuation(*inst, *sim, *backends.at(sim->model));
      const std::string text = io::dump(to_json(g));
      io::write_text_atomic(out, text);
      ledger.append({key, "simulate", PairStatus::simulated, "", out.string(), content_digest(text)});
      std::lock_guard lock(result_mutex);
      ++result.processed;
    } catch (const std::exception& e) {
      ledger.append({key, "simulate", PairStatus::failed, e.what(), "", ""});
      std::lock_guard lock(result_mutex);
      result.failures.push_back(key + ": " + e.what());
    }
  });
  std::sort(result.failures.begin(), result.failures.end());
  for (const auto& f : result.failures) warn("simulation failed: " + f);
  result.exit_code = result.failures.empty() ? kExitOk : kExitPartial;
  return result;
}

// --- judge -----------------------------------------------------------------

CommandResult cmd_judge(const RunConfig& config, JudgeSubjects subjects) {
  CommandResult result;
  if (config.judge.backend.empty()) throw ConfigError("judge.backend is not configured");
  const auto instances = load_instances(config.instances_dir);
  if (instances.empty()) throw ConfigError("no instances in '" + config.instances_dir.string() + "'");
  auto backend = backend_named(config, config.judge.backend);
  Ledger ledger(ledger_path(config));

  const bool do_reference = config.judge.reference && subjects != JudgeSubjects::simulations;
  const bool do_simulations = config.judge.simulations && subjects != JudgeSubjects::reference;

  struct Task {
    const ContinuationInstance* instance;
    const SimulationConfig* sim;  // null for the reference continuation
  };
  std::vector<Task> todo;
  for (const auto& inst : instances) {
    if (do_reference) {
      const auto prev = ledger.latest(pair_key(inst.instance_id, std::string(kReferenceSubject)));
      if (prev && prev->status == PairStatus::judged &&
          fs::exists(judgment_file(config, inst.instance_id, std::string(kReferenceSubject))))
        ++result.skipped;
      else
        todo.push_back({&inst, nullptr});
    }
    if (do_simulations) {
      for (const auto& sim : config.simulations) {
        const auto prev = ledger.latest(pair_key(inst.instance_id, sim.label()));
        const std::string subject = simulation_subject(sim.label());
        if (!prev || prev->status == PairStatus::pending ||
            (prev->status == PairStatus::failed && prev->stage != "judge")) {
          continue;  // not simulated yet
        }
        if (prev->status == PairStatus::judged && fs::exists(judgment_file(config, inst.instance_id, subject))) {
          ++result.skipped;
          continue;
        }
        todo.push_back({&inst, &sim});
      }
    }
  }

  info(std::to_string(todo.size()) + " judgment(s) to run, " + std::to_string(result.skipped) +
       " already done");
  std::mutex result_mutex;
  set_http_max_concurrency(config.max_concurrency);
  run_bounded(todo.size(), config.max_concurrency, [&](std::size_t i) {
    const auto& [inst, sim] = todo[i];
    const std::string subject =
        sim ? simulation_subject(sim->label()) : std::string(kReferenceSubject);
    const std::string key = pair_key(inst->instance_id, sim ? sim->label() : std::string(kReferenceSubject));
    try {
      std::vector<Turn> turns;
      if (sim) {
        turns = continuation_from_json(io::read_json(simulation_file(config, inst->instance_id, *sim))).turns;
      } else {
        turns = inst->reference;
      }
      Judgment j;
      j.instance_id = inst->instance_id;
      j.subject = subject;
      j.first_turn = turns.front().turn_number;
      j.last_turn = turns.back().turn_number;
      j.overall = judge_overall(*inst, turns, *backend);
      j.fine_grained = judge_fine_grained(*inst, turns, *backend, config.judge.want_indices);
      const fs::path out = judgment_file(config, inst->instance_id, subject);
      const std::string text = io::dump(to_json(j));
      io::write_text_atomic(out, text);
      ledger.append({key, "judge", PairStatus::judged, "", out.string(), content_digest(text)});
      std::lock_guard lock(result_mutex);
      ++result.processed;
    } catch (const std::exception& e) {
      ledger.append({key, "judge", PairStatus::failed, e.what(), "", ""});
      std::lock_guard lock(result_mutex);
      result.failures.push_back(key + ": " + e.what());
    }
  });
  std::sort(result.failures.begin(), result.failures.end());
  for (const auto& f : result.failures) warn("judging failed: " + f);
  result.exit_code = result.failures.empty() ? kExitOk : kExitPartial;
  return result;
}

// --- reports ---------------------------------------------------------------

std::string format_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", value);
  std::string s(buf);
  if (s == "-0.0000") s = "0.0000";
  return s;
}

std::string aggregate_csv(const std::vector<AggregateStats>& stats, bool behaviors) {
  std::string out = "group,metric,point,ci_low,ci_high\n";
  auto row = [&](const std::string& group, std::string_view metric, const ConfidenceInterval& ci) {
    out += group + "," + std::string(metric) + "," + format_number(ci.point) + "," +
           format_number(ci.low) + "," + format_number(ci.high) + "\n";
  };
  for (const auto& s : stats) {
    if (behaviors) {
      if (!s.per_behavior) continue;
      for (const auto& b : kBehaviors) row(s.group_key, b.key, (*s.per_behavior)[index_of(b.kind)]);
    } else {
      if (s.overall_consistency) row(s.group_key, "consistency", *s.overall_consistency);
      if (s.overall_collaborativeness) row(s.group_key, "collaborativeness", *s.overall_collaborativeness);
    }
  }
  return out;
}

CommandResult cmd_aggregate(const RunConfig& config) {
  CommandResult result;
  const auto judgments = load_judgments(judgments_dir(config));
  if (judgments.empty()) throw MissingInputs({judgments_dir(config).string() + "/*.json"});
  const auto stats = aggregate(judgments, Grouping::by_subject, config.stats);

  const fs::path dir = report_dir(config);
  io::write_text_atomic(dir / "overall_scores.csv", aggregate_csv(stats, false));
  const bool any_fine = std::any_of(stats.begin(), stats.end(),
                                    [](const AggregateStats& s) { return s.per_behavior.has_value(); });
  if (any_fine) {
    io::write_text_atomic(dir / "behaviors.csv", aggregate_csv(stats, true));
  } else {
    result.warnings.push_back("no fine-grained judgments; behaviors.csv not written");
    warn(result.warnings.back());
  }
  std::string sizes = "group,n\n";
  for (const auto& s : stats) sizes += s.group_key + "," + std::to_string(s.members) + "\n";
  io::write_text_atomic(dir / "group_sizes.csv", sizes);
  result.processed = judgments.size();
  return result;
}

CommandResult cmd_agreement(const RunConfig& config) {
  CommandResult result;
  const auto& ag = config.agreement;
  if (ag.annotators.empty()) throw ConfigError("agreement.annotators is empty");

  std::vector<Judgment> judgments;
  const bool derive_labels = ag.judge_labels.empty();
  const bool derive_scores = ag.judge_scores.empty();
  if (derive_labels || derive_scores) judgments = load_judgments(judgments_dir(config));

  RaterLabels judge_labels = derive_labels ? rater_labels_from_judgments(judgments)
                                           : rater_labels_from_json(io::read_json(ag.judge_labels));
  ScoreTable judge_scores = derive_scores ? score_table_from_judgments(judgments)
                                          : score_table_from_json(io::read_json(ag.judge_scores));

  std::vector<AgreementReport> reports;
  json per_annotator = json::array();
  for (std::size_t i = 0; i < ag.annotators.size(); ++i) {
    const RaterLabels annotator = rater_labels_from_json(io::read_json(ag.annotators[i]));
    RaterLabels judge_view = judge_labels;
    if (derive_labels) {
      // judgments cover every instance; annotators label a subset
      std::erase_if(judge_view, [&](const auto& kv) { return !annotator.count(kv.first); });
    }
    std::optional<ScoreTable> annotator_scores;
    if (i < ag.annotator_scores.size())
      annotator_scores = score_table_from_json(io::read_json(ag.annotator_scores[i]));
    AgreementReport r = agreement(judge_view, annotator, annotator_scores ? &judge_scores : nullptr,
                                  annotator_scores ? &*annotator_scores : nullptr);
    json entry = to_json(r);
    entry["annotator"] = ag.annotators[i].filename().string();
    per_annotator.push_back(entry);
    reports.push_back(r);
  }
  json out{{"annotators", per_annotator}, {"average", to_json(average_reports(reports))}};
  io::write_text_atomic(report_dir(config) / "agreement.json", io::dump(out));
  result.processed = reports.size();
  return result;
}

CommandResult cmd_report(const RunConfig& config) {
  CommandResult result;
  const auto instances = load_instances(config.instances_dir);
  Ledger ledger(ledger_path(config));

  std::vector<std::string> missing;
  for (const auto& inst : instances) {
    auto expect = [&](const std::string& what, const std::string& subject) {
      if (fs::exists(judgment_file(config, inst.instance_id, subject))) return;
      const auto prev = ledger.latest(pair_key(inst.instance_id, what));
      if (prev && prev->status == PairStatus::failed) {
        result.warnings.push_back(pair_key(inst.instance_id, what) + " failed (" + prev->reason +
                                  "); excluded from the report");
        return;
      }
      missing.push_back(judgment_file(config, inst.instance_id, subject).string());
    };
    if (config.judge.reference) expect(std::string(kReferenceSubject), std::string(kReferenceSubject));
    if (config.judge.simulations) {
      for (const auto& sim : config.simulations) expect(sim.label(), simulation_subject(sim.label()));
    }
  }
  if (!missing.empty()) throw MissingInputs(missing);
  for (const auto& w : result.warnings) warn(w);

  CommandResult agg = cmd_aggregate(config);
  result.warnings.insert(result.warnings.end(), agg.warnings.begin(), agg.warnings.end());
  result.processed = agg.processed;

  if (!config.agreement.annotators.empty()) cmd_agreement(config);

  json estimates = json::array();
  for (const auto& sim : config.simulations) {
    json row{{"configuration", sim.label()},
             {"instances", instances.size()},
             {"turns_per_call", sim.turns_per_call},
             {"calls_per_instance", call_sizes(sim.turns_per_call).size()},
             {"avg_input_tokens", config.tokens.avg_input_tokens},
             {"avg_turn_tokens", config.tokens.avg_turn_tokens}};
    if (!instances.empty()) {
      const TokenEstimate e = estimate_run_tokens({static_cast<long>(instances.size()), sim.turns_per_call,
                                                   config.tokens.avg_input_tokens,
                                                   config.tokens.avg_turn_tokens});
      row["estimated_input_tokens"] = e.input_total;
      row["estimated_output_tokens"] = e.output_total;
    }
    long long measured_in = 0, measured_out = 0;
    std::size_t measured_runs = 0;
    for (const auto& inst : instances) {
      const fs::path f = simulation_file(config, inst.instance_id, sim);
      if (!fs::exists(f)) continue;
      for (const auto& c : continuation_from_json(io::read_json(f)).calls) {
        measured_in += c.input_tokens;
        measured_out += c.output_tokens;
      }
      ++measured_runs;
    }
    row["measured_runs"] = measured_runs;
    row["measured_input_tokens"] = measured_in;
    row["measured_output_tokens"] = measured_out;
    estimates.push_back(row);
  }
  json tokens{{"token_unit", "whitespace tokens unless the backend reports usage"},
              {"configurations", estimates}};
  io::write_text_atomic(report_dir(config) / "token_estimate.json", io::dump(tokens));
  return result;
}

}  // namespace convsim
