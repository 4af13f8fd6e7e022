#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "convsim/errors.hpp"
#include "convsim/pipeline.hpp"

namespace {

void print_summary(std::string_view command, const convsim::CommandResult& r) {
  std::cout << command << ": " << r.processed << " processed, " << r.skipped << " skipped, "
            << r.failures.size() << " failed\n";
  for (const auto& f : r.failures) std::cout << "  failed: " << f << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-party conversation simulation and evaluation"};
  app.require_subcommand(1);

  std::string config_path = "convsim.json";
  std::optional<std::uint64_t> seed;
  std::optional<int> max_concurrency;
  std::optional<std::string> backend;
  app.add_option("--config", config_path, "Run configuration (JSON)");
  app.add_option("--seed", seed, "Override the ingest and bootstrap seed");
  app.add_option("--max-concurrency", max_concurrency, "Maximum simultaneous backend requests");
  app.add_option("--backend", backend, "Backend name used for ingest and judging");

  std::string sources;
  auto* ingest = app.add_subcommand("ingest", "Build continuation instances from source conversations");
  ingest->add_option("--sources", sources, "Directory of source conversation files");

  auto* simulate = app.add_subcommand("simulate", "Generate continuations for every configuration");

  std::string subject = "all";
  auto* judge = app.add_subcommand("judge", "Judge reference and simulated continuations");
  judge->add_option("--subject", subject, "all, reference or simulations")
      ->check(CLI::IsMember({"all", "reference", "simulations"}));

  auto* aggregate = app.add_subcommand("aggregate", "Write score and behavior tables with intervals");
  auto* agreement = app.add_subcommand("agreement", "Compare judge labels with human annotations");
  auto* report = app.add_subcommand("report", "Aggregate, agreement and token estimates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? convsim::kExitOk : convsim::kExitConfig;
  }

  try {
    convsim::RunConfig config = convsim::load_run_config(config_path);
    convsim::apply_overrides(config, {seed, max_concurrency, backend});

    convsim::CommandResult result;
    if (ingest->parsed()) {
      auto r = convsim::cmd_ingest(config, sources);
      convsim::print_corpus_stats(std::cout, r.stats);
      print_summary("ingest", r);
      result = r;
    } else if (simulate->parsed()) {
      result = convsim::cmd_simulate(config);
      print_summary("simulate", result);
    } else if (judge->parsed()) {
      const auto which = subject == "reference"     ? convsim::JudgeSubjects::reference
                         : subject == "simulations" ? convsim::JudgeSubjects::simulations
                                                    : convsim::JudgeSubjects::all;
      result = convsim::cmd_judge(config, which);
      print_summary("judge", result);
    } else if (aggregate->parsed()) {
      result = convsim::cmd_aggregate(config);
      print_summary("aggregate", result);
    } else if (agreement->parsed()) {
      result = convsim::cmd_agreement(config);
      print_summary("agreement", result);
    } else if (report->parsed()) {
      result = convsim::cmd_report(config);
      print_summary("report", result);
    }
    return result.exit_code;
  } catch (const convsim::MissingInputs& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& m : e.missing()) std::cerr << "  missing: " << m << "\n";
    return convsim::kExitConfig;
  } catch (const convsim::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return convsim::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return convsim::kExitConfig;
  }
}
