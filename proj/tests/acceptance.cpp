// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "convsim/behaviors.hpp"
#include "convsim/errors.hpp"
#include "convsim/judge.hpp"
#include "convsim/pipeline.hpp"
#include "convsim/simulator.hpp"
#include "convsim/stats.hpp"
#include "test_support.hpp"

using namespace convsim;
using namespace testing_support;

namespace {

using Clock = std::chrono::steady_clock;

struct Check {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

// --- 1: metric oracles -------------------------------------------------------

double kappa_from_rates(int tp, int fp, int fn, int tn) {
  const double n = tp + fp + fn + tn;
  const double po = (tp + tn) / n;
  const double pred1 = (tp + fp) / n, gold1 = (tp + fn) / n;
  const double pe = pred1 * gold1 + (1 - pred1) * (1 - gold1);
  if (pe == 1.0) return 0.0;
  return (po - pe) / (1 - pe);
}

double mcc_from_counts(int tp, int fp, int fn, int tn) {
  const double d = static_cast<double>(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (d == 0.0) return 0.0;
  return (static_cast<double>(tp) * tn - static_cast<double>(fp) * fn) / std::sqrt(d);
}

std::vector<double> brute_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      less += w < v[i];
      equal += w == v[i];
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

Check metric_oracles() {
  Check c;
  const auto start = Clock::now();
  long pairs = 0;
  for (int len = 1; len <= 8; ++len) {
    const unsigned total = 1u << (2 * len);
    std::vector<int> a(static_cast<std::size_t>(len)), b(static_cast<std::size_t>(len));
    for (unsigned code = 0; code < total; ++code) {
      int tp = 0, fp = 0, fn = 0, tn = 0;
      for (int i = 0; i < len; ++i) {
        a[static_cast<std::size_t>(i)] = (code >> i) & 1u;
        b[static_cast<std::size_t>(i)] = (code >> (i + len)) & 1u;
        const int p = a[static_cast<std::size_t>(i)], g = b[static_cast<std::size_t>(i)];
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
        tn += !p && !g;
      }
      const double k = cohen_kappa(a, b), m = matthews_corr(a, b);
      c.expect(std::abs(k - kappa_from_rates(tp, fp, fn, tn)) <= 1e-12, "kappa differs from oracle");
      c.expect(std::abs(m - mcc_from_counts(tp, fp, fn, tn)) <= 1e-12, "mcc differs from oracle");
      ++pairs;
    }
  }
  std::mt19937_64 gen(2024);
  int checked = 0;
  while (checked < 1000) {
    const std::size_t n = 2 + gen() % 49;
    std::vector<double> x(n), y(n);
    const bool coarse = gen() % 2 == 0;  // coarse values produce many ties
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = coarse ? static_cast<double>(gen() % 5) : static_cast<double>(gen() % 100000) / 997.0;
      y[i] = coarse ? static_cast<double>(gen() % 5) : static_cast<double>(gen() % 100000) / 991.0;
    }
    const auto rx = brute_ranks(x), ry = brute_ranks(y);
    if (std::adjacent_find(x.begin(), x.end(), std::not_equal_to<>()) == x.end() ||
        std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end())
      continue;  // constant series are rejected by contract
    const double want = pearson(rx, ry);
    c.expect(std::abs(spearman_rho(x, y) - want) <= 1e-9, "spearman differs from oracle");
    ++checked;
  }
  const double elapsed = seconds_since(start);
  c.expect(pairs == (262144 - 4) / 3, "wrong number of enumerated pairs");
  c.expect(elapsed < 10.0, "runtime above 10 s");
  if (c.ok) {
    std::ostringstream os;
    os << pairs << " binary pairs, 1000 spearman pairs, " << elapsed << " s";
    c.detail = os.str();
  }
  return c;
}

// --- 2: hand-derived values ---------------------------------------------------

Check hand_values() {
  Check c;
  const std::vector<int> pred{1, 0, 0, 0}, gold{1, 1, 0, 0};
  c.expect(cohen_kappa(pred, gold) == 0.5, "kappa != 0.5");
  c.expect(std::abs(matthews_corr(pred, gold) - 2.0 / std::sqrt(12.0)) <= 1e-15, "mcc != 2/sqrt(12)");
  const auto conf = confusion(pred, gold);
  c.expect(conf.tp == 1 && conf.fp == 0 && conf.fn == 1 && conf.tn == 2, "confusion counts");
  const auto none = precision_recall(std::vector<int>{0, 0, 0}, std::vector<int>{1, 0, 1});
  c.expect(none.precision_pct == 0.0 && none.recall_pct == 0.0, "0/0 convention");
  const auto empty_gold = precision_recall(std::vector<int>{0, 0}, std::vector<int>{0, 0});
  c.expect(empty_gold.precision_pct == 0.0 && empty_gold.recall_pct == 0.0, "0/0 convention on empty gold");
  const auto third = precision_recall(std::vector<int>{1, 1, 1, 0}, std::vector<int>{1, 0, 0, 0});
  c.expect(std::abs(third.precision_pct - 100.0 / 3.0) < 1e-12 && third.recall_pct == 100.0, "33.33/100");
  if (c.ok) c.detail = "kappa 0.5, mcc 0.57735, degenerate precision/recall 0";
  return c;
}

// --- 3: bootstrap properties ----------------------------------------------------

Check bootstrap_properties() {
  Check c;
  const std::vector<double> constant(40, 4.25);
  const auto k = bootstrap_ci(constant);
  c.expect(k.point == 4.25 && k.low == 4.25 && k.high == 4.25, "constant input not degenerate");

  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  const auto pinned = bootstrap_ci(v, {0.95, 10000, 42});
  // values from the independent reference resampler in tests/fixtures
  c.expect(pinned.low == 0x1.6613f7ced9168p+5 && pinned.high == 0x1.c1d78d4fdf3b5p+5,
           "1..100 interval differs from reference resampler");

  std::mt19937_64 gen(77);
  std::vector<double> big(300);
  for (auto& x : big) x = static_cast<double>(gen() % 10);
  const auto start = Clock::now();
  const auto a = bootstrap_ci(big, {0.95, 10000, 7});
  const double elapsed = seconds_since(start);
  const auto b = bootstrap_ci(big, {0.95, 10000, 7});
  c.expect(a.low == b.low && a.high == b.high && a.point == b.point, "not reproducible");
  const auto [lo, hi] = std::minmax_element(big.begin(), big.end());
  c.expect(*lo <= a.low && a.low <= a.high && a.high <= *hi, "endpoints outside data range");
  c.expect(elapsed < 5.0, "runtime above 5 s");
  if (c.ok) {
    std::ostringstream os;
    os << "300 values, B=10000 in " << elapsed << " s";
    c.detail = os.str();
  }
  return c;
}

// --- 4: end to end on scripted mocks ----------------------------------------------

Check end_to_end() {
  Check c;
  const auto start = Clock::now();
  TempDir dir("acceptance_e2e");
  RunConfig config = load_run_config(fixture_dir() / "e2e" / "config.json");
  config.output_dir = dir.path();
  for (const auto& [name, d] : config.backends)
    c.expect(d.kind != BackendKind::http_chat, "network backend in the offline configuration");
  c.expect(load_instances(config.instances_dir).size() == 6, "expected 6 fixture instances");
  c.expect(cmd_simulate(config).exit_code == kExitOk, "simulate failed");
  c.expect(cmd_judge(config).exit_code == kExitOk, "judge failed");
  c.expect(cmd_report(config).exit_code == kExitOk, "report failed");
  for (const char* name : {"overall_scores.csv", "behaviors.csv", "group_sizes.csv"}) {
    const auto got = dir.path() / "report" / name;
    c.expect(fs::exists(got) && io::read_text(got) == io::read_text(fixture_dir() / "e2e" / "golden" / name),
             std::string(name) + " differs from golden");
  }
  const double elapsed = seconds_since(start);
  c.expect(elapsed < 30.0, "runtime above 30 s");
  if (c.ok) {
    std::ostringstream os;
    os << "6 instances x (reference + 2 configs), golden CSVs identical, " << elapsed << " s";
    c.detail = os.str();
  }
  return c;
}

// --- 5: simulator invariants under randomized mocks --------------------------------

// Answers a generation prompt by reading its requested range and history
// window, with seeded noise: malformed replies, lower-cased speakers.
std::string random_generation_reply(const ChatPrompt& p, std::mt19937_64& gen) {
  if (gen() % 10 == 0) return "I will now continue the meeting.";
  const auto pos = p.user.find("responses from turn ");
  const int first = std::stoi(p.user.substr(pos + 20));
  const int last = std::stoi(p.user.substr(p.user.find(" to turn ", pos) + 9));
  const auto hist = p.user.find("## Recent Conversation History");
  const json window = *extract_first_json(p.user.substr(hist));
  json echo = json::array();
  for (std::size_t i = window.size() - 5; i < window.size(); ++i) echo.push_back(window[i]);
  json turns = json::array();
  for (int t = first; t <= last; ++t) {
    std::string speaker = roster()[gen() % roster().size()];
    if (gen() % 7 == 0) std::transform(speaker.begin(), speaker.end(), speaker.begin(), ::tolower);
    turns.push_back(json{{"turn_number", t}, {"speaker", speaker}, {"content", "random " + std::to_string(gen() % 1000)}});
  }
  const json reply{{"five_previous_turns", echo}, {"generated_turns", turns}};
  return "Sure.\n```json\n" + reply.dump() + "\n```";
}

Check simulator_invariants() {
  Check c;
  int successes = 0, failures = 0;
  for (int k : {1, 5, 7, 30}) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto inst = synthetic_instance(30 + static_cast<int>(seed) * 3, seed);
      std::mt19937_64 gen(seed * 31 + static_cast<std::uint64_t>(k));
      std::mutex m;
      FunctionBackend backend([&](const ChatPrompt& p, int) {
        std::lock_guard lock(m);
        return random_generation_reply(p, gen);
      });
      SimulationConfig config;
      config.model = "random";
      config.turns_per_call = k;
      config.repair_speakers = true;
      try {
        const auto g = simulate_continuation(inst, config, backend);
        ++successes;
        c.expect(g.turns.size() == 30, "continuation length != 30");
        for (std::size_t i = 0; i < g.turns.size(); ++i) {
          c.expect(g.turns[i].turn_number == inst.first_generated_turn_number + static_cast<int>(i),
                   "numbering not contiguous");
          c.expect(inst.metadata.has_participant(g.turns[i].speaker), "speaker outside roster");
        }
        c.expect(g.calls.size() == static_cast<std::size_t>((30 + k - 1) / k), "call count != ceil(30/k)");
      } catch (const SimulationError&) {
        ++failures;  // three malformed replies in a row
      }
    }
  }
  c.expect(successes > 300, "too few successful runs");
  if (c.ok) {
    std::ostringstream os;
    os << successes << " successful runs checked, " << failures << " exhausted retries";
    c.detail = os.str();
  }
  return c;
}

// --- 6: prompt golden tests ----------------------------------------------------

std::string fixture_text(const std::string& name) {
  std::string s = io::read_text(fixture_dir() / "prompts" / name);
  while (!s.empty() && s.back() == '\n') s.pop_back();
  return s;
}

Check prompt_goldens() {
  Check c;
  const auto inst = synthetic_instance(30);
  SimulationConfig config;
  const auto vanilla = render_generation_prompt(inst, {}, config);
  config.prompting_mode = PromptingMode::taxonomy_guided;
  const auto guided = render_generation_prompt(inst, {}, config);

  std::istringstream lines(fixture_text("generation_instructions.txt"));
  std::string line;
  while (std::getline(lines, line)) {
    c.expect(vanilla.system.find(line) != std::string::npos, "vanilla prompt lacks: " + line);
    c.expect(guided.system.find(line) != std::string::npos, "taxonomy prompt lacks: " + line);
  }
  c.expect(vanilla.system.find("mimic human-like conversation by referring to the conversation history") !=
               std::string::npos,
           "human-like instruction missing");

  std::istringstream rows(fixture_text("behaviors.tsv"));
  int behaviors = 0;
  while (std::getline(rows, line)) {
    const auto tab = line.find('\t');
    const std::string name = line.substr(0, tab), definition = line.substr(tab + 1);
    c.expect(guided.system.find(name) != std::string::npos, "taxonomy prompt lacks name " + name);
    c.expect(guided.system.find(definition) != std::string::npos, "taxonomy prompt lacks definition of " + name);
    c.expect(vanilla.system.find(definition) == std::string::npos, "vanilla prompt mentions " + name);
    ++behaviors;
  }
  c.expect(behaviors == 10, "behavior fixture must list 10 rows");

  const auto overall = render_overall_prompt(inst, inst.reference);
  c.expect(overall.system.find(fixture_text("consistency_ladder.txt")) != std::string::npos,
           "consistency rubric ladder missing");
  c.expect(overall.system.find(fixture_text("collaborativeness_ladder.txt")) != std::string::npos,
           "collaborativeness rubric ladder missing");
  if (c.ok) c.detail = "generation instructions, 10 behaviors, both rubric ladders present";
  return c;
}

// --- 7: instance builder property -------------------------------------------------

Check instance_builder() {
  Check c;
  int built = 0;
  for (int n = 60; n <= 200; ++n) {
    const auto conv = synthetic_conversation(n, static_cast<std::uint64_t>(n));
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const int s = select_start_point(conv, seed);
      c.expect(s >= 30 && s <= n - 30, "start point out of range");
      const auto inst = assemble_instance(conv, s, sample_metadata(), "summary", {conv.conversation_id, SourceDataset::SIM});
      std::vector<Turn> joined = inst.history;
      joined.insert(joined.end(), inst.reference.begin(), inst.reference.end());
      const std::vector<Turn> window(conv.turns.begin() + (s - 30), conv.turns.begin() + (s + 30));
      c.expect(joined == window, "history + reference != turns[s-30, s+30)");
      const auto reparsed = instance_from_json(io::parse_json(io::dump(to_json(inst)), "roundtrip"));
      c.expect(reparsed == inst, "round trip lost information");
      ++built;
    }
  }
  if (c.ok) c.detail = std::to_string(built) + " instances over lengths 60-200";
  return c;
}

// --- 8: token estimate -------------------------------------------------------------

Check token_estimate() {
  Check c;
  const auto e = estimate_run_tokens({300, 1, 4000, 50});
  c.expect(e.input_total == 36'000'000, "input tokens != 36,000,000");
  c.expect(e.output_total == 450'000, "output tokens != 450,000");
  if (c.ok) c.detail = "n=300 k=1: 36,000,000 input / 450,000 output";
  return c;
}

// --- 9: declared non-reproducible values ---------------------------------------------

// Optional live smoke test: CONVSIM_LIVE_CONFIG names a run configuration whose
// first simulation backend is a real model. Only schema validity is asserted.
Check live_smoke(const char* config_path) {
  Check c;
  TempDir dir("acceptance_live");
  RunConfig config = load_run_config(config_path);
  config.output_dir = dir.path();
  c.expect(!config.simulations.empty(), "live configuration has no simulations");
  auto instances = load_instances(config.instances_dir);
  c.expect(instances.size() >= 2, "live configuration needs 2 instances");
  if (!c.ok) return c;
  instances.resize(2);
  const auto backend = make_backend(config.backends.at(config.simulations.front().model));
  const auto judge = config.judge.backend.empty() ? nullptr : make_backend(config.backends.at(config.judge.backend));
  for (const auto& inst : instances) {
    try {
      const auto g = simulate_continuation(inst, config.simulations.front(), *backend);
      c.expect(g.turns.size() == 30, "live continuation length != 30");
      for (const auto& t : g.turns) c.expect(inst.metadata.has_participant(t.speaker), "live speaker outside roster");
      if (judge) {
        const auto s = judge_overall(inst, g.turns, *judge);
        c.expect(s.consistency >= 1 && s.consistency <= 10, "live score out of range");
        judge_fine_grained(inst, g.turns, *judge, config.judge.want_indices);
      }
    } catch (const Error& e) {
      c.expect(false, std::string("live run failed: ") + e.what());
    }
  }
  if (c.ok) c.detail = "live smoke test: 2 instances, schema and invariants hold";
  return c;
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int id, const std::string& title, const std::function<Check()>& fn) {
    Check c;
    try {
      c = fn();
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail = std::string("exception: ") + e.what();
    }
    std::cout << "AC" << id << " " << (c.ok ? "PASS" : "FAIL") << "  " << title << " (" << c.detail << ")\n";
    if (!c.ok) ++failed;
  };

  report(1, "metric oracles", metric_oracles);
  report(2, "hand-derived kappa/MCC/precision/recall", hand_values);
  report(3, "bootstrap properties", bootstrap_properties);
  report(4, "end-to-end golden CSVs on scripted mocks", end_to_end);
  report(5, "simulator invariants under randomized mocks", simulator_invariants);
  report(6, "prompt golden tests", prompt_goldens);
  report(7, "instance builder split and round trip", instance_builder);
  report(8, "token estimate", token_estimate);

  std::cout << "AC9 PASS  declared non-reproducible: model scores and human agreement values need paid "
               "proprietary models and human annotators; the property suites above stand in for them\n";
  if (const char* live = std::getenv("CONVSIM_LIVE_CONFIG"); live && *live) {
    report(9, "live smoke test", [&] { return live_smoke(live); });
  } else {
    std::cout << "AC9 SKIP  live smoke test (set CONVSIM_LIVE_CONFIG to a run configuration to enable)\n";
  }

  std::cout << (failed == 0 ? "all acceptance criteria passed" : std::to_string(failed) + " criteria failed") << "\n";
  return failed == 0 ? 0 : 1;
}
