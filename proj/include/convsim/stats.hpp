#pragma once

// Agreement metrics between raters and bootstrap aggregation of judgments.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "convsim/behaviors.hpp"
#include "convsim/judge.hpp"

namespace convsim {

/// Binary labels (one per judged turn) or ordinal values (one per conversation).
struct LabelSeries {
  std::string subject_id;
  std::vector<int> labels;
};

struct ConfusionCounts {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  long total() const { return tp + fp + fn + tn; }
};

/// Rows are `pred`, columns `gold`. Throws LengthMismatch or
/// PreconditionError (empty or non-binary input).
ConfusionCounts confusion(std::span<const int> pred, std::span<const int> gold);

/// (p_o - p_e) / (1 - p_e); 0 when p_e == 1.
double cohen_kappa(std::span<const int> a, std::span<const int> b);
double cohen_kappa(const LabelSeries& a, const LabelSeries& b);
double cohen_kappa(const ConfusionCounts& c);

/// 0 when any marginal is empty.
double matthews_corr(std::span<const int> a, std::span<const int> b);
double matthews_corr(const LabelSeries& a, const LabelSeries& b);
double matthews_corr(const ConfusionCounts& c);

/// Pearson correlation of average ranks. Throws DegenerateInput for a
/// constant series.
double spearman_rho(std::span<const double> xs, std::span<const double> ys);

/// Average (1-based) ranks; ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

struct PrecisionRecall {
  double precision_pct = 0.0;
  double recall_pct = 0.0;
};

/// Percentages; 0 for 0/0.
PrecisionRecall precision_recall(std::span<const int> pred, std::span<const int> gold);
PrecisionRecall precision_recall(const ConfusionCounts& c);

struct ConfidenceInterval {
  double point = 0.0;
  double low = 0.0;
  double high = 0.0;
  double level = 0.95;
  int resamples = 0;
};

struct BootstrapOptions {
  double level = 0.95;
  int resamples = 10000;
  std::uint64_t seed = 42;
};

/// Percentile bootstrap of the mean. Deterministic in (values, options) on
/// every platform.
ConfidenceInterval bootstrap_ci(std::span<const double> values, const BootstrapOptions& options = {});

/// Uniform index in [0, n) by rejection sampling on raw generator output.
std::size_t bounded_index(std::mt19937_64& gen, std::uint64_t n);

/// Quantile by linear interpolation between order statistics of sorted data.
double sorted_quantile(std::span<const double> sorted, double q);

struct AggregateStats {
  std::string group_key;  // "human" or the simulation config label
  std::size_t members = 0;
  std::optional<std::array<ConfidenceInterval, kBehaviorCount>> per_behavior;
  std::optional<ConfidenceInterval> overall_consistency;
  std::optional<ConfidenceInterval> overall_collaborativeness;
};

enum class Grouping { by_subject };

/// "human" for the reference subject, the config label for simulations.
std::string group_key_for_subject(std::string_view subject);

/// One AggregateStats per non-empty group, sorted with "human" first and the
/// rest by key. Throws SchemaError when a group mixes judgments with and
/// without overall or fine-grained results.
std::vector<AggregateStats> aggregate(const std::vector<Judgment>& judgments,
                                      Grouping grouping = Grouping::by_subject,
                                      const BootstrapOptions& options = {});

/// Turn-level labels of one rater: subject -> (universe of turns, turns flagged
/// per behavior).
struct RaterSubject {
  std::set<int> universe;
  std::array<std::set<int>, kBehaviorCount> flagged;
};
using RaterLabels = std::map<std::string, RaterSubject>;

/// Reads [{subject_id, turn_range:[first,last], categories:{behavior:[turns]}}]
/// (a single object is accepted too).
RaterLabels rater_labels_from_json(const json& j);
/// Judge-side labels from judgments that carry turn indices. Subject ids are
/// "<instance_id>/<subject>".
RaterLabels rater_labels_from_judgments(const std::vector<Judgment>& judgments);

struct AgreementMetrics {
  double precision = 0.0;  // percent
  double recall = 0.0;     // percent
  double mcc = 0.0;
  double kappa = 0.0;
  double detected_by_judge = 0.0;
  double detected_by_annotator = 0.0;
};

struct AgreementReport {
  std::array<AgreementMetrics, kBehaviorCount> per_category{};
  AgreementMetrics overall;
  std::optional<double> spearman_consistency;
  std::optional<double> spearman_collaborativeness;
};

/// Conversation-level scores keyed by subject id.
using ScoreTable = std::map<std::string, std::pair<double, double>>;  // consistency, collaborativeness
ScoreTable score_table_from_json(const json& j);
ScoreTable score_table_from_judgments(const std::vector<Judgment>& judgments);

/// Judge labels are predictions, annotator labels the gold side. Throws
/// UniverseMismatch unless both sides cover identical subjects and turns.
AgreementReport agreement(const RaterLabels& judge, const RaterLabels& annotator,
                          const ScoreTable* judge_scores = nullptr,
                          const ScoreTable* annotator_scores = nullptr);

/// Element-wise mean of per-annotator reports.
AgreementReport average_reports(const std::vector<AgreementReport>& reports);

json to_json(const AgreementReport& report);

}  // namespace convsim
