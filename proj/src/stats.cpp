#include "convsim/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace convsim {

namespace {

void check_binary_pair(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size())
    throw LengthMismatch("label series differ in length (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  if (a.empty()) throw PreconditionError("label series are empty");
}

}  // namespace

ConfusionCounts confusion(std::span<const int> pred, std::span<const int> gold) {
  check_binary_pair(pred, gold);
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i];
    const int g = gold[i];
    if ((p != 0 && p != 1) || (g != 0 && g != 1))
      throw PreconditionError("binary label series may only hold 0 and 1");
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double cohen_kappa(const ConfusionCounts& c) {
  // 2(tp*tn - fn*fp) / ((tp+fp)(fp+tn) + (tp+fn)(fn+tn)); the denominator
  // vanishes exactly when chance agreement is 1.
  const long long num = 2LL * (static_cast<long long>(c.tp) * c.tn - static_cast<long long>(c.fn) * c.fp);
  const long long den = static_cast<long long>(c.tp + c.fp) * (c.fp + c.tn) +
                        static_cast<long long>(c.tp + c.fn) * (c.fn + c.tn);
  if (den == 0) return 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

double cohen_kappa(std::span<const int> a, std::span<const int> b) {
  return cohen_kappa(confusion(a, b));
}

double cohen_kappa(const LabelSeries& a, const LabelSeries& b) {
  return cohen_kappa(std::span<const int>(a.labels), std::span<const int>(b.labels));
}

double matthews_corr(const ConfusionCounts& c) {
  const double num = static_cast<double>(static_cast<long long>(c.tp) * c.tn -
                                         static_cast<long long>(c.fp) * c.fn);
  const long long m1 = c.tp + c.fp, m2 = c.tp + c.fn, m3 = c.tn + c.fp, m4 = c.tn + c.fn;
  if (m1 == 0 || m2 == 0 || m3 == 0 || m4 == 0) return 0.0;
  return num / std::sqrt(static_cast<double>(m1) * static_cast<double>(m2) *
                         static_cast<double>(m3) * static_cast<double>(m4));
}

double matthews_corr(std::span<const int> a, std::span<const int> b) {
  return matthews_corr(confusion(a, b));
}

double matthews_corr(const LabelSeries& a, const LabelSeries& b) {
  return matthews_corr(std::span<const int>(a.labels), std::span<const int>(b.labels));
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman_rho(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size())
    throw LengthMismatch("score series differ in length (" + std::to_string(xs.size()) + " vs " +
                         std::to_string(ys.size()) + ")");
  if (xs.size() < 2) throw PreconditionError("spearman_rho needs at least two pairs");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(rx.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) throw DegenerateInput("spearman_rho is undefined for a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

PrecisionRecall precision_recall(const ConfusionCounts& c) {
  PrecisionRecall pr;
  if (c.tp + c.fp > 0) pr.precision_pct = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) pr.recall_pct = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return pr;
}

PrecisionRecall precision_recall(std::span<const int> pred, std::span<const int> gold) {
  return precision_recall(confusion(pred, gold));
}

// --- bootstrap -------------------------------------------------------------

std::size_t bounded_index(std::mt19937_64& gen, std::uint64_t n) {
  if (n == 0) throw PreconditionError("bounded_index needs n > 0");
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = max - max % n;
  std::uint64_t draw = gen();
  while (draw >= limit) draw = gen();
  return static_cast<std::size_t>(draw % n);
}

double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw PreconditionError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

ConfidenceInterval bootstrap_ci(std::span<const double> values, const BootstrapOptions& options) {
  if (values.empty()) throw PreconditionError("bootstrap_ci needs at least one value");
  if (!(options.level > 0.0 && options.level < 1.0)) throw PreconditionError("level must lie in (0, 1)");
  if (options.resamples < 1) throw PreconditionError("resamples must be positive");

  ConfidenceInterval ci;
  ci.level = options.level;
  ci.resamples = options.resamples;
  const double n = static_cast<double>(values.size());
  ci.point = std::accumulate(values.begin(), values.end(), 0.0) / n;
  const auto [min_it, max_it] = std::minmax_element(values.begin(), values.end());
  const double lo_bound = *min_it, hi_bound = *max_it;
  if (lo_bound == hi_bound) {
    ci.point = ci.low = ci.high = lo_bound;
    return ci;
  }
  ci.point = std::clamp(ci.point, lo_bound, hi_bound);

  std::mt19937_64 gen(options.seed);
  std::vector<double> means(static_cast<std::size_t>(options.resamples));
  for (auto& m : means) {
    double sum = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) sum += values[bounded_index(gen, values.size())];
    // rounding can push a mean a hair past the data range
    m = std::clamp(sum / n, lo_bound, hi_bound);
  }
  std::sort(means.begin(), means.end());
  const double alpha = 1.0 - options.level;
  ci.low = sorted_quantile(means, alpha / 2.0);
  ci.high = sorted_quantile(means, 1.0 - alpha / 2.0);
  return ci;
}

// --- aggregation -----------------------------------------------------------

std::string group_key_for_subject(std::string_view subject) {
  if (subject == kReferenceSubject) return "human";
  constexpr std::string_view prefix = "simulation:";
  if (subject.substr(0, prefix.size()) == prefix) return std::string(subject.substr(prefix.size()));
  return std::string(subject);
}

std::vector<AggregateStats> aggregate(const std::vector<Judgment>& judgments, Grouping,
                                      const BootstrapOptions& options) {
  std::map<std::string, std::vector<const Judgment*>> groups;
  for (const auto& j : judgments) groups[group_key_for_subject(j.subject)].push_back(&j);

  std::vector<AggregateStats> out;
  for (const auto& [key, members] : groups) {
    if (members.empty()) continue;
    const bool has_overall = members.front()->overall.has_value();
    const bool has_fine = members.front()->fine_grained.has_value();
    for (const auto* m : members) {
      if (m->overall.has_value() != has_overall || m->fine_grained.has_value() != has_fine)
        throw SchemaError("group '" + key + "' mixes judgments of different shapes (instance " +
                          m->instance_id + ")");
    }
    AggregateStats s;
    s.group_key = key;
    s.members = members.size();
    if (has_fine) {
      std::array<ConfidenceInterval, kBehaviorCount> per{};
      for (const auto& b : kBehaviors) {
        std::vector<double> values;
        for (const auto* m : members) values.push_back(m->fine_grained->count(b.kind));
        per[index_of(b.kind)] = bootstrap_ci(values, options);
      }
      s.per_behavior = per;
    }
    if (has_overall) {
      std::vector<double> cons, coll;
      for (const auto* m : members) {
        cons.push_back(m->overall->consistency);
        coll.push_back(m->overall->collaborativeness);
      }
      s.overall_consistency = bootstrap_ci(cons, options);
      s.overall_collaborativeness = bootstrap_ci(coll, options);
    }
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(), [](const AggregateStats& a, const AggregateStats& b) {
    if ((a.group_key == "human") != (b.group_key == "human")) return a.group_key == "human";
    return a.group_key < b.group_key;
  });
  return out;
}

// --- agreement -------------------------------------------------------------

RaterLabels rater_labels_from_json(const json& j) {
  RaterLabels out;
  const json items = j.is_array() ? j : json::array({j});
  for (const auto& item : items) {
    std::string subject;
    int first = 0, last = -1;
    try {
      subject = item.at("subject_id").get<std::string>();
      first = item.at("turn_range").at(0).get<int>();
      last = item.at("turn_range").at(1).get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("rater file needs subject_id and turn_range: ") + e.what());
    }
    if (last < first) throw ValidationError("turn_range of '" + subject + "' is empty");
    RaterSubject rs;
    for (int t = first; t <= last; ++t) rs.universe.insert(t);
    const json categories = item.value("categories", json::object());
    for (const auto& [name, turns] : categories.items()) {
      const auto kind = behavior_from_string(name);
      if (!kind) throw ValidationError("unknown behavior '" + name + "' for '" + subject + "'");
      for (const auto& t : turns) {
        const int turn = t.get<int>();
        if (!rs.universe.count(turn))
          throw ValidationError("turn " + std::to_string(turn) + " of '" + subject +
                                "' lies outside its turn_range");
        rs.flagged[index_of(*kind)].insert(turn);
      }
    }
    if (!out.emplace(subject, std::move(rs)).second)
      throw ValidationError("subject '" + subject + "' appears twice");
  }
  return out;
}

RaterLabels rater_labels_from_judgments(const std::vector<Judgment>& judgments) {
  RaterLabels out;
  for (const auto& j : judgments) {
    if (!j.fine_grained || !j.fine_grained->turn_indices) continue;
    RaterSubject rs;
    for (int t = j.first_turn; t <= j.last_turn; ++t) rs.universe.insert(t);
    rs.flagged = *j.fine_grained->turn_indices;
    out[j.instance_id + "/" + j.subject] = std::move(rs);
  }
  return out;
}

ScoreTable score_table_from_json(const json& j) {
  if (!j.is_array()) throw ValidationError("score file must be a JSON array");
  ScoreTable out;
  for (const auto& item : j) {
    try {
      out[item.at("subject_id").get<std::string>()] = {item.at("consistency").get<double>(),
                                                       item.at("collaborativeness").get<double>()};
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("score file entry: ") + e.what());
    }
  }
  return out;
}

ScoreTable score_table_from_judgments(const std::vector<Judgment>& judgments) {
  ScoreTable out;
  for (const auto& j : judgments) {
    if (!j.overall) continue;
    out[j.instance_id + "/" + j.subject] = {static_cast<double>(j.overall->consistency),
                                           static_cast<double>(j.overall->collaborativeness)};
  }
  return out;
}

namespace {

AgreementMetrics metrics_from(const ConfusionCounts& c) {
  AgreementMetrics m;
  const auto pr = precision_recall(c);
  m.precision = pr.precision_pct;
  m.recall = pr.recall_pct;
  m.mcc = matthews_corr(c);
  m.kappa = cohen_kappa(c);
  m.detected_by_judge = static_cast<double>(c.tp + c.fp);
  m.detected_by_annotator = static_cast<double>(c.tp + c.fn);
  return m;
}

std::optional<double> paired_spearman(const ScoreTable& a, const ScoreTable& b, bool first) {
  std::vector<double> xs, ys;
  for (const auto& [subject, scores] : a) {
    auto it = b.find(subject);
    if (it == b.end()) continue;
    xs.push_back(first ? scores.first : scores.second);
    ys.push_back(first ? it->second.first : it->second.second);
  }
  if (xs.size() < 2) return std::nullopt;
  try {
    return spearman_rho(xs, ys);
  } catch (const DegenerateInput&) {
    return std::nullopt;
  }
}

}  // namespace

AgreementReport agreement(const RaterLabels& judge, const RaterLabels& annotator,
                          const ScoreTable* judge_scores, const ScoreTable* annotator_scores) {
  if (judge.size() != annotator.size())
    throw UniverseMismatch("raters label different numbers of subjects (" +
                           std::to_string(judge.size()) + " vs " + std::to_string(annotator.size()) + ")");
  for (const auto& [subject, labels] : judge) {
    auto it = annotator.find(subject);
    if (it == annotator.end()) throw UniverseMismatch("subject '" + subject + "' has no annotation");
    if (it->second.universe != labels.universe)
      throw UniverseMismatch("subject '" + subject + "' is labeled over different turns");
  }

  AgreementReport report;
  ConfusionCounts total;
  for (const auto& b : kBehaviors) {
    const auto i = index_of(b.kind);
    ConfusionCounts c;
    for (const auto& [subject, labels] : judge) {
      const auto& gold = annotator.at(subject);
      for (int turn : labels.universe) {
        const bool p = labels.flagged[i].count(turn) > 0;
        const bool g = gold.flagged[i].count(turn) > 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
      }
    }
    report.per_category[i] = metrics_from(c);
    total.tp += c.tp;
    total.fp += c.fp;
    total.fn += c.fn;
    total.tn += c.tn;
  }
  report.overall = metrics_from(total);
  if (judge_scores && annotator_scores) {
    report.spearman_consistency = paired_spearman(*judge_scores, *annotator_scores, true);
    report.spearman_collaborativeness = paired_spearman(*judge_scores, *annotator_scores, false);
  }
  return report;
}

AgreementReport average_reports(const std::vector<AgreementReport>& reports) {
  if (reports.empty()) throw PreconditionError("no agreement reports to average");
  AgreementReport avg;
  const double n = static_cast<double>(reports.size());
  auto accumulate_into = [&](AgreementMetrics& dst, const AgreementMetrics& src) {
    dst.precision += src.precision / n;
    dst.recall += src.recall / n;
    dst.mcc += src.mcc / n;
    dst.kappa += src.kappa / n;
    dst.detected_by_judge += src.detected_by_judge / n;
    dst.detected_by_annotator += src.detected_by_annotator / n;
  };
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < kBehaviorCount; ++i) accumulate_into(avg.per_category[i], r.per_category[i]);
    accumulate_into(avg.overall, r.overall);
  }
  auto mean_of = [&](auto member) -> std::optional<double> {
    double sum = 0;
    int k = 0;
    for (const auto& r : reports) {
      if (r.*member) {
        sum += *(r.*member);
        ++k;
      }
    }
    if (k == 0) return std::nullopt;
    return sum / k;
  };
  avg.spearman_consistency = mean_of(&AgreementReport::spearman_consistency);
  avg.spearman_collaborativeness = mean_of(&AgreementReport::spearman_collaborativeness);
  return avg;
}

json to_json(const AgreementReport& r) {
  auto row = [](std::string_view name, const AgreementMetrics& m) {
    return json{{"category", name},
                {"detected_by_annotator", m.detected_by_annotator},
                {"detected_by_judge", m.detected_by_judge},
                {"precision", m.precision},
                {"recall", m.recall},
                {"mcc", m.mcc},
                {"kappa", m.kappa}};
  };
  json rows = json::array();
  for (const auto& b : kBehaviors) rows.push_back(row(b.name, r.per_category[index_of(b.kind)]));
  json out{{"categories", rows}, {"overall", row("Overall", r.overall)}};
  json spearman = json::object();
  spearman["consistency"] = r.spearman_consistency ? json(*r.spearman_consistency) : json(nullptr);
  spearman["collaborativeness"] =
      r.spearman_collaborativeness ? json(*r.spearman_collaborativeness) : json(nullptr);
  out["spearman"] = spearman;
  return out;
}

}  // namespace convsim
