#include "civdg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "civdg/errors.hpp"

namespace civdg {
namespace {

// Accumulation order must not depend on row order (metrics are bit-identical
// under log permutation), so float collections are sorted before summing.
double sorted_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc;
}

int argmax_row(const DenseArray& m, std::int64_t i) {
  const double* p = m.row_ptr(i);
  int best = 0;
  for (std::int64_t c = 1; c < m.cols(); ++c)
    if (p[c] > p[best]) best = static_cast<int>(c);
  return best;
}

// fraction of matching bits for multi-label rows, exact match for one-hot
double row_score(const PredictionLog& log, const std::vector<int>& hard,
                 const DenseArray& hard_multi, std::int64_t i) {
  if (!log.multi_label) {
    return hard[static_cast<std::size_t>(i)] == argmax_row(log.labels, i)
               ? 1.0
               : 0.0;
  }
  std::int64_t match = 0;
  for (std::int64_t c = 0; c < log.n_classes(); ++c)
    if (hard_multi.at(i, c) == log.labels.at(i, c)) ++match;
  return static_cast<double>(match) / static_cast<double>(log.n_classes());
}

std::string format_group(Grouping g, int a, int b) {
  switch (g) {
    case Grouping::kByZ: return "z=" + std::to_string(a);
    case Grouping::kByD: return "d=" + std::to_string(a);
    case Grouping::kByZxD:
      return "z=" + std::to_string(a) + ",d=" + std::to_string(b);
    case Grouping::kByZxY:
      return "z=" + std::to_string(a) + ",y=" + std::to_string(b);
  }
  return "?";
}

// midrank AUROC for one class; returns false when the class is degenerate
bool auroc_one_class(const DenseArray& scores, const DenseArray& labels,
                     std::int64_t c, const std::vector<std::int64_t>& rows,
                     double* out) {
  std::int64_t n_pos = 0;
  for (std::int64_t i : rows)
    if (labels.at(i, c) == 1.0) ++n_pos;
  const std::int64_t n = static_cast<std::int64_t>(rows.size());
  const std::int64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return false;

  std::vector<std::pair<double, int>> order;  // (score, is_pos)
  order.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i : rows)
    order.emplace_back(scores.at(i, c), labels.at(i, c) == 1.0 ? 1 : 0);
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // midranks over tie runs; ranks are half-integers, so the sum is exact
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && order[j].first == order[i].first) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) +
                                  static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (order[k].second) pos_rank_sum += midrank;
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  *out = (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
  return true;
}

std::vector<int> sorted_unique(const std::vector<int>& v) {
  std::set<int> s(v.begin(), v.end());
  return std::vector<int>(s.begin(), s.end());
}

}  // namespace

const char* grouping_name(Grouping g) {
  switch (g) {
    case Grouping::kByZ: return "by_z";
    case Grouping::kByD: return "by_d";
    case Grouping::kByZxD: return "by_zxd";
    case Grouping::kByZxY: return "by_zxy";
  }
  return "?";
}

void PredictionLog::validate() const {
  if (scores.ndim() != 2 || scores.rows() < 1)
    throw ValidationError("PredictionLog: empty or non-2D scores");
  if (labels.shape() != scores.shape())
    throw DimensionError("PredictionLog: labels shape " + labels.shape_str() +
                         " does not match scores " + scores.shape_str());
  if (static_cast<std::int64_t>(z.size()) != n() ||
      static_cast<std::int64_t>(d.size()) != n())
    throw DimensionError("PredictionLog: id column length mismatch");
  for (std::int64_t i = 0; i < scores.size(); ++i) {
    if (!(scores[i] >= 0.0 && scores[i] <= 1.0))
      throw ValidationError("PredictionLog: probability outside [0, 1]");
    if (labels[i] != 0.0 && labels[i] != 1.0)
      throw ValidationError("PredictionLog: labels must be 0/1");
  }
  for (int v : z)
    if (v < 0) throw ValidationError("PredictionLog: negative site id");
  for (int v : d)
    if (v < 0) throw ValidationError("PredictionLog: negative stratum id");
  if (!multi_label) {
    for (std::int64_t i = 0; i < n(); ++i) {
      double score_sum = 0.0, label_sum = 0.0;
      for (std::int64_t c = 0; c < n_classes(); ++c) {
        score_sum += scores.at(i, c);
        label_sum += labels.at(i, c);
      }
      if (std::abs(score_sum - 1.0) > 1e-9)
        throw ValidationError(
            "PredictionLog: single-label scores must sum to 1");
      if (label_sum != 1.0)
        throw ValidationError("PredictionLog: labels must be one-hot");
    }
  }
}

PredictionLog build_log(const DatasetSplit& split, const DenseArray& probs) {
  PredictionLog log;
  log.scores = probs;
  log.labels = split.y;
  log.z = split.z;
  log.d = split.d;
  log.multi_label = split.provenance.multi_label;
  log.validate();
  return log;
}

std::vector<int> hard_predictions(const PredictionLog& log) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(log.n()));
  for (std::int64_t i = 0; i < log.n(); ++i)
    out.push_back(argmax_row(log.scores, i));
  return out;
}

DenseArray hard_predictions_multi(const PredictionLog& log) {
  DenseArray out(log.scores.shape());
  for (std::int64_t i = 0; i < out.size(); ++i)
    out[i] = log.scores[i] > 0.5 ? 1.0 : 0.0;
  return out;
}

std::vector<int> true_classes(const PredictionLog& log) {
  if (log.multi_label)
    throw ValidationError("true_classes: needs a single-label log");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(log.n()));
  for (std::int64_t i = 0; i < log.n(); ++i)
    out.push_back(argmax_row(log.labels, i));
  return out;
}

WgResult accuracy_and_wg(const PredictionLog& log, Grouping grouping) {
  log.validate();
  if (grouping == Grouping::kByZxY && log.multi_label)
    throw ValidationError("accuracy_and_wg: z x y cells need a scalar label");

  std::vector<int> hard;
  DenseArray hard_multi;
  if (log.multi_label)
    hard_multi = hard_predictions_multi(log);
  else
    hard = hard_predictions(log);
  std::vector<int> y;
  if (grouping == Grouping::kByZxY) y = true_classes(log);

  auto keys_of = [&](std::int64_t i) -> std::pair<int, int> {
    const std::size_t s = static_cast<std::size_t>(i);
    switch (grouping) {
      case Grouping::kByZ: return {log.z[s], -1};
      case Grouping::kByD: return {log.d[s], -1};
      case Grouping::kByZxD: return {log.z[s], log.d[s]};
      case Grouping::kByZxY: return {log.z[s], y[s]};
    }
    return {-1, -1};
  };

  std::map<std::pair<int, int>, std::pair<std::int64_t, double>> cells;
  double total = 0.0;
  for (std::int64_t i = 0; i < log.n(); ++i) {
    const double score = row_score(log, hard, hard_multi, i);
    total += score;
    auto& cell = cells[keys_of(i)];
    cell.first += 1;
    cell.second += score;
  }

  WgResult res;
  res.accuracy = total / static_cast<double>(log.n());
  res.wg_accuracy = 2.0;  // above any real accuracy
  for (const auto& [key, stat] : cells) {
    GroupStat g;
    g.key_a = key.first;
    g.key_b = key.second;
    g.count = stat.first;
    g.accuracy = stat.second / static_cast<double>(stat.first);
    g.label = format_group(grouping, g.key_a, g.key_b);
    if (g.accuracy < res.wg_accuracy) {
      res.wg_accuracy = g.accuracy;
      res.worst_group = g.label;
    }
    res.groups.push_back(std::move(g));
  }

  // product groupings: report grid cells that never occurred
  if (grouping == Grouping::kByZxD || grouping == Grouping::kByZxY) {
    std::vector<int> as = sorted_unique(log.z);
    std::vector<int> bs =
        grouping == Grouping::kByZxD ? sorted_unique(log.d) : sorted_unique(y);
    for (int a : as)
      for (int b : bs)
        if (cells.find({a, b}) == cells.end())
          res.warnings.push_back("empty group excluded: " +
                                 format_group(grouping, a, b));
  }
  return res;
}

EceResult ece(const PredictionLog& log, int n_bins) {
  log.validate();
  if (log.multi_label)
    throw ValidationError("ece: needs a single-label log");
  if (n_bins < 1) throw ValidationError("ece: n_bins must be >= 1");

  const std::vector<int> hard = hard_predictions(log);
  const std::vector<int> truth = true_classes(log);

  std::vector<std::vector<double>> conf(static_cast<std::size_t>(n_bins));
  std::vector<std::int64_t> correct(static_cast<std::size_t>(n_bins), 0);
  for (std::int64_t i = 0; i < log.n(); ++i) {
    const double c = log.scores.at(i, hard[static_cast<std::size_t>(i)]);
    // right-closed bins ((b)/n, (b+1)/n]
    int b = static_cast<int>(std::ceil(c * n_bins)) - 1;
    b = std::min(std::max(b, 0), n_bins - 1);
    conf[static_cast<std::size_t>(b)].push_back(c);
    if (hard[static_cast<std::size_t>(i)] == truth[static_cast<std::size_t>(i)])
      ++correct[static_cast<std::size_t>(b)];
  }

  EceResult res;
  for (int b = 0; b < n_bins; ++b) {
    EceBin bin;
    bin.lo = static_cast<double>(b) / n_bins;
    bin.hi = static_cast<double>(b + 1) / n_bins;
    bin.count = static_cast<std::int64_t>(conf[static_cast<std::size_t>(b)].size());
    if (bin.count > 0) {
      bin.avg_confidence = sorted_sum(conf[static_cast<std::size_t>(b)]) /
                           static_cast<double>(bin.count);
      bin.avg_accuracy = static_cast<double>(correct[static_cast<std::size_t>(b)]) /
                         static_cast<double>(bin.count);
      res.ece += (static_cast<double>(bin.count) /
                  static_cast<double>(log.n())) *
                 std::abs(bin.avg_accuracy - bin.avg_confidence);
    }
    res.bins.push_back(bin);
  }
  return res;
}

AurocResult macro_auroc(const PredictionLog& log) {
  log.validate();
  std::vector<std::int64_t> rows;
  for (std::int64_t i = 0; i < log.n(); ++i) rows.push_back(i);

  AurocResult res;
  double acc = 0.0;
  std::int64_t included = 0;
  for (std::int64_t c = 0; c < log.n_classes(); ++c) {
    double value = 0.0;
    const bool ok = auroc_one_class(log.scores, log.labels, c, rows, &value);
    res.per_class.push_back(ok ? value : 0.0);
    res.included.push_back(ok ? 1 : 0);
    if (ok) {
      acc += value;
      ++included;
    } else {
      res.warnings.push_back("class " + std::to_string(c) +
                             " degenerate, excluded from macro-AUROC");
    }
  }
  if (included == 0)
    throw ValidationError("macro_auroc: every class is degenerate");
  res.macro = acc / static_cast<double>(included);
  return res;
}

FairnessResult fairness_gaps(const PredictionLog& log) {
  log.validate();
  const std::vector<int> groups = sorted_unique(log.d);
  if (groups.size() < 2)
    throw ValidationError("fairness_gaps: need at least 2 strata");

  std::vector<int> hard;
  DenseArray hard_multi;
  if (log.multi_label)
    hard_multi = hard_predictions_multi(log);
  else
    hard = hard_predictions(log);

  const bool plain_binary = !log.multi_label && log.n_classes() == 2;
  std::vector<std::int64_t> class_list;
  if (plain_binary)
    class_list.push_back(1);
  else
    for (std::int64_t c = 0; c < log.n_classes(); ++c) class_list.push_back(c);

  FairnessResult res;
  double dpd_acc = 0.0, eod_acc = 0.0;
  std::int64_t eod_classes = 0;
  for (std::int64_t c : class_list) {
    struct Counts {
      std::int64_t n = 0, pred_pos = 0, pos = 0, tp = 0, fp = 0;
    };
    std::map<int, Counts> per_group;
    for (std::int64_t i = 0; i < log.n(); ++i) {
      const std::size_t s = static_cast<std::size_t>(i);
      Counts& ct = per_group[log.d[s]];
      const bool pred = log.multi_label ? hard_multi.at(i, c) == 1.0
                                        : hard[s] == static_cast<int>(c);
      const bool truth = log.labels.at(i, c) == 1.0;
      ++ct.n;
      if (pred) ++ct.pred_pos;
      if (truth) {
        ++ct.pos;
        if (pred) ++ct.tp;
      } else if (pred) {
        ++ct.fp;
      }
    }

    double dpd_c = 0.0, eod_c = 0.0;
    bool eod_valid = false;
    for (std::size_t a = 0; a < groups.size(); ++a) {
      for (std::size_t b = a + 1; b < groups.size(); ++b) {
        const Counts& ga = per_group[groups[a]];
        const Counts& gb = per_group[groups[b]];
        const double rate_a =
            static_cast<double>(ga.pred_pos) / static_cast<double>(ga.n);
        const double rate_b =
            static_cast<double>(gb.pred_pos) / static_cast<double>(gb.n);
        dpd_c = std::max(dpd_c, std::abs(rate_a - rate_b));

        const std::int64_t neg_a = ga.n - ga.pos;
        const std::int64_t neg_b = gb.n - gb.pos;
        if (ga.pos == 0 || gb.pos == 0 || neg_a == 0 || neg_b == 0) {
          res.warnings.push_back(
              "class " + std::to_string(c) + " pair d=" +
              std::to_string(groups[a]) + "/d=" + std::to_string(groups[b]) +
              " degenerate, skipped for EOD");
          continue;
        }
        const double tpr_gap =
            std::abs(static_cast<double>(ga.tp) / ga.pos -
                     static_cast<double>(gb.tp) / gb.pos);
        const double fpr_gap =
            std::abs(static_cast<double>(ga.fp) / neg_a -
                     static_cast<double>(gb.fp) / neg_b);
        eod_c = std::max(eod_c, std::max(tpr_gap, fpr_gap));
        eod_valid = true;
      }
    }
    dpd_acc += dpd_c;
    if (eod_valid) {
      eod_acc += eod_c;
      ++eod_classes;
    }
  }

  res.dpd = dpd_acc / static_cast<double>(class_list.size());
  if (eod_classes > 0)
    res.eod = eod_acc / static_cast<double>(eod_classes);
  else
    res.warnings.push_back("EOD undefined: every class/pair degenerate");
  return res;
}

ViolationResult moment_violation(const DenseArray& residuals,
                                 const std::vector<int>& z,
                                 const std::vector<int>& d) {
  if (residuals.ndim() != 2 ||
      residuals.rows() != static_cast<std::int64_t>(z.size()) ||
      z.size() != d.size())
    throw DimensionError("moment_violation: misaligned inputs");

  const std::int64_t n_classes = residuals.cols();
  ViolationResult res;
  for (int stratum : sorted_unique(d)) {
    // per-class value lists: whole stratum and per site
    std::vector<std::vector<double>> all(
        static_cast<std::size_t>(n_classes));
    std::map<int, std::vector<std::vector<double>>> by_site;
    for (std::int64_t i = 0; i < residuals.rows(); ++i) {
      if (d[static_cast<std::size_t>(i)] != stratum) continue;
      auto& site = by_site[z[static_cast<std::size_t>(i)]];
      if (site.empty()) site.resize(static_cast<std::size_t>(n_classes));
      for (std::int64_t c = 0; c < n_classes; ++c) {
        all[static_cast<std::size_t>(c)].push_back(residuals.at(i, c));
        site[static_cast<std::size_t>(c)].push_back(residuals.at(i, c));
      }
    }

    StratumViolation v;
    v.d = stratum;
    v.n_sites = static_cast<int>(by_site.size());
    v.flagged = v.n_sites < 2;
    for (std::int64_t c = 0; c < n_classes; ++c) {
      const double stratum_mean =
          sorted_sum(all[static_cast<std::size_t>(c)]) /
          static_cast<double>(all[static_cast<std::size_t>(c)].size());
      for (const auto& [site_id, lists] : by_site) {
        (void)site_id;
        const auto& vals = lists[static_cast<std::size_t>(c)];
        const double site_mean =
            sorted_sum(vals) / static_cast<double>(vals.size());
        v.violation =
            std::max(v.violation, std::abs(site_mean - stratum_mean));
      }
    }
    res.max_violation = std::max(res.max_violation, v.violation);
    res.per_stratum.push_back(v);
  }
  return res;
}

MetricReport full_report(const PredictionLog& log,
                         const DenseArray* residuals, int ece_bins) {
  log.validate();
  MetricReport report;

  WgResult wg = accuracy_and_wg(log, Grouping::kByZxD);
  report.accuracy = wg.accuracy;
  report.wg_accuracy = wg.wg_accuracy;
  report.worst_group = wg.worst_group;
  report.wg_groups = std::move(wg.groups);
  for (auto& w : wg.warnings) report.warnings.push_back(std::move(w));

  if (!log.multi_label) {
    EceResult er = ece(log, ece_bins);
    report.has_ece = true;
    report.ece_value = er.ece;
    report.ece_bins = std::move(er.bins);
  } else {
    report.warnings.push_back("ece skipped: multi-label log");
  }

  AurocResult ar = macro_auroc(log);
  report.macro_auroc_value = ar.macro;
  report.auroc_per_class = std::move(ar.per_class);
  report.auroc_included = std::move(ar.included);
  for (auto& w : ar.warnings) report.warnings.push_back(std::move(w));

  if (sorted_unique(log.d).size() >= 2) {
    FairnessResult fr = fairness_gaps(log);
    report.eod = fr.eod;
    report.dpd = fr.dpd;
    for (auto& w : fr.warnings) report.warnings.push_back(std::move(w));
  } else {
    report.warnings.push_back("fairness gaps skipped: single stratum");
  }

  std::vector<int> hard;
  DenseArray hard_multi;
  if (log.multi_label)
    hard_multi = hard_predictions_multi(log);
  else
    hard = hard_predictions(log);
  for (int stratum : sorted_unique(log.d)) {
    StratumStat st;
    st.d = stratum;
    std::vector<std::int64_t> rows;
    double correct = 0.0;
    for (std::int64_t i = 0; i < log.n(); ++i) {
      if (log.d[static_cast<std::size_t>(i)] != stratum) continue;
      rows.push_back(i);
      correct += row_score(log, hard, hard_multi, i);
    }
    st.count = static_cast<std::int64_t>(rows.size());
    st.accuracy = correct / static_cast<double>(st.count);
    double acc = 0.0;
    std::int64_t inc = 0;
    for (std::int64_t c = 0; c < log.n_classes(); ++c) {
      double value = 0.0;
      if (auroc_one_class(log.scores, log.labels, c, rows, &value)) {
        acc += value;
        ++inc;
      }
    }
    if (inc > 0) {
      st.auroc = acc / static_cast<double>(inc);
      st.auroc_valid = true;
    }
    report.stratum_table.push_back(st);
  }

  if (residuals != nullptr) {
    ViolationResult vr = moment_violation(*residuals, log.z, log.d);
    report.has_violation = true;
    report.violation_max = vr.max_violation;
    report.violations = std::move(vr.per_stratum);
  }
  return report;
}

double validation_metric(const PredictionLog& log) {
  if (log.multi_label) return macro_auroc(log).macro;
  return accuracy_and_wg(log, Grouping::kByD).accuracy;
}

std::string report_delimited(const MetricReport& report) {
  std::string out = "name,value\n";
  char buf[256];
  auto row = [&](const std::string& name, double value) {
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    out += name + "," + buf + "\n";
  };
  row("accuracy", report.accuracy);
  row("wg_accuracy", report.wg_accuracy);
  out += "worst_group," + report.worst_group + "\n";
  if (report.has_ece) row("ece", report.ece_value);
  row("macro_auroc", report.macro_auroc_value);
  row("eod", report.eod);
  row("dpd", report.dpd);
  if (report.has_violation) row("violation_max", report.violation_max);
  for (const GroupStat& g : report.wg_groups)
    row("group." + g.label, g.accuracy);
  for (std::size_t b = 0; b < report.ece_bins.size(); ++b) {
    const EceBin& bin = report.ece_bins[b];
    if (bin.count == 0) continue;
    std::snprintf(buf, sizeof(buf), "ece_bin.%zu,%lld,%.17g,%.17g\n", b,
                  static_cast<long long>(bin.count), bin.avg_confidence,
                  bin.avg_accuracy);
    out += buf;
  }
  for (std::size_t c = 0; c < report.auroc_per_class.size(); ++c)
    if (report.auroc_included[c])
      row("auroc_class." + std::to_string(c), report.auroc_per_class[c]);
  for (const StratumStat& st : report.stratum_table) {
    row("stratum." + std::to_string(st.d) + ".accuracy", st.accuracy);
    if (st.auroc_valid)
      row("stratum." + std::to_string(st.d) + ".auroc", st.auroc);
  }
  for (const StratumViolation& v : report.violations)
    row("violation_stratum." + std::to_string(v.d), v.violation);
  for (std::size_t i = 0; i < report.warnings.size(); ++i)
    out += "warning." + std::to_string(i) + "," + report.warnings[i] + "\n";
  return out;
}

std::string report_table(const MetricReport& report) {
  char buf[256];
  std::string out;
  auto pct = [&](const char* name, double value) {
    std::snprintf(buf, sizeof(buf), "  %-18s %6.2f%%\n", name, 100.0 * value);
    out += buf;
  };
  out += "metrics\n";
  pct("accuracy", report.accuracy);
  pct("wg_accuracy", report.wg_accuracy);
  out += "  worst group        " + report.worst_group + "\n";
  if (report.has_ece) pct("ece", report.ece_value);
  pct("macro_auroc", report.macro_auroc_value);
  pct("eod", report.eod);
  pct("dpd", report.dpd);
  if (report.has_violation) {
    std::snprintf(buf, sizeof(buf), "  %-18s %8.4f\n", "violation_max",
                  report.violation_max);
    out += buf;
  }
  out += "per-stratum\n";
  for (const StratumStat& st : report.stratum_table) {
    if (st.auroc_valid)
      std::snprintf(buf, sizeof(buf),
                    "  d=%-3d n=%-6lld acc %6.2f%%  auroc %6.2f%%\n", st.d,
                    static_cast<long long>(st.count), 100.0 * st.accuracy,
                    100.0 * st.auroc);
    else
      std::snprintf(buf, sizeof(buf),
                    "  d=%-3d n=%-6lld acc %6.2f%%  auroc      -\n", st.d,
                    static_cast<long long>(st.count), 100.0 * st.accuracy);
    out += buf;
  }
  for (const StratumViolation& v : report.violations) {
    std::snprintf(buf, sizeof(buf), "  d=%-3d violation %8.4f%s\n", v.d,
                  v.violation, v.flagged ? "  (single site)" : "");
    out += buf;
  }
  if (!report.warnings.empty()) {
    out += "warnings\n";
    for (const std::string& w : report.warnings) out += "  " + w + "\n";
  }
  return out;
}

}  // namespace civdg
