#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "civdg/scm.hpp"
#include "civdg/tensor.hpp"

namespace civdg {

// Immutable evaluation record: per-sample class probabilities, 0/1 labels,
// site and stratum ids.  Everything downstream is a pure function of this.
struct PredictionLog {
  DenseArray scores;  // [N x C], probabilities
  DenseArray labels;  // [N x C], one-hot (single label) or multi-hot
  std::vector<int> z;
  std::vector<int> d;
  bool multi_label = false;

  std::int64_t n() const { return scores.rows(); }
  std::int64_t n_classes() const { return scores.cols(); }
  void validate() const;
};

PredictionLog build_log(const DatasetSplit& split, const DenseArray& probs);

// Hard decisions: argmax with lowest-index tie break (single label) or a
// strict 0.5 threshold per class (multi label, returned as 0/1 matrix).
std::vector<int> hard_predictions(const PredictionLog& log);
DenseArray hard_predictions_multi(const PredictionLog& log);
// True class index per row (single label only).
std::vector<int> true_classes(const PredictionLog& log);

enum class Grouping { kByZ, kByD, kByZxD, kByZxY };
const char* grouping_name(Grouping g);

struct GroupStat {
  int key_a = -1;  // z (or d for kByD)
  int key_b = -1;  // second key when the grouping is a product, else -1
  std::int64_t count = 0;
  double accuracy = 0.0;
  std::string label;  // e.g. "z=1,y=0"
};

struct WgResult {
  double accuracy = 0.0;
  double wg_accuracy = 0.0;
  std::string worst_group;
  std::vector<GroupStat> groups;
  std::vector<std::string> warnings;  // absent grid cells
};

// Multi-label rows score by the fraction of matching bits; kByZxY needs a
// scalar label and rejects multi-label logs.
WgResult accuracy_and_wg(const PredictionLog& log, Grouping grouping);

struct EceBin {
  double lo = 0.0, hi = 0.0;
  std::int64_t count = 0;
  double avg_confidence = 0.0;
  double avg_accuracy = 0.0;
};

struct EceResult {
  double ece = 0.0;
  std::vector<EceBin> bins;
};

// Equal-width right-closed bins on the max class probability.
EceResult ece(const PredictionLog& log, int n_bins = 15);

struct AurocResult {
  double macro = 0.0;
  std::vector<double> per_class;        // 0 for excluded classes
  std::vector<std::uint8_t> included;   // class had >=1 pos and >=1 neg
  std::vector<std::string> warnings;
};

// Rank-statistic AUROC per class, ties counted one half.
AurocResult macro_auroc(const PredictionLog& log);

struct FairnessResult {
  double eod = 0.0;
  double dpd = 0.0;
  std::vector<std::string> warnings;  // skipped degenerate pairs
};

// Gaps between stratum pairs.  Binary single-label logs use class 1; other
// logs binarize per class and macro-average the gaps.
FairnessResult fairness_gaps(const PredictionLog& log);

struct StratumViolation {
  int d = -1;
  double violation = 0.0;
  int n_sites = 0;
  bool flagged = false;  // single site, trivially 0
};

struct ViolationResult {
  std::vector<StratumViolation> per_stratum;
  double max_violation = 0.0;
};

// Within each stratum: max over sites and classes of the gap between the
// per-site mean residual and the stratum mean residual.
ViolationResult moment_violation(const DenseArray& residuals,
                                 const std::vector<int>& z,
                                 const std::vector<int>& d);

struct StratumStat {
  int d = -1;
  std::int64_t count = 0;
  double accuracy = 0.0;
  double auroc = 0.0;     // macro over non-degenerate classes in the stratum
  bool auroc_valid = false;
};

struct MetricReport {
  double accuracy = 0.0;
  double wg_accuracy = 0.0;
  std::string worst_group;
  std::vector<GroupStat> wg_groups;

  bool has_ece = false;
  double ece_value = 0.0;
  std::vector<EceBin> ece_bins;

  double macro_auroc_value = 0.0;
  std::vector<double> auroc_per_class;
  std::vector<std::uint8_t> auroc_included;

  double eod = 0.0;
  double dpd = 0.0;

  std::vector<StratumStat> stratum_table;

  bool has_violation = false;
  double violation_max = 0.0;
  std::vector<StratumViolation> violations;

  std::vector<std::string> warnings;
};

// Assembles every metric; residuals may be null (violation section omitted).
// Worst-group cells are (z x y) for single-label logs, (z x d) otherwise.
MetricReport full_report(const PredictionLog& log,
                         const DenseArray* residuals, int ece_bins = 15);

// Model-selection scalar: accuracy for single-label, macro-AUROC otherwise.
double validation_metric(const PredictionLog& log);

// Stable machine format: one "name,value" row per scalar, then one row per
// group/bin/class/stratum entry.  Names: accuracy, wg_accuracy, worst_group,
// ece, macro_auroc, eod, dpd, violation_max, group.<label>, ece_bin.<i>,
// auroc_class.<c>, stratum.<d>.accuracy, stratum.<d>.auroc,
// violation_stratum.<d>, warning.<i>.
std::string report_delimited(const MetricReport& report);
// Aligned table for humans; rates shown as percentages with 2 decimals.
std::string report_table(const MetricReport& report);

}  // namespace civdg
