#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "civdg/metrics.hpp"
#include "civdg/scm.hpp"
#include "civdg/trainer.hpp"

namespace civdg {

// Full experiment description: simulator, trainer, benchmark sizes, seed
// replication and metric options.  Model dims that must agree with the
// simulator (feature_dim, class/stratum/site counts, task mode) are synced
// from the scm block by finalize() and are not independent config keys.
struct ExperimentConfig {
  ScmConfig scm;
  TrainConfig train;

  int n_seeds = 5;
  std::int64_t n_train = 4000;
  std::int64_t n_val = 1000;
  std::int64_t n_id_test = 1000;
  std::int64_t n_ood_test = 2000;
  OodMode ood_mode = OodMode::kReversed;
  int held_out_site = -1;
  int ece_bins = 15;
  std::string out_dir = "out";

  void finalize();        // sync derived dims into the model specs
  void validate() const;  // finalize() must have run
};

// Flat key=value text, one pair per line, '#' comments.  Prefixes: scm.,
// train., model.predictor., model.critic., exp., metric.  Lists are
// comma-joined, matrices use ';' between rows, enums use their names.
// Unknown keys are config errors.  Parsing starts from defaults, applies
// overrides, then finalizes.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
// Canonical serialization: every key, fixed order, 17 significant digits.
std::string config_text(const ExperimentConfig& cfg);
// FNV-1a 64 over the canonical serialization.
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string hash_hex(std::uint64_t h);

// Reference benchmark: 5 sites, 2 strata, strongly site-enriched strata in
// training and a mirrored site assignment out of distribution.
ExperimentConfig reference_config();

struct Benchmark {
  DatasetSplit train;
  DatasetSplit source_val;
  DatasetSplit id_test;
  DatasetSplit ood_test;
};

// Samples all four splits; only ood_test's provenance differs, and only in
// its selection matrix.
Benchmark make_benchmark(const ExperimentConfig& cfg);

struct GenerateResult {
  std::string train_path;
  std::string source_val_path;
  std::string id_test_path;
  std::string ood_test_path;
  std::string manifest_path;
};

// Writes the four splits in the binary dataset format plus a provenance
// manifest (config snapshot, hash, per-file rows and roles).
GenerateResult cmd_generate(const ExperimentConfig& cfg,
                            const std::string& out_dir);

struct TrainOutputs {
  Checkpoint best;
  TrainHistory history;
  MetricReport val_report;
  MetricReport id_report;
  MetricReport ood_report;
  std::string checkpoint_path;
  std::string history_path;
};

// Loads the generated splits from data_dir, fits with source-validation
// selection, then evaluates the frozen best checkpoint.  The shifted test
// file is only opened after selection has finished; handing it to the
// trainer is a contract violation at every lower level.
TrainOutputs cmd_train(const ExperimentConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir,
                       bool dump_representations = false);

// One (method, seed) cell of the ablation suite.
struct RunMetrics {
  bool ok = false;
  std::string error;
  double ood_wg = 0.0;
  double ood_acc = 0.0;
  double id_wg = 0.0;
  double id_acc = 0.0;
  double val_metric = 0.0;
  double ood_eod = 0.0;
  double ood_dpd = 0.0;
  double violation_id = 0.0;  // moment violation of residuals on id_test
  std::int64_t best_step = 0;
};

struct ResultsTable {
  std::vector<std::string> row_names;
  std::vector<std::string> col_names;
  DenseArray mean;    // [rows x cols], mean over ok seeds, nan when none
  DenseArray stddev;  // population std over ok seeds
  std::vector<int> n_ok;
  std::uint64_t hash = 0;

  std::string to_text() const;       // percentages, 2 decimals
  std::string to_delimited() const;  // full precision machine format
};

struct AblationResult {
  std::vector<Ablation> methods;  // erm, no_civ, random_z, full_civ
  std::vector<std::vector<RunMetrics>> cells;  // [method][seed]
  std::uint64_t hash = 0;
};

// Runs every ablation with run seeds derived per (method, seed) index as
// derive_seed(train.seed, {method_index, seed_index}).  A failed run fills
// its cell's error string; the suite keeps going.
AblationResult cmd_ablation(const ExperimentConfig& cfg,
                            const std::string& data_dir, int n_workers = 1);
ResultsTable ablation_table(const AblationResult& result);
std::string ablation_cells_delimited(const AblationResult& result);
AblationResult parse_ablation_cells(const std::string& text);

struct SweepResult {
  std::vector<double> grid;
  std::vector<std::vector<SweepRow>> per_seed;  // [seed][grid index]
  std::uint64_t hash = 0;
};

// Per replicate r the sweep master seed is derive_seed(train.seed,
// kSweepReplicateTag, r); within one sweep the per-lambda seeds follow
// lambda_sweep's own derivation.
SweepResult cmd_sweep(const ExperimentConfig& cfg, const std::string& data_dir,
                      int n_workers = 1);
std::string sweep_result_delimited(const SweepResult& result);

// Rebuilds the ablation table from a stored cells file; pure aggregation,
// so regeneration is byte-stable.
ResultsTable cmd_report(const std::string& cells_path);

// Last predictor hidden activation (the adapter output) with the ablation's
// id remap applied; rows align with the split.
DenseArray representation(const Checkpoint& ckpt, const DatasetSplit& split);
std::string representation_delimited(const Checkpoint& ckpt,
                                     const DatasetSplit& split);

}  // namespace civdg
