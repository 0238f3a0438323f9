#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "civdg/rng.hpp"
#include "civdg/tensor.hpp"

namespace civdg {

// Simulator configuration.  selection_matrix is K x n_sites row-stochastic:
// row k is P(Z = z | D = k) and is the only piece that shifts between the
// training and OOD regimes.  Everything else parameterizes the structural
// functions and must match across splits of one benchmark.
struct ScmConfig {
  int n_sites = 5;
  int n_strata = 2;
  int n_classes = 2;
  int feature_dim = 16;
  double artifact_strength = 1.0;
  double confounder_strength = 0.5;
  DenseArray selection_matrix;  // defaults to uniform rows when empty
  double label_noise = 0.02;
  std::uint64_t seed = 0;

  // Structural knobs (fixed functional family; see make_structure).
  int u_dim = 2;
  int a_dim = 4;
  double stratum_effect = 0.8;
  double case_mix = 0.4;
  double noise_r = 0.3;
  double noise_x = 0.3;
  double noise_y = 0.2;
  double site_jitter = 0.15;
  bool multi_label = false;
};

DenseArray uniform_selection_matrix(int n_strata, int n_sites);

// Throws ValidationError on bad dims, negative strengths, or rows that do
// not sum to 1 within 1e-9.
void validate(const ScmConfig& cfg);

// True when a and b agree on every field except selection_matrix.  The OOD
// split of a benchmark must satisfy this against the train split.
bool same_mechanism_except_selection(const ScmConfig& a, const ScmConfig& b);

struct LatentRecord {
  std::vector<double> y_r;  // per-class real diagnostic state
  std::vector<double> u;    // unobserved confounder
  std::vector<double> a;    // site artifact
};

struct FeatureRecord {
  std::vector<double> x;
  std::vector<double> y;  // one-hot (single-label) or binary (multi-label)
  int z = 0;
  int d = 0;
  std::optional<LatentRecord> latent;
};

enum class SplitRole { kTrain, kSourceVal, kIdTest, kOodTest };
std::string role_name(SplitRole role);
SplitRole role_from_name(const std::string& name);

// Columnar sample storage; record(i) materializes the row view.
struct DatasetSplit {
  SplitRole role = SplitRole::kTrain;
  ScmConfig provenance;

  DenseArray x;   // [n x feature_dim]
  DenseArray y;   // [n x n_classes]
  std::vector<int> z;
  std::vector<int> d;

  bool has_latent = false;
  DenseArray yr;  // [n x n_classes]
  DenseArray u;   // [n x u_dim]
  DenseArray a;   // [n x a_dim]

  std::int64_t n() const { return static_cast<std::int64_t>(z.size()); }
  FeatureRecord record(std::int64_t i) const;
};

// Frozen structural parameters shared by every split of one benchmark.
// Deterministic in (seed, dims, knobs); independent of selection_matrix.
struct ScmStructure {
  DenseArray signal;       // [p x C], maps y_r into features
  DenseArray artifact;     // [p x a_dim], maps a into features
  DenseArray w_u;          // [C x u_dim], confounder into y_r
  DenseArray v_u;          // [C x u_dim], confounder into label scores
  DenseArray site_offset;  // [n_sites x a_dim]
  std::vector<double> site_noise;  // per-site artifact noise scale
};

ScmStructure make_structure(const ScmConfig& cfg);

// All exogenous draws for one record, in a fixed order so that intervening
// on z reuses the identical noise.
struct NoiseBundle {
  double d_u = 0.0;
  double z_u = 0.0;
  std::vector<double> u;
  std::vector<double> eps_r;
  std::vector<double> eps_y;
  std::vector<double> flip;
  double flip_pick = 0.0;
  std::vector<double> eps_a;
  std::vector<double> eps_x;
};

NoiseBundle draw_noise(const ScmConfig& cfg, Rng& rng);

// Ancestral evaluation of the structural equations on one noise bundle.
// z_override >= 0 forces the site (do-intervention on Z); the label is
// unaffected by construction.
FeatureRecord realize_record(const ScmConfig& cfg, const ScmStructure& st,
                             const NoiseBundle& noise, int z_override = -1);

DatasetSplit sample_dataset(const ScmConfig& cfg, std::int64_t n,
                            SplitRole role = SplitRole::kTrain);

// Deterministic per-cell rejection subsampling toward target P(Z|D).
// Throws DataError naming the deficient (d, z) cell when the target cannot
// be met within total variation 0.02 per stratum.
DatasetSplit inject_spurious_correlation(const DatasetSplit& split,
                                         const DenseArray& target);

enum class OodMode { kIndependent, kReversed, kHeldOutSite };
std::string ood_mode_name(OodMode mode);

// Returns cfg with only selection_matrix replaced: independent = uniform
// rows, reversed = site order mirrored per row, held_out_site = all mass on
// the given site.
ScmConfig make_ood_shift(const ScmConfig& cfg, OodMode mode,
                         int held_out_site = -1);

// Training-side counterpart of held_out_site: zero the site's column and
// renormalize rows.  Throws ValidationError if a row loses all mass.
ScmConfig exclude_site(const ScmConfig& cfg, int site);

}  // namespace civdg
