#include "civdg/scm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace civdg {
namespace {

// Stream tags for seed derivation (documented in the README): structure
// parameters, per-role record streams, injection shuffles.
constexpr std::uint64_t kStructureTag = 0x53545255ULL;
constexpr std::uint64_t kRecordTag = 0x524543ULL;
constexpr std::uint64_t kInjectTag = 0x494E4AULL;

DenseArray resolved_selection(const ScmConfig& cfg) {
  if (cfg.selection_matrix.empty())
    return uniform_selection_matrix(cfg.n_strata, cfg.n_sites);
  return cfg.selection_matrix;
}

void validate_selection(const DenseArray& m, int n_strata, int n_sites,
                        const std::string& what) {
  m.require_shape({n_strata, n_sites}, what);
  for (int k = 0; k < n_strata; ++k) {
    double sum = 0.0;
    for (int z = 0; z < n_sites; ++z) {
      const double p = m.at(k, z);
      if (p < 0.0)
        throw ValidationError(what + ": negative probability in row " +
                              std::to_string(k));
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ValidationError(what + ": row " + std::to_string(k) +
                            " sums to " + std::to_string(sum));
  }
}

// Stratum -> class score pattern: +1 on the stratum's modal class, balanced
// negative weight elsewhere.
double stratum_class_pattern(int d, int c, int n_classes) {
  if (c == d % n_classes) return 1.0;
  return -1.0 / static_cast<double>(n_classes - 1);
}

// Sites split into two artifact blocks with an optional neutral middle
// site: sign +1 on the low block, -1 on the high block.
int site_block_sign(int z, int n_sites) {
  const int half = n_sites / 2;
  if (z < half) return 1;
  if (z >= n_sites - half) return -1;
  return 0;
}

std::vector<double> gaussians(Rng& rng, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.next_gaussian();
  return v;
}

}  // namespace

DenseArray uniform_selection_matrix(int n_strata, int n_sites) {
  DenseArray m({n_strata, n_sites});
  m.fill(1.0 / static_cast<double>(n_sites));
  return m;
}

void validate(const ScmConfig& cfg) {
  if (cfg.n_sites < 1 || cfg.n_strata < 1 || cfg.n_classes < 1 ||
      cfg.feature_dim < 1 || cfg.u_dim < 1 || cfg.a_dim < 1)
    throw ValidationError("ScmConfig: all dimensions must be >= 1");
  if (!cfg.multi_label && cfg.n_classes < 2)
    throw ValidationError("ScmConfig: single-label tasks need >= 2 classes");
  if (cfg.artifact_strength < 0.0 || cfg.confounder_strength < 0.0 ||
      cfg.stratum_effect < 0.0 || cfg.case_mix < 0.0 || cfg.noise_r < 0.0 ||
      cfg.noise_x < 0.0 || cfg.noise_y < 0.0 || cfg.site_jitter < 0.0)
    throw ValidationError("ScmConfig: strengths and noise scales must be >= 0");
  if (cfg.label_noise < 0.0 || cfg.label_noise > 1.0)
    throw ValidationError("ScmConfig: label_noise must lie in [0,1]");
  if (!cfg.selection_matrix.empty())
    validate_selection(cfg.selection_matrix, cfg.n_strata, cfg.n_sites,
                       "ScmConfig selection_matrix");
}

bool same_mechanism_except_selection(const ScmConfig& a, const ScmConfig& b) {
  return a.n_sites == b.n_sites && a.n_strata == b.n_strata &&
         a.n_classes == b.n_classes && a.feature_dim == b.feature_dim &&
         a.artifact_strength == b.artifact_strength &&
         a.confounder_strength == b.confounder_strength &&
         a.label_noise == b.label_noise && a.seed == b.seed &&
         a.u_dim == b.u_dim && a.a_dim == b.a_dim &&
         a.stratum_effect == b.stratum_effect && a.case_mix == b.case_mix &&
         a.noise_r == b.noise_r && a.noise_x == b.noise_x &&
         a.noise_y == b.noise_y && a.site_jitter == b.site_jitter &&
         a.multi_label == b.multi_label;
}

std::string role_name(SplitRole role) {
  switch (role) {
    case SplitRole::kTrain: return "train";
    case SplitRole::kSourceVal: return "source_val";
    case SplitRole::kIdTest: return "id_test";
    case SplitRole::kOodTest: return "ood_test";
  }
  throw ValidationError("role_name: unknown role");
}

SplitRole role_from_name(const std::string& name) {
  if (name == "train") return SplitRole::kTrain;
  if (name == "source_val") return SplitRole::kSourceVal;
  if (name == "id_test") return SplitRole::kIdTest;
  if (name == "ood_test") return SplitRole::kOodTest;
  throw ValidationError("role_from_name: unknown role " + name);
}

FeatureRecord DatasetSplit::record(std::int64_t i) const {
  if (i < 0 || i >= n()) throw ValidationError("record(): index out of range");
  FeatureRecord r;
  const auto idx = static_cast<std::size_t>(i);
  r.x.assign(x.row_ptr(i), x.row_ptr(i) + x.cols());
  r.y.assign(y.row_ptr(i), y.row_ptr(i) + y.cols());
  r.z = z[idx];
  r.d = d[idx];
  if (has_latent) {
    LatentRecord lat;
    lat.y_r.assign(yr.row_ptr(i), yr.row_ptr(i) + yr.cols());
    lat.u.assign(u.row_ptr(i), u.row_ptr(i) + u.cols());
    lat.a.assign(a.row_ptr(i), a.row_ptr(i) + a.cols());
    r.latent = std::move(lat);
  }
  return r;
}

ScmStructure make_structure(const ScmConfig& cfg) {
  validate(cfg);
  Rng rng(derive_seed(cfg.seed, kStructureTag));
  const int p = cfg.feature_dim, C = cfg.n_classes;

  ScmStructure st;
  st.signal = DenseArray({p, C});
  for (std::int64_t i = 0; i < st.signal.size(); ++i)
    st.signal[i] = rng.next_gaussian() / std::sqrt(static_cast<double>(C));
  st.artifact = DenseArray({p, cfg.a_dim});
  for (std::int64_t i = 0; i < st.artifact.size(); ++i)
    st.artifact[i] =
        rng.next_gaussian() / std::sqrt(static_cast<double>(cfg.a_dim));
  st.w_u = DenseArray({C, cfg.u_dim});
  for (std::int64_t i = 0; i < st.w_u.size(); ++i)
    st.w_u[i] =
        rng.next_gaussian() / std::sqrt(static_cast<double>(cfg.u_dim));
  st.v_u = DenseArray({C, cfg.u_dim});
  for (std::int64_t i = 0; i < st.v_u.size(); ++i)
    st.v_u[i] =
        rng.next_gaussian() / std::sqrt(static_cast<double>(cfg.u_dim));

  auto pattern = gaussians(rng, cfg.a_dim);
  double norm = 0.0;
  for (double v : pattern) norm += v * v;
  norm = std::sqrt(norm);
  if (norm < 1e-9) {
    pattern.assign(static_cast<std::size_t>(cfg.a_dim), 0.0);
    pattern[0] = 1.0;
  } else {
    for (double& v : pattern) v /= norm;
  }

  st.site_offset = DenseArray({cfg.n_sites, cfg.a_dim});
  st.site_noise.resize(static_cast<std::size_t>(cfg.n_sites));
  for (int zz = 0; zz < cfg.n_sites; ++zz) {
    const double sign = site_block_sign(zz, cfg.n_sites);
    auto jitter = gaussians(rng, cfg.a_dim);
    for (int j = 0; j < cfg.a_dim; ++j) {
      st.site_offset.at(zz, j) =
          sign * pattern[static_cast<std::size_t>(j)] +
          cfg.site_jitter * jitter[static_cast<std::size_t>(j)];
    }
    st.site_noise[static_cast<std::size_t>(zz)] = rng.uniform(0.2, 0.4);
  }
  return st;
}

NoiseBundle draw_noise(const ScmConfig& cfg, Rng& rng) {
  NoiseBundle nb;
  nb.d_u = rng.next_double();
  nb.z_u = rng.next_double();
  nb.u = gaussians(rng, cfg.u_dim);
  nb.eps_r = gaussians(rng, cfg.n_classes);
  nb.eps_y = gaussians(rng, cfg.n_classes);
  nb.flip.resize(static_cast<std::size_t>(cfg.n_classes));
  for (auto& f : nb.flip) f = rng.next_double();
  nb.flip_pick = rng.next_double();
  nb.eps_a = gaussians(rng, cfg.a_dim);
  nb.eps_x = gaussians(rng, cfg.feature_dim);
  return nb;
}

FeatureRecord realize_record(const ScmConfig& cfg, const ScmStructure& st,
                             const NoiseBundle& noise, int z_override) {
  const int C = cfg.n_classes;
  const DenseArray sel = resolved_selection(cfg);

  FeatureRecord rec;
  rec.d = std::min(cfg.n_strata - 1,
                   static_cast<int>(noise.d_u * cfg.n_strata));

  if (z_override >= 0) {
    if (z_override >= cfg.n_sites)
      throw ValidationError("realize_record: z_override out of range");
    rec.z = z_override;
  } else {
    double cum = 0.0;
    rec.z = cfg.n_sites - 1;
    for (int zz = 0; zz < cfg.n_sites; ++zz) {
      cum += sel.at(rec.d, zz);
      if (noise.z_u < cum) {
        rec.z = zz;
        break;
      }
    }
  }

  LatentRecord lat;
  lat.u = noise.u;

  // Y_r := tanh(stratum effect + confounder + noise); Z absent.
  lat.y_r.resize(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    double wu = 0.0;
    for (int j = 0; j < cfg.u_dim; ++j)
      wu += st.w_u.at(c, j) * noise.u[static_cast<std::size_t>(j)];
    lat.y_r[static_cast<std::size_t>(c)] =
        std::tanh(cfg.stratum_effect * stratum_class_pattern(rec.d, c, C) +
                  cfg.confounder_strength * wu +
                  cfg.noise_r * noise.eps_r[static_cast<std::size_t>(c)]);
  }

  // A := site offset + site noise; depends on Z only.
  lat.a.resize(static_cast<std::size_t>(cfg.a_dim));
  for (int j = 0; j < cfg.a_dim; ++j) {
    lat.a[static_cast<std::size_t>(j)] =
        st.site_offset.at(rec.z, j) +
        st.site_noise[static_cast<std::size_t>(rec.z)] *
            noise.eps_a[static_cast<std::size_t>(j)];
  }

  // X := signal(Y_r) + artifact contribution + noise.
  rec.x.resize(static_cast<std::size_t>(cfg.feature_dim));
  for (int k = 0; k < cfg.feature_dim; ++k) {
    double v = cfg.noise_x * noise.eps_x[static_cast<std::size_t>(k)];
    for (int c = 0; c < C; ++c)
      v += st.signal.at(k, c) * lat.y_r[static_cast<std::size_t>(c)];
    for (int j = 0; j < cfg.a_dim; ++j)
      v += cfg.artifact_strength * st.artifact.at(k, j) *
           lat.a[static_cast<std::size_t>(j)];
    rec.x[static_cast<std::size_t>(k)] = v;
  }

  // Y := from Y_r, D, U and label noise; Z never enters (exclusion).
  std::vector<double> scores(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    double vu = 0.0;
    for (int j = 0; j < cfg.u_dim; ++j)
      vu += st.v_u.at(c, j) * noise.u[static_cast<std::size_t>(j)];
    scores[static_cast<std::size_t>(c)] =
        lat.y_r[static_cast<std::size_t>(c)] +
        cfg.case_mix * stratum_class_pattern(rec.d, c, C) +
        cfg.confounder_strength * vu +
        cfg.noise_y * noise.eps_y[static_cast<std::size_t>(c)];
  }

  rec.y.assign(static_cast<std::size_t>(C), 0.0);
  if (cfg.multi_label) {
    for (int c = 0; c < C; ++c) {
      bool on = scores[static_cast<std::size_t>(c)] > 0.0;
      if (noise.flip[static_cast<std::size_t>(c)] < cfg.label_noise)
        on = !on;
      rec.y[static_cast<std::size_t>(c)] = on ? 1.0 : 0.0;
    }
  } else {
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (scores[static_cast<std::size_t>(c)] >
          scores[static_cast<std::size_t>(best)])
        best = c;
    if (noise.flip[0] < cfg.label_noise)
      best = std::min(C - 1, static_cast<int>(noise.flip_pick * C));
    rec.y[static_cast<std::size_t>(best)] = 1.0;
  }

  rec.latent = std::move(lat);
  return rec;
}

DatasetSplit sample_dataset(const ScmConfig& cfg, std::int64_t n,
                            SplitRole role) {
  validate(cfg);
  if (n < 1) throw ValidationError("sample_dataset: n must be >= 1");

  const ScmStructure st = make_structure(cfg);
  Rng rng(derive_seed(cfg.seed,
                      {kRecordTag, static_cast<std::uint64_t>(role)}));

  DatasetSplit split;
  split.role = role;
  split.provenance = cfg;
  split.provenance.selection_matrix = resolved_selection(cfg);
  split.x = DenseArray({n, cfg.feature_dim});
  split.y = DenseArray({n, cfg.n_classes});
  split.z.resize(static_cast<std::size_t>(n));
  split.d.resize(static_cast<std::size_t>(n));
  split.has_latent = true;
  split.yr = DenseArray({n, cfg.n_classes});
  split.u = DenseArray({n, cfg.u_dim});
  split.a = DenseArray({n, cfg.a_dim});

  for (std::int64_t i = 0; i < n; ++i) {
    const NoiseBundle nb = draw_noise(cfg, rng);
    FeatureRecord rec = realize_record(cfg, st, nb);
    std::copy(rec.x.begin(), rec.x.end(), split.x.row_ptr(i));
    std::copy(rec.y.begin(), rec.y.end(), split.y.row_ptr(i));
    split.z[static_cast<std::size_t>(i)] = rec.z;
    split.d[static_cast<std::size_t>(i)] = rec.d;
    const LatentRecord& lat = *rec.latent;
    std::copy(lat.y_r.begin(), lat.y_r.end(), split.yr.row_ptr(i));
    std::copy(lat.u.begin(), lat.u.end(), split.u.row_ptr(i));
    std::copy(lat.a.begin(), lat.a.end(), split.a.row_ptr(i));
  }
  return split;
}

DatasetSplit inject_spurious_correlation(const DatasetSplit& split,
                                         const DenseArray& target) {
  if (split.n() == 0)
    throw ValidationError("inject_spurious_correlation: empty split");
  const ScmConfig& cfg = split.provenance;
  validate_selection(target, cfg.n_strata, cfg.n_sites,
                     "inject_spurious_correlation target");

  // Record indices per (d, z) cell.
  std::vector<std::vector<std::vector<std::size_t>>> cells(
      static_cast<std::size_t>(cfg.n_strata),
      std::vector<std::vector<std::size_t>>(
          static_cast<std::size_t>(cfg.n_sites)));
  for (std::int64_t i = 0; i < split.n(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    cells[static_cast<std::size_t>(split.d[idx])]
         [static_cast<std::size_t>(split.z[idx])]
             .push_back(idx);
  }

  std::vector<std::size_t> keep;
  for (int k = 0; k < cfg.n_strata; ++k) {
    // Largest stratum size for which floor-allocation can match the row.
    std::int64_t cap = -1;
    for (int zz = 0; zz < cfg.n_sites; ++zz) {
      const double t = target.at(k, zz);
      if (t <= 0.0) continue;
      const auto have = static_cast<std::int64_t>(
          cells[static_cast<std::size_t>(k)][static_cast<std::size_t>(zz)]
              .size());
      if (have == 0)
        throw DataError("inject_spurious_correlation: no records for cell (d=" +
                        std::to_string(k) + ", z=" + std::to_string(zz) +
                        ") with positive target mass");
      const auto limit =
          static_cast<std::int64_t>(static_cast<double>(have) / t);
      if (cap < 0 || limit < cap) cap = limit;
    }
    if (cap <= 0)
      throw DataError("inject_spurious_correlation: stratum " +
                      std::to_string(k) + " has no usable records");

    std::vector<std::int64_t> take(static_cast<std::size_t>(cfg.n_sites), 0);
    std::int64_t total = 0;
    for (int zz = 0; zz < cfg.n_sites; ++zz) {
      take[static_cast<std::size_t>(zz)] = static_cast<std::int64_t>(
          static_cast<double>(cap) * target.at(k, zz));
      total += take[static_cast<std::size_t>(zz)];
    }
    double tv = 0.0;
    for (int zz = 0; zz < cfg.n_sites; ++zz) {
      tv += std::abs(static_cast<double>(take[static_cast<std::size_t>(zz)]) /
                         static_cast<double>(total) -
                     target.at(k, zz));
    }
    if (tv / 2.0 > 0.02)
      throw DataError("inject_spurious_correlation: stratum " +
                      std::to_string(k) +
                      " too small to reach the target within TV 0.02");

    for (int zz = 0; zz < cfg.n_sites; ++zz) {
      auto cell = cells[static_cast<std::size_t>(k)]
                       [static_cast<std::size_t>(zz)];
      Rng rng(derive_seed(cfg.seed,
                          {kInjectTag, static_cast<std::uint64_t>(k),
                           static_cast<std::uint64_t>(zz)}));
      rng.shuffle(cell);
      cell.resize(static_cast<std::size_t>(take[static_cast<std::size_t>(zz)]));
      keep.insert(keep.end(), cell.begin(), cell.end());
    }
  }
  std::sort(keep.begin(), keep.end());

  DatasetSplit out;
  out.role = split.role;
  out.provenance = split.provenance;
  out.has_latent = split.has_latent;
  const auto m = static_cast<std::int64_t>(keep.size());
  out.x = DenseArray({m, split.x.cols()});
  out.y = DenseArray({m, split.y.cols()});
  out.z.resize(keep.size());
  out.d.resize(keep.size());
  if (out.has_latent) {
    out.yr = DenseArray({m, split.yr.cols()});
    out.u = DenseArray({m, split.u.cols()});
    out.a = DenseArray({m, split.a.cols()});
  }
  for (std::int64_t i = 0; i < m; ++i) {
    const auto src = static_cast<std::int64_t>(keep[static_cast<std::size_t>(i)]);
    std::copy(split.x.row_ptr(src), split.x.row_ptr(src) + split.x.cols(),
              out.x.row_ptr(i));
    std::copy(split.y.row_ptr(src), split.y.row_ptr(src) + split.y.cols(),
              out.y.row_ptr(i));
    out.z[static_cast<std::size_t>(i)] = split.z[static_cast<std::size_t>(src)];
    out.d[static_cast<std::size_t>(i)] = split.d[static_cast<std::size_t>(src)];
    if (out.has_latent) {
      std::copy(split.yr.row_ptr(src), split.yr.row_ptr(src) + split.yr.cols(),
                out.yr.row_ptr(i));
      std::copy(split.u.row_ptr(src), split.u.row_ptr(src) + split.u.cols(),
                out.u.row_ptr(i));
      std::copy(split.a.row_ptr(src), split.a.row_ptr(src) + split.a.cols(),
                out.a.row_ptr(i));
    }
  }
  return out;
}

std::string ood_mode_name(OodMode mode) {
  switch (mode) {
    case OodMode::kIndependent: return "independent";
    case OodMode::kReversed: return "reversed";
    case OodMode::kHeldOutSite: return "held_out_site";
  }
  throw ValidationError("ood_mode_name: unknown mode");
}

ScmConfig make_ood_shift(const ScmConfig& cfg, OodMode mode,
                         int held_out_site) {
  validate(cfg);
  ScmConfig out = cfg;
  switch (mode) {
    case OodMode::kIndependent:
      out.selection_matrix =
          uniform_selection_matrix(cfg.n_strata, cfg.n_sites);
      break;
    case OodMode::kReversed: {
      const DenseArray sel = resolved_selection(cfg);
      out.selection_matrix = DenseArray({cfg.n_strata, cfg.n_sites});
      for (int k = 0; k < cfg.n_strata; ++k)
        for (int zz = 0; zz < cfg.n_sites; ++zz)
          out.selection_matrix.at(k, zz) = sel.at(k, cfg.n_sites - 1 - zz);
      break;
    }
    case OodMode::kHeldOutSite: {
      if (held_out_site < 0 || held_out_site >= cfg.n_sites)
        throw ValidationError("make_ood_shift: held_out_site out of range");
      out.selection_matrix = DenseArray({cfg.n_strata, cfg.n_sites});
      for (int k = 0; k < cfg.n_strata; ++k)
        out.selection_matrix.at(k, held_out_site) = 1.0;
      break;
    }
  }
  return out;
}

ScmConfig exclude_site(const ScmConfig& cfg, int site) {
  validate(cfg);
  if (site < 0 || site >= cfg.n_sites)
    throw ValidationError("exclude_site: site out of range");
  ScmConfig out = cfg;
  out.selection_matrix = resolved_selection(cfg);
  for (int k = 0; k < cfg.n_strata; ++k) {
    out.selection_matrix.at(k, site) = 0.0;
    double sum = 0.0;
    for (int zz = 0; zz < cfg.n_sites; ++zz)
      sum += out.selection_matrix.at(k, zz);
    if (sum < 1e-12)
      throw ValidationError("exclude_site: stratum " + std::to_string(k) +
                            " would lose all site mass");
    for (int zz = 0; zz < cfg.n_sites; ++zz)
      out.selection_matrix.at(k, zz) /= sum;
  }
  return out;
}

}  // namespace civdg
