#include <doctest.h>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <cstring>
#include <vector>

#include "civdg/scm.hpp"

using namespace civdg;

namespace {

DenseArray enriched_matrix() {
  return DenseArray({2, 5}, {0.45, 0.45, 0.0, 0.05, 0.05,
                             0.05, 0.05, 0.0, 0.45, 0.45});
}

ScmConfig reference_cfg() {
  ScmConfig cfg;
  cfg.selection_matrix = enriched_matrix();
  cfg.seed = 2024;
  return cfg;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa < 1e-300 || sbb < 1e-300) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("config validation rejects malformed inputs") {
  ScmConfig cfg;
  validate(cfg);  // defaults are fine (empty matrix means uniform)

  ScmConfig bad = cfg;
  bad.n_sites = 0;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = cfg;
  bad.artifact_strength = -0.1;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = cfg;
  bad.label_noise = 1.5;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = cfg;
  bad.n_classes = 1;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = cfg;
  bad.selection_matrix = DenseArray({2, 5});
  bad.selection_matrix.fill(0.3);  // rows sum to 1.5
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad.selection_matrix = DenseArray({3, 5});
  CHECK_THROWS_AS(validate(bad), DimensionError);
}

TEST_CASE("single record has every field populated") {
  DatasetSplit s = sample_dataset(reference_cfg(), 1);
  CHECK(s.n() == 1);
  FeatureRecord r = s.record(0);
  CHECK(r.x.size() == 16);
  CHECK(r.y.size() == 2);
  CHECK(r.z >= 0);
  CHECK(r.z < 5);
  CHECK(r.d >= 0);
  CHECK(r.d < 2);
  REQUIRE(r.latent.has_value());
  CHECK(r.latent->y_r.size() == 2);
  CHECK(r.latent->u.size() == 2);
  CHECK(r.latent->a.size() == 4);
  double ysum = r.y[0] + r.y[1];
  CHECK(ysum == 1.0);
  CHECK_THROWS_AS(s.record(1), ValidationError);
}

TEST_CASE("sampling is deterministic and role streams differ") {
  ScmConfig cfg = reference_cfg();
  DatasetSplit a = sample_dataset(cfg, 200);
  DatasetSplit b = sample_dataset(cfg, 200);
  CHECK(a.x.bitwise_equal(b.x));
  CHECK(a.y.bitwise_equal(b.y));
  CHECK(a.z == b.z);
  CHECK(a.d == b.d);
  CHECK(a.yr.bitwise_equal(b.yr));

  DatasetSplit v = sample_dataset(cfg, 200, SplitRole::kSourceVal);
  CHECK(v.role == SplitRole::kSourceVal);
  CHECK(!a.x.bitwise_equal(v.x));

  // Same seed, different selection matrix: structure (and thus the feature
  // law given (d, z)) is shared, only site assignment changes.
  ScmConfig shifted = make_ood_shift(cfg, OodMode::kIndependent);
  ScmStructure s1 = make_structure(cfg);
  ScmStructure s2 = make_structure(shifted);
  CHECK(s1.signal.bitwise_equal(s2.signal));
  CHECK(s1.artifact.bitwise_equal(s2.artifact));
  CHECK(s1.site_offset.bitwise_equal(s2.site_offset));
}

TEST_CASE("site blocks oppose each other and the middle site is neutral") {
  ScmStructure st = make_structure(reference_cfg());
  auto row_dot = [&](int i, int j) {
    double v = 0.0;
    for (int k = 0; k < 4; ++k) v += st.site_offset.at(i, k) * st.site_offset.at(j, k);
    return v;
  };
  CHECK(row_dot(0, 1) > 0.0);
  CHECK(row_dot(3, 4) > 0.0);
  CHECK(row_dot(0, 4) < 0.0);
  CHECK(row_dot(1, 3) < 0.0);
  CHECK(std::sqrt(row_dot(2, 2)) < 0.7);
  CHECK(std::sqrt(row_dot(0, 0)) > 0.7);
  for (double sn : st.site_noise) {
    CHECK(sn >= 0.2);
    CHECK(sn <= 0.4);
  }
}

TEST_CASE("intervening on the site never changes the label") {
  // Exclusion restriction, exercised record by record on 10k noise draws.
  ScmConfig cfg = reference_cfg();
  ScmStructure st = make_structure(cfg);
  Rng rng(derive_seed(cfg.seed, 0xE0));
  int x_changed = 0;
  for (int i = 0; i < 10000; ++i) {
    NoiseBundle nb = draw_noise(cfg, rng);
    FeatureRecord base = realize_record(cfg, st, nb);
    for (int zz = 0; zz < cfg.n_sites; ++zz) {
      FeatureRecord forced = realize_record(cfg, st, nb, zz);
      CHECK(forced.z == zz);
      REQUIRE(forced.y.size() == base.y.size());
      CHECK(std::memcmp(forced.y.data(), base.y.data(),
                        base.y.size() * sizeof(double)) == 0);
      CHECK(std::memcmp(forced.latent->y_r.data(), base.latent->y_r.data(),
                        base.latent->y_r.size() * sizeof(double)) == 0);
      if (zz != base.z &&
          std::memcmp(forced.x.data(), base.x.data(),
                      base.x.size() * sizeof(double)) != 0)
        x_changed += 1;
    }
  }
  // The intervention must actually reach X through the artifact channel.
  CHECK(x_changed > 30000);
}

TEST_CASE("instrument is independent of the confounder within strata") {
  ScmConfig cfg = reference_cfg();
  DatasetSplit s = sample_dataset(cfg, 10000);
  for (int d = 0; d < cfg.n_strata; ++d) {
    for (int zz = 0; zz < cfg.n_sites; ++zz) {
      for (int j = 0; j < cfg.u_dim; ++j) {
        std::vector<double> ind, uj;
        for (std::int64_t i = 0; i < s.n(); ++i) {
          if (s.d[static_cast<std::size_t>(i)] != d) continue;
          ind.push_back(s.z[static_cast<std::size_t>(i)] == zz ? 1.0 : 0.0);
          uj.push_back(s.u.at(i, j));
        }
        CHECK(std::abs(pearson(ind, uj)) < 0.03);
      }
    }
  }
}

TEST_CASE("uniform selection gives near-zero mutual information") {
  ScmConfig cfg = reference_cfg();
  cfg.selection_matrix = uniform_selection_matrix(2, 5);
  DatasetSplit s = sample_dataset(cfg, 10000);
  const double n = static_cast<double>(s.n());
  std::vector<std::vector<double>> joint(2, std::vector<double>(5, 0.0));
  std::vector<double> pd(2, 0.0), pz(5, 0.0);
  for (std::int64_t i = 0; i < s.n(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    joint[static_cast<std::size_t>(s.d[idx])]
         [static_cast<std::size_t>(s.z[idx])] += 1.0 / n;
  }
  for (int d = 0; d < 2; ++d)
    for (int zz = 0; zz < 5; ++zz) {
      pd[static_cast<std::size_t>(d)] +=
          joint[static_cast<std::size_t>(d)][static_cast<std::size_t>(zz)];
      pz[static_cast<std::size_t>(zz)] +=
          joint[static_cast<std::size_t>(d)][static_cast<std::size_t>(zz)];
    }
  double mi = 0.0;
  for (int d = 0; d < 2; ++d)
    for (int zz = 0; zz < 5; ++zz) {
      const double p =
          joint[static_cast<std::size_t>(d)][static_cast<std::size_t>(zz)];
      if (p > 0.0)
        mi += p * std::log(p / (pd[static_cast<std::size_t>(d)] *
                                pz[static_cast<std::size_t>(zz)]));
    }
  CHECK(mi < 0.01);

  // The enriched matrix, in contrast, couples D and Z strongly.
  DatasetSplit biased = sample_dataset(reference_cfg(), 10000);
  std::vector<std::vector<double>> j2(2, std::vector<double>(5, 0.0));
  for (std::int64_t i = 0; i < biased.n(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    j2[static_cast<std::size_t>(biased.d[idx])]
      [static_cast<std::size_t>(biased.z[idx])] += 1.0 / n;
  }
  double mi2 = 0.0;
  std::vector<double> pd2(2, 0.0), pz2(5, 0.0);
  for (int d = 0; d < 2; ++d)
    for (int zz = 0; zz < 5; ++zz) {
      pd2[static_cast<std::size_t>(d)] += j2[d][static_cast<std::size_t>(zz)];
      pz2[static_cast<std::size_t>(zz)] += j2[d][static_cast<std::size_t>(zz)];
    }
  for (int d = 0; d < 2; ++d)
    for (int zz = 0; zz < 5; ++zz) {
      const double p = j2[static_cast<std::size_t>(d)][static_cast<std::size_t>(zz)];
      if (p > 0.0)
        mi2 += p * std::log(p / (pd2[static_cast<std::size_t>(d)] *
                                 pz2[static_cast<std::size_t>(zz)]));
    }
  CHECK(mi2 > 0.3);
}

TEST_CASE("clean features support an accurate linear probe") {
  ScmConfig cfg = reference_cfg();
  cfg.artifact_strength = 0.0;
  cfg.label_noise = 0.0;
  cfg.confounder_strength = 0.0;
  DatasetSplit train = sample_dataset(cfg, 4000, SplitRole::kTrain);
  DatasetSplit test = sample_dataset(cfg, 2000, SplitRole::kIdTest);

  // Ridge probe (closed form via Eigen) from features to the label margin.
  const int p = cfg.feature_dim;
  Eigen::MatrixXd X(train.n(), p + 1);
  Eigen::VectorXd t(train.n());
  for (std::int64_t i = 0; i < train.n(); ++i) {
    for (int k = 0; k < p; ++k) X(i, k) = train.x.at(i, k);
    X(i, p) = 1.0;
    t(i) = train.y.at(i, 0) - train.y.at(i, 1);
  }
  Eigen::MatrixXd gram = X.transpose() * X;
  gram.diagonal().array() += 1e-3;
  Eigen::VectorXd w = gram.ldlt().solve(X.transpose() * t);

  int correct = 0;
  for (std::int64_t i = 0; i < test.n(); ++i) {
    double score = w(p);
    for (int k = 0; k < p; ++k) score += w(k) * test.x.at(i, k);
    const int pred = score > 0.0 ? 0 : 1;
    const int truth = test.y.at(i, 0) == 1.0 ? 0 : 1;
    if (pred == truth) correct += 1;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(test.n()) > 0.95);
}

TEST_CASE("injection to the current empirical distribution keeps the split") {
  DatasetSplit s = sample_dataset(reference_cfg(), 4000);
  // Empirical P(Z|D).
  DenseArray emp({2, 5});
  std::vector<double> nd(2, 0.0);
  for (std::int64_t i = 0; i < s.n(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    emp.at(s.d[idx], s.z[idx]) += 1.0;
    nd[static_cast<std::size_t>(s.d[idx])] += 1.0;
  }
  for (int d = 0; d < 2; ++d)
    for (int zz = 0; zz < 5; ++zz)
      emp.at(d, zz) /= nd[static_cast<std::size_t>(d)];

  DatasetSplit out = inject_spurious_correlation(s, emp);
  CHECK(out.n() >= static_cast<std::int64_t>(0.9 * s.n()));
  for (int d = 0; d < 2; ++d) {
    double tv = 0.0;
    std::vector<double> cnt(5, 0.0);
    double tot = 0.0;
    for (std::int64_t i = 0; i < out.n(); ++i) {
      const auto idx = static_cast<std::size_t>(i);
      if (out.d[idx] != d) continue;
      cnt[static_cast<std::size_t>(out.z[idx])] += 1.0;
      tot += 1.0;
    }
    for (int zz = 0; zz < 5; ++zz)
      tv += std::abs(cnt[static_cast<std::size_t>(zz)] / tot - emp.at(d, zz));
    CHECK(tv / 2.0 < 0.02);
  }
}

TEST_CASE("injection reaches an enrichment target from uniform data") {
  ScmConfig cfg = reference_cfg();
  cfg.selection_matrix = uniform_selection_matrix(2, 5);
  DatasetSplit s = sample_dataset(cfg, 8000);
  DenseArray target = enriched_matrix();
  DatasetSplit out = inject_spurious_correlation(s, target);
  REQUIRE(out.n() > 500);
  for (int d = 0; d < 2; ++d) {
    std::vector<double> cnt(5, 0.0);
    double tot = 0.0;
    for (std::int64_t i = 0; i < out.n(); ++i) {
      const auto idx = static_cast<std::size_t>(i);
      if (out.d[idx] != d) continue;
      cnt[static_cast<std::size_t>(out.z[idx])] += 1.0;
      tot += 1.0;
    }
    double tv = 0.0;
    for (int zz = 0; zz < 5; ++zz)
      tv += std::abs(cnt[static_cast<std::size_t>(zz)] / tot -
                     target.at(d, zz));
    CHECK(tv / 2.0 <= 0.02);
    // Zero-mass cell (site 2) must be empty.
    CHECK(cnt[2] == 0.0);
  }

  // Determinism of the subsample.
  DatasetSplit out2 = inject_spurious_correlation(s, target);
  CHECK(out.x.bitwise_equal(out2.x));
  CHECK(out.z == out2.z);
}

TEST_CASE("injection failure names the deficient cell") {
  ScmConfig cfg = reference_cfg();
  DatasetSplit s = sample_dataset(cfg, 2000);
  // Reference data has no z=2 records; demand mass there.
  DenseArray target({2, 5}, {0.2, 0.2, 0.2, 0.2, 0.2,
                             0.05, 0.05, 0.0, 0.45, 0.45});
  try {
    inject_spurious_correlation(s, target);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("(d=0, z=2)") != std::string::npos);
  }
}

TEST_CASE("injection preserves per-stratum label marginals") {
  ScmConfig cfg = reference_cfg();
  cfg.selection_matrix = uniform_selection_matrix(2, 5);
  DatasetSplit s = sample_dataset(cfg, 5000);
  DatasetSplit out = inject_spurious_correlation(s, enriched_matrix());

  boost::math::chi_squared chi2(1);  // C - 1 degrees of freedom
  for (int d = 0; d < 2; ++d) {
    double before[2] = {0, 0}, after[2] = {0, 0};
    for (std::int64_t i = 0; i < s.n(); ++i)
      if (s.d[static_cast<std::size_t>(i)] == d)
        before[s.y.at(i, 0) == 1.0 ? 0 : 1] += 1.0;
    for (std::int64_t i = 0; i < out.n(); ++i)
      if (out.d[static_cast<std::size_t>(i)] == d)
        after[out.y.at(i, 0) == 1.0 ? 0 : 1] += 1.0;
    const double nb = before[0] + before[1], na = after[0] + after[1];
    REQUIRE(na > 100);
    double stat = 0.0;
    for (int c = 0; c < 2; ++c) {
      const double expected = na * before[c] / nb;
      stat += (after[c] - expected) * (after[c] - expected) / expected;
    }
    const double pval = 1.0 - boost::math::cdf(chi2, stat);
    CHECK(pval > 0.01);
  }
}

TEST_CASE("ood shift modes alter only the selection matrix") {
  ScmConfig cfg = reference_cfg();

  ScmConfig ind = make_ood_shift(cfg, OodMode::kIndependent);
  for (int d = 0; d < 2; ++d)
    for (int zz = 0; zz < 5; ++zz)
      CHECK(ind.selection_matrix.at(d, zz) == doctest::Approx(0.2));
  CHECK(same_mechanism_except_selection(cfg, ind));

  ScmConfig rev = make_ood_shift(cfg, OodMode::kReversed);
  CHECK(rev.selection_matrix.at(0, 3) == doctest::Approx(0.45));
  CHECK(rev.selection_matrix.at(0, 4) == doctest::Approx(0.45));
  CHECK(rev.selection_matrix.at(0, 0) == doctest::Approx(0.05));
  CHECK(rev.selection_matrix.at(1, 0) == doctest::Approx(0.45));
  CHECK(rev.selection_matrix.at(1, 4) == doctest::Approx(0.05));
  CHECK(same_mechanism_except_selection(cfg, rev));

  ScmConfig held = make_ood_shift(cfg, OodMode::kHeldOutSite, 4);
  for (int d = 0; d < 2; ++d) {
    CHECK(held.selection_matrix.at(d, 4) == 1.0);
    CHECK(held.selection_matrix.at(d, 0) == 0.0);
  }
  CHECK_THROWS_AS(make_ood_shift(cfg, OodMode::kHeldOutSite, 5),
                  ValidationError);
  CHECK_THROWS_AS(make_ood_shift(cfg, OodMode::kHeldOutSite, -1),
                  ValidationError);

  ScmConfig excl = exclude_site(cfg, 4);
  for (int d = 0; d < 2; ++d) {
    CHECK(excl.selection_matrix.at(d, 4) == 0.0);
    double sum = 0.0;
    for (int zz = 0; zz < 5; ++zz) sum += excl.selection_matrix.at(d, zz);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  DatasetSplit tr = sample_dataset(excl, 3000);
  for (int zv : tr.z) CHECK(zv != 4);

  // A stratum that only has mass on the excluded site cannot renormalize.
  ScmConfig corner = cfg;
  corner.selection_matrix = DenseArray({2, 5}, {1.0, 0.0, 0.0, 0.0, 0.0,
                                                0.0, 0.0, 0.0, 0.0, 1.0});
  CHECK_THROWS_AS(exclude_site(corner, 0), ValidationError);
}

TEST_CASE("ood split provenance matches train except selection") {
  ScmConfig cfg = reference_cfg();
  DatasetSplit train = sample_dataset(cfg, 100, SplitRole::kTrain);
  ScmConfig ood_cfg = make_ood_shift(cfg, OodMode::kReversed);
  DatasetSplit ood = sample_dataset(ood_cfg, 100, SplitRole::kOodTest);
  CHECK(same_mechanism_except_selection(train.provenance, ood.provenance));
  CHECK(!train.provenance.selection_matrix.bitwise_equal(
      ood.provenance.selection_matrix));

  ScmConfig other = cfg;
  other.artifact_strength = 2.0;
  CHECK(!same_mechanism_except_selection(cfg, other));
}

TEST_CASE("multi-label sampling emits binary vectors") {
  ScmConfig cfg = reference_cfg();
  cfg.multi_label = true;
  cfg.n_classes = 4;
  DatasetSplit s = sample_dataset(cfg, 500);
  bool saw_multi = false;
  for (std::int64_t i = 0; i < s.n(); ++i) {
    double sum = 0.0;
    for (int c = 0; c < 4; ++c) {
      const double v = s.y.at(i, c);
      CHECK((v == 0.0 || v == 1.0));
      sum += v;
    }
    if (sum != 1.0) saw_multi = true;
  }
  CHECK(saw_multi);
}
