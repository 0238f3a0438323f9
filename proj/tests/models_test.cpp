#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <cstring>
#include <vector>

#include "civdg/gradcheck.hpp"
#include "civdg/kernels/kernels.hpp"
#include "civdg/models.hpp"
#include "civdg/rng.hpp"
#include "doctest.h"

using namespace civdg;

namespace {

DenseArray random_matrix(std::int64_t rows, std::int64_t cols, Rng& rng) {
  DenseArray out({rows, cols});
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = rng.next_gaussian();
  return out;
}

PredictorSpec small_predictor_spec() {
  PredictorSpec ps;
  ps.feature_dim = 6;
  ps.hidden_dims = {8, 5};
  ps.n_classes = 3;
  ps.use_demographics = true;
  ps.d_embed_dim = 4;
  ps.n_strata = 2;
  return ps;
}

CriticSpec small_critic_spec() {
  CriticSpec cs;
  cs.n_sites = 5;
  cs.n_strata = 2;
  cs.z_embed_dim = 4;
  cs.d_embed_dim = 3;
  cs.hidden_dim = 6;
  cs.n_layers = 3;
  cs.output_dim = 4;
  return cs;
}

double largest_singular_value(const DenseArray& w) {
  Eigen::MatrixXd m(w.rows(), w.cols());
  for (std::int64_t i = 0; i < w.rows(); ++i)
    for (std::int64_t j = 0; j < w.cols(); ++j) m(i, j) = w.at(i, j);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

bool stores_bitwise_equal(const ParameterStore& a, const ParameterStore& b) {
  return a.bitwise_equal(b);
}

}  // namespace

TEST_CASE("spec validation rejects bad configurations") {
  PredictorSpec ps = small_predictor_spec();
  ps.hidden_dims.clear();
  CHECK_THROWS_AS(validate(ps), ValidationError);
  ps = small_predictor_spec();
  ps.n_classes = 1;
  CHECK_THROWS_AS(validate(ps), ValidationError);
  ps = small_predictor_spec();
  ps.n_classes = 1;
  ps.multi_label = true;
  CHECK_NOTHROW(validate(ps));
  ps = small_predictor_spec();
  ps.leaky_slope = 1.5;
  CHECK_THROWS_AS(validate(ps), ValidationError);

  CriticSpec cs = small_critic_spec();
  cs.n_layers = 0;
  CHECK_THROWS_AS(validate(cs), ValidationError);
  cs = small_critic_spec();
  cs.output_dim = 0;
  CHECK_THROWS_AS(validate(cs), ValidationError);
}

TEST_CASE("initialization is deterministic in the seed") {
  const PredictorSpec ps = small_predictor_spec();
  ParameterStore a = init_predictor_params(ps, 7);
  ParameterStore b = init_predictor_params(ps, 7);
  ParameterStore c = init_predictor_params(ps, 8);
  CHECK(stores_bitwise_equal(a, b));
  CHECK_FALSE(stores_bitwise_equal(a, c));

  const CriticSpec cs = small_critic_spec();
  ParameterStore ca = init_critic_params(cs, 7);
  ParameterStore cb = init_critic_params(cs, 7);
  CHECK(stores_bitwise_equal(ca, cb));
  CHECK_FALSE(stores_bitwise_equal(ca, init_critic_params(cs, 9)));
}

TEST_CASE("initialization ranges: fan-in bound, zero biases, small embeddings") {
  PredictorSpec ps = small_predictor_spec();
  ps.frozen_projection_dim = 10;
  ParameterStore store = init_predictor_params(ps, 123);

  // adapter/w0 sees projected features plus the stratum embedding.
  const std::int64_t fan_in0 = 10 + ps.d_embed_dim;
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in0));
  const DenseArray& w0 = store.at("adapter/w0").value;
  double mx = 0.0;
  for (std::int64_t i = 0; i < w0.size(); ++i)
    mx = std::max(mx, std::abs(w0[i]));
  CHECK(mx <= limit);
  CHECK(mx > 0.5 * limit);  // not degenerate

  const DenseArray& head_w = store.at("head/w").value;
  limit = std::sqrt(6.0 / 5.0);
  for (std::int64_t i = 0; i < head_w.size(); ++i)
    CHECK(std::abs(head_w[i]) <= limit);

  for (const char* name : {"adapter/b0", "adapter/b1", "head/b"}) {
    const DenseArray& b = store.at(name).value;
    for (std::int64_t i = 0; i < b.size(); ++i) CHECK(b[i] == 0.0);
  }

  const DenseArray& emb = store.at("embed/d").value;
  double sumsq = 0.0;
  for (std::int64_t i = 0; i < emb.size(); ++i) sumsq += emb[i] * emb[i];
  CHECK(std::sqrt(sumsq / emb.size()) < 0.1);

  const ParamEntry& proj = store.at("frozen/proj");
  CHECK_FALSE(proj.trainable);
  CHECK(proj.value.rows() == 10);
  CHECK(proj.value.cols() == ps.feature_dim);

  ParameterStore cstore = init_critic_params(small_critic_spec(), 5);
  for (int i = 0; i < 3; ++i) {
    const ParamEntry& w = cstore.at("mlp/w" + std::to_string(i));
    REQUIRE(w.sn_u.has_value());
    double un = 0.0;
    for (std::int64_t k = 0; k < w.sn_u->size(); ++k)
      un += (*w.sn_u)[k] * (*w.sn_u)[k];
    CHECK(std::abs(std::sqrt(un) - 1.0) < 1e-12);
  }
}

TEST_CASE("zeroed predictor weights give zero logits and uniform probs") {
  Predictor pred(small_predictor_spec(), 11);
  for (std::size_t i = 0; i < pred.params().size(); ++i)
    pred.params().entry(i).value.fill(0.0);
  Rng rng(1);
  DenseArray x = random_matrix(3, 6, rng);
  DenseArray logits = pred.forward(x, {0, 1, 0});
  for (std::int64_t i = 0; i < logits.size(); ++i) CHECK(logits[i] == 0.0);
  DenseArray probs = probs_from_logits(logits, false);
  for (std::int64_t i = 0; i < probs.size(); ++i)
    CHECK(probs[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("probs_from_logits: softmax rows sum to one, sigmoid hand values") {
  DenseArray logits({2, 3}, {1.0, 2.0, -1.0, 0.0, 0.0, 0.0});
  DenseArray sm = probs_from_logits(logits, false);
  for (std::int64_t i = 0; i < 2; ++i) {
    double s = 0.0;
    for (std::int64_t c = 0; c < 3; ++c) s += sm.at(i, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK(sm.at(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  DenseArray bl({1, 2}, {0.0, std::log(3.0)});
  DenseArray sg = probs_from_logits(bl, true);
  CHECK(sg.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sg.at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("use_demographics=false ignores d bitwise") {
  PredictorSpec ps = small_predictor_spec();
  ps.use_demographics = false;
  Predictor pred(ps, 21);
  CHECK_FALSE(pred.params().has("embed/d"));
  Rng rng(2);
  DenseArray x = random_matrix(4, 6, rng);
  DenseArray a = pred.forward(x, {0, 0, 0, 0});
  DenseArray b = pred.forward(x, {1, 0, 1, 1});
  CHECK(std::memcmp(a.data(), b.data(),
                    sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
}

TEST_CASE("forward rejects out-of-range ids and bad shapes") {
  Predictor pred(small_predictor_spec(), 3);
  Rng rng(3);
  DenseArray x = random_matrix(2, 6, rng);
  CHECK_THROWS_AS(pred.forward(x, {0, 2}), ValidationError);
  CHECK_THROWS_AS(pred.forward(x, {0}), DimensionError);
  DenseArray bad = random_matrix(2, 5, rng);
  CHECK_THROWS_AS(pred.forward(bad, {0, 1}), DimensionError);

  Critic critic(small_critic_spec(), 3);
  CHECK_THROWS_AS(critic.forward({5, 0}, {0, 0}, false), ValidationError);
  CHECK_THROWS_AS(critic.forward({0, 0}, {0, 2}, false), ValidationError);
  CHECK_THROWS_AS(critic.forward({}, {}, false), ValidationError);
  CHECK_THROWS_AS(critic.forward({0}, {0, 1}, false), DimensionError);
}

TEST_CASE("identical (z, d) pairs map to identical critic rows") {
  Critic critic(small_critic_spec(), 17);
  DenseArray out = critic.forward({2, 0, 2, 2}, {1, 0, 1, 1}, false);
  CHECK(std::memcmp(out.row_ptr(0), out.row_ptr(2),
                    sizeof(double) * 4) == 0);
  CHECK(std::memcmp(out.row_ptr(0), out.row_ptr(3),
                    sizeof(double) * 4) == 0);
  CHECK(std::memcmp(out.row_ptr(0), out.row_ptr(1),
                    sizeof(double) * 4) != 0);
}

TEST_CASE("cached and cache-free forwards agree bitwise") {
  Predictor pred(small_predictor_spec(), 31);
  Rng rng(4);
  DenseArray x = random_matrix(5, 6, rng);
  std::vector<int> d = {0, 1, 1, 0, 1};
  Predictor::Cache cache;
  DenseArray with = pred.forward(x, d, &cache);
  DenseArray without = pred.forward(x, d);
  CHECK(std::memcmp(with.data(), without.data(),
                    sizeof(double) * static_cast<std::size_t>(with.size())) ==
        0);

  Critic critic(small_critic_spec(), 31);
  std::vector<int> z = {0, 4, 2, 1, 3};
  Critic::Cache ccache;
  DenseArray cw = critic.forward(z, d, false, &ccache);
  DenseArray cwo = critic.forward(z, d, false);
  CHECK(std::memcmp(cw.data(), cwo.data(),
                    sizeof(double) * static_cast<std::size_t>(cw.size())) == 0);
}

TEST_CASE("eval forward leaves the critic untouched; training moves only u") {
  Critic critic(small_critic_spec(), 41);
  ParameterStore before = critic.params();
  critic.forward({0, 1, 2}, {0, 1, 0}, false);
  CHECK(stores_bitwise_equal(critic.params(), before));

  critic.forward({0, 1, 2}, {0, 1, 0}, true);
  const ParameterStore& after = critic.params();
  bool any_u_moved = false;
  for (std::size_t i = 0; i < after.size(); ++i) {
    const ParamEntry& ea = after.entry(i);
    const ParamEntry& eb = before.at(ea.name);
    CHECK(std::memcmp(ea.value.data(), eb.value.data(),
                      sizeof(double) *
                          static_cast<std::size_t>(ea.value.size())) == 0);
    if (ea.sn_u.has_value() &&
        std::memcmp(ea.sn_u->data(), eb.sn_u->data(),
                    sizeof(double) *
                        static_cast<std::size_t>(ea.sn_u->size())) != 0)
      any_u_moved = true;
  }
  CHECK(any_u_moved);
}

TEST_CASE("golden forward values (scalar backend)") {
  const kernels::Backend saved = kernels::active_backend();
  kernels::set_backend(kernels::Backend::kScalar);

  PredictorSpec ps = small_predictor_spec();
  Predictor pred(ps, 314);
  Rng rng(derive_seed(99, 1));
  DenseArray x({4, 6});
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.next_gaussian();
  std::vector<int> d = {0, 1, 1, 0};
  DenseArray logits = pred.forward(x, d);
  const double want_logits[12] = {
      -1.836972640078e+00, 1.888374498389e+00,  9.268204685336e-01,
      -8.532233043802e-01, 6.616042635776e-01,  7.178416101083e-01,
      -1.378315795076e+00, 8.203292542380e-01,  5.598632126985e-01,
      -1.946402509440e+00, 1.665894571084e+00,  9.272066928149e-01};
  REQUIRE(logits.size() == 12);
  for (int i = 0; i < 12; ++i)
    CHECK(logits[i] == doctest::Approx(want_logits[i]).epsilon(1e-11));

  Critic critic(small_critic_spec(), 271);
  std::vector<int> z = {0, 2, 4, 1};
  DenseArray c0 = critic.forward(z, d, false);
  const double want_c0[16] = {
      2.983887344158e-03,  4.480253203423e-03,  1.021647927195e-03,
      -1.930294384201e-03, -1.270114228099e-03, 4.807101580478e-03,
      4.129356467142e-03,  -3.989330133684e-04, 3.708864887065e-03,
      1.348006205015e-03,  1.612506796725e-03,  1.471191732412e-03,
      4.524251428251e-03,  3.317583943354e-03,  -1.486649723562e-03,
      -1.976663613458e-03};
  REQUIRE(c0.size() == 16);
  for (int i = 0; i < 16; ++i)
    CHECK(c0[i] == doctest::Approx(want_c0[i]).epsilon(1e-9));

  for (int it = 0; it < 3; ++it) critic.forward(z, d, true);
  DenseArray c3 = critic.forward(z, d, false);
  const double want_c3[16] = {
      1.723992271443e-03,  2.588543401925e-03,  5.902746744336e-04,
      -1.115260804496e-03, -7.338303563570e-04, 2.777385677448e-03,
      2.385806772941e-03,  -2.304904148667e-04, 2.142860525095e-03,
      7.788337866884e-04,  9.316535561057e-04,  8.500063453988e-04,
      2.613964133612e-03,  1.916791225179e-03,  -8.589374658470e-04,
      -1.142051424802e-03};
  for (int i = 0; i < 16; ++i)
    CHECK(c3[i] == doctest::Approx(want_c3[i]).epsilon(1e-9));

  kernels::set_backend(saved);
}

TEST_CASE("predictor backward matches finite differences on every entry") {
  PredictorSpec ps = small_predictor_spec();
  ps.frozen_projection_dim = 7;
  Predictor pred(ps, 55);
  Rng rng(6);
  DenseArray x = random_matrix(5, 6, rng);
  std::vector<int> d = {0, 1, 1, 0, 1};
  DenseArray targets = DenseArray::zeros({5, 3});
  for (std::int64_t i = 0; i < 5; ++i)
    targets.at(i, (i * 2) % 3) = 1.0;

  auto loss_at = [&]() {
    DenseArray logits = pred.forward(x, d);
    return softmax_ce(logits, targets).loss;
  };

  pred.params().zero_grads();
  Predictor::Cache cache;
  DenseArray logits = pred.forward(x, d, &cache);
  LossResult lr = softmax_ce(logits, targets);
  DenseArray g_logits({5, 3});
  for (std::int64_t i = 0; i < g_logits.size(); ++i)
    g_logits[i] = (lr.probs[i] - targets[i]) / 5.0;
  pred.backward(cache, g_logits);

  for (std::size_t i = 0; i < pred.params().size(); ++i) {
    ParamEntry& e = pred.params().entry(i);
    if (!e.trainable) {
      // frozen projection must receive no gradient
      CHECK_FALSE(e.grad_set);
      continue;
    }
    CHECK(e.grad_set);
    auto f = [&](const DenseArray& v) {
      DenseArray saved = e.value;
      e.value = v;
      double loss = loss_at();
      e.value = saved;
      return loss;
    };
    GradCheckResult r = finite_diff_check(e.value, e.grad, f);
    INFO("entry ", e.name, " max_rel_err ", r.max_rel_err);
    CHECK(r.max_rel_err < 1e-5);
  }
}

TEST_CASE("critic backward matches finite differences on every entry") {
  CriticSpec cs = small_critic_spec();
  Critic critic(cs, 77);
  std::vector<int> z = {0, 3, 4, 1, 2, 0};
  std::vector<int> d = {0, 1, 0, 1, 1, 0};
  Rng rng(7);
  DenseArray weights = random_matrix(6, 4, rng);

  // scalar functional of the critic output, eval mode so u stays fixed
  auto loss_at = [&]() {
    DenseArray out = critic.forward(z, d, false);
    return kernels::active().dot(out.size(), out.data(), weights.data());
  };

  critic.params().zero_grads();
  Critic::Cache cache;
  critic.forward(z, d, false, &cache);
  critic.backward(cache, weights);

  for (std::size_t i = 0; i < critic.params().size(); ++i) {
    ParamEntry& e = critic.params().entry(i);
    CHECK(e.grad_set);
    auto f = [&](const DenseArray& v) {
      DenseArray saved = e.value;
      e.value = v;
      double loss = loss_at();
      e.value = saved;
      return loss;
    };
    GradCheckResult r = finite_diff_check(e.value, e.grad, f);
    INFO("entry ", e.name, " max_rel_err ", r.max_rel_err);
    CHECK(r.max_rel_err < 1e-5);
  }
}

TEST_CASE("repeated backward accumulates gradients exactly") {
  Predictor pred(small_predictor_spec(), 13);
  Rng rng(8);
  DenseArray x = random_matrix(3, 6, rng);
  std::vector<int> d = {0, 1, 0};
  Predictor::Cache cache;
  pred.forward(x, d, &cache);
  DenseArray g = random_matrix(3, 3, rng);

  pred.params().zero_grads();
  pred.backward(cache, g);
  std::vector<DenseArray> once;
  for (std::size_t i = 0; i < pred.params().size(); ++i)
    once.push_back(pred.params().entry(i).grad);

  // deterministic: redoing the same pass from zero reproduces bits
  pred.params().zero_grads();
  pred.backward(cache, g);
  for (std::size_t i = 0; i < pred.params().size(); ++i) {
    const DenseArray& again = pred.params().entry(i).grad;
    CHECK(std::memcmp(again.data(), once[i].data(),
                      sizeof(double) *
                          static_cast<std::size_t>(again.size())) == 0);
  }

  // additive: a second pass doubles the accumulated gradient (row sums
  // interleave, so only up to rounding)
  pred.backward(cache, g);
  for (std::size_t i = 0; i < pred.params().size(); ++i) {
    const DenseArray& twice = pred.params().entry(i).grad;
    for (std::int64_t k = 0; k < twice.size(); ++k)
      CHECK(twice[k] ==
            doctest::Approx(2.0 * once[i][k]).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("power iteration drives every critic layer near unit spectral norm") {
  CriticSpec cs = small_critic_spec();
  Critic critic(cs, 2025);
  // stretch the raw weights so the estimate has real work to do
  for (int i = 0; i < cs.n_layers; ++i) {
    DenseArray& w = critic.params().at("mlp/w" + std::to_string(i)).value;
    for (std::int64_t k = 0; k < w.size(); ++k) w[k] *= 3.0;
  }
  std::vector<int> z = {0, 1, 2, 3, 4};
  std::vector<int> d = {0, 1, 0, 1, 0};
  for (int it = 0; it < 50; ++it) critic.forward(z, d, true);

  Critic::Cache cache;
  critic.forward(z, d, false, &cache);
  for (int i = 0; i < cs.n_layers; ++i) {
    const double s = largest_singular_value(cache.sn[i].w_sn);
    INFO("layer ", i, " sigma_max ", s);
    CHECK(s >= 0.95);
    CHECK(s <= 1.05);
  }
}

TEST_CASE("warmed critic is Lipschitz in its embedded inputs") {
  CriticSpec cs = small_critic_spec();
  Critic critic(cs, 606);
  std::vector<int> wz, wd;
  Rng warm_rng(11);
  for (int i = 0; i < 64; ++i) {
    wz.push_back(static_cast<int>(warm_rng.next_below(5)));
    wd.push_back(static_cast<int>(warm_rng.next_below(2)));
  }
  for (int it = 0; it < 60; ++it) critic.forward(wz, wd, true);

  Critic::Cache cache;
  const double bound = std::pow(1.05, cs.n_layers);
  Rng rng(12);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    int z0 = static_cast<int>(rng.next_below(5));
    int z1 = static_cast<int>(rng.next_below(5));
    int d0 = static_cast<int>(rng.next_below(2));
    int d1 = static_cast<int>(rng.next_below(2));
    DenseArray out = critic.forward({z0, z1}, {d0, d1}, false, &cache);
    double out_gap = 0.0, in_gap = 0.0;
    for (std::int64_t c = 0; c < out.cols(); ++c) {
      double diff = out.at(0, c) - out.at(1, c);
      out_gap += diff * diff;
    }
    for (std::int64_t c = 0; c < cache.input.cols(); ++c) {
      double diff = cache.input.at(0, c) - cache.input.at(1, c);
      in_gap += diff * diff;
    }
    if (in_gap == 0.0) {
      CHECK(out_gap == 0.0);
      continue;
    }
    ++checked;
    CHECK(std::sqrt(out_gap) <= bound * std::sqrt(in_gap) + 1e-12);
  }
  CHECK(checked > 500);
}
