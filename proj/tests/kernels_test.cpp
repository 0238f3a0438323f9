#include <doctest.h>

#include <cmath>
#include <vector>

#include "civdg/kernels/kernels.hpp"
#include "civdg/rng.hpp"

using civdg::Rng;
using civdg::kernels::Ops;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.next_gaussian();
  return v;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b,
                 double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1.0});
    CHECK(std::abs(a[i] - b[i]) / denom <= tol);
  }
}

// Sizes chosen to hit empty tails, pure tails, and multi-lane bodies.
const std::size_t kSizes[] = {1, 2, 3, 4, 5, 7, 8, 13, 16, 31, 64, 257};

}  // namespace

TEST_CASE("dispatch: explicit backend selection round-trips") {
  using civdg::kernels::Backend;
  civdg::kernels::set_backend(Backend::kScalar);
  CHECK(civdg::kernels::backend_name() == "scalar");
  CHECK(&civdg::kernels::active() == &civdg::kernels::scalar_ops());
  if (civdg::kernels::avx2_ops() != nullptr) {
    civdg::kernels::set_backend(Backend::kAvx2);
    CHECK(civdg::kernels::backend_name() == "avx2");
    CHECK(&civdg::kernels::active() == civdg::kernels::avx2_ops());
  }
  civdg::kernels::set_backend(Backend::kAuto);
}

TEST_CASE("kernels: avx2 table matches scalar reference") {
  const Ops* simd = civdg::kernels::avx2_ops();
  if (simd == nullptr) {
    MESSAGE("avx2 unavailable on this host, equivalence vacuously holds");
    return;
  }
  const Ops& ref = civdg::kernels::scalar_ops();
  Rng rng(0x1234u);
  const double tol = 1e-13;

  for (std::size_t n : kSizes) {
    auto x = random_vec(rng, n);
    auto y = random_vec(rng, n);

    SUBCASE("") {}  // keep doctest from collapsing the loop body

    {
      auto a = y, b = y;
      ref.axpy(n, 1.7, x.data(), a.data());
      simd->axpy(n, 1.7, x.data(), b.data());
      check_close(a, b, tol);
    }
    {
      auto a = x, b = x;
      ref.scale(n, -0.3, a.data());
      simd->scale(n, -0.3, b.data());
      check_close(a, b, tol);
    }
    {
      std::vector<double> a(n), b(n);
      ref.sub(n, x.data(), y.data(), a.data());
      simd->sub(n, x.data(), y.data(), b.data());
      check_close(a, b, tol);
    }
    {
      const double a = ref.dot(n, x.data(), y.data());
      const double b = simd->dot(n, x.data(), y.data());
      const double denom =
          std::max({std::abs(a), std::abs(b), static_cast<double>(n)});
      CHECK(std::abs(a - b) / denom <= tol);
    }
    {
      const double a = ref.sum(n, x.data());
      const double b = simd->sum(n, x.data());
      CHECK(std::abs(a - b) /
                std::max({std::abs(a), 1.0, static_cast<double>(n)}) <=
            tol);
      const double a2 = ref.sumsq(n, x.data());
      const double b2 = simd->sumsq(n, x.data());
      CHECK(std::abs(a2 - b2) / std::max(a2, 1.0) <= tol);
    }
    {
      std::vector<double> a(n), b(n), g = random_vec(rng, n);
      ref.leaky_relu_fwd(n, 0.01, x.data(), a.data());
      simd->leaky_relu_fwd(n, 0.01, x.data(), b.data());
      check_close(a, b, 0.0);
      ref.leaky_relu_bwd(n, 0.01, x.data(), g.data(), a.data());
      simd->leaky_relu_bwd(n, 0.01, x.data(), g.data(), b.data());
      check_close(a, b, 0.0);
    }
  }
}

TEST_CASE("kernels: gemm variants match scalar reference") {
  const Ops* simd = civdg::kernels::avx2_ops();
  if (simd == nullptr) return;
  const Ops& ref = civdg::kernels::scalar_ops();
  Rng rng(0x9876u);
  const double tol = 1e-12;

  const std::size_t shapes[][3] = {{1, 1, 1},  {2, 3, 5},  {4, 4, 4},
                                   {3, 7, 2},  {8, 16, 8}, {5, 13, 9},
                                   {16, 33, 7}};
  for (const auto& s : shapes) {
    const std::size_t rows = s[0], n_in = s[1], n_out = s[2];
    auto x = random_vec(rng, rows * n_in);
    auto w = random_vec(rng, n_out * n_in);
    auto g = random_vec(rng, rows * n_out);

    auto a = random_vec(rng, rows * n_out);
    auto b = a;
    ref.gemm_nt_acc(rows, n_in, n_out, x.data(), w.data(), a.data());
    simd->gemm_nt_acc(rows, n_in, n_out, x.data(), w.data(), b.data());
    check_close(a, b, tol);

    auto c = random_vec(rng, rows * n_in);
    auto d = c;
    ref.gemm_nn_acc(rows, n_out, n_in, g.data(), w.data(), c.data());
    simd->gemm_nn_acc(rows, n_out, n_in, g.data(), w.data(), d.data());
    check_close(c, d, tol);

    auto e = random_vec(rng, n_out * n_in);
    auto f = e;
    ref.gemm_tn_acc(rows, n_out, n_in, g.data(), x.data(), e.data());
    simd->gemm_tn_acc(rows, n_out, n_in, g.data(), x.data(), f.data());
    check_close(e, f, tol);
  }
}

TEST_CASE("kernels: adamw update matches scalar reference") {
  const Ops* simd = civdg::kernels::avx2_ops();
  if (simd == nullptr) return;
  const Ops& ref = civdg::kernels::scalar_ops();
  Rng rng(0x55aau);
  for (std::size_t n : kSizes) {
    auto w1 = random_vec(rng, n);
    auto g = random_vec(rng, n);
    auto m1 = random_vec(rng, n, 0.1);
    auto v1 = random_vec(rng, n, 0.01);
    for (auto& q : v1) q = std::abs(q);
    auto w2 = w1;
    auto m2 = m1;
    auto v2 = v1;
    ref.adamw_update(n, w1.data(), g.data(), m1.data(), v1.data(), 1e-3, 0.9,
                     0.999, 1e-8, 1e-7, 0.5, 0.25);
    simd->adamw_update(n, w2.data(), g.data(), m2.data(), v2.data(), 1e-3,
                       0.9, 0.999, 1e-8, 1e-7, 0.5, 0.25);
    check_close(w1, w2, 1e-13);
    check_close(m1, m2, 1e-13);
    check_close(v1, v2, 1e-13);
  }
}

TEST_CASE("kernels: scalar gemm agrees with naive loop oracle") {
  const Ops& ref = civdg::kernels::scalar_ops();
  Rng rng(0x7177u);
  const std::size_t rows = 5, n_in = 7, n_out = 3;
  auto x = random_vec(rng, rows * n_in);
  auto w = random_vec(rng, n_out * n_in);
  std::vector<double> got(rows * n_out, 0.0), want(rows * n_out, 0.0);
  ref.gemm_nt_acc(rows, n_in, n_out, x.data(), w.data(), got.data());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < n_out; ++j)
      for (std::size_t k = 0; k < n_in; ++k)
        want[i * n_out + j] += x[i * n_in + k] * w[j * n_in + k];
  check_close(got, want, 1e-15);
}
