#include "civdg/gradcheck.hpp"

#include <cmath>
#include <numeric>
#include <vector>

#include "civdg/rng.hpp"

namespace civdg {

GradCheckResult finite_diff_check(
    DenseArray& x, const DenseArray& analytic,
    const std::function<double(const DenseArray&)>& f, double eps,
    std::int64_t max_coords, std::uint64_t seed) {
  analytic.require_shape(x.shape(), "finite_diff_check analytic");
  if (!(eps > 0.0)) throw ValidationError("finite_diff_check: eps must be > 0");

  std::vector<std::int64_t> coords;
  const std::int64_t n = x.size();
  if (n <= max_coords) {
    coords.resize(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
  } else {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(n)}));
    auto perm = rng.permutation(static_cast<std::size_t>(n));
    coords.assign(perm.begin(), perm.begin() + max_coords);
  }

  GradCheckResult res;
  res.n_checked = static_cast<std::int64_t>(coords.size());
  for (std::int64_t i : coords) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double fp = f(x);
    x[i] = saved - eps;
    const double fm = f(x);
    x[i] = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) /
                       std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_index = i;
    }
  }
  return res;
}

}  // namespace civdg
