#pragma once

#include <cstdint>
#include <functional>

#include "civdg/tensor.hpp"

namespace civdg {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t worst_index = -1;
  std::int64_t n_checked = 0;
  bool passed(double tol = 1e-4) const { return max_rel_err < tol; }
};

// Central-difference check of analytic against f evaluated at x +- eps per
// coordinate.  Relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator.  When x has more than max_coords entries a deterministic
// random subset of max_coords coordinates is probed; x is restored bitwise.
GradCheckResult finite_diff_check(DenseArray& x, const DenseArray& analytic,
                                  const std::function<double(const DenseArray&)>& f,
                                  double eps = 1e-5,
                                  std::int64_t max_coords = 100,
                                  std::uint64_t seed = 0x6d5a);

}  // namespace civdg
