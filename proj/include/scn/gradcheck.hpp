#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scn/common.hpp"

namespace scn {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  long long worst_index = -1;
  double worst_fd = 0.0;
  double worst_analytic = 0.0;
  long long checked = 0;

  std::string str() const {
    return cat("max_rel=", max_rel_err, " max_abs=", max_abs_err, " at [", worst_index,
               "] fd=", worst_fd, " analytic=", worst_analytic, " over ", checked, " coords");
  }
};

// |a - b| relative to their combined magnitude; the floor keeps finite
// difference noise on near-zero gradients from blowing up the ratio.
inline double rel_err(double a, double b, double denom_floor = 1e-3) {
  const double d = std::abs(a - b);
  const double m = std::abs(a) + std::abs(b);
  return d / (m > denom_floor ? m : denom_floor);
}

// Central-difference check of d(loss)/d(x) against `analytic`, one coordinate
// at a time. `loss` is re-evaluated with x temporarily perturbed; it must be
// a pure function of x (and of anything deliberately frozen by the caller).
// `stride` subsamples coordinates for large tensors; 1 checks every one.
template <typename LossFn>
GradCheckReport finite_diff_check(LossFn&& loss, double* x, const double* analytic, long long n,
                                  double eps = 1e-5, double denom_floor = 1e-3,
                                  long long stride = 1) {
  SCN_CHECK(eps > 0 && stride >= 1, "finite_diff_check: bad eps or stride");
  GradCheckReport rep;
  for (long long i = 0; i < n; i += stride) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double fp = loss();
    x[i] = saved - eps;
    const double fm = loss();
    x[i] = saved;
    const double fd = (fp - fm) / (2.0 * eps);
    const double re = rel_err(fd, analytic[i], denom_floor);
    const double ae = std::abs(fd - analytic[i]);
    if (re > rep.max_rel_err) {
      rep.max_rel_err = re;
      rep.worst_index = i;
      rep.worst_fd = fd;
      rep.worst_analytic = analytic[i];
    }
    if (ae > rep.max_abs_err) rep.max_abs_err = ae;
    ++rep.checked;
  }
  return rep;
}

}  // namespace scn
