#pragma once

#include <functional>
#include <string>

#include "hanerf/autodiff.hpp"
#include "hanerf/optim.hpp"
#include "hanerf/rng.hpp"

namespace hanerf {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int64_t checked = 0;
};

// Central-difference check of d(loss)/d(param) for every parameter in `ps`.
// `build` must construct the scalar loss on the given tape from the current
// parameter values; it is re-invoked for each probe. When a parameter has
// more elements than `max_elems_per_param`, a deterministic subsample is
// probed. Relative error uses |a - n| / max(|a|, |n|, floor).
GradCheckReport gradient_check(ParameterSet<double>& ps,
                               const std::function<Var(Tape<double>&)>& build,
                               int64_t max_elems_per_param, Rng& rng,
                               double h = 1e-5, double floor = 1e-8);

}  // namespace hanerf
