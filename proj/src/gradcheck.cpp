#include "hanerf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <vector>

#include "hanerf/errors.hpp"

namespace hanerf {

namespace {

double eval_loss(const std::function<Var(Tape<double>&)>& build) {
  Tape<double> tape;
  Var loss = build(tape);
  const Tensor<double>& v = tape.value(loss);
  if (v.numel() != 1) throw ConfigError("gradient_check: loss must be scalar");
  return v[0];
}

}  // namespace

GradCheckReport gradient_check(ParameterSet<double>& ps,
                               const std::function<Var(Tape<double>&)>& build,
                               int64_t max_elems_per_param, Rng& rng,
                               double h, double floor) {
  // One backward pass gives every analytic gradient.
  Tape<double> tape;
  Var loss = build(tape);
  tape.backward(loss);
  std::unordered_map<std::string, Tensor<double>> analytic;
  for (const auto& pg : tape.param_grads())
    if (pg.grad) analytic.emplace(pg.name, *pg.grad);

  GradCheckReport rep;
  for (size_t p = 0; p < ps.size(); ++p) {
    auto& rec = ps.at(p);
    int64_t n = rec.value.numel();
    std::vector<int64_t> idx;
    if (n <= max_elems_per_param) {
      idx.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    } else {
      for (int64_t i = 0; i < max_elems_per_param; ++i)
        idx.push_back(rng.uniform_int(n));
      std::sort(idx.begin(), idx.end());
      idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    }
    auto it = analytic.find(rec.name);
    for (int64_t i : idx) {
      double a = it == analytic.end() ? 0.0 : it->second[i];
      double orig = rec.value[i];
      rec.value[i] = orig + h;
      double lp = eval_loss(build);
      rec.value[i] = orig - h;
      double lm = eval_loss(build);
      rec.value[i] = orig;
      double num = (lp - lm) / (2.0 * h);
      double rel =
          std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = rec.name;
        rep.worst_index = i;
        rep.worst_analytic = a;
        rep.worst_numeric = num;
      }
    }
  }
  return rep;
}

}  // namespace hanerf
