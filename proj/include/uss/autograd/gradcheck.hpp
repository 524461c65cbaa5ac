#pragma once

// Finite-difference verification of reverse-mode gradients. Runs fragments
// in double precision; the analytic path and the central-difference oracle
// share nothing but the forward function.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "uss/autograd/graph.hpp"
#include "uss/core/rng.hpp"

namespace uss::ag {

struct GradCheckEntry {
  std::string param;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  bool pass = false;
  double tolerance = 0.0;
  double max_rel_err = 0.0;
  GradCheckEntry worst;
  int64_t coords_checked = 0;

  std::string summary() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%s max_rel_err=%.3e tol=%.1e coords=%lld worst=%s[%lld] "
                  "analytic=%.6e numeric=%.6e",
                  pass ? "PASS" : "FAIL", max_rel_err, tolerance,
                  static_cast<long long>(coords_checked), worst.param.c_str(),
                  static_cast<long long>(worst.index), worst.analytic,
                  worst.numeric);
    return std::string(buf);
  }
};

// build_loss must rebuild the graph from the parameters' current values on
// every call. Coordinates are subsampled per parameter for large tensors.
inline GradCheckReport gradient_check(
    const std::function<Var<double>()>& build_loss,
    const std::vector<Parameter<double>*>& params, double tolerance, Rng& rng,
    int64_t max_coords_per_param = 24, double step = 1e-5) {
  GradCheckReport report;
  report.tolerance = tolerance;

  auto loss = build_loss();
  GradMap<double> grads = backward(loss);

  for (Parameter<double>* p : params) {
    const int64_t n = p->value.size();
    if (n == 0) continue;
    std::vector<int64_t> coords;
    if (n <= max_coords_per_param) {
      for (int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int64_t c = 0; c < max_coords_per_param; ++c)
        coords.push_back(static_cast<int64_t>(rng.below(static_cast<uint64_t>(n))));
    }
    auto it = grads.find(p);
    for (int64_t i : coords) {
      const double analytic = it == grads.end() ? 0.0 : it->second[i];
      const double orig = p->value[i];
      p->value[i] = orig + step;
      const double f_plus = build_loss()->value[0];
      p->value[i] = orig - step;
      const double f_minus = build_loss()->value[0];
      p->value[i] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = {p->name, i, analytic, numeric, rel};
      }
    }
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace uss::ag
