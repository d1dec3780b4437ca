#pragma once

#include <optional>
#include <vector>

#include "ahiv/data.hpp"
#include "ahiv/step_function.hpp"

namespace ahiv {

// Kaplan-Meier estimate of the censoring survivor function G(t) = P(C >= t),
// fitted on {T*_i, 1 - delta_i}. Ties are resolved by removing events before
// censorings, so a censoring at t leaves G(t) itself unaffected.
struct CensoringKM {
  // right-continuous product-limit H(t) = P(C > t); G(t) = H(t-)
  StepFunction survival;
  // right-continuous n^{-1} #{T* > t}; pi(t) = value at t-
  StepFunction risk_frac;
  // per-subject jump time of the censoring counting process N^c (empty if event)
  std::vector<std::optional<double>> censor_time;

  double G(double t) const { return survival.eval_left(t); }
  double pi(double t) const { return risk_frac.eval_left(t); }
};

CensoringKM fit_censoring_km(const Dataset& data);

// IPCW weights w_i(t) = r_i(t) G(t) / G(T*_i ^ t) as per-subject step
// functions: 1 on [0, T*_i]; afterwards 0 for censored subjects and
// G(t)/G(T*_i) for subjects with an observed event. Evaluate with the
// left-continuous convention (eval_left), matching G.
struct WeightTable {
  std::vector<StepFunction> weights;

  double eval(int subject, double t) const {
    return weights[static_cast<std::size_t>(subject)].eval_left(t);
  }
};

WeightTable build_weights(const Dataset& data, const CensoringKM& km);

}  // namespace ahiv
