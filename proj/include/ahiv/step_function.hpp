#pragma once

#include <cstddef>
#include <vector>

namespace ahiv {

// Piecewise-constant function on [0, inf) given by an initial level and a
// sorted list of jump times with the value holding after each jump.
//
// Two evaluation conventions are provided because survival estimators mix
// them: eval(t) is right-continuous (value of the last jump <= t) and is the
// natural reading for counting-process integrals; eval_left(t) is the limit
// from the left (last jump < t) and is the one P(C >= t)-style quantities
// (censoring survival, at-risk fraction, IPCW weights) require.
//
// Integrals over [a, b] are exact sums of value x segment length on the
// partition induced by the jump times.
class StepFunction {
 public:
  StepFunction() = default;
  StepFunction(double initial, std::vector<double> jump_times, std::vector<double> jump_values);

  double initial_value() const { return initial_; }
  const std::vector<double>& jump_times() const { return times_; }
  const std::vector<double>& jump_values() const { return values_; }
  std::size_t size() const { return times_.size(); }

  double eval(double t) const;
  double eval_left(double t) const;
  double integrate(double a, double b) const;

 private:
  double initial_ = 0.0;
  std::vector<double> times_;
  std::vector<double> values_;
};

}  // namespace ahiv
