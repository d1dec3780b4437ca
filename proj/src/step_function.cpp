#include "ahiv/step_function.hpp"

#include <algorithm>
#include <cmath>

#include "ahiv/errors.hpp"

namespace ahiv {

StepFunction::StepFunction(double initial, std::vector<double> jump_times,
                           std::vector<double> jump_values)
    : initial_(initial), times_(std::move(jump_times)), values_(std::move(jump_values)) {
  if (times_.size() != values_.size())
    throw validation_error("StepFunction: jump_times and jump_values differ in length");
  if (!std::isfinite(initial_)) throw validation_error("StepFunction: non-finite initial value");
  for (std::size_t k = 0; k < times_.size(); ++k) {
    if (!std::isfinite(times_[k]) || !std::isfinite(values_[k]))
      throw validation_error("StepFunction: non-finite jump");
    if (k > 0 && !(times_[k] > times_[k - 1]))
      throw validation_error("StepFunction: jump times must be strictly increasing");
  }
}

double StepFunction::eval(double t) const {
  // value of the last jump with time <= t
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return initial_;
  return values_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

double StepFunction::eval_left(double t) const {
  // limit from the left: last jump with time < t
  auto it = std::lower_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return initial_;
  return values_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

double StepFunction::integrate(double a, double b) const {
  if (!(a <= b)) throw validation_error("StepFunction::integrate: requires a <= b");
  double total = 0.0;
  double left = a;
  // walk the jump times inside (a, b]
  auto it = std::upper_bound(times_.begin(), times_.end(), a);
  for (; it != times_.end() && *it < b; ++it) {
    total += eval(left) * (*it - left);
    left = *it;
  }
  total += eval(left) * (b - left);
  return total;
}

}  // namespace ahiv
