#include "ahiv/censoring.hpp"

#include <algorithm>
#include <map>

#include "ahiv/errors.hpp"

namespace ahiv {

CensoringKM fit_censoring_km(const Dataset& data) {
  const int n = data.n();
  if (n < 1) throw validation_error("empty dataset");

  // events (delta = 1) and censorings (delta = 0) grouped by distinct time
  std::map<double, std::pair<int, int>> counts;  // time -> (events, censorings)
  for (const auto& r : data.records) {
    auto& c = counts[r.time];
    if (r.status == 1)
      ++c.first;
    else
      ++c.second;
  }

  CensoringKM km;
  std::vector<double> h_times, h_values, pi_times, pi_values;
  double at_risk = static_cast<double>(n);
  double h = 1.0;
  for (const auto& [t, c] : counts) {
    const auto [events, censored] = c;
    if (censored > 0) {
      // events at t leave the risk set before the censoring hazard acts
      const double denom = at_risk - static_cast<double>(events);
      h *= 1.0 - static_cast<double>(censored) / denom;
      h_times.push_back(t);
      h_values.push_back(h);
    }
    at_risk -= static_cast<double>(events + censored);
    pi_times.push_back(t);
    pi_values.push_back(at_risk / static_cast<double>(n));
  }
  km.survival = StepFunction(1.0, std::move(h_times), std::move(h_values));
  km.risk_frac = StepFunction(1.0, std::move(pi_times), std::move(pi_values));

  km.censor_time.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    if (data.records[static_cast<std::size_t>(i)].status == 0)
      km.censor_time[static_cast<std::size_t>(i)] = data.records[static_cast<std::size_t>(i)].time;
  return km;
}

WeightTable build_weights(const Dataset& data, const CensoringKM& km) {
  const int n = data.n();
  WeightTable table;
  table.weights.reserve(static_cast<std::size_t>(n));

  // distinct censoring-jump times of G
  const auto& g_times = km.survival.jump_times();

  for (int i = 0; i < n; ++i) {
    const auto& r = data.records[static_cast<std::size_t>(i)];
    std::vector<double> times, values;
    if (r.status == 0) {
      // r_i(t) = 0 past the subject's own censoring time
      times.push_back(r.time);
      values.push_back(0.0);
    } else {
      const double g_own = km.G(r.time);
      if (g_own <= 0.0)
        throw numeric_error("internal consistency: G(T*) = 0 for a subject with an observed "
                            "event");
      // w(t) = G(t)/G(T*_i) for t > T*_i, with G left-continuous; as a
      // left-continuous step function the value after a jump at s is H(s)/G_i.
      double last = 1.0;
      auto push = [&](double s) {
        const double v = km.survival.eval(s) / g_own;
        if (v != last) {
          times.push_back(s);
          values.push_back(v);
          last = v;
        }
      };
      push(r.time);
      for (auto it = std::upper_bound(g_times.begin(), g_times.end(), r.time);
           it != g_times.end(); ++it)
        push(*it);
    }
    table.weights.emplace_back(1.0, std::move(times), std::move(values));
  }
  return table;
}

}  // namespace ahiv
