#pragma once

namespace ahiv {

// Standard normal CDF.
double normal_cdf(double x);

// Standard normal quantile; p in (0, 1). Acklam's rational approximation
// polished with one Halley step, accurate to ~1e-15.
double normal_quantile(double p);

// Two-sided p-value for a z statistic under the standard normal reference.
double two_sided_p(double z);

}  // namespace ahiv
