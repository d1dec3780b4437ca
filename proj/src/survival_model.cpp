#include "ahiv/survival_model.hpp"

#include <cmath>
#include <string>

#include "ahiv/detail/time_grid.hpp"
#include "ahiv/errors.hpp"
#include "ahiv/stats.hpp"

namespace ahiv {

namespace {

constexpr double kConditionLimit = 1e12;

Eigen::MatrixXd symmetric_inverse(const Eigen::MatrixXd& a, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kConditionLimit)
    throw numeric_error(std::string(what) +
                        " is singular or ill-conditioned (likely collinear regressors, e.g. "
                        "exposure perfectly predicted by the first stage)");
  return es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

std::vector<std::string> coefficient_names(const Dataset& data) {
  std::vector<std::string> names;
  names.push_back("exposure");
  for (const auto& c : data.confounder_names) names.push_back(c);
  names.push_back("residual");
  return names;
}

}  // namespace

void SecondStageFit::finalize() {
  const int m = static_cast<int>(grid.size());
  const int d = dim();
  const int q = static_cast<int>(xg_at.cols());
  rho0 = beta(d - 1);

  jump.resize(m);
  jump_prefix.resize(m);
  mart_prefix.resize(m);
  dhat_prefix.resize(m, d);
  hcum.resize(m);
  ccum.resize(m, d);
  pw1h.resize(m, q);
  w1_prefix.resize(m, q);

  double a = 0.0, mart = 0.0, h = 0.0;
  Eigen::VectorXd dh = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd cc = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd ph = Eigen::VectorXd::Zero(q);
  Eigen::VectorXd wp = Eigen::VectorXd::Zero(q);
  double prev = 0.0;
  for (int k = 0; k < m; ++k) {
    const double len = grid[static_cast<std::size_t>(k)] - prev;
    prev = grid[static_cast<std::size_t>(k)];
    const double r0 = nrisk(k);
    cc += len * zbar.row(k).transpose();
    h += len / r0;
    jump(k) = event_count(k) / r0;
    a += jump(k);
    mart += static_cast<double>(n_obs) * event_count(k) / (r0 * r0);
    dh += (event_zsum.row(k).transpose() - event_count(k) * zbar.row(k).transpose()) / r0;
    ph += xg_at.row(k).transpose() * h;
    wp += xg_at.row(k).transpose();
    jump_prefix(k) = a;
    mart_prefix(k) = mart;
    hcum(k) = h;
    ccum.row(k) = cc.transpose();
    dhat_prefix.row(k) = dh.transpose();
    pw1h.row(k) = ph.transpose();
    w1_prefix.row(k) = wp.transpose();
  }
  w1_total = wp;

  omega_inv = symmetric_inverse(omega, "omega");
  mid = omega_inv * (sigma1 + sigma2) * omega_inv;
  cov_beta = mid / static_cast<double>(n_obs);
}

double SecondStageFit::cumhaz(double t) const {
  Eigen::VectorXd c = cum_zbar(t);
  auto it = std::upper_bound(grid.begin(), grid.end(), t);
  const int k = static_cast<int>(it - grid.begin()) - 1;
  const double a = k >= 0 ? jump_prefix(k) : 0.0;
  return a - beta.dot(c);
}

Eigen::VectorXd SecondStageFit::cum_zbar(double t) const {
  const int m = static_cast<int>(grid.size());
  const int d = dim();
  auto it = std::upper_bound(grid.begin(), grid.end(), t);
  const int k = static_cast<int>(it - grid.begin()) - 1;
  Eigen::VectorXd c = k >= 0 ? Eigen::VectorXd(ccum.row(k).transpose()) : Eigen::VectorXd::Zero(d);
  const double gk = k >= 0 ? grid[static_cast<std::size_t>(k)] : 0.0;
  if (t > gk && m > 0) {
    const int seg = std::min(k + 1, m - 1);  // zbar carried past the last time
    c += (t - gk) * zbar.row(seg).transpose();
  }
  return c;
}

double SecondStageFit::risk_integral(double t) const {
  const int m = static_cast<int>(grid.size());
  auto it = std::upper_bound(grid.begin(), grid.end(), t);
  const int k = static_cast<int>(it - grid.begin()) - 1;
  double h = k >= 0 ? hcum(k) : 0.0;
  const double gk = k >= 0 ? grid[static_cast<std::size_t>(k)] : 0.0;
  if (t > gk && k + 1 < m) h += (t - gk) / nrisk(k + 1);
  // past the last observed time the risk set is empty; the integrand only
  // ever multiplies subjects with T* <= g_m, so the value is never used there
  return h;
}

Eigen::VectorXd SecondStageFit::first_stage_mix(double t) const {
  const int k = [&] {
    auto it = std::upper_bound(grid.begin(), grid.end(), t);
    return static_cast<int>(it - grid.begin()) - 1;
  }();
  const int q = static_cast<int>(xg_at.cols());
  Eigen::VectorXd e = Eigen::VectorXd::Zero(q);
  if (k >= 0) e += pw1h.row(k).transpose();
  Eigen::VectorXd tail = w1_total - (k >= 0 ? Eigen::VectorXd(w1_prefix.row(k).transpose())
                                            : Eigen::VectorXd::Zero(q));
  e += risk_integral(t) * tail;
  return rho0 * e;
}

Eigen::VectorXd SecondStageFit::dhat(double t) const {
  auto it = std::upper_bound(grid.begin(), grid.end(), t);
  const int k = static_cast<int>(it - grid.begin()) - 1;
  if (k < 0) return Eigen::VectorXd::Zero(dim());
  return dhat_prefix.row(k).transpose();
}

double SecondStageFit::mart(double t) const {
  auto it = std::upper_bound(grid.begin(), grid.end(), t);
  const int k = static_cast<int>(it - grid.begin()) - 1;
  return k >= 0 ? mart_prefix(k) : 0.0;
}

double SecondStageFit::drift_running_max(double t, double extra_slope) const {
  const int m = static_cast<int>(grid.size());
  double run = 0.0, best = 0.0, prev = 0.0;
  for (int k = 0; k < m; ++k) {
    const double slope = extra_slope - beta.dot(zbar.row(k).transpose());
    const double gk = grid[static_cast<std::size_t>(k)];
    if (gk <= t) {
      run += slope * (gk - prev);
      best = std::max(best, run);
      run += jump(k);
      best = std::max(best, run);
      prev = gk;
    } else {
      run += slope * (t - prev);
      return std::max(best, run);
    }
  }
  if (t > prev && m > 0) {
    const double slope = extra_slope - beta.dot(zbar.row(m - 1).transpose());
    run += slope * (t - prev);
    best = std::max(best, run);
  }
  return best;
}

Eigen::VectorXd SecondStageFit::make_z(const NewObservation& x) const {
  const int d = dim();
  const int p = d - 2;
  if (static_cast<int>(x.confounders.size()) != p)
    throw validation_error("new observation has " + std::to_string(x.confounders.size()) +
                           " confounders, fit expects " + std::to_string(p));
  Eigen::VectorXd xt(p + 2);
  xt(0) = 1.0;
  xt(1) = x.instrument;
  for (int j = 0; j < p; ++j) xt(2 + j) = x.confounders[static_cast<std::size_t>(j)];
  const double fitted = link_inverse(first_stage.link, xt.dot(first_stage.alpha));
  Eigen::VectorXd z(d);
  z(0) = x.exposure;
  for (int j = 0; j < p; ++j) z(1 + j) = x.confounders[static_cast<std::size_t>(j)];
  z(d - 1) = x.exposure - fitted;
  return z;
}

StepFunction SecondStageFit::zbar_component(int j) const {
  // left-continuous convention: the value holds on (g_{k-1}, g_k]
  std::vector<double> times(grid.begin(), grid.end());
  std::vector<double> values;
  const int m = static_cast<int>(grid.size());
  for (int k = 1; k < m; ++k) values.push_back(zbar(k, j));
  values.push_back(zbar(m - 1, j));
  return StepFunction(zbar(0, j), std::move(times), std::move(values));
}

SecondStageFit fit_survival(const Dataset& data, const FirstStageFit& fs) {
  const int n = data.n();
  const int d = data.p() + 2;
  const int q = data.p() + 2;
  if (fs.residuals.size() != n)
    throw validation_error("first stage was fitted on a different dataset");

  const detail::TimeGrid grid = detail::build_grid(data);
  const Eigen::MatrixXd z = detail::build_z(data, fs);
  const int m = grid.m();

  SecondStageFit fit;
  fit.coef_names = coefficient_names(data);
  fit.tau = data.horizon;
  fit.n_obs = n;
  fit.first_stage = fs;
  fit.grid = grid.times;
  fit.zbar.resize(m, d);
  fit.nrisk.resize(m);
  fit.event_count = Eigen::VectorXd::Zero(m);
  fit.event_zsum = Eigen::MatrixXd::Zero(m, d);
  fit.xg_at = Eigen::MatrixXd::Zero(m, q);

  // subjects grouped by grid position
  std::vector<std::vector<int>> at(static_cast<std::size_t>(m));
  for (int i = 0; i < n; ++i)
    at[static_cast<std::size_t>(grid.subject_index[static_cast<std::size_t>(i)])].push_back(i);

  // descending sweep: risk sums over {T* >= g_k}
  double r0 = 0.0;
  Eigen::VectorXd r1 = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd r2 = Eigen::MatrixXd::Zero(d, d);
  for (int k = m - 1; k >= 0; --k) {
    for (int i : at[static_cast<std::size_t>(k)]) {
      r0 += 1.0;
      r1 += z.row(i).transpose();
      r2 += z.row(i).transpose() * z.row(i);
      fit.xg_at.row(k) += fs.link_deriv(i) * fs.design.row(i);
      const auto& rec = data.records[static_cast<std::size_t>(i)];
      if (rec.status == 1) {
        fit.event_count(k) += 1.0;
        fit.event_zsum.row(k) += z.row(i);
      }
    }
    fit.nrisk(k) = r0;
    fit.zbar.row(k) = (r1 / r0).transpose();
  }
  if (fit.event_count.sum() == 0.0) throw numeric_error("no events in the data; cannot fit");

  // Omega exactly on the segments: sum_i Y_i (Z_i - zbar)(Z_i - zbar)' equals
  // R2 - R1 R1'/R0 with the suffix sums of the sweep above
  Eigen::MatrixXd omega_n = Eigen::MatrixXd::Zero(d, d);  // n * Omega
  {
    r0 = 0.0;
    r1.setZero();
    r2.setZero();
    std::vector<Eigen::MatrixXd> seg(static_cast<std::size_t>(m));
    for (int k = m - 1; k >= 0; --k) {
      for (int i : at[static_cast<std::size_t>(k)]) {
        r0 += 1.0;
        r1 += z.row(i).transpose();
        r2 += z.row(i).transpose() * z.row(i);
      }
      seg[static_cast<std::size_t>(k)] = r2 - r1 * r1.transpose() / r0;
    }
    double prev_t = 0.0;
    for (int k = 0; k < m; ++k) {
      const double len = grid.times[static_cast<std::size_t>(k)] - prev_t;
      prev_t = grid.times[static_cast<std::size_t>(k)];
      omega_n += len * seg[static_cast<std::size_t>(k)];
    }
  }

  Eigen::VectorXd score = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd sigma1_n = Eigen::MatrixXd::Zero(d, d);
  for (int k = 0; k < m; ++k) {
    for (int i : at[static_cast<std::size_t>(k)]) {
      if (data.records[static_cast<std::size_t>(i)].status != 1) continue;
      const Eigen::VectorXd dev = z.row(i).transpose() - fit.zbar.row(k).transpose();
      score += dev;
      sigma1_n += dev * dev.transpose();
    }
  }

  fit.omega = omega_n / static_cast<double>(n);
  fit.sigma1 = sigma1_n / static_cast<double>(n);
  const Eigen::MatrixXd omega_inv = symmetric_inverse(fit.omega, "omega");
  fit.beta = omega_inv * (score / static_cast<double>(n));
  fit.score_sup = ((score - omega_n * fit.beta) / static_cast<double>(n))
                      .lpNorm<Eigen::Infinity>();

  // first-stage correction: Psi = (rho0/n) sum_i V_i x~' (g^{-1})' with
  // V_i = int_0^{T*_i} (Z_i - zbar(u)) du
  Eigen::VectorXd ccum = Eigen::VectorXd::Zero(d);
  std::vector<Eigen::VectorXd> ccum_at(static_cast<std::size_t>(m));
  double prev = 0.0;
  for (int k = 0; k < m; ++k) {
    ccum += (grid.times[static_cast<std::size_t>(k)] - prev) * fit.zbar.row(k).transpose();
    prev = grid.times[static_cast<std::size_t>(k)];
    ccum_at[static_cast<std::size_t>(k)] = ccum;
  }
  const double rho0 = fit.beta(d - 1);
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(d, q);
  for (int i = 0; i < n; ++i) {
    const int k = grid.subject_index[static_cast<std::size_t>(i)];
    const Eigen::VectorXd v =
        z.row(i).transpose() * data.records[static_cast<std::size_t>(i)].time -
        ccum_at[static_cast<std::size_t>(k)];
    psi += v * (fs.link_deriv(i) * fs.design.row(i));
  }
  fit.psi = rho0 / static_cast<double>(n) * psi;
  fit.sigma2 = fit.psi * fs.theta * fit.psi.transpose();

  fit.finalize();
  return fit;
}

double baseline_cumhaz_cov(const SecondStageFit& fit, double t, double s) {
  if (s > t) std::swap(t, s);
  if (!(s >= 0.0) || !(t <= fit.tau))
    throw validation_error("baseline covariance arguments must lie in [0, tau]");
  const Eigen::VectorXd ct = fit.cum_zbar(t);
  const Eigen::VectorXd cs = fit.cum_zbar(s);
  const Eigen::VectorXd et = fit.first_stage_mix(t);
  const Eigen::VectorXd es = fit.first_stage_mix(s);
  return fit.mart(s) + ct.dot(fit.mid * cs) + et.dot(fit.first_stage.theta * es) -
         ct.dot(fit.omega_inv * fit.dhat(s)) - cs.dot(fit.omega_inv * fit.dhat(t));
}

PredictionCurve predict_survival(const SecondStageFit& fit, const NewObservation& x,
                                 const std::vector<double>& times, double level) {
  if (!(level > 0.0 && level < 1.0)) throw validation_error("confidence level must be in (0,1)");
  const Eigen::VectorXd z = fit.make_z(x);
  const double zq = normal_quantile(0.5 * (1.0 + level));
  const double n = static_cast<double>(fit.n_obs);

  PredictionCurve curve;
  curve.level = level;
  for (double t : times) {
    if (!(t >= 0.0) || !(t <= fit.tau))
      throw validation_error("prediction time outside [0, tau]");
    const double lam = fit.cumhaz(t);
    const double s_raw = std::exp(-lam - fit.beta.dot(z) * t);
    const double s_star = std::exp(-fit.drift_running_max(t, fit.beta.dot(z)));

    const Eigen::VectorXd g = z * t - fit.cum_zbar(t);
    const Eigen::VectorXd e = fit.first_stage_mix(t);
    double v = fit.mart(t) + g.dot(fit.mid * g) + e.dot(fit.first_stage.theta * e) +
               2.0 * g.dot(fit.omega_inv * fit.dhat(t));
    v = std::max(v * s_raw * s_raw / n, 0.0);

    curve.times.push_back(t);
    curve.estimate.push_back(s_star);
    curve.variance.push_back(v);
    if (s_star <= 0.0 || s_star >= 1.0 || v == 0.0) {
      curve.ci_lower.push_back(s_star);
      curve.ci_upper.push_back(s_star);
      curve.degenerate.push_back(true);
    } else {
      const double se_loglog = std::sqrt(v) / (s_star * std::fabs(std::log(s_star)));
      curve.ci_lower.push_back(std::pow(s_star, std::exp(zq * se_loglog)));
      curve.ci_upper.push_back(std::pow(s_star, std::exp(-zq * se_loglog)));
      curve.degenerate.push_back(false);
    }
  }
  return curve;
}

LinYingFit linying_fit(const std::vector<double>& times, const std::vector<int>& status,
                       const Eigen::MatrixXd& z, double tau) {
  const int n = static_cast<int>(times.size());
  const int d = static_cast<int>(z.cols());
  if (static_cast<int>(status.size()) != n || z.rows() != n)
    throw validation_error("linying_fit: inconsistent input sizes");

  std::vector<double> g(times.begin(), times.end());
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  const int m = static_cast<int>(g.size());
  std::vector<std::vector<int>> at(static_cast<std::size_t>(m));
  for (int i = 0; i < n; ++i) {
    auto it = std::lower_bound(g.begin(), g.end(), times[static_cast<std::size_t>(i)]);
    at[static_cast<std::size_t>(it - g.begin())].push_back(i);
  }

  LinYingFit fit;
  fit.grid = g;
  fit.zbar.resize(m, d);
  Eigen::VectorXd nrisk(m);
  double r0 = 0.0;
  Eigen::VectorXd r1 = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd r2 = Eigen::MatrixXd::Zero(d, d);
  std::vector<Eigen::MatrixXd> seg(static_cast<std::size_t>(m));
  for (int k = m - 1; k >= 0; --k) {
    for (int i : at[static_cast<std::size_t>(k)]) {
      r0 += 1.0;
      r1 += z.row(i).transpose();
      r2 += z.row(i).transpose() * z.row(i);
    }
    nrisk(k) = r0;
    fit.zbar.row(k) = (r1 / r0).transpose();
    seg[static_cast<std::size_t>(k)] = r2 - r1 * r1.transpose() / r0;
  }
  Eigen::MatrixXd omega_n = Eigen::MatrixXd::Zero(d, d);
  double prev = 0.0;
  for (int k = 0; k < m; ++k) {
    omega_n += (g[static_cast<std::size_t>(k)] - prev) * seg[static_cast<std::size_t>(k)];
    prev = g[static_cast<std::size_t>(k)];
  }
  (void)tau;  // risk sets are empty past the last observed time

  Eigen::VectorXd score = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd sigma1_n = Eigen::MatrixXd::Zero(d, d);
  fit.jump = Eigen::VectorXd::Zero(m);
  for (int k = 0; k < m; ++k) {
    for (int i : at[static_cast<std::size_t>(k)]) {
      if (status[static_cast<std::size_t>(i)] != 1) continue;
      const Eigen::VectorXd dev = z.row(i).transpose() - fit.zbar.row(k).transpose();
      score += dev;
      sigma1_n += dev * dev.transpose();
      fit.jump(k) += 1.0 / nrisk(k);
    }
  }
  fit.omega = omega_n / static_cast<double>(n);
  fit.sigma1 = sigma1_n / static_cast<double>(n);
  fit.beta = symmetric_inverse(fit.omega, "omega") * (score / static_cast<double>(n));
  return fit;
}

}  // namespace ahiv
