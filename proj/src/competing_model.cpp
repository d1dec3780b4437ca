#include "ahiv/competing_model.hpp"

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

int locate(const std::vector<double>& grid, double t) {
  auto it = std::upper_bound(grid.begin(), grid.end(), t);
  return static_cast<int>(it - grid.begin()) - 1;
}

}  // namespace

void CompetingFit::finalize() {
  const int m = static_cast<int>(grid.size());
  const int d = dim();
  const int q = static_cast<int>(xg_at.cols());
  rho0 = beta(d - 1);

  jump.resize(m);
  jump_prefix.resize(m);
  mart_prefix.resize(m);
  dhat_prefix.resize(m, d);
  ccum.resize(m, d);
  hwcum.resize(m);
  goscum.resize(m);
  dizcum.resize(m, d);
  jp_prefix.resize(m);
  ig_cum.resize(m);
  igz_cum.resize(m, d);
  ocp0.resize(m);
  ocp1.resize(m, d);
  pa.resize(m, q);
  pb.resize(m, q);
  pc.resize(m, q);
  w1_prefix.resize(m, q);

  double a = 0.0, mart = 0.0, hwv = 0.0, gosv = 0.0, jp = 0.0, ig = 0.0;
  Eigen::VectorXd dh = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd cc = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd dz = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd gz = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd o0 = Eigen::VectorXd::Zero(1);
  double o0v = 0.0;
  Eigen::VectorXd o1 = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd pav = Eigen::VectorXd::Zero(q);
  Eigen::VectorXd pbv = Eigen::VectorXd::Zero(q);
  Eigen::VectorXd pcv = Eigen::VectorXd::Zero(q);
  Eigen::VectorXd wp = Eigen::VectorXd::Zero(q);
  (void)o0;
  double prev = 0.0;
  for (int k = 0; k < m; ++k) {
    const double len = grid[static_cast<std::size_t>(k)] - prev;
    prev = grid[static_cast<std::size_t>(k)];
    const double s0 = s0w(k);
    const double g = gseg(k);
    cc += len * zbar.row(k).transpose();
    ig += len * g;
    gz += len * g * zbar.row(k).transpose();
    if (s0 > 0.0) {
      hwv += len / s0;
      gosv += len * g / s0;
      dz += len * (g / s0) * zbar.row(k).transpose();
      jump(k) = event_count(k) / s0;
      mart += static_cast<double>(n_obs) * event_count(k) / (s0 * s0);
      dh += (event_zsum.row(k).transpose() - event_count(k) * zbar.row(k).transpose()) / s0;
      jp += (g / s0) * jump(k);
    } else {
      jump(k) = 0.0;
    }
    a += jump(k);
    o0v += oc0(k);
    o1 += oc1.row(k).transpose();
    pav += xg_at.row(k).transpose() * hwv;
    pbv += xg_oc.row(k).transpose();
    pcv += xg_oc.row(k).transpose() * gosv;
    wp += xg_at.row(k).transpose();

    jump_prefix(k) = a;
    mart_prefix(k) = mart;
    dhat_prefix.row(k) = dh.transpose();
    ccum.row(k) = cc.transpose();
    hwcum(k) = hwv;
    goscum(k) = gosv;
    dizcum.row(k) = dz.transpose();
    jp_prefix(k) = jp;
    ig_cum(k) = ig;
    igz_cum.row(k) = gz.transpose();
    ocp0(k) = o0v;
    ocp1.row(k) = o1.transpose();
    pa.row(k) = pav.transpose();
    pb.row(k) = pbv.transpose();
    pc.row(k) = pcv.transpose();
    w1_prefix.row(k) = wp.transpose();
  }
  w1_total = wp;

  omega_inv = symmetric_inverse(omega, "omega");
  mid = omega_inv * (sigma1 + sigma2 + sigma3) * omega_inv;
  cov_beta = mid / static_cast<double>(n_obs);
}

double CompetingFit::cumhaz(double t) const {
  const int k = locate(grid, t);
  const double a = k >= 0 ? jump_prefix(k) : 0.0;
  return a - beta.dot(cum_zbar(t));
}

Eigen::VectorXd CompetingFit::cum_zbar(double t) const {
  const int m = static_cast<int>(grid.size());
  const int d = dim();
  const int k = locate(grid, t);
  Eigen::VectorXd c = k >= 0 ? Eigen::VectorXd(ccum.row(k).transpose()) : Eigen::VectorXd::Zero(d);
  const double gk = k >= 0 ? grid[static_cast<std::size_t>(k)] : 0.0;
  if (t > gk && m > 0) {
    const int seg = std::min(k + 1, m - 1);
    c += (t - gk) * zbar.row(seg).transpose();
  }
  return c;
}

double CompetingFit::hw(double t) const {
  const int m = static_cast<int>(grid.size());
  const int k = locate(grid, t);
  double h = k >= 0 ? hwcum(k) : 0.0;
  const double gk = k >= 0 ? grid[static_cast<std::size_t>(k)] : 0.0;
  if (t > gk && k + 1 < m && s0w(k + 1) > 0.0) h += (t - gk) / s0w(k + 1);
  return h;
}

double CompetingFit::gos(double t) const {
  const int m = static_cast<int>(grid.size());
  const int k = locate(grid, t);
  double v = k >= 0 ? goscum(k) : 0.0;
  const double gk = k >= 0 ? grid[static_cast<std::size_t>(k)] : 0.0;
  if (t > gk && k + 1 < m && s0w(k + 1) > 0.0) v += (t - gk) * gseg(k + 1) / s0w(k + 1);
  return v;
}

Eigen::VectorXd CompetingFit::diz(double t) const {
  const int m = static_cast<int>(grid.size());
  const int d = dim();
  const int k = locate(grid, t);
  Eigen::VectorXd v =
      k >= 0 ? Eigen::VectorXd(dizcum.row(k).transpose()) : Eigen::VectorXd::Zero(d);
  const double gk = k >= 0 ? grid[static_cast<std::size_t>(k)] : 0.0;
  if (t > gk && k + 1 < m && s0w(k + 1) > 0.0)
    v += (t - gk) * (gseg(k + 1) / s0w(k + 1)) * zbar.row(k + 1).transpose();
  return v;
}

Eigen::VectorXd CompetingFit::first_stage_mix(double t) const {
  const int q = static_cast<int>(xg_at.cols());
  const int k = locate(grid, t);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(q);
  if (k >= 0) e += pa.row(k).transpose() - pc.row(k).transpose() + gos(t) * pb.row(k).transpose();
  Eigen::VectorXd tail = w1_total - (k >= 0 ? Eigen::VectorXd(w1_prefix.row(k).transpose())
                                            : Eigen::VectorXd::Zero(q));
  e += hw(t) * tail;
  return rho0 * e;
}

Eigen::VectorXd CompetingFit::dhat(double t) const {
  const int k = locate(grid, t);
  if (k < 0) return Eigen::VectorXd::Zero(dim());
  return dhat_prefix.row(k).transpose();
}

double CompetingFit::mart(double t) const {
  const int k = locate(grid, t);
  return k >= 0 ? mart_prefix(k) : 0.0;
}

double CompetingFit::drift_running_max(double t, double extra_slope) const {
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

Eigen::VectorXd CompetingFit::make_z(const NewObservation& x) const {
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

double CompetingFit::qt(double u, int k_u, double t) const {
  if (u > t) return 0.0;
  const double p0 = k_u >= 1 ? ocp0(k_u - 1) : 0.0;
  const Eigen::VectorXd p1 =
      k_u >= 1 ? Eigen::VectorXd(ocp1.row(k_u - 1).transpose()) : Eigen::VectorXd::Zero(dim());
  // jumps with u <= t_e <= t
  const int kt = locate(grid, t);
  const double jp_hi = kt >= 0 ? jp_prefix(kt) : 0.0;
  const double jp_lo = k_u >= 1 ? jp_prefix(k_u - 1) : 0.0;
  const double dsj = jp_hi - jp_lo;
  // drift over [u, t]
  const double ddi = gos(t) - gos(u);
  const Eigen::VectorXd ddiz = diz(t) - diz(u);
  return (-p0 * dsj - beta.dot(p1) * ddi + p0 * beta.dot(ddiz)) / static_cast<double>(n_obs);
}

double CompetingFit::censoring_cov_term(double t, double s) const {
  const int m = static_cast<int>(grid.size());
  double total = 0.0;
  for (int k = 0; k < m; ++k) {
    if (censor_count(k) == 0.0) continue;
    const double u = grid[static_cast<std::size_t>(k)];
    if (u > t && u > s) break;
    const double pi = nrisk_ge(k) / static_cast<double>(n_obs);
    const double qa = qt(u, k, t);
    const double qb = qt(u, k, s);
    total += censor_count(k) * qa * qb / (pi * pi);
  }
  return static_cast<double>(n_obs) * total;
}

CompetingFit::ResidualPath CompetingFit::residual_path(const Dataset& data, int subject) const {
  // M_i(t) = N_i(t) - int_0^t Y_i(u) (dLambda_10(u) + beta' Z_i du); drift on
  // a segment is -Y_i beta'(Z_i - zbar), jumps are dN_i - Y_i dA. Requires
  // the original records (the per-subject rows are not kept in the fit).
  if (first_stage.residuals.size() != data.n())
    throw validation_error("residual_path needs the dataset the fit was computed from");
  const auto& rec = data.records[static_cast<std::size_t>(subject)];
  const bool own_event = rec.status == 1 && rec.cause.has_value() && *rec.cause == cause;
  Eigen::VectorXd z(dim());
  z(0) = rec.exposure;
  for (int j = 0; j < static_cast<int>(rec.confounders.size()); ++j)
    z(1 + j) = rec.confounders[static_cast<std::size_t>(j)];
  z(dim() - 1) = first_stage.residuals(subject);

  ResidualPath path;
  const int m = static_cast<int>(grid.size());
  for (int k = 0; k < m; ++k) {
    const double gk = grid[static_cast<std::size_t>(k)];
    const bool at_risk = !(own_event && rec.time < gk);  // Y_i on (g_{k-1}, g_k]
    path.slopes.push_back(at_risk ? -beta.dot(z - zbar.row(k).transpose()) : 0.0);
    double dj = own_event && rec.time == gk ? 1.0 : 0.0;
    if (at_risk) dj -= jump(k);
    if (dj != 0.0) {
      path.jump_times.push_back(gk);
      path.jump_sizes.push_back(dj);
    }
  }
  return path;
}

CompetingFit fit_competing(const Dataset& data, const FirstStageFit& fs, int cause_of_interest) {
  if (data.mode != Mode::competing)
    throw validation_error("fit_competing requires a competing-mode dataset");
  const int n = data.n();
  const int d = data.p() + 2;
  const int q = data.p() + 2;
  if (fs.residuals.size() != n)
    throw validation_error("first stage was fitted on a different dataset");

  int n_events = 0;
  bool cause_seen = false;
  for (const auto& r : data.records) {
    if (r.status == 1 && r.cause.has_value() && *r.cause == cause_of_interest) {
      ++n_events;
      cause_seen = true;
    }
  }
  if (!cause_seen)
    throw validation_error("cause label " + std::to_string(cause_of_interest) +
                           " is absent from the data");
  if (n_events == 0) throw numeric_error("no cause-of-interest events; cannot fit");

  CompetingFit fit;
  fit.cause = cause_of_interest;
  fit.tau = data.horizon;
  fit.n_obs = n;
  fit.first_stage = fs;
  fit.km = fit_censoring_km(data);
  fit.weights = build_weights(data, fit.km);
  fit.coef_names.clear();
  fit.coef_names.push_back("exposure");
  for (const auto& c : data.confounder_names) fit.coef_names.push_back(c);
  fit.coef_names.push_back("residual");

  const detail::TimeGrid tg = detail::build_grid(data);
  const Eigen::MatrixXd z = detail::build_z(data, fs);

  // the grid always reaches tau
  std::vector<double> grid = tg.times;
  if (data.horizon > grid.back()) grid.push_back(data.horizon);
  const int m = static_cast<int>(grid.size());
  fit.grid = grid;

  std::vector<std::vector<int>> at(static_cast<std::size_t>(m));
  for (int i = 0; i < n; ++i)
    at[static_cast<std::size_t>(tg.subject_index[static_cast<std::size_t>(i)])].push_back(i);

  auto is_event = [&](int i) {
    const auto& r = data.records[static_cast<std::size_t>(i)];
    return r.status == 1 && r.cause.has_value() && *r.cause == cause_of_interest;
  };
  auto is_other_cause = [&](int i) {
    const auto& r = data.records[static_cast<std::size_t>(i)];
    return r.status == 1 && r.cause.has_value() && *r.cause != cause_of_interest;
  };

  fit.zbar.resize(m, d);
  fit.s0w.resize(m);
  fit.gseg.resize(m);
  fit.nrisk_ge.resize(m);
  fit.event_count = Eigen::VectorXd::Zero(m);
  fit.event_zsum = Eigen::MatrixXd::Zero(m, d);
  fit.censor_count = Eigen::VectorXd::Zero(m);
  fit.xg_at = Eigen::MatrixXd::Zero(m, q);
  fit.xg_oc = Eigen::MatrixXd::Zero(m, q);
  fit.oc0 = Eigen::VectorXd::Zero(m);
  fit.oc1 = Eigen::MatrixXd::Zero(m, d);

  // per-subject censoring-KM value at the subject's own time
  Eigen::VectorXd g_own(n);
  for (int i = 0; i < n; ++i)
    g_own(i) = fit.km.G(data.records[static_cast<std::size_t>(i)].time);

  for (int k = 0; k < m; ++k) fit.gseg(k) = fit.km.G(grid[static_cast<std::size_t>(k)]);

  // grouped sums at each grid point
  for (int k = 0; k < static_cast<int>(tg.times.size()); ++k) {
    for (int i : at[static_cast<std::size_t>(k)]) {
      const auto& rec = data.records[static_cast<std::size_t>(i)];
      fit.xg_at.row(k) += fs.link_deriv(i) * fs.design.row(i);
      if (rec.status == 0) fit.censor_count(k) += 1.0;
      if (is_event(i)) {
        fit.event_count(k) += 1.0;
        fit.event_zsum.row(k) += z.row(i);
      }
      if (is_other_cause(i)) {
        if (!(g_own(i) > 0.0))
          throw numeric_error("internal consistency: G(T*) = 0 for an observed event");
        fit.oc0(k) += 1.0 / g_own(i);
        fit.oc1.row(k) += z.row(i) / g_own(i);
        fit.xg_oc.row(k) += fs.link_deriv(i) * fs.design.row(i) / g_own(i);
      }
    }
  }

  // unweighted suffix sums over {T* >= g_k} and other-cause prefix sums give
  // the weighted risk aggregates segment by segment
  Eigen::VectorXd u0(m);
  Eigen::MatrixXd u1(m, d);
  std::vector<Eigen::MatrixXd> u2(static_cast<std::size_t>(m));
  {
    double r0 = 0.0;
    Eigen::VectorXd r1 = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd r2 = Eigen::MatrixXd::Zero(d, d);
    for (int k = m - 1; k >= 0; --k) {
      if (k < static_cast<int>(tg.times.size()))
        for (int i : at[static_cast<std::size_t>(k)]) {
          r0 += 1.0;
          r1 += z.row(i).transpose();
          r2 += z.row(i).transpose() * z.row(i);
        }
      u0(k) = r0;
      u1.row(k) = r1.transpose();
      u2[static_cast<std::size_t>(k)] = r2;
    }
  }

  Eigen::MatrixXd omega_n = Eigen::MatrixXd::Zero(d, d);
  // other-cause prefix sums of 1/G_i, Z_i/G_i and Z_i Z_i'/G_i, frozen
  // strictly before each grid point (they feed q at censoring times)
  double p0_running = 0.0;
  Eigen::VectorXd p1_running = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd p2_running = Eigen::MatrixXd::Zero(d, d);
  std::vector<double> p0_before(static_cast<std::size_t>(m));
  std::vector<Eigen::VectorXd> p1_before(static_cast<std::size_t>(m));
  std::vector<Eigen::MatrixXd> p2_before(static_cast<std::size_t>(m));
  {
    double prev_t = 0.0;
    for (int k = 0; k < m; ++k) {
      p0_before[static_cast<std::size_t>(k)] = p0_running;
      p1_before[static_cast<std::size_t>(k)] = p1_running;
      p2_before[static_cast<std::size_t>(k)] = p2_running;

      const double g = fit.gseg(k);
      const double s0 = u0(k) + g * p0_running;
      const Eigen::VectorXd s1 = u1.row(k).transpose() + g * p1_running;
      const Eigen::MatrixXd s2 = u2[static_cast<std::size_t>(k)] + g * p2_running;
      fit.s0w(k) = s0;
      fit.nrisk_ge(k) = u0(k);
      if (s0 > 0.0)
        fit.zbar.row(k) = (s1 / s0).transpose();
      else
        fit.zbar.row(k) = k > 0 ? fit.zbar.row(k - 1) : Eigen::RowVectorXd::Zero(d);

      const double len = grid[static_cast<std::size_t>(k)] - prev_t;
      prev_t = grid[static_cast<std::size_t>(k)];
      if (s0 > 0.0) omega_n += len * (s2 - s1 * s1.transpose() / s0);

      // other-cause subjects at g_k enter the decayed part of the risk set
      // strictly after their own time
      if (k < static_cast<int>(tg.times.size()))
        for (int i : at[static_cast<std::size_t>(k)]) {
          if (!is_other_cause(i)) continue;
          p0_running += 1.0 / g_own(i);
          p1_running += z.row(i).transpose() / g_own(i);
          p2_running += z.row(i).transpose() * z.row(i) / g_own(i);
        }
    }
  }

  Eigen::VectorXd score = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd sigma1_n = Eigen::MatrixXd::Zero(d, d);
  for (int k = 0; k < static_cast<int>(tg.times.size()); ++k) {
    for (int i : at[static_cast<std::size_t>(k)]) {
      if (!is_event(i)) continue;
      const Eigen::VectorXd dev = z.row(i).transpose() - fit.zbar.row(k).transpose();
      score += dev;  // own-event weight is 1 by construction
      sigma1_n += dev * dev.transpose();
    }
  }

  fit.omega = omega_n / static_cast<double>(n);
  fit.sigma1 = sigma1_n / static_cast<double>(n);
  const Eigen::MatrixXd omega_inv = symmetric_inverse(fit.omega, "omega");
  fit.beta = omega_inv * (score / static_cast<double>(n));
  fit.score_sup =
      ((score - omega_n * fit.beta) / static_cast<double>(n)).lpNorm<Eigen::Infinity>();

  // Psi with weighted at-risk integrals
  Eigen::VectorXd ccum = Eigen::VectorXd::Zero(d);
  double ig = 0.0;
  Eigen::VectorXd igz = Eigen::VectorXd::Zero(d);
  std::vector<Eigen::VectorXd> ccum_at(static_cast<std::size_t>(m));
  std::vector<double> ig_at(static_cast<std::size_t>(m));
  std::vector<Eigen::VectorXd> igz_at(static_cast<std::size_t>(m));
  {
    double prev_t = 0.0;
    for (int k = 0; k < m; ++k) {
      const double len = grid[static_cast<std::size_t>(k)] - prev_t;
      prev_t = grid[static_cast<std::size_t>(k)];
      ccum += len * fit.zbar.row(k).transpose();
      ig += len * fit.gseg(k);
      igz += len * fit.gseg(k) * fit.zbar.row(k).transpose();
      ccum_at[static_cast<std::size_t>(k)] = ccum;
      ig_at[static_cast<std::size_t>(k)] = ig;
      igz_at[static_cast<std::size_t>(k)] = igz;
    }
  }
  const double rho0 = fit.beta(d - 1);
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(d, q);
  for (int i = 0; i < n; ++i) {
    const int k = tg.subject_index[static_cast<std::size_t>(i)];
    const auto& rec = data.records[static_cast<std::size_t>(i)];
    Eigen::VectorXd v = z.row(i).transpose() * rec.time - ccum_at[static_cast<std::size_t>(k)];
    if (is_other_cause(i)) {
      const double dig = ig - ig_at[static_cast<std::size_t>(k)];
      const Eigen::VectorXd digz = igz - igz_at[static_cast<std::size_t>(k)];
      v += (z.row(i).transpose() * dig - digz) / g_own(i);
    }
    psi += v * (fs.link_deriv(i) * fs.design.row(i));
  }
  fit.psi = rho0 / static_cast<double>(n) * psi;
  fit.sigma2 = fit.psi * fs.theta * fit.psi.transpose();

  // q(t) at censoring times and Sigma_3.
  // Suffix sums over cause-of-interest jumps and weighted drift integrals:
  //   E0(t) = sum_{t_e >= t} G(t_e) dA_e,   E1 likewise with zbar,
  //   F0(t) = int_t^tau G,  F1 = int_t^tau G zbar,  F2 = int G zbar zbar'.
  Eigen::VectorXd jumpA(m);
  for (int k = 0; k < m; ++k)
    jumpA(k) = fit.s0w(k) > 0.0 ? fit.event_count(k) / fit.s0w(k) : 0.0;

  fit.qhat = Eigen::MatrixXd::Zero(m, d);
  Eigen::MatrixXd sigma3 = Eigen::MatrixXd::Zero(d, d);
  {
    // suffix accumulators, swept descending: at point g_k the jump terms
    // cover t_e >= g_k while the drift integrals cover (g_k, tau], so the
    // segment below g_k joins the drift suffix only after g_k is processed
    double e0 = 0.0, f0 = 0.0;
    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(d), f1 = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd f2 = Eigen::MatrixXd::Zero(d, d);
    for (int k = m - 1; k >= 0; --k) {
      const double prev_t = k > 0 ? grid[static_cast<std::size_t>(k - 1)] : 0.0;
      const double len = grid[static_cast<std::size_t>(k)] - prev_t;
      e0 += fit.gseg(k) * jumpA(k);
      e1 += fit.gseg(k) * jumpA(k) * fit.zbar.row(k).transpose();
      if (fit.censor_count(k) > 0.0) {
        const double p0 = p0_before[static_cast<std::size_t>(k)];
        const Eigen::VectorXd& p1 = p1_before[static_cast<std::size_t>(k)];
        const Eigen::MatrixXd& p2 = p2_before[static_cast<std::size_t>(k)];
        const Eigen::MatrixXd drift_mat =
            p2 * f0 - p1 * f1.transpose() - f1 * p1.transpose() + p0 * f2;
        const Eigen::VectorXd qv = (p1 * e0 - p0 * e1 + drift_mat * fit.beta) /
                                   static_cast<double>(n);
        fit.qhat.row(k) = qv.transpose();
        const double pi = fit.nrisk_ge(k) / static_cast<double>(n);
        sigma3 += fit.censor_count(k) / static_cast<double>(n) * (qv / pi) * (qv / pi).transpose();
      }
      f0 += len * fit.gseg(k);
      f1 += len * fit.gseg(k) * fit.zbar.row(k).transpose();
      f2 += len * fit.gseg(k) * fit.zbar.row(k).transpose() * fit.zbar.row(k);
    }
  }

  fit.sigma3 = sigma3;
  fit.finalize();
  return fit;
}

double baseline_subdist_cov(const CompetingFit& fit, double t, double s) {
  if (s > t) std::swap(t, s);
  if (!(s >= 0.0) || !(t <= fit.tau))
    throw validation_error("baseline covariance arguments must lie in [0, tau]");
  const Eigen::VectorXd ct = fit.cum_zbar(t);
  const Eigen::VectorXd cs = fit.cum_zbar(s);
  const Eigen::VectorXd et = fit.first_stage_mix(t);
  const Eigen::VectorXd es = fit.first_stage_mix(s);
  return fit.mart(s) + ct.dot(fit.mid * cs) + et.dot(fit.first_stage.theta * es) +
         fit.censoring_cov_term(t, s) - ct.dot(fit.omega_inv * fit.dhat(s)) -
         cs.dot(fit.omega_inv * fit.dhat(t));
}

PredictionCurve predict_cif(const CompetingFit& fit, const NewObservation& x,
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
    const double f_raw = 1.0 - std::exp(-lam - fit.beta.dot(z) * t);
    const double f_star = 1.0 - std::exp(-fit.drift_running_max(t, fit.beta.dot(z)));

    const Eigen::VectorXd g = z * t - fit.cum_zbar(t);
    const Eigen::VectorXd e = fit.first_stage_mix(t);
    double v = fit.mart(t) + g.dot(fit.mid * g) + fit.censoring_cov_term(t, t) +
               e.dot(fit.first_stage.theta * e) + 2.0 * g.dot(fit.omega_inv * fit.dhat(t));
    const double pre = 1.0 - f_raw;
    v = std::max(v * pre * pre / n, 0.0);

    curve.times.push_back(t);
    curve.estimate.push_back(f_star);
    curve.variance.push_back(v);
    const double s1 = 1.0 - f_star;
    if (s1 <= 0.0 || s1 >= 1.0 || v == 0.0) {
      curve.ci_lower.push_back(f_star);
      curve.ci_upper.push_back(f_star);
      curve.degenerate.push_back(true);
    } else {
      const double se_loglog = std::sqrt(v) / (s1 * std::fabs(std::log(s1)));
      double lo = 1.0 - std::pow(s1, std::exp(-zq * se_loglog));
      double hi = 1.0 - std::pow(s1, std::exp(zq * se_loglog));
      lo = std::min(std::max(lo, 0.0), 1.0);
      hi = std::min(std::max(hi, 0.0), 1.0);
      curve.ci_lower.push_back(std::min(lo, hi));
      curve.ci_upper.push_back(std::max(lo, hi));
      curve.degenerate.push_back(false);
    }
  }
  return curve;
}

}  // namespace ahiv
