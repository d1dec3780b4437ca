#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ahiv/data.hpp"
#include "ahiv/first_stage.hpp"
#include "ahiv/step_function.hpp"

namespace ahiv {

// A covariate row for prediction: the residual regressor is reconstructed
// from the fitted first stage as exposure - g^{-1}(x~' alpha).
struct NewObservation {
  double exposure = 0.0;
  double instrument = 0.0;
  std::vector<double> confounders;
};

struct PredictionCurve {
  std::vector<double> times;
  std::vector<double> estimate;    // monotonized S*(t|x) or F1*(t|x)
  std::vector<double> variance;    // pointwise variance (sqrt(n)-scale / n)
  std::vector<double> ci_lower;
  std::vector<double> ci_upper;
  std::vector<bool> degenerate;    // log-log transform undefined at this point
  double level = 0.95;
};

// Second-stage fit of the additive hazards model with regressors
// Z_i = (exposure, confounders..., first-stage residual). All time integrals
// are evaluated exactly on the grid of distinct observed times; the horizon
// tau closes the integration window.
struct SecondStageFit {
  Eigen::VectorXd beta;                    // (beta_e, beta_o..., rho0)
  std::vector<std::string> coef_names;
  Eigen::MatrixXd cov_beta;                // sandwich / n, covariance of beta_hat
  Eigen::MatrixXd omega, sigma1, sigma2, psi;
  double score_sup = 0.0;                  // ||U(beta_hat)||_inf
  double tau = 0.0;
  int n_obs = 0;
  FirstStageFit first_stage;

  // distinct-time grid state; enough to evaluate the baseline, its covariance
  // and prediction curves without the original records
  std::vector<double> grid;                // g_1 < ... < g_m
  Eigen::MatrixXd zbar;                    // m x d, value on (g_{k-1}, g_k]
  Eigen::VectorXd nrisk;                   // #{T* >= g_k}
  Eigen::VectorXd event_count;             // events at g_k
  Eigen::MatrixXd event_zsum;              // m x d, sum of Z over events at g_k
  Eigen::MatrixXd xg_at;                   // m x q, sum of x~ (g^{-1})' over T* = g_k

  // derived by finalize()
  Eigen::VectorXd jump;                    // baseline jump at g_k
  Eigen::VectorXd jump_prefix;
  Eigen::VectorXd mart_prefix;             // n sum_{<=k} d_j / R0_j^2
  Eigen::MatrixXd dhat_prefix;             // m x d
  Eigen::VectorXd hcum;                    // int_0^{g_k} du / R0(u)
  Eigen::MatrixXd ccum;                    // m x d, int_0^{g_k} zbar
  Eigen::MatrixXd pw1h;                    // m x q, prefix of xg_at * hcum
  Eigen::MatrixXd w1_prefix;               // m x q
  Eigen::VectorXd w1_total;                // q
  Eigen::MatrixXd omega_inv;
  Eigen::MatrixXd mid;                     // omega_inv (sigma1 + sigma2) omega_inv
  double rho0 = 0.0;

  void finalize();

  int dim() const { return static_cast<int>(beta.size()); }
  double cumhaz(double t) const;           // Lambda_0(t), jumps plus drift
  double cumhaz_monotone(double t) const;  // running max of Lambda_0
  Eigen::VectorXd cum_zbar(double t) const;      // C(t) = int_0^t zbar
  Eigen::VectorXd first_stage_mix(double t) const;  // E(t) of the variance formulas
  Eigen::VectorXd dhat(double t) const;
  double mart(double t) const;
  double risk_integral(double t) const;    // int_0^t du / R0(u)
  // max over s <= t of Lambda_0(s) + extra_slope * s (exact on segments)
  double drift_running_max(double t, double extra_slope) const;
  // residual regressor for a new observation
  Eigen::VectorXd make_z(const NewObservation& x) const;
  StepFunction zbar_component(int j) const;
};

SecondStageFit fit_survival(const Dataset& data, const FirstStageFit& fs);

// Estimated covariance of sqrt(n)(Lambda_0(t) - Lambda_0) at (t, s).
double baseline_cumhaz_cov(const SecondStageFit& fit, double t, double s);

PredictionCurve predict_survival(const SecondStageFit& fit, const NewObservation& x,
                                 const std::vector<double>& times, double level = 0.95);

// Plain Lin-Ying additive hazards fit for an arbitrary regressor matrix;
// this is the same closed form the second stage uses, without the
// first-stage correction terms.
struct LinYingFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd omega, sigma1;
  std::vector<double> grid;
  Eigen::VectorXd jump;   // baseline jumps at the grid times
  Eigen::MatrixXd zbar;
};

LinYingFit linying_fit(const std::vector<double>& times, const std::vector<int>& status,
                       const Eigen::MatrixXd& z, double tau);

}  // namespace ahiv
