#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ahiv/censoring.hpp"
#include "ahiv/data.hpp"
#include "ahiv/first_stage.hpp"
#include "ahiv/survival_model.hpp"

namespace ahiv {

// IPCW-weighted second-stage fit of the additive subdistribution hazards
// model. The subdistribution risk set keeps other-cause failures at risk;
// their observability is carried entirely by the weights w_i(t). The grid
// always ends at tau (a synthetic point is appended when tau exceeds the
// largest observed time, since other-cause failures keep the weighted risk
// sum positive there).
struct CompetingFit {
  Eigen::VectorXd beta;
  std::vector<std::string> coef_names;
  Eigen::MatrixXd cov_beta;                // sandwich / n
  Eigen::MatrixXd omega, sigma1, sigma2, sigma3, psi;
  double score_sup = 0.0;
  double tau = 0.0;
  int n_obs = 0;
  int cause = 1;
  FirstStageFit first_stage;
  CensoringKM km;
  WeightTable weights;

  // grid state (value on (g_{k-1}, g_k]; events/censorings sit at g_k)
  std::vector<double> grid;
  Eigen::MatrixXd zbar;                    // weighted average of Z over the risk set
  Eigen::VectorXd s0w;                     // weighted risk sum
  Eigen::VectorXd gseg;                    // censoring KM G on the segment
  Eigen::VectorXd nrisk_ge;                // #{T* >= g_k} (for pi)
  Eigen::VectorXd event_count;             // cause-of-interest events at g_k
  Eigen::MatrixXd event_zsum;
  Eigen::VectorXd censor_count;            // censorings at g_k
  Eigen::MatrixXd xg_at;                   // m x q: all subjects, x~ (g^{-1})' by T*
  Eigen::MatrixXd xg_oc;                   // m x q: other-cause subjects, x~ (g^{-1})'/G_i
  Eigen::VectorXd oc0;                     // other-cause 1/G_i by T*
  Eigen::MatrixXd oc1;                     // other-cause Z_i/G_i by T*
  Eigen::MatrixXd qhat;                    // m x d: q(g_k) where censor_count > 0, else 0

  // derived by finalize()
  Eigen::VectorXd jump, jump_prefix;
  Eigen::VectorXd mart_prefix;             // n sum d_j / S0w_j^2
  Eigen::MatrixXd dhat_prefix;             // m x d
  Eigen::MatrixXd ccum;                    // int_0^{g_k} zbar
  Eigen::VectorXd hwcum;                   // int 1/S0w
  Eigen::VectorXd goscum;                  // int G/S0w
  Eigen::MatrixXd dizcum;                  // int (G/S0w) zbar
  Eigen::VectorXd jp_prefix;               // sum (G/S0w)_j dA_j
  Eigen::VectorXd ig_cum;                  // int G
  Eigen::MatrixXd igz_cum;                 // int G zbar
  Eigen::VectorXd ocp0;                    // inclusive prefixes of oc0 / oc1 / xg_oc
  Eigen::MatrixXd ocp1;
  Eigen::MatrixXd pa, pc, w1_prefix;       // m x q prefix arrays for E(t)
  Eigen::MatrixXd pb;
  Eigen::VectorXd w1_total;
  Eigen::MatrixXd omega_inv, mid;
  double rho0 = 0.0;

  void finalize();

  int dim() const { return static_cast<int>(beta.size()); }
  double cumhaz(double t) const;           // Lambda_10
  double cumhaz_monotone(double t) const;
  Eigen::VectorXd cum_zbar(double t) const;
  Eigen::VectorXd first_stage_mix(double t) const;  // weighted E(t)
  Eigen::VectorXd dhat(double t) const;
  double mart(double t) const;
  double hw(double t) const;               // int_0^t du/S0w
  double gos(double t) const;              // int_0^t G/S0w
  Eigen::VectorXd diz(double t) const;     // int_0^t (G/S0w) zbar
  double drift_running_max(double t, double extra_slope) const;
  Eigen::VectorXd make_z(const NewObservation& x) const;
  // scalar q_t(u) of the curve covariance; zero when u > t
  double qt(double u_index_time, int k_u, double t) const;
  // n * sum over censorings of q_t q_s / pi^2
  double censoring_cov_term(double t, double s) const;
  // residual process of one subject: jump times/sizes plus drift slopes on
  // the grid segments (assembled on demand; nothing dense is stored)
  struct ResidualPath {
    std::vector<double> jump_times, jump_sizes;
    std::vector<double> slopes;  // per grid segment
  };
  ResidualPath residual_path(const Dataset& data, int subject) const;
};

CompetingFit fit_competing(const Dataset& data, const FirstStageFit& fs, int cause_of_interest = 1);

// Estimated covariance of sqrt(n)(Lambda_10(t) - Lambda_10) at (t, s).
double baseline_subdist_cov(const CompetingFit& fit, double t, double s);

PredictionCurve predict_cif(const CompetingFit& fit, const NewObservation& x,
                            const std::vector<double>& times, double level = 0.95);

}  // namespace ahiv
