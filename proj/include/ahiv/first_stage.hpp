#pragma once

#include <Eigen/Dense>

#include "ahiv/data.hpp"

namespace ahiv {

enum class LinkKind { identity, logit };

double link_inverse(LinkKind link, double eta);

// Derivative of the inverse link. For the logit link this is mu(1-mu) with mu
// from a numerically safe sigmoid, so extreme eta cannot overflow.
double link_inverse_derivative(LinkKind link, double eta);

// First-stage regression of the exposure on (1, instrument, confounders).
struct FirstStageFit {
  LinkKind link = LinkKind::identity;
  Eigen::VectorXd alpha;       // (intercept, instrument, confounders...)
  Eigen::MatrixXd theta;       // covariance of sqrt(n) (alpha_hat - alpha)
  Eigen::VectorXd fitted;      // per subject, inverse link at the linear predictor
  Eigen::VectorXd residuals;   // exposure - fitted
  Eigen::VectorXd link_deriv;  // per subject, derivative of the inverse link
  Eigen::MatrixXd design;      // n x (p+2) rows (1, X_I, X_o')
  int iterations = 0;
};

// Identity link: ordinary least squares with theta = n sigma^2 (X'X)^{-1}.
// Logit link: maximum likelihood via iteratively reweighted least squares
// started at zero; theta = n (X'WX)^{-1} at the optimum. Separation and
// non-convergence are hard errors.
FirstStageFit fit_first_stage(const Dataset& data, LinkKind link);

}  // namespace ahiv
