#include "ahiv/first_stage.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ahiv/errors.hpp"

namespace ahiv {

namespace {

double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

Eigen::MatrixXd build_design(const Dataset& data) {
  const int n = data.n();
  const int q = data.p() + 2;
  Eigen::MatrixXd x(n, q);
  for (int i = 0; i < n; ++i) {
    const auto& r = data.records[static_cast<std::size_t>(i)];
    x(i, 0) = 1.0;
    x(i, 1) = r.instrument;
    for (int j = 0; j < data.p(); ++j) x(i, 2 + j) = r.confounders[static_cast<std::size_t>(j)];
  }
  return x;
}

}  // namespace

double link_inverse(LinkKind link, double eta) {
  return link == LinkKind::identity ? eta : sigmoid(eta);
}

double link_inverse_derivative(LinkKind link, double eta) {
  if (link == LinkKind::identity) return 1.0;
  const double mu = sigmoid(eta);
  return mu * (1.0 - mu);
}

FirstStageFit fit_first_stage(const Dataset& data, LinkKind link) {
  const int n = data.n();
  const int q = data.p() + 2;

  FirstStageFit fit;
  fit.link = link;
  fit.design = build_design(data);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = data.records[static_cast<std::size_t>(i)].exposure;

  const Eigen::MatrixXd& x = fit.design;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < q)
    throw numeric_error("first stage design matrix is rank deficient (rank " +
                        std::to_string(qr.rank()) + " of " + std::to_string(q) + ")");

  if (link == LinkKind::identity) {
    fit.alpha = qr.solve(y);
    fit.fitted = x * fit.alpha;
    fit.residuals = y - fit.fitted;
    fit.link_deriv = Eigen::VectorXd::Ones(n);
    const double rss = fit.residuals.squaredNorm();
    const double sigma2 = rss / static_cast<double>(n - q);
    const Eigen::MatrixXd xtx = x.transpose() * x;
    fit.theta = static_cast<double>(n) * sigma2 * xtx.inverse();
    fit.iterations = 0;
    return fit;
  }

  // logit: exposures must be 0/1
  for (int i = 0; i < n; ++i)
    if (y(i) != 0.0 && y(i) != 1.0)
      throw validation_error("logit first stage requires a 0/1 exposure; found " +
                             std::to_string(y(i)) + " at record " + std::to_string(i + 1));

  const int max_iter = 100;
  const double tol = 1e-10;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(q);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd mu(n), w(n);

  auto check_separation = [&](const Eigen::VectorXd& lin) {
    double min_eta1 = std::numeric_limits<double>::infinity();
    double max_eta0 = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (y(i) == 1.0)
        min_eta1 = std::min(min_eta1, lin(i));
      else
        max_eta0 = std::max(max_eta0, lin(i));
    }
    if (min_eta1 > 30.0 || max_eta0 < -30.0)
      throw numeric_error("separation detected in logit first stage (one class is predicted "
                          "perfectly; coefficients diverge)");
  };

  bool converged = false;
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    for (int i = 0; i < n; ++i) {
      mu(i) = sigmoid(eta(i));
      w(i) = mu(i) * (1.0 - mu(i));
    }
    Eigen::VectorXd score = x.transpose() * (y - mu);
    if (score.lpNorm<Eigen::Infinity>() < tol) {
      converged = true;
      break;
    }
    Eigen::MatrixXd info = x.transpose() * w.asDiagonal() * x;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success)
      throw numeric_error("singular information matrix in logit first stage");
    Eigen::VectorXd step = ldlt.solve(score);
    alpha += step;
    eta = x * alpha;
    check_separation(eta);
    if (step.norm() < tol * std::max(1.0, alpha.norm())) {
      converged = true;
      ++iter;
      break;
    }
  }
  if (!converged)
    throw numeric_error("logit first stage did not converge in " + std::to_string(max_iter) +
                        " iterations");

  for (int i = 0; i < n; ++i) {
    mu(i) = sigmoid(eta(i));
    w(i) = mu(i) * (1.0 - mu(i));
  }
  fit.alpha = alpha;
  fit.fitted = mu;
  fit.residuals = y - mu;
  fit.link_deriv = w;
  Eigen::MatrixXd info = x.transpose() * w.asDiagonal() * x;
  fit.theta = static_cast<double>(n) * info.inverse();
  fit.iterations = iter;
  return fit;
}

}  // namespace ahiv
