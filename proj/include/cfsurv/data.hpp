#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cfsurv/dist.hpp"
#include "cfsurv/transform.hpp"

namespace cfsurv {

// Observed sample for the two-equation model.  y is the observed duration on
// the transform (log) scale; delta flags a failure, xi a dependent-censoring
// event, and rows with delta = xi = 0 are administratively censored.  X is
// the outcome design (leading intercept column); z the endogenous regressor;
// W the first-stage design (intercept, exogenous covariates, instruments).
struct Dataset {
  Eigen::VectorXd y;
  std::vector<std::uint8_t> delta;
  std::vector<std::uint8_t> xi;
  Eigen::MatrixXd X;
  Eigen::VectorXd z;
  Eigen::MatrixXd W;

  // Per-row log1p(|y|) and sign, precomputed once; every transform
  // evaluation in the likelihood reuses them.
  Eigen::VectorXd log1p_abs_y;
  std::vector<std::uint8_t> y_neg;

  int n() const { return static_cast<int>(y.size()); }
  int p() const { return static_cast<int>(X.cols()); }

  void finalize() {
    const int m = n();
    log1p_abs_y.resize(m);
    y_neg.resize(m);
    for (int i = 0; i < m; ++i) {
      log1p_abs_y[i] = std::log1p(std::fabs(y[i]));
      y_neg[i] = y[i] < 0.0 ? 1 : 0;
    }
  }

  void validate() const {
    const int m = n();
    if (m == 0) throw std::invalid_argument("Dataset: empty sample");
    if (static_cast<int>(delta.size()) != m || static_cast<int>(xi.size()) != m ||
        X.rows() != m || z.size() != m || W.rows() != m)
      throw std::invalid_argument("Dataset: column lengths differ");
    if (X.cols() < 1 || W.cols() < 1)
      throw std::invalid_argument("Dataset: empty design matrix");
    for (int i = 0; i < m; ++i) {
      if (!std::isfinite(y[i]))
        throw std::invalid_argument("Dataset: non-finite y");
      if (delta[i] > 1 || xi[i] > 1 || (delta[i] == 1 && xi[i] == 1))
        throw std::invalid_argument("Dataset: invalid (delta, xi) pair");
    }
    if (!X.allFinite() || !z.allFinite() || !W.allFinite())
      throw std::invalid_argument("Dataset: non-finite covariate");
  }
};

// Second-stage parameters.  lambda_T / lambda_C multiply the control
// function and are ignored by model variants that exclude it; rho is ignored
// when the variant imposes independence.
struct EtaParams {
  Eigen::VectorXd beta_T;
  double alpha_T = 0.0;
  double lambda_T = 0.0;
  Eigen::VectorXd beta_C;
  double alpha_C = 0.0;
  double lambda_C = 0.0;
  double sigma_T = 1.0;
  double sigma_C = 1.0;
  double rho = 0.0;
  double theta1 = 1.0;
  double theta2 = 1.0;

  void validate(int p) const {
    if (beta_T.size() != p || beta_C.size() != p)
      throw std::invalid_argument("EtaParams: coefficient length mismatch");
    if (!(sigma_T > 0.0) || !(sigma_C > 0.0))
      throw std::invalid_argument("EtaParams: scales must be positive");
    (void)Corr(rho);
    (void)Theta(theta1);
    (void)Theta(theta2);
  }
};

}  // namespace cfsurv
