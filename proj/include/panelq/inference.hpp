#pragma once

#include "panelq/estimator.hpp"

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace panelq {

struct InferError : std::runtime_error {
  explicit InferError(const std::string& msg) : std::runtime_error(msg) {}
};

// Floor for the density denominators x'theta b'(u_hat) and z'phi c'(v_hat).
// Smaller values -- including non-positive ones, which indicate quantile
// crossing at a fitted point -- are raised to the floor and counted instead
// of aborting the whole report.
inline constexpr double kInferDensityFloor = 1e-10;

// Column-major vectorization and its inverse; exact mutual inverses.
Eigen::VectorXd vec(const Eigen::MatrixXd& m);
Eigen::MatrixXd unvec(const Eigen::VectorXd& v, int rows, int cols);

// Sample analogs of the large-sample expansion components, evaluated at the
// fitted parameters. All vectors/matrices live in active-cell coordinates
// (vec order, basis-element major), matching the packed gradients.
struct InferenceComponents {
  Eigen::MatrixXd H_theta;     // q1 x q1 curvature, averaged over observations
  Eigen::MatrixXd H_phi;       // q2 x q2 curvature, averaged over clusters
  Eigen::MatrixXd H_phitheta;  // q2 x q1 cross term
  Eigen::VectorXd b_theta;     // q1 fixed-effect bias component, averaged
  Eigen::VectorXd b_phi;       // q2
  Eigen::MatrixXd Omega_theta;  // q1 x q1 score variance, averaged
  Eigen::MatrixXd Omega_phi;    // q2 x q2
  Eigen::VectorXd sigma2;  // N per-cluster variance scales; strictly positive
  Eigen::VectorXd beta_i;  // N per-cluster bias scales
  // Per-cluster level-2 curvature blocks with their own-cluster correction;
  // informational, not consumed by the covariance formulas.
  std::vector<Eigen::MatrixXd> H_phi_i;
  long sum_T = 0;  // total observations
  int n_clusters = 0;
  long n_floored_dens1 = 0;  // observations whose density hit the floor
  long n_floored_dens2 = 0;  // clusters whose level-2 density hit the floor
  // Active level-1 cells pairing a constant basis element with a
  // time-invariant covariate. Profiling out the fixed effects removes all
  // within-cluster information about such cells, so H_theta and Omega_theta
  // are structurally rank-deficient by exactly this count (the global
  // intercept cell is the ubiquitous case).
  int structural_null1 = 0;
  std::vector<std::string> warnings;
};

// Per-cluster sums are computed in parallel and reduced in canonical cluster
// order, so the result does not depend on thread count or input order.
// Every per-cluster T in the component formulas is that cluster's own T_i.
InferenceComponents estimate_components(const FitResult& fit, const PanelDataset& data,
                                        const ModelSpec& spec, int threads = 1);

struct CovarianceResult {
  Eigen::MatrixXd cov;   // sandwich covariance of the packed coefficients
  Eigen::VectorXd bias;  // order-1/T correction term: ADD it to the packed
                         // estimate to remove the first-order bias
};

// H^-1 Omega H^-1 scaled by the informative sample size (total observations
// for level 1, clusters for level 2), plus the bias-correction vectors.
// Inverses are pseudo-inverses on the numerically identified subspace: up to
// structural_null1 near-null directions of H_theta are projected out (the
// score is identically zero there too, so the sandwich is well defined on the
// complement). Any deficiency beyond the structural count raises InferError
// with the condition number.
CovarianceResult covariance_theta(const InferenceComponents& comps);
CovarianceResult covariance_phi(const InferenceComponents& comps);

struct CoefEstimate {
  Eigen::VectorXd value;  // d_x (level 1) or d_z (level 2) coefficients
  Eigen::VectorXd se;     // delta-method standard errors, >= 0
  Eigen::VectorXd bias;   // correction term; value + bias is the debiased estimate
  double at = 0.5;
};

// beta(u) = theta b(u) with se from b(u)-weighted blocks of the sandwich and
// the bias correction mapped through the same weights. Masked cells carry
// zero coefficient, zero variance, and zero bias.
CoefEstimate coef_level1_at(const FitResult& fit, const ModelSpec& spec,
                            const InferenceComponents& comps, double u);
CoefEstimate coef_level2_at(const FitResult& fit, const ModelSpec& spec,
                            const InferenceComponents& comps, double v);

}  // namespace panelq
