#pragma once

#include "panelq/objective.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace panelq {

struct EstimError : std::runtime_error {
  explicit EstimError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FitOptions {
  double tol = 1e-5;
  int max_outer_iters = 200;
  int newton_max_iters = 50;
  std::uint64_t seed = 0;  // reserved for randomized fallbacks; unused by the default path
  int threads = 1;
};

struct IterTrace {
  double loss1 = 0.0;
  double loss2 = 0.0;
  double max_param_change = 0.0;
};

struct FitWarnings {
  long n_clamped1 = 0;  // level-1 observations at the inversion clamp (final iterate)
  long n_clamped2 = 0;  // level-2 clusters at the clamp (final iterate)
  bool monotone1 = true;
  bool monotone2 = true;
  std::vector<std::string> messages;
};

struct FitResult {
  CoefMatrix theta;
  CoefMatrix phi;
  Eigen::VectorXd alpha;
  CdfValues cdf;
  double loss1 = 0.0;
  double loss2 = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<IterTrace> trace;
  FitWarnings warnings;
  // max-norm gradients at the returned iterate (active cells; per-cluster for alpha)
  double grad_theta_max = 0.0;
  double grad_phi_max = 0.0;
  double grad_alpha_max = 0.0;
};

struct StartingValues {
  CoefMatrix theta;
  CoefMatrix phi;
  Eigen::VectorXd alpha;   // N, within-cluster medians
  std::vector<double> u0;  // NT, cluster-blocked mid-ranks of y - alpha0
  Eigen::VectorXd v0;      // N, mid-ranks of alpha0
};

// Cluster medians, mid-rank CDF starting points, and one joint least-squares
// regression of y on the active-cell regressors for (theta0, phi0).
// Throws EstimError naming the collinear cells when the design is rank-deficient.
StartingValues starting_values(const PanelDataset& data, const ModelSpec& spec);

// Newton descent on the level-1 (resp. level-2) integrated loss at fixed alpha.
// Step halving enforces strict loss decrease; a degenerate or indefinite Newton
// step falls back to a gradient step with line search. Stops when the gradient
// max-norm is <= tol * max(1, #obs) or the accepted step max-norm is <= tol
// scaled by max|y| (thresholds track the data scale so that rescaling y
// rescales the estimates exactly).
CoefMatrix solve_theta(const PanelDataset& data, const ModelSpec& spec,
                       const CoefMatrix& theta_init, const Eigen::VectorXd& alpha,
                       const FitOptions& opt = {}, FitWarnings* warn = nullptr);
CoefMatrix solve_phi(const PanelDataset& data, const ModelSpec& spec,
                     const CoefMatrix& phi_init, const Eigen::VectorXd& alpha,
                     const FitOptions& opt = {}, FitWarnings* warn = nullptr);

// Per-cluster root of d(L1+L2)/d alpha_i: outer 20-step bisection on v from 0.5
// with alpha = z'phi c(v), nested over the level-1 inversions.
Eigen::VectorXd solve_alpha(const PanelDataset& data, const ModelSpec& spec,
                            const CoefMatrix& theta, const CoefMatrix& phi,
                            const Eigen::VectorXd& alpha_init, int threads = 1);

// Full alternating fit: (solve_theta, solve_phi) then solve_alpha, repeated until
// |delta loss| <= tol or max |delta params| <= tol or max_outer_iters.
FitResult fit(const PanelDataset& data, const ModelSpec& spec, const FitOptions& opt = {});

}  // namespace panelq
