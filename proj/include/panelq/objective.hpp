#pragma once

#include "panelq/model.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace panelq {

// Interval clamp for quantile inversion; tails beyond this are numerically
// indistinguishable at 20-step bisection precision.
inline constexpr double kEps = 1e-6;
inline constexpr int kBisectSteps = 20;

struct InvertResult {
  double prob;
  bool clamped;       // target outside [Q(eps), Q(1-eps)]
  bool monotone_ok;   // no decreasing (u,Q(u)) pair observed during the sweep
};

// Per-observation u_it and per-cluster v_i, cluster-blocked.
struct CdfValues {
  std::vector<double> u_hat;          // NT, cluster-blocked
  std::vector<std::uint8_t> u_clamped;
  std::vector<double> v_hat;          // N
  std::vector<std::uint8_t> v_clamped;
  std::vector<long> offsets;          // N+1 cluster block starts into u_hat
  bool monotone1 = true;
  bool monotone2 = true;
};

// Low-level inverter: Q(t) = coef . basis(t), 20 bisection steps from 0.5,
// step 2^-(s+1) toward the target, then clamp to [eps, 1-eps].
InvertResult invert_quantile(const BasisSet& basis, const double* coef, double target,
                             double* scratch);

InvertResult invert_level1(const ModelSpec& spec, const CoefMatrix& theta,
                           const Eigen::VectorXd& x, double target);
InvertResult invert_level2(const ModelSpec& spec, const CoefMatrix& phi,
                           const Eigen::VectorXd& z, double target);

CdfValues compute_cdf(const ModelSpec& spec, const CoefMatrix& theta,
                      const CoefMatrix& phi, const Eigen::VectorXd& alpha,
                      const PanelDataset& data, int threads = 1);

// Fused single-pass evaluators used by the optimizer. The Hessian is the
// positive semi-definite Newton term; observations at the clamp contribute
// nothing to it (the loss is locally linear there). Density weights are
// floored at hess_floor in magnitude.
struct FusedEval {
  double loss = 0.0;
  Eigen::VectorXd grad;   // q-dim, vec order; empty unless requested
  Eigen::MatrixXd hess;   // q x q; empty unless requested
  long n_clamped = 0;
  bool monotone_ok = true;
};

FusedEval eval_level1(const ModelSpec& spec, const CoefMatrix& theta,
                      const Eigen::VectorXd& alpha, const PanelDataset& data,
                      bool want_grad, bool want_hess, double hess_floor = 1e-8,
                      int threads = 1);
FusedEval eval_level2(const ModelSpec& spec, const CoefMatrix& phi,
                      const Eigen::VectorXd& alpha, const PanelDataset& data,
                      bool want_grad, bool want_hess, double hess_floor = 1e-8,
                      int threads = 1);

// Integrated-loss values and exact gradients (vec order over active cells).
double loss_l1(const ModelSpec& spec, const CoefMatrix& theta,
               const Eigen::VectorXd& alpha, const PanelDataset& data);
double loss_l2(const ModelSpec& spec, const CoefMatrix& phi,
               const Eigen::VectorXd& alpha, const PanelDataset& data);
Eigen::VectorXd grad_theta(const ModelSpec& spec, const CoefMatrix& theta,
                           const Eigen::VectorXd& alpha, const PanelDataset& data);
Eigen::VectorXd grad_phi(const ModelSpec& spec, const CoefMatrix& phi,
                         const Eigen::VectorXd& alpha, const PanelDataset& data);

// d(L1+L2)/d alpha_i for one cluster: sum_t (0.5 - u_it) + (v_i - 0.5)
double grad_alpha(const ModelSpec& spec, const CoefMatrix& theta, const CoefMatrix& phi,
                  double alpha_i, const Cluster& cluster);

}  // namespace panelq
