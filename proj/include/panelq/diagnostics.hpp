#pragma once

#include "panelq/estimator.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace panelq {

struct DiagError : std::runtime_error {
  explicit DiagError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bivariate Kolmogorov-Smirnov distance between the points (u[k], v[k]) and the
// independent-uniform product CDF: the supremum of |F_hat(u,v) - u*v| over the
// plane, realized at the sample points and at their limits from below.
// O(n log n); both vectors must have equal length, entries in (0,1).
double ks_statistic(const std::vector<double>& u, const std::vector<double>& v);

struct GofResult {
  double D = 0.0;        // KS distance of the original fit
  double p_value = 0.0;  // share of completed replications with D* > D
  int R = 0;             // replications requested
  int completed = 0;     // replications whose refit converged (denominator)
  int dropped = 0;       // replications discarded for non-convergence
  bool early_stopped = false;
  std::vector<double> D_star;  // per completed replication, in replication order
  std::vector<std::string> warnings;
};

inline bool gof_reject(const GofResult& g, double level) { return g.p_value < level; }

// Parametric-bootstrap goodness-of-fit test. Each replication keeps the
// covariates fixed, draws fresh uniforms from streams keyed by (seed,
// replication, role), simulates y from the fitted coefficient functions,
// refits the same specification, and records its KS distance. Replications
// whose refit does not converge are dropped from the denominator (warning once
// more than 5% drop). Setting stop_after_exceed > 0 stops as soon as that many
// replications exceed D -- the p-value can then only grow, so an accept
// decision at p >= stop_after_exceed/R is already final; runs sequentially.
// Throws DiagError if R < 1 or if every replication fails.
GofResult gof_test(const FitResult& fit, const PanelDataset& data, const ModelSpec& spec,
                   int R, std::uint64_t seed, const FitOptions& fit_opt = {}, int threads = 1,
                   long stop_after_exceed = -1);

struct InfoCriteria {
  double aic1 = 0.0, bic1 = 0.0;  // within-cluster loss, penalized by q1 over total obs
  double aic2 = 0.0, bic2 = 0.0;  // cluster-level loss, penalized by q2 over clusters
  int q1 = 0, q2 = 0;             // active coefficient-cell counts per level
  bool defined1 = false, defined2 = false;  // false when a loss is zero (perfect fit)
};

// log(loss) + q/n for AIC and log(loss) + q*log(n)/(2n) for BIC, each level
// using its own loss, cell count, and sample size (total observations, resp.
// clusters). A zero or non-finite loss leaves that level's criteria NaN with
// defined* = false rather than failing.
InfoCriteria information_criteria(const FitResult& fit);

struct CrossingSite {
  int cluster = 0;
  long obs = -1;    // within-cluster row; -1 for cluster-level sites
  double at = 0.0;  // grid point where the density turned negative
};

struct CrossingReport {
  long checked1 = 0, violations1 = 0;  // observation x grid-point cells
  long checked2 = 0, violations2 = 0;  // cluster x grid-point cells
  std::vector<CrossingSite> sites1, sites2;  // first max_sites locations per level
};

// Scans x'theta b'(u) over every observation and z'phi c'(v) over every cluster
// at each grid point, flagging strictly negative values (quantile crossing).
// Counts are exhaustive; site lists are capped at max_sites per level. Grid
// points must lie strictly inside (0,1); an empty grid yields an empty report.
CrossingReport crossing_check(const FitResult& fit, const PanelDataset& data,
                              const ModelSpec& spec, const std::vector<double>& grid,
                              std::size_t max_sites = 1000);

}  // namespace panelq
