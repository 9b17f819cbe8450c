#pragma once

#include "panelq/diagnostics.hpp"
#include "panelq/inference.hpp"

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace panelq {

struct SimError : std::runtime_error {
  explicit SimError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CovariateLaw {
  enum class Kind { Constant, Beta, Uniform };
  Kind kind = Kind::Constant;
  double a = 2.0, b = 2.0;      // Beta(a, b)
  double lo = 0.0, hi = 1.0;    // Uniform(lo, hi)

  double draw(double p) const;  // inverse CDF at p
  double support_lo() const;
  double support_hi() const;
};

struct ScenarioSpec {
  std::string name;
  ModelSpec generator;
  CoefMatrix theta0, phi0;           // true coefficient matrices on the generator spec
  std::vector<CovariateLaw> x_laws;  // parallel to generator.x_names; "const" stays Constant
  std::vector<CovariateLaw> z_laws;  // parallel to generator.z_names
  int N = 150;
  long T_min = 5, T_max = 5;         // panel length; uniform over {T_min..T_max} if they differ
  std::vector<ModelSpec> fit_specs;  // first = primary spec (reported, tested)
  std::vector<std::string> fit_names;
  int select_level = 1;              // level whose AIC/BIC pick the winner among fit_specs
  int R = 200;
  std::uint64_t seed = 1;
  std::vector<double> points = {0.2, 0.4, 0.6, 0.8};  // probability points reported
  std::vector<double> gof_levels = {0.05, 0.10};
  int gof_R = 0;                     // bootstrap replications per MC replication; 0 = no test
};

// Shape and range checks, plus generator monotonicity: both quantile-function
// derivatives must be nonnegative on a 99-point grid at every corner of the
// covariate support box (the derivative is affine in the covariates, so corner
// positivity covers the box). Throws SimError citing the first bad grid point.
void validate_scenario(const ScenarioSpec& sc);

struct SimulatedData {
  PanelDataset data;
  std::vector<double> u_true;  // NT, blocked by cluster in data.clusters order
  Eigen::VectorXd v_true;      // N
};

// Draws one dataset from the generator using streams keyed by (seed,
// replication, role): z and x from their laws, U and V iid uniform,
// y = x'theta0 b(U) + z'phi0 c(V). Bit-identical for a fixed key.
SimulatedData simulate(const ScenarioSpec& sc, std::uint64_t replication);

// The simulation studies shipped with the library: sim1, sim2 (correctly
// specified fits), sim1_misspec, sim2_misspec (power scenarios), and c2_sim1,
// c2_sim2 (three-way model selection).
std::map<std::string, ScenarioSpec> builtin_scenarios();
ScenarioSpec builtin_scenario(const std::string& name);

// JSON form: {"generator": {"level1": {...}, "level2": {...}, "theta": [[...]],
// "phi": [[...]]}, "covariates": {name: {"law": "beta"|"uniform", ...}},
// "N":, "T": n or {"min":, "max":}, "R":, "seed":, "fit_specs": [...],
// optional "name", "points", "gof_levels", "gof_R", "select_level"}.
// theta/phi rows are per covariate, entries parallel to that covariate's
// basis-expression list.
ScenarioSpec parse_scenario_json(const std::string& json_text);

struct McCoefCell {
  int level = 1;
  std::string coef;
  double point = 0.5;
  double truth = 0.0;     // NaN when the primary spec is not the generator spec
  double mean = 0.0;
  double emp_se = 0.0;    // NaN when fewer than 2 replications contribute
  double mean_se_hat = 0.0;
  double coverage95 = 0.0;  // share of |estimate - truth| <= 1.96 se_hat; NaN without truth
  int n = 0;              // replications contributing
};

struct McReport {
  std::string scenario;
  int R = 0;
  std::vector<std::string> fit_names;
  std::vector<int> fit_failures;     // per fit spec: non-converged or failed fits
  int infer_failures = 0;            // primary-spec inference failures
  std::vector<McCoefCell> cells;     // primary spec at each (coefficient, point)
  std::vector<double> gof_levels;
  std::vector<double> gof_reject_rate;  // per level, over replications with a test result
  int gof_n = 0;
  std::vector<double> aic_share, bic_share;  // per fit spec; each sums to 1 over decided reps
  int selection_n = 0;
  std::vector<std::string> warnings;
};

// Runs R replications: simulate, fit every fit_spec, record the primary spec's
// coefficient estimates and standard errors at the scenario's points, run the
// goodness-of-fit test when gof_R > 0 (early-accept at the largest level), and
// count AIC/BIC winners when there are several fit_specs. Per-replication
// failures are excluded and counted. Aggregation folds replication slots in
// index order, so the report is independent of thread count.
McReport run_mc_study(const ScenarioSpec& sc, const FitOptions& fit_opt = {}, int threads = 1);

// Long-format CSV of the coefficient cells:
// scenario,level,coef,point,truth,mean,se,se_hat,coverage95,n
std::string mc_report_csv(const McReport& rep);

}  // namespace panelq
