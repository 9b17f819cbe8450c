#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "panelq/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace panelq;

namespace {

PanelDataset tiny_dataset(const std::vector<std::vector<double>>& y_by_cluster,
                          const std::vector<std::vector<double>>& xcol = {},
                          const std::vector<double>& zcol = {}) {
  RawRows r;
  r.x_names = xcol.empty() ? std::vector<std::string>{} : std::vector<std::string>{"x_a"};
  r.z_names = zcol.empty() ? std::vector<std::string>{} : std::vector<std::string>{"z_a"};
  if (!xcol.empty()) r.x_cols.resize(1);
  if (!zcol.empty()) r.z_cols.resize(1);
  for (std::size_t i = 0; i < y_by_cluster.size(); ++i) {
    for (std::size_t t = 0; t < y_by_cluster[i].size(); ++t) {
      r.cluster.push_back("c" + std::to_string(i));
      r.y.push_back(y_by_cluster[i][t]);
      if (!xcol.empty()) r.x_cols[0].push_back(xcol[i][t]);
      if (!zcol.empty()) r.z_cols[0].push_back(zcol[i]);
    }
  }
  return validate_dataset(r);
}

double frac(double x) { return x - std::floor(x); }

// Deterministic two-level instance: y = 1 + 0.5 u + x (0.5 + u) + 0.3 qnorm(v),
// u/v/x from low-discrepancy sequences. scale multiplies y.
PanelDataset synth_dataset(int N, int T, bool reversed = false, double scale = 1.0) {
  RawRows r;
  r.x_names = {"x_a"};
  r.x_cols.resize(1);
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  if (reversed) std::reverse(order.begin(), order.end());
  for (int oi = 0; oi < N; ++oi) {
    const int i = order[oi];
    const double v = 0.02 + 0.96 * frac((i + 1) * 0.73205080756887729);
    for (int t = 0; t < T; ++t) {
      const long k = static_cast<long>(i) * T + t + 1;
      const double u = 0.02 + 0.96 * frac(k * 0.61803398874989485);
      const double x1 = frac(k * 0.41421356237309515);
      const double y = 1.0 + 0.5 * u + x1 * (0.5 + u) + 0.3 * norm_quantile(v);
      r.cluster.push_back("c" + std::to_string(i));
      r.y.push_back(scale * y);
      r.x_cols[0].push_back(x1);
    }
  }
  return validate_dataset(r);
}

ModelSpec synth_spec() {
  return make_model_spec({"const", "x_a"}, {"const"}, {{"1", "u"}, {"1", "u"}},
                         {{"qnorm(v)"}});
}

double rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).lpNorm<Eigen::Infinity>() / (1.0 + b.lpNorm<Eigen::Infinity>());
}

}  // namespace

TEST_CASE("starting values: medians, mid-ranks, and rank ties") {
  ModelSpec s = make_model_spec({"const"}, {"const"}, {{"u"}}, {{"v-0.5"}});

  PanelDataset d = tiny_dataset({{1.0, 3.0}, {10.0, 14.0}});
  StartingValues sv = starting_values(d, s);
  CHECK(sv.alpha(0) == 2.0);
  CHECK(sv.alpha(1) == 12.0);
  // residuals (-1, 1, -2, 2) -> ranks 2,3,1,4 -> (rank-0.5)/4
  REQUIRE(sv.u0.size() == 4);
  CHECK(sv.u0[0] == 0.375);
  CHECK(sv.u0[1] == 0.625);
  CHECK(sv.u0[2] == 0.125);
  CHECK(sv.u0[3] == 0.875);
  CHECK(sv.v0(0) == 0.25);
  CHECK(sv.v0(1) == 0.75);

  PanelDataset odd = tiny_dataset({{1.0, 2.0, 3.0}, {7.0, 5.0, 6.0}});
  CHECK(starting_values(odd, s).alpha(0) == 2.0);
  CHECK(starting_values(odd, s).alpha(1) == 6.0);

  // ties broken by original observation order
  PanelDataset ties = tiny_dataset({{0.0, 1.0}, {5.0, 6.0}});
  StartingValues st = starting_values(ties, s);
  CHECK(st.u0[0] == 0.125);  // first -0.5
  CHECK(st.u0[2] == 0.375);  // second -0.5
  CHECK(st.u0[1] == 0.625);  // first +0.5
  CHECK(st.u0[3] == 0.875);  // second +0.5
}

TEST_CASE("starting values: constant level-1 basis gives the grand mean") {
  // mid-rank v0 are symmetric around 0.5, so the (v-0.5) column is orthogonal
  // to the constant column and theta0 is exactly the mean of y
  ModelSpec s = make_model_spec({"const"}, {"const"}, {{"1"}}, {{"v-0.5"}});
  PanelDataset d = tiny_dataset({{0.1, 0.5}, {1.0, 2.0}, {-1.0, 0.4}});
  StartingValues sv = starting_values(d, s);
  CHECK(sv.theta.values(0, 0) == doctest::Approx(0.5).epsilon(1e-10));
  // phi0 = slope of y on the repeated (v0 - 0.5) column = 1.2 / (4/9)
  CHECK(sv.phi.values(0, 0) == doctest::Approx(2.7).epsilon(1e-10));
}

TEST_CASE("starting values: collinear design names the offending cells") {
  RawRows r;
  r.x_names = {"x_a", "x_b"};
  r.x_cols.resize(2);
  std::vector<double> ys = {0.1, 0.9, 0.4, 0.7, 0.2, 0.8};
  for (int k = 0; k < 6; ++k) {
    r.cluster.push_back(k < 3 ? "a" : "b");
    r.y.push_back(ys[k]);
    const double xv = 0.1 * (k + 1);
    r.x_cols[0].push_back(xv);
    r.x_cols[1].push_back(xv);  // duplicate column
  }
  PanelDataset d = validate_dataset(r);
  ModelSpec s = make_model_spec({"const", "x_a", "x_b"}, {"const"},
                                {{"1"}, {"u"}, {"u"}}, {{"v-0.5"}});
  CHECK_THROWS_WITH_AS(starting_values(d, s),
                       doctest::Contains("collinear"), EstimError);
  try {
    starting_values(d, s);
  } catch (const EstimError& e) {
    CHECK(std::string(e.what()).find("level1") != std::string::npos);
    CHECK(std::string(e.what()).find("'u'") != std::string::npos);
  }
}

TEST_CASE("solve_theta: constant basis reaches the median via gradient fallback") {
  ModelSpec s = make_model_spec({"const"}, {"const"}, {{"1"}}, {{"v-0.5"}});
  PanelDataset d =
      tiny_dataset({{0.3, 1.1, 0.2, 2.4, 0.9, 1.7, 0.5, 2.0, 1.3}});
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(1);
  CoefMatrix init = CoefMatrix::zeros(s.mask1);
  FitWarnings warn;
  CoefMatrix out = solve_theta(d, s, init, alpha, {}, &warn);
  CHECK(std::abs(out.values(0, 0) - 1.1) <= 2e-3);
  // nearby points are worse
  CoefMatrix probe = out;
  const double lhat = loss_l1(s, out, alpha, d);
  probe.values(0, 0) = 0.9;
  CHECK(lhat < loss_l1(s, probe, alpha, d));
  probe.values(0, 0) = 1.3;
  CHECK(lhat < loss_l1(s, probe, alpha, d));
}

TEST_CASE("solve_theta: near-zero gradient returns the input unchanged") {
  ModelSpec s = make_model_spec({"const"}, {"const"}, {{"u"}}, {{"v-0.5"}});
  // B(u)=u^2/2, mean 1/6: targets 0.25 and sqrt(29/48) make the gradient cancel
  PanelDataset d = tiny_dataset({{0.25, std::sqrt(29.0 / 48.0)}});
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(1);
  CoefMatrix theta = CoefMatrix::zeros(s.mask1);
  theta.values(0, 0) = 1.0;
  CoefMatrix out = solve_theta(d, s, theta, alpha);
  CHECK((out.values - theta.values).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("solve_phi: quadratic-loss stationary point matches the closed form") {
  // c=["v"]: L2(phi) = sum[a_i^2/(2 phi) - a_i/2 + phi/6], minimized at
  // phi* = sqrt(3 mean(a^2)) while all v_hat stay interior
  ModelSpec s = make_model_spec({"const"}, {"const"}, {{"u"}}, {{"v"}});
  PanelDataset d = tiny_dataset({{0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}});
  Eigen::VectorXd alpha(3);
  alpha << 0.2, 0.4, 0.6;
  CoefMatrix init = CoefMatrix::zeros(s.mask2);
  init.values(0, 0) = 1.0;
  CoefMatrix out = solve_phi(d, s, init, alpha);
  CHECK(std::abs(out.values(0, 0) - std::sqrt(0.56)) <= 2e-3);
}

TEST_CASE("solve_alpha: single cluster T=2 matches the brute-force grid minimizer") {
  ModelSpec s = make_model_spec({"const"}, {"const"}, {{"u"}}, {{"v"}});
  PanelDataset d = tiny_dataset({{0.3, 0.9}});
  CoefMatrix theta = CoefMatrix::zeros(s.mask1);
  theta.values(0, 0) = 1.0;
  CoefMatrix phi = CoefMatrix::zeros(s.mask2);
  phi.values(0, 0) = 1.0;

  double best_a = 0.0, best_f = 1e300;
  for (int k = 1; k < 10000; ++k) {
    Eigen::VectorXd a(1);
    a << k * 1e-4;
    const double f = loss_l1(s, theta, a, d) + loss_l2(s, phi, a, d);
    if (f < best_f) {
      best_f = f;
      best_a = a(0);
    }
  }
  Eigen::VectorXd init = Eigen::VectorXd::Constant(1, 0.1);
  Eigen::VectorXd ahat = solve_alpha(d, s, theta, phi, init);
  CHECK(std::abs(ahat(0) - best_a) <= 1e-3);
  CHECK(std::abs(grad_alpha(s, theta, phi, ahat(0), d.clusters[0])) <= 1e-3);

  // the outer bisection always starts at v=0.5, so the result ignores the init
  Eigen::VectorXd init2 = Eigen::VectorXd::Constant(1, 0.9);
  CHECK(solve_alpha(d, s, theta, phi, init2)(0) == ahat(0));
}

TEST_CASE("solve_alpha: large symmetric cluster sits at the median shift") {
  ModelSpec s = make_model_spec({"const"}, {"const"}, {{"u"}}, {{"v"}});
  const int T = 200;
  std::vector<double> y(T);
  for (int t = 0; t < T; ++t) y[t] = 0.25 + (t + 0.5) / T;
  PanelDataset d = tiny_dataset({y});
  CoefMatrix theta = CoefMatrix::zeros(s.mask1);
  theta.values(0, 0) = 1.0;
  CoefMatrix phi = CoefMatrix::zeros(s.mask2);
  phi.values(0, 0) = 1.0;

  Eigen::VectorXd ahat = solve_alpha(d, s, theta, phi, Eigen::VectorXd::Zero(1));
  CHECK(std::abs(ahat(0) - 0.25) <= 0.01);

  double best_a = 0.0, best_f = 1e300;
  for (int k = 1; k < 5000; ++k) {
    Eigen::VectorXd a(1);
    a << k * 1e-4;
    const double f = loss_l1(s, theta, a, d) + loss_l2(s, phi, a, d);
    if (f < best_f) {
      best_f = f;
      best_a = a(0);
    }
  }
  CHECK(std::abs(ahat(0) - best_a) <= 1e-3);
}

TEST_CASE("fit: synthetic two-level instance converges with a non-increasing trace") {
  PanelDataset d = synth_dataset(12, 5);
  ModelSpec s = synth_spec();
  FitResult r = fit(d, s);
  CHECK(r.converged);
  CHECK(r.iterations == static_cast<int>(r.trace.size()));
  CHECK(r.iterations <= 200);

  double prev = 1e300;
  for (const IterTrace& it : r.trace) {
    const double total = it.loss1 + it.loss2;
    CHECK(total <= prev + 1e-8 * (1.0 + std::abs(prev)));
    prev = total;
  }
  CHECK(r.loss1 == r.trace.back().loss1);
  CHECK(r.loss2 == r.trace.back().loss2);

  const double NT = static_cast<double>(d.total_obs());
  CHECK(r.grad_theta_max <= 1e-3 * NT);
  CHECK(r.grad_phi_max <= 1e-3 * NT);
  CHECK(r.grad_alpha_max <= 1e-3 * NT);

  // rough recovery of the generating coefficients
  CHECK(std::abs(r.theta.values(0, 0) - 1.0) < 0.35);
  CHECK(std::abs(r.theta.values(1, 1) - 1.0) < 0.6);
  CHECK(std::abs(r.phi.values(0, 0) - 0.3) < 0.25);
}

TEST_CASE("fit: bit-identical reruns, thread counts, and cluster permutation") {
  PanelDataset d = synth_dataset(12, 5);
  ModelSpec s = synth_spec();
  FitResult a = fit(d, s);
  FitResult b = fit(d, s);
  CHECK((a.theta.values - b.theta.values).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.phi.values - b.phi.values).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.alpha - b.alpha).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) {
    CHECK(a.trace[k].loss1 == b.trace[k].loss1);
    CHECK(a.trace[k].loss2 == b.trace[k].loss2);
  }

  FitOptions opt;
  opt.threads = 3;
  FitResult c = fit(d, s, opt);
  CHECK((a.theta.values - c.theta.values).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.phi.values - c.phi.values).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(a.loss1 == c.loss1);
  CHECK(a.loss2 == c.loss2);

  PanelDataset rev = synth_dataset(12, 5, /*reversed=*/true);
  FitResult p = fit(rev, s);
  CHECK(rel_diff(p.theta.values, a.theta.values) <= 1e-10);
  CHECK(rel_diff(p.phi.values, a.phi.values) <= 1e-10);
}

TEST_CASE("fit: scaling y scales the estimates exactly") {
  PanelDataset d = synth_dataset(12, 5, false, 1.0);
  PanelDataset d2 = synth_dataset(12, 5, false, 2.0);
  ModelSpec s = synth_spec();
  FitResult a = fit(d, s);
  FitResult b = fit(d2, s);
  CHECK((b.theta.values - 2.0 * a.theta.values).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((b.phi.values - 2.0 * a.phi.values).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((b.alpha - 2.0 * a.alpha).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("fit: option validation and non-convergence reporting") {
  PanelDataset d = synth_dataset(4, 4);
  ModelSpec s = synth_spec();
  FitOptions bad;
  bad.tol = 0.0;
  CHECK_THROWS_AS(fit(d, s, bad), EstimError);
  bad = {};
  bad.max_outer_iters = 0;
  CHECK_THROWS_AS(fit(d, s, bad), EstimError);

  FitOptions one;
  one.max_outer_iters = 1;
  one.tol = 1e-13;
  FitResult r = fit(d, s, one);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 1);
  bool found = false;
  for (const std::string& m : r.warnings.messages)
    if (m.find("did not converge") != std::string::npos) found = true;
  CHECK(found);
}
