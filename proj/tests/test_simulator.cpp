#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "panelq/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace panelq;

namespace {

// one-sample KS distance against U(0,1)
double ks_uniform(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    d = std::max(d, (i + 1) / n - x[i]);
    d = std::max(d, x[i] - i / n);
  }
  return d;
}

std::vector<std::string> sources1(const ModelSpec& s) {
  std::vector<std::string> out;
  for (const auto& e : s.basis1.elements()) out.push_back(e.source);
  return out;
}

std::vector<std::string> sources2(const ModelSpec& s) {
  std::vector<std::string> out;
  for (const auto& e : s.basis2.elements()) out.push_back(e.source);
  return out;
}

ScenarioSpec tiny_study(int N, long T, int R) {
  ScenarioSpec sc = builtin_scenario("sim1");
  sc.N = N;
  sc.T_min = sc.T_max = T;
  sc.R = R;
  sc.seed = 42;
  return sc;
}

}  // namespace

TEST_CASE("covariate laws invert their uniforms") {
  CovariateLaw beta;
  beta.kind = CovariateLaw::Kind::Beta;
  beta.a = 2.0;
  beta.b = 2.0;
  CHECK(beta.draw(0.5) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(beta.draw(0.01) > 0.0);
  CHECK(beta.draw(0.99) < 1.0);
  CHECK(beta.support_lo() == 0.0);
  CHECK(beta.support_hi() == 1.0);

  CovariateLaw uni;
  uni.kind = CovariateLaw::Kind::Uniform;
  uni.lo = 0.0;
  uni.hi = 3.0;
  CHECK(uni.draw(0.25) == 0.75);
  CHECK(uni.support_hi() == 3.0);
}

TEST_CASE("builtin scenarios expose the published studies") {
  const auto all = builtin_scenarios();
  CHECK(all.size() == 6);
  for (const char* name :
       {"sim1", "sim2", "sim1_misspec", "sim2_misspec", "c2_sim1", "c2_sim2"}) {
    REQUIRE(all.count(name) == 1);
    CHECK_NOTHROW(validate_scenario(all.at(name)));
  }

  const ScenarioSpec& s1 = all.at("sim1");
  CHECK(sources1(s1.fit_specs[0]) ==
        std::vector<std::string>{"1", "-log(1-u)", "(u-0.5)^3"});
  CHECK(sources2(s1.fit_specs[0]) == std::vector<std::string>{"qnorm(v)"});
  CHECK(s1.theta0.values.rows() == 2);
  CHECK(s1.theta0.values(0, 1) == 0.5);
  CHECK(s1.theta0.values(1, 2) == 10.0);
  CHECK(s1.phi0.values(0, 0) == 0.5);
  CHECK(s1.phi0.values(1, 0) == 0.5);

  const ScenarioSpec& s2 = all.at("sim2");
  CHECK(sources2(s2.fit_specs[0]) == std::vector<std::string>{"log(1-log(1-v))"});
  CHECK(s2.theta0.values(1, 0) == 3.0);

  const ScenarioSpec& m1 = all.at("sim1_misspec");
  CHECK(m1.fit_names == std::vector<std::string>{"linear_slope"});
  const auto src_m1 = sources1(m1.fit_specs[0]);
  CHECK(std::find(src_m1.begin(), src_m1.end(), "u") != src_m1.end());
  CHECK(sources1(m1.generator) == sources1(s1.generator));

  const ScenarioSpec& m2 = all.at("sim2_misspec");
  CHECK(m2.fit_names == std::vector<std::string>{"logistic_effects"});
  CHECK(sources2(m2.fit_specs[0]) == std::vector<std::string>{"log(v/(1-v))"});
  CHECK(sources1(m2.fit_specs[0]) == sources1(m2.generator));

  const ScenarioSpec& c1 = all.at("c2_sim1");
  CHECK(c1.fit_specs.size() == 3);
  CHECK(c1.select_level == 1);
  const auto src_iii = sources1(c1.fit_specs[2]);
  CHECK(std::find(src_iii.begin(), src_iii.end(), "u^0.5") != src_iii.end());
  CHECK(std::find(src_iii.begin(), src_iii.end(), "(1-u)^0.5") != src_iii.end());

  const ScenarioSpec& c2 = all.at("c2_sim2");
  CHECK(c2.fit_specs.size() == 3);
  CHECK(c2.select_level == 2);
  const auto src2_iii = sources2(c2.fit_specs[2]);
  CHECK(std::find(src2_iii.begin(), src2_iii.end(), "1-v^2") != src2_iii.end());
}

TEST_CASE("simulate: median value, determinism, and shape") {
  const ScenarioSpec sc = tiny_study(10, 4, 1);

  // closed-form check at the median: the level-2 part vanishes for any z
  Eigen::VectorXd x(2), z(2);
  x << 1.0, 0.5;
  z << 1.0, 1.0;
  const double y_median = quantile_level1(sc.generator, sc.theta0, x, 0.5) +
                          quantile_level2(sc.generator, sc.phi0, z, 0.5);
  CHECK(quantile_level2(sc.generator, sc.phi0, z, 0.5) == 0.0);
  CHECK(y_median == doctest::Approx(1.8465735902799727).epsilon(1e-14));

  const SimulatedData a = simulate(sc, 3);
  const SimulatedData b = simulate(sc, 3);
  CHECK(a.data.n_clusters() == 10);
  CHECK(a.data.total_obs() == 40);
  CHECK(a.u_true.size() == 40);
  CHECK(a.v_true.size() == 10);
  REQUIRE(b.data.n_clusters() == a.data.n_clusters());
  for (int i = 0; i < 10; ++i) {
    CHECK(a.data.clusters[i].y == b.data.clusters[i].y);
    CHECK(a.data.clusters[i].z == b.data.clusters[i].z);
    // covariates inside their supports
    CHECK(a.data.clusters[i].z(1) >= 0.0);
    CHECK(a.data.clusters[i].z(1) <= 3.0);
    for (long t = 0; t < 4; ++t) {
      CHECK(a.data.clusters[i].x(t, 1) > 0.0);
      CHECK(a.data.clusters[i].x(t, 1) < 1.0);
    }
    // zero-padded ids keep canonical order equal to construction order
    CHECK(a.data.canonical_order[i] == i);
  }
  CHECK(a.u_true == b.u_true);
  CHECK(a.v_true == b.v_true);

  const SimulatedData c = simulate(sc, 4);
  CHECK(c.u_true != a.u_true);
}

TEST_CASE("simulate: recorded uniforms pass a KS uniformity check") {
  ScenarioSpec sc = tiny_study(10000, 2, 1);
  const SimulatedData sd = simulate(sc, 0);
  REQUIRE(sd.u_true.size() == 20000);

  const double du = ks_uniform(sd.u_true);
  CHECK(du * std::sqrt(20000.0) < 1.95);  // ~p=0.001 critical value

  std::vector<double> v(sd.v_true.data(), sd.v_true.data() + sd.v_true.size());
  const double dv = ks_uniform(v);
  CHECK(dv * std::sqrt(10000.0) < 1.95);

  // law sanity: Beta(2,2) is centered at 1/2, U(0,3) at 3/2
  double xsum = 0, zsum = 0;
  for (const auto& cl : sd.data.clusters) {
    zsum += cl.z(1);
    for (long t = 0; t < cl.y.size(); ++t) xsum += cl.x(t, 1);
  }
  CHECK(xsum / 20000.0 == doctest::Approx(0.5).epsilon(0.02));
  CHECK(zsum / 10000.0 == doctest::Approx(1.5).epsilon(0.02));
}

TEST_CASE("simulate: recorded uniforms invert back through the quantile functions") {
  const ScenarioSpec sc = tiny_study(30, 4, 1);
  const SimulatedData sd = simulate(sc, 7);
  const double res = std::ldexp(1.0, -20);
  long k = 0;
  for (int i = 0; i < sd.data.n_clusters(); ++i) {
    const Cluster& cl = sd.data.clusters[i];
    const double effect = quantile_level2(sc.generator, sc.phi0, cl.z, sd.v_true(i));
    const InvertResult v = invert_level2(sc.generator, sc.phi0, cl.z, effect);
    CHECK(!v.clamped);
    CHECK(std::abs(v.prob - sd.v_true(i)) <= res);
    for (long t = 0; t < cl.y.size(); ++t, ++k) {
      const InvertResult u = invert_level1(sc.generator, sc.theta0, cl.x.row(t).transpose(),
                                           cl.y(t) - effect);
      CHECK(!u.clamped);
      CHECK(std::abs(u.prob - sd.u_true[k]) <= res);
    }
  }
}

TEST_CASE("validate_scenario rejects broken scenarios") {
  // decreasing generator
  {
    ScenarioSpec sc = tiny_study(5, 3, 1);
    sc.theta0.values(0, 1) = -2.0;  // flips the level-1 slope negative
    CHECK_THROWS_WITH_AS(validate_scenario(sc), doctest::Contains("decreases at u"), SimError);
  }
  {
    ScenarioSpec sc = tiny_study(5, 3, 1);
    sc.phi0.values(0, 0) = -0.5;
    sc.phi0.values(1, 0) = 0.0;
    CHECK_THROWS_WITH_AS(validate_scenario(sc), doctest::Contains("decreases at v"), SimError);
  }
  {
    ScenarioSpec sc = tiny_study(5, 3, 1);
    sc.R = 0;
    CHECK_THROWS_WITH_AS(validate_scenario(sc), doctest::Contains("R must be positive"), SimError);
  }
  {
    ScenarioSpec sc = tiny_study(5, 3, 1);
    sc.T_min = 1;
    sc.T_max = 1;
    CHECK_THROWS_WITH_AS(validate_scenario(sc), doctest::Contains("at least 2"), SimError);
  }
  {
    ScenarioSpec sc = tiny_study(5, 3, 1);
    sc.points = {1.5};
    CHECK_THROWS_WITH_AS(validate_scenario(sc), doctest::Contains("inside (0,1)"), SimError);
  }
  {
    ScenarioSpec sc = tiny_study(5, 3, 1);
    sc.fit_specs = {make_model_spec({"const"}, {"const"}, {{"1", "u"}}, {{"v"}})};
    CHECK_THROWS_WITH_AS(validate_scenario(sc), doctest::Contains("generator's covariates"),
                         SimError);
  }
}

TEST_CASE("scenario JSON: parse, defaults, and errors") {
  const std::string text = R"json({
    "name": "toy",
    "generator": {
      "level1": {"const": ["1", "-log(1-u)", "(u-0.5)^3"], "x": ["1", "-log(1-u)", "(u-0.5)^3"]},
      "level2": {"const": ["qnorm(v)"], "z": ["qnorm(v)"]},
      "theta": [[1, 0.5, 0], [1, 0, 10]],
      "phi": [[0.5], [0.5]]
    },
    "covariates": {"x": {"law": "beta", "a": 2, "b": 2}, "z": {"law": "uniform", "lo": 0, "hi": 3}},
    "N": 20, "T": 4, "R": 7, "seed": 9,
    "fit_specs": [
      {"level1": {"const": ["1", "-log(1-u)", "(u-0.5)^3"], "x": ["1", "-log(1-u)", "(u-0.5)^3"]},
       "level2": {"const": ["qnorm(v)"], "z": ["qnorm(v)"]}}
    ]
  })json";
  const ScenarioSpec sc = parse_scenario_json(text);
  CHECK(sc.name == "toy");
  CHECK(sc.N == 20);
  CHECK(sc.T_min == 4);
  CHECK(sc.T_max == 4);
  CHECK(sc.R == 7);
  CHECK(sc.seed == 9);
  CHECK(sc.points == std::vector<double>{0.2, 0.4, 0.6, 0.8});
  CHECK(sc.gof_R == 0);
  CHECK(sc.fit_specs.size() == 1);
  CHECK(sc.theta0.values(0, 0) == 1.0);
  CHECK(sc.theta0.values(0, 1) == 0.5);
  CHECK(sc.theta0.values(1, 2) == 10.0);
  CHECK(sc.x_laws[1].kind == CovariateLaw::Kind::Beta);
  CHECK(sc.z_laws[1].hi == 3.0);

  // generated data matches the equivalent builtin scenario draw for draw
  ScenarioSpec ref = builtin_scenario("sim1");
  ref.N = 20;
  ref.T_min = ref.T_max = 4;
  ref.seed = 9;
  const SimulatedData a = simulate(sc, 2), b = simulate(ref, 2);
  CHECK(a.u_true == b.u_true);
  for (int i = 0; i < 20; ++i) CHECK(a.data.clusters[i].y == b.data.clusters[i].y);

  // T as a range
  {
    std::string t2 = text;
    const auto pos = t2.find("\"T\": 4");
    t2.replace(pos, 6, "\"T\": {\"min\": 3, \"max\": 6}");
    const ScenarioSpec sr = parse_scenario_json(t2);
    CHECK(sr.T_min == 3);
    CHECK(sr.T_max == 6);
    const SimulatedData sd = simulate(sr, 0);
    long lo = 100, hi = 0;
    for (const auto& cl : sd.data.clusters) {
      lo = std::min(lo, cl.y.size());
      hi = std::max(hi, cl.y.size());
    }
    CHECK(lo >= 3);
    CHECK(hi <= 6);
    CHECK(lo < hi);  // 20 clusters over 4 lengths: both ends occupied w.h.p.
  }

  CHECK_THROWS_WITH_AS(parse_scenario_json("{"), doctest::Contains("not valid JSON"), SimError);
  CHECK_THROWS_WITH_AS(parse_scenario_json("[1]"), doctest::Contains("JSON object"), SimError);
  {
    std::string bad = text;
    bad.replace(bad.find("\"N\": 20"), 7, "\"n\": 20");
    CHECK_THROWS_WITH_AS(parse_scenario_json(bad), doctest::Contains("unknown field"), SimError);
  }
  {
    std::string bad = text;
    bad.replace(bad.find("\"x\": {\"law\": \"beta\", \"a\": 2, \"b\": 2}, "), 38, "");
    CHECK_THROWS_WITH_AS(parse_scenario_json(bad), doctest::Contains("has no law"), SimError);
  }
  {
    std::string bad = text;
    bad.replace(bad.find("[1, 0.5, 0]"), 11, "[1, 0.5]");
    CHECK_THROWS_WITH_AS(parse_scenario_json(bad), doctest::Contains("entries for"), SimError);
  }
}

TEST_CASE("run_mc_study: structure, truth cells, and thread invariance") {
  ScenarioSpec sc = tiny_study(12, 4, 6);
  sc.points = {0.25, 0.5};

  const McReport rep = run_mc_study(sc);
  CHECK(rep.scenario == "sim1");
  CHECK(rep.R == 6);
  CHECK(rep.fit_names == std::vector<std::string>{"true"});
  CHECK(rep.fit_failures.size() == 1);
  REQUIRE(rep.cells.size() == 8);  // 2 points x (2 level-1 + 2 level-2 coefficients)

  // truth follows the generator's coefficient functions
  for (const McCoefCell& c : rep.cells) {
    if (c.level == 1 && c.coef == "const" && c.point == 0.5)
      CHECK(c.truth == doctest::Approx(1.3465735902799727).epsilon(1e-14));
    if (c.level == 1 && c.coef == "x" && c.point == 0.25)
      CHECK(c.truth == doctest::Approx(1.0 + 10.0 * std::pow(-0.25, 3)).epsilon(1e-14));
    if (c.level == 2 && c.coef == "z" && c.point == 0.5) CHECK(c.truth == 0.0);
    if (c.n > 0) {
      CHECK(std::isfinite(c.mean));
      // level-2 cells at v=0.5 are exactly zero (the qnorm basis vanishes there),
      // so their estimates and standard errors are identically 0
      if (c.level == 2 && c.point == 0.5)
        CHECK(c.mean_se_hat == 0.0);
      else
        CHECK(c.mean_se_hat > 0.0);
      CHECK(c.coverage95 >= 0.0);
      CHECK(c.coverage95 <= 1.0);
      if (c.n >= 2) CHECK(c.emp_se >= 0.0);
    }
    CHECK(c.n + rep.fit_failures[0] + rep.infer_failures >= rep.R);
  }

  // deterministic and independent of the thread count
  const McReport again = run_mc_study(sc);
  const McReport threaded = run_mc_study(sc, {}, 3);
  REQUIRE(again.cells.size() == rep.cells.size());
  REQUIRE(threaded.cells.size() == rep.cells.size());
  for (std::size_t k = 0; k < rep.cells.size(); ++k) {
    CHECK(again.cells[k].mean == rep.cells[k].mean);
    CHECK(threaded.cells[k].mean == rep.cells[k].mean);
    CHECK(threaded.cells[k].emp_se == rep.cells[k].emp_se);
    CHECK(threaded.cells[k].mean_se_hat == rep.cells[k].mean_se_hat);
  }

  // CSV rendering
  const std::string csv = mc_report_csv(rep);
  CHECK(csv.rfind("scenario,level,coef,point,truth,mean,se,se_hat,coverage95,n\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
  CHECK(csv.find("sim1,1,const,0.5,1.34657,") != std::string::npos);
}

TEST_CASE("run_mc_study: single replication flags undefined empirical se") {
  ScenarioSpec sc = tiny_study(10, 4, 1);
  sc.points = {0.5};
  const McReport rep = run_mc_study(sc);
  REQUIRE(!rep.cells.empty());
  for (const McCoefCell& c : rep.cells)
    if (c.n == 1) {
      CHECK(std::isnan(c.emp_se));
      CHECK(c.mean == doctest::Approx(c.mean));  // mean equals the single estimate, finite
    }
  bool flagged = false;
  for (const auto& w : rep.warnings) flagged = flagged || w.find("empirical se") != std::string::npos;
  CHECK(flagged);
}

TEST_CASE("run_mc_study: selection shares and gof rates") {
  ScenarioSpec sc = builtin_scenario("c2_sim2");
  sc.N = 12;
  sc.T_min = sc.T_max = 4;
  sc.R = 4;
  sc.seed = 5;
  const McReport rep = run_mc_study(sc);
  REQUIRE(rep.aic_share.size() == 3);
  REQUIRE(rep.bic_share.size() == 3);
  if (rep.selection_n > 0) {
    double sa = 0, sb = 0;
    for (int s = 0; s < 3; ++s) {
      sa += rep.aic_share[s];
      sb += rep.bic_share[s];
      CHECK(rep.aic_share[s] >= 0.0);
    }
    CHECK(sa == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sb == doctest::Approx(1.0).epsilon(1e-12));
  }

  ScenarioSpec sg = tiny_study(8, 4, 3);
  sg.gof_R = 10;
  const McReport grep = run_mc_study(sg);
  REQUIRE(grep.gof_reject_rate.size() == 2);
  CHECK(grep.gof_n <= 3);
  for (double rate : grep.gof_reject_rate)
    if (grep.gof_n > 0) {
      CHECK(rate >= 0.0);
      CHECK(rate <= 1.0);
    }
}
