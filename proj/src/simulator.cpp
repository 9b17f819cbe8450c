#include "panelq/simulator.hpp"

#include "panelq/parallel.hpp"
#include "panelq/rng.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace panelq {

namespace {

constexpr std::uint64_t kGofSeedSalt = 0x676f66ULL;  // decorrelates nested bootstrap streams

std::string fmt_g(double x) {
  if (std::isnan(x)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

int find_column(const BasisSet& basis, const std::string& source) {
  const auto& elems = basis.elements();
  for (std::size_t k = 0; k < elems.size(); ++k)
    if (elems[k].source == source) return static_cast<int>(k);
  return -1;
}

// Maps per-covariate coefficient rows (parallel to that covariate's expression
// list) onto the pooled coefficient matrix.
CoefMatrix coef_from_lists(const ModelSpec& spec, int level,
                           const std::vector<std::vector<std::string>>& lists,
                           const std::vector<std::vector<double>>& vals) {
  const BasisSet& basis = level == 1 ? spec.basis1 : spec.basis2;
  const MaskMatrix& mask = level == 1 ? spec.mask1 : spec.mask2;
  if (vals.size() != lists.size())
    throw SimError("scenario: coefficient rows do not match the covariate count");
  CoefMatrix out = CoefMatrix::zeros(mask);
  for (std::size_t j = 0; j < lists.size(); ++j) {
    if (vals[j].size() != lists[j].size())
      throw SimError("scenario: coefficient row " + std::to_string(j) + " has " +
                     std::to_string(vals[j].size()) + " entries for " +
                     std::to_string(lists[j].size()) + " basis expressions");
    for (std::size_t k = 0; k < lists[j].size(); ++k) {
      const int col = find_column(basis, lists[j][k]);
      if (col < 0)
        throw SimError("scenario: expression '" + lists[j][k] + "' not found in the pooled basis");
      out.values(static_cast<Eigen::Index>(j), col) = vals[j][k];
    }
  }
  return out;
}

bool same_model(const ModelSpec& a, const ModelSpec& b) {
  if (a.x_names != b.x_names || a.z_names != b.z_names) return false;
  if (a.d_b() != b.d_b() || a.d_c() != b.d_c()) return false;
  for (int k = 0; k < a.d_b(); ++k)
    if (a.basis1.elements()[static_cast<std::size_t>(k)].source !=
        b.basis1.elements()[static_cast<std::size_t>(k)].source)
      return false;
  for (int k = 0; k < a.d_c(); ++k)
    if (a.basis2.elements()[static_cast<std::size_t>(k)].source !=
        b.basis2.elements()[static_cast<std::size_t>(k)].source)
      return false;
  for (Eigen::Index j = 0; j < a.mask1.rows(); ++j)
    for (Eigen::Index k = 0; k < a.mask1.cols(); ++k)
      if (a.mask1(j, k) != b.mask1(j, k)) return false;
  for (Eigen::Index j = 0; j < a.mask2.rows(); ++j)
    for (Eigen::Index k = 0; k < a.mask2.cols(); ++k)
      if (a.mask2(j, k) != b.mask2(j, k)) return false;
  return true;
}

// Derivative of the generated quantile function at every support-box corner
// over a fixed grid; the derivative is affine in the covariates, so corner
// nonnegativity extends to the whole box.
void check_monotone(const BasisSet& basis, const Eigen::MatrixXd& coef,
                    const std::vector<CovariateLaw>& laws, int level) {
  const int d = static_cast<int>(coef.rows());
  const int db = basis.size();
  std::vector<int> varying;
  for (int j = 0; j < d; ++j)
    if (laws[static_cast<std::size_t>(j)].support_lo() !=
        laws[static_cast<std::size_t>(j)].support_hi())
      varying.push_back(j);
  if (varying.size() > 16) throw SimError("scenario: too many varying covariates to validate");

  Eigen::VectorXd bp(db), corner(d);
  for (int j = 0; j < d; ++j) corner(j) = laws[static_cast<std::size_t>(j)].support_lo();
  for (std::uint32_t bits = 0; bits < (1u << varying.size()); ++bits) {
    for (std::size_t m = 0; m < varying.size(); ++m) {
      const CovariateLaw& law = laws[static_cast<std::size_t>(varying[m])];
      corner(varying[m]) = (bits >> m) & 1u ? law.support_hi() : law.support_lo();
    }
    for (int k = 1; k <= 99; ++k) {
      const double t = k / 100.0;
      basis.deriv1_into(t, bp.data());
      const double slope = corner.dot(coef * bp);
      if (slope < 0.0) {
        char msg[160];
        std::snprintf(msg, sizeof msg,
                      "scenario: generator level-%d quantile function decreases at %c = %.2f "
                      "(slope %.3g at a covariate support corner)",
                      level, level == 1 ? 'u' : 'v', t, slope);
        throw SimError(msg);
      }
    }
  }
}

std::uint64_t gof_seed_for(std::uint64_t seed, long rep) {
  return splitmix64(splitmix64(seed ^ kGofSeedSalt) + static_cast<std::uint64_t>(rep));
}

}  // namespace

double CovariateLaw::draw(double p) const {
  switch (kind) {
    case Kind::Constant: return 1.0;
    case Kind::Beta: return boost::math::ibeta_inv(a, b, p);
    case Kind::Uniform: return lo + (hi - lo) * p;
  }
  return 1.0;
}

double CovariateLaw::support_lo() const {
  switch (kind) {
    case Kind::Constant: return 1.0;
    case Kind::Beta: return 0.0;
    case Kind::Uniform: return lo;
  }
  return 1.0;
}

double CovariateLaw::support_hi() const {
  switch (kind) {
    case Kind::Constant: return 1.0;
    case Kind::Beta: return 1.0;
    case Kind::Uniform: return hi;
  }
  return 1.0;
}

void validate_scenario(const ScenarioSpec& sc) {
  const ModelSpec& g = sc.generator;
  if (sc.theta0.values.rows() != g.d_x() || sc.theta0.values.cols() != g.d_b())
    throw SimError("scenario: theta0 shape does not match the generator spec");
  if (sc.phi0.values.rows() != g.d_z() || sc.phi0.values.cols() != g.d_c())
    throw SimError("scenario: phi0 shape does not match the generator spec");
  if (static_cast<int>(sc.x_laws.size()) != g.d_x() ||
      static_cast<int>(sc.z_laws.size()) != g.d_z())
    throw SimError("scenario: one covariate law required per covariate");
  if (sc.x_laws[0].kind != CovariateLaw::Kind::Constant ||
      sc.z_laws[0].kind != CovariateLaw::Kind::Constant)
    throw SimError("scenario: the intercept column cannot have a sampling law");
  for (const auto* laws : {&sc.x_laws, &sc.z_laws})
    for (const CovariateLaw& law : *laws) {
      if (law.kind == CovariateLaw::Kind::Beta && !(law.a > 0.0 && law.b > 0.0))
        throw SimError("scenario: beta law requires positive shape parameters");
      if (law.kind == CovariateLaw::Kind::Uniform && !(law.hi >= law.lo))
        throw SimError("scenario: uniform law requires hi >= lo");
    }
  if (sc.N < 1 || sc.N > 999999) throw SimError("scenario: N must be in [1, 999999]");
  if (sc.T_min < 2) throw SimError("scenario: panels need at least 2 observations per cluster");
  if (sc.T_max < sc.T_min) throw SimError("scenario: T_max must be >= T_min");
  if (sc.R < 1) throw SimError("scenario: R must be positive");
  if (sc.gof_R < 0) throw SimError("scenario: gof_R cannot be negative");
  if (sc.select_level != 1 && sc.select_level != 2)
    throw SimError("scenario: select_level must be 1 or 2");
  if (sc.fit_specs.empty()) throw SimError("scenario: at least one fit spec is required");
  for (const ModelSpec& fs : sc.fit_specs)
    if (fs.x_names != g.x_names || fs.z_names != g.z_names)
      throw SimError("scenario: fit specs must use the generator's covariates");
  if (!sc.fit_names.empty() && sc.fit_names.size() != sc.fit_specs.size())
    throw SimError("scenario: fit_names must match fit_specs");
  for (double p : sc.points)
    if (!(p > 0.0 && p < 1.0))
      throw SimError("scenario: probability points must lie strictly inside (0,1)");
  for (double l : sc.gof_levels)
    if (!(l > 0.0 && l < 1.0))
      throw SimError("scenario: test levels must lie strictly inside (0,1)");

  check_monotone(g.basis1, sc.theta0.values, sc.x_laws, 1);
  check_monotone(g.basis2, sc.phi0.values, sc.z_laws, 2);
}

SimulatedData simulate(const ScenarioSpec& sc, std::uint64_t replication) {
  validate_scenario(sc);
  const ModelSpec& g = sc.generator;
  const int dx = g.d_x(), dz = g.d_z();

  auto ug = make_stream(sc.seed, replication, StreamRole::U);
  auto vg = make_stream(sc.seed, replication, StreamRole::V);
  auto xg = make_stream(sc.seed, replication, StreamRole::X);
  auto zg = make_stream(sc.seed, replication, StreamRole::Z);
  auto tg = make_stream(sc.seed, replication, StreamRole::T);

  RawRows r;
  r.x_names.assign(g.x_names.begin() + 1, g.x_names.end());
  r.z_names.assign(g.z_names.begin() + 1, g.z_names.end());
  r.x_cols.resize(r.x_names.size());
  r.z_cols.resize(r.z_names.size());

  SimulatedData out;
  out.v_true.resize(sc.N);
  Eigen::VectorXd xrow = Eigen::VectorXd::Ones(dx);
  Eigen::VectorXd zvec = Eigen::VectorXd::Ones(dz);
  char id[16];
  for (int i = 0; i < sc.N; ++i) {
    std::snprintf(id, sizeof id, "c%06d", i);
    long Ti = sc.T_min;
    if (sc.T_max > sc.T_min) {
      Ti = sc.T_min +
           static_cast<long>(uniform01(tg) * static_cast<double>(sc.T_max - sc.T_min + 1));
      Ti = std::min(Ti, sc.T_max);
    }
    for (int j = 1; j < dz; ++j) zvec(j) = sc.z_laws[static_cast<std::size_t>(j)].draw(uniform01(zg));
    const double v = uniform01(vg);
    out.v_true(i) = v;
    const double effect = quantile_level2(g, sc.phi0, zvec, v);
    for (long t = 0; t < Ti; ++t) {
      for (int j = 1; j < dx; ++j)
        xrow(j) = sc.x_laws[static_cast<std::size_t>(j)].draw(uniform01(xg));
      const double u = uniform01(ug);
      out.u_true.push_back(u);
      r.cluster.emplace_back(id);
      r.y.push_back(quantile_level1(g, sc.theta0, xrow, u) + effect);
      for (int j = 1; j < dx; ++j) r.x_cols[static_cast<std::size_t>(j - 1)].push_back(xrow(j));
      for (int j = 1; j < dz; ++j) r.z_cols[static_cast<std::size_t>(j - 1)].push_back(zvec(j));
    }
  }
  out.data = validate_dataset(r);
  return out;
}

namespace {

ScenarioSpec base_scenario(int which) {
  ScenarioSpec sc;
  const std::vector<std::string> xn = {"const", "x"}, zn = {"const", "z"};
  std::vector<std::vector<std::string>> l1, l2;
  std::vector<std::vector<double>> t0, p0;
  if (which == 1) {
    l1 = {{"1", "-log(1-u)", "(u-0.5)^3"}, {"1", "-log(1-u)", "(u-0.5)^3"}};
    t0 = {{1.0, 0.5, 0.0}, {1.0, 0.0, 10.0}};
    l2 = {{"qnorm(v)"}, {"qnorm(v)"}};
    p0 = {{0.5}, {0.5}};
  } else {
    l1 = {{"1", "1-(1-u)^0.25", "u"}, {"1", "1-(1-u)^0.25", "u"}};
    t0 = {{0.0, 2.0, 0.0}, {3.0, 0.0, 3.0}};
    l2 = {{"log(1-log(1-v))"}, {"log(1-log(1-v))"}};
    p0 = {{1.0}, {0.5}};
  }
  sc.generator = make_model_spec(xn, zn, l1, l2);
  sc.theta0 = coef_from_lists(sc.generator, 1, l1, t0);
  sc.phi0 = coef_from_lists(sc.generator, 2, l2, p0);

  CovariateLaw constant;
  CovariateLaw beta22;
  beta22.kind = CovariateLaw::Kind::Beta;
  beta22.a = 2.0;
  beta22.b = 2.0;
  CovariateLaw uni03;
  uni03.kind = CovariateLaw::Kind::Uniform;
  uni03.lo = 0.0;
  uni03.hi = 3.0;
  sc.x_laws = {constant, beta22};
  sc.z_laws = {constant, uni03};
  return sc;
}

}  // namespace

std::map<std::string, ScenarioSpec> builtin_scenarios() {
  std::map<std::string, ScenarioSpec> out;
  const std::vector<std::string> xn = {"const", "x"}, zn = {"const", "z"};

  {
    ScenarioSpec sc = base_scenario(1);
    sc.name = "sim1";
    sc.fit_specs = {sc.generator};
    sc.fit_names = {"true"};
    out.emplace(sc.name, std::move(sc));
  }
  {
    ScenarioSpec sc = base_scenario(2);
    sc.name = "sim2";
    sc.fit_specs = {sc.generator};
    sc.fit_names = {"true"};
    out.emplace(sc.name, std::move(sc));
  }
  {
    // level-1 misspecification: the non-constant coefficient forced linear in u
    ScenarioSpec sc = base_scenario(1);
    sc.name = "sim1_misspec";
    sc.fit_specs = {make_model_spec(
        xn, zn, {{"1", "-log(1-u)", "(u-0.5)^3"}, {"1", "u"}}, {{"qnorm(v)"}, {"qnorm(v)"}})};
    sc.fit_names = {"linear_slope"};
    out.emplace(sc.name, std::move(sc));
  }
  {
    // level-2 misspecification: logistic instead of the true effect distribution
    ScenarioSpec sc = base_scenario(2);
    sc.name = "sim2_misspec";
    sc.fit_specs = {make_model_spec(xn, zn,
                                    {{"1", "1-(1-u)^0.25", "u"}, {"1", "1-(1-u)^0.25", "u"}},
                                    {{"log(v/(1-v))"}, {"log(v/(1-v))"}})};
    sc.fit_names = {"logistic_effects"};
    out.emplace(sc.name, std::move(sc));
  }
  {
    // model selection over the non-constant level-1 coefficient
    ScenarioSpec sc = base_scenario(1);
    sc.name = "c2_sim1";
    const std::vector<std::string> b0 = {"1", "-log(1-u)", "(u-0.5)^3"};
    const std::vector<std::vector<std::string>> c2 = {{"qnorm(v)"}, {"qnorm(v)"}};
    sc.fit_specs = {
        make_model_spec(xn, zn, {b0, {"1", "u", "u^2", "u^3"}}, c2),
        make_model_spec(xn, zn, {b0, {"1", "u", "cos(pi*u)", "sin(pi*u)"}}, c2),
        make_model_spec(xn, zn, {b0, {"1", "u^0.5", "(1-u)^0.5"}}, c2),
    };
    sc.fit_names = {"I", "II", "III"};
    sc.select_level = 1;
    out.emplace(sc.name, std::move(sc));
  }
  {
    // model selection over the non-constant level-2 coefficient
    ScenarioSpec sc = base_scenario(2);
    sc.name = "c2_sim2";
    const std::vector<std::vector<std::string>> l1 = {{"1", "1-(1-u)^0.25", "u"},
                                                      {"1", "1-(1-u)^0.25", "u"}};
    const std::vector<std::string> g0 = {"log(1-log(1-v))"};
    sc.fit_specs = {
        make_model_spec(xn, zn, l1, {g0, {"1", "log(1-log(1-v))"}}),
        make_model_spec(xn, zn, l1, {g0, {"1", "1-(1-v)^0.5"}}),
        make_model_spec(xn, zn, l1, {g0, {"1-v^2"}}),
    };
    sc.fit_names = {"I", "II", "III"};
    sc.select_level = 2;
    out.emplace(sc.name, std::move(sc));
  }
  return out;
}

ScenarioSpec builtin_scenario(const std::string& name) {
  auto all = builtin_scenarios();
  const auto it = all.find(name);
  if (it == all.end()) {
    std::string names;
    for (const auto& kv : all) names += (names.empty() ? "" : ", ") + kv.first;
    throw SimError("unknown scenario '" + name + "' (available: " + names + ")");
  }
  return it->second;
}

namespace {
ScenarioSpec parse_scenario_fields(const nlohmann::ordered_json& j);
}

ScenarioSpec parse_scenario_json(const std::string& json_text) {
  using json = nlohmann::ordered_json;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw SimError(std::string("scenario is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw SimError("scenario must be a JSON object");
  try {
    return parse_scenario_fields(j);
  } catch (const nlohmann::json::exception& e) {
    throw SimError(std::string("scenario: ") + e.what());
  }
}

namespace {

ScenarioSpec parse_scenario_fields(const nlohmann::ordered_json& j) {
  using json = nlohmann::ordered_json;
  static const std::vector<std::string> known = {
      "generator", "covariates", "N",      "T",          "R",     "seed",        "fit_specs",
      "fit_names", "name",       "points", "gof_levels", "gof_R", "select_level"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw SimError("scenario: unknown field '" + it.key() + "'");
  for (const char* req : {"generator", "covariates", "N", "T", "fit_specs"})
    if (!j.contains(req)) throw SimError(std::string("scenario: missing field '") + req + "'");

  const json& gen = j.at("generator");
  if (!gen.is_object() || !gen.contains("level1") || !gen.contains("level2") ||
      !gen.contains("theta") || !gen.contains("phi"))
    throw SimError("scenario: generator needs 'level1', 'level2', 'theta', and 'phi'");

  const auto read_level = [](const json& obj, const char* level, char var,
                             std::vector<std::string>& names,
                             std::vector<std::vector<std::string>>& lists) {
    if (!obj.is_object() || obj.empty())
      throw SimError(std::string("scenario: generator ") + level + " must be a non-empty object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      names.push_back(it.key());
      if (!it.value().is_array())
        throw SimError(std::string("scenario: generator ") + level + "." + it.key() +
                       " must be an array of strings");
      std::vector<std::string> exprs;
      for (const auto& e : it.value()) {
        if (!e.is_string())
          throw SimError(std::string("scenario: generator ") + level + "." + it.key() +
                         " must be an array of strings");
        exprs.push_back(e.get<std::string>());
      }
      lists.push_back(std::move(exprs));
    }
    if (names.front() != "const")
      throw SimError(std::string("scenario: generator ") + level + " must list 'const' first");
    (void)var;
  };

  std::vector<std::string> x_names, z_names;
  std::vector<std::vector<std::string>> l1, l2;
  read_level(gen.at("level1"), "level1", 'u', x_names, l1);
  read_level(gen.at("level2"), "level2", 'v', z_names, l2);

  const auto read_rows = [](const json& arr, const char* what) {
    if (!arr.is_array()) throw SimError(std::string("scenario: ") + what + " must be an array");
    std::vector<std::vector<double>> rows;
    for (const auto& row : arr) {
      if (!row.is_array())
        throw SimError(std::string("scenario: ") + what + " rows must be arrays of numbers");
      std::vector<double> r;
      for (const auto& x : row) {
        if (!x.is_number())
          throw SimError(std::string("scenario: ") + what + " rows must be arrays of numbers");
        r.push_back(x.get<double>());
      }
      rows.push_back(std::move(r));
    }
    return rows;
  };

  ScenarioSpec sc;
  sc.generator = make_model_spec(x_names, z_names, l1, l2);
  sc.theta0 = coef_from_lists(sc.generator, 1, l1, read_rows(gen.at("theta"), "generator theta"));
  sc.phi0 = coef_from_lists(sc.generator, 2, l2, read_rows(gen.at("phi"), "generator phi"));

  CovariateLaw constant;
  sc.x_laws.assign(x_names.size(), constant);
  sc.z_laws.assign(z_names.size(), constant);
  const json& cov = j.at("covariates");
  if (!cov.is_object()) throw SimError("scenario: covariates must be an object");
  std::vector<std::uint8_t> x_seen(x_names.size(), 0), z_seen(z_names.size(), 0);
  x_seen[0] = z_seen[0] = 1;
  for (auto it = cov.begin(); it != cov.end(); ++it) {
    if (it.key() == "const")
      throw SimError("scenario: the intercept column cannot have a sampling law");
    const json& o = it.value();
    if (!o.is_object() || !o.contains("law") || !o.at("law").is_string())
      throw SimError("scenario: covariate '" + it.key() + "' needs a 'law' string");
    CovariateLaw law;
    const std::string kind = o.at("law").get<std::string>();
    if (kind == "beta") {
      law.kind = CovariateLaw::Kind::Beta;
      law.a = o.value("a", 2.0);
      law.b = o.value("b", 2.0);
    } else if (kind == "uniform") {
      law.kind = CovariateLaw::Kind::Uniform;
      law.lo = o.value("lo", 0.0);
      law.hi = o.value("hi", 1.0);
    } else {
      throw SimError("scenario: unknown law '" + kind + "' (use 'beta' or 'uniform')");
    }
    bool found = false;
    for (std::size_t k = 1; k < x_names.size(); ++k)
      if (x_names[k] == it.key()) {
        sc.x_laws[k] = law;
        x_seen[k] = 1;
        found = true;
      }
    for (std::size_t k = 1; k < z_names.size(); ++k)
      if (z_names[k] == it.key()) {
        sc.z_laws[k] = law;
        z_seen[k] = 1;
        found = true;
      }
    if (!found)
      throw SimError("scenario: law given for unknown covariate '" + it.key() + "'");
  }
  for (std::size_t k = 1; k < x_names.size(); ++k)
    if (!x_seen[k]) throw SimError("scenario: covariate '" + x_names[k] + "' has no law");
  for (std::size_t k = 1; k < z_names.size(); ++k)
    if (!z_seen[k]) throw SimError("scenario: covariate '" + z_names[k] + "' has no law");

  if (!j.at("N").is_number_integer()) throw SimError("scenario: N must be an integer");
  sc.N = j.at("N").get<int>();
  const json& T = j.at("T");
  if (T.is_number_integer()) {
    sc.T_min = sc.T_max = T.get<long>();
  } else if (T.is_object() && T.contains("min") && T.contains("max")) {
    sc.T_min = T.at("min").get<long>();
    sc.T_max = T.at("max").get<long>();
  } else {
    throw SimError("scenario: T must be an integer or {\"min\":, \"max\":}");
  }
  sc.R = j.value("R", 200);
  sc.seed = j.value("seed", static_cast<std::uint64_t>(1));
  sc.gof_R = j.value("gof_R", 0);
  sc.select_level = j.value("select_level", 1);
  sc.name = j.value("name", std::string("scenario"));
  if (j.contains("points")) {
    sc.points.clear();
    for (const auto& p : j.at("points")) sc.points.push_back(p.get<double>());
  }
  if (j.contains("gof_levels")) {
    sc.gof_levels.clear();
    for (const auto& p : j.at("gof_levels")) sc.gof_levels.push_back(p.get<double>());
  }

  const json& fits = j.at("fit_specs");
  if (!fits.is_array() || fits.empty())
    throw SimError("scenario: fit_specs must be a non-empty array");
  for (const auto& f : fits)
    sc.fit_specs.push_back(parse_model_spec(f.dump(), x_names, z_names, nullptr));
  if (j.contains("fit_names")) {
    for (const auto& n : j.at("fit_names")) sc.fit_names.push_back(n.get<std::string>());
    if (sc.fit_names.size() != sc.fit_specs.size())
      throw SimError("scenario: fit_names must match fit_specs");
  }

  validate_scenario(sc);
  return sc;
}

}  // namespace

McReport run_mc_study(const ScenarioSpec& sc, const FitOptions& fit_opt, int threads) {
  validate_scenario(sc);
  const int S = static_cast<int>(sc.fit_specs.size());
  const int P = static_cast<int>(sc.points.size());
  const int L = static_cast<int>(sc.gof_levels.size());
  const int dx = sc.generator.d_x(), dz = sc.generator.d_z();
  const bool have_truth = same_model(sc.fit_specs[0], sc.generator);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  struct Rep {
    std::vector<std::uint8_t> fit_ok;
    std::uint8_t infer_ok = 0;
    std::uint8_t gof_ok = 0;
    std::vector<double> c1val, c1se, c2val, c2se;  // (point, row) blocks
    std::vector<std::uint8_t> reject;              // per gof level
    int aic_win = -1, bic_win = -1;
    std::vector<std::string> notes;
  };
  std::vector<Rep> reps(static_cast<std::size_t>(sc.R));

  parallel_for(sc.R, threads, [&](long r) {
    Rep& o = reps[static_cast<std::size_t>(r)];
    o.fit_ok.assign(static_cast<std::size_t>(S), 0);
    const SimulatedData sd = simulate(sc, static_cast<std::uint64_t>(r));
    std::vector<FitResult> fits(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s) {
      try {
        fits[static_cast<std::size_t>(s)] = fit(sd.data, sc.fit_specs[static_cast<std::size_t>(s)], fit_opt);
        o.fit_ok[static_cast<std::size_t>(s)] =
            fits[static_cast<std::size_t>(s)].converged ? 1 : 0;
        if (!fits[static_cast<std::size_t>(s)].converged)
          o.notes.push_back("replication " + std::to_string(r) + ": fit " + std::to_string(s) +
                            " did not converge");
      } catch (const std::exception& e) {
        o.notes.push_back("replication " + std::to_string(r) + ": fit " + std::to_string(s) +
                          " failed: " + e.what());
      }
    }

    if (o.fit_ok[0]) {
      const FitResult& f0 = fits[0];
      try {
        const InferenceComponents comps = estimate_components(f0, sd.data, sc.fit_specs[0]);
        for (double pt : sc.points) {
          const CoefEstimate e1 = coef_level1_at(f0, sc.fit_specs[0], comps, pt);
          const CoefEstimate e2 = coef_level2_at(f0, sc.fit_specs[0], comps, pt);
          for (int jx = 0; jx < dx; ++jx) {
            o.c1val.push_back(e1.value(jx));
            o.c1se.push_back(e1.se(jx));
          }
          for (int jz = 0; jz < dz; ++jz) {
            o.c2val.push_back(e2.value(jz));
            o.c2se.push_back(e2.se(jz));
          }
        }
        o.infer_ok = 1;
      } catch (const std::exception& e) {
        o.notes.push_back("replication " + std::to_string(r) + ": inference failed: " + e.what());
      }

      if (sc.gof_R > 0) {
        try {
          const double max_level = *std::max_element(sc.gof_levels.begin(), sc.gof_levels.end());
          const long stop = static_cast<long>(std::ceil(max_level * sc.gof_R));
          const GofResult gr = gof_test(f0, sd.data, sc.fit_specs[0], sc.gof_R,
                                        gof_seed_for(sc.seed, r), fit_opt, 1, stop);
          for (double level : sc.gof_levels)
            o.reject.push_back(gof_reject(gr, level) ? 1 : 0);
          o.gof_ok = 1;
        } catch (const std::exception& e) {
          o.notes.push_back("replication " + std::to_string(r) + ": gof failed: " + e.what());
        }
      }
    }

    if (S >= 2) {
      bool all_ok = true;
      for (int s = 0; s < S; ++s) all_ok = all_ok && o.fit_ok[static_cast<std::size_t>(s)];
      if (all_ok) {
        double best_aic = 0, best_bic = 0;
        for (int s = 0; s < S; ++s) {
          const InfoCriteria ic = information_criteria(fits[static_cast<std::size_t>(s)]);
          const bool defined = sc.select_level == 1 ? ic.defined1 : ic.defined2;
          if (!defined) {
            o.aic_win = o.bic_win = -1;
            o.notes.push_back("replication " + std::to_string(r) +
                              ": information criteria undefined for fit " + std::to_string(s));
            break;
          }
          const double a = sc.select_level == 1 ? ic.aic1 : ic.aic2;
          const double b = sc.select_level == 1 ? ic.bic1 : ic.bic2;
          if (s == 0 || a < best_aic) {
            best_aic = a;
            o.aic_win = s;
          }
          if (s == 0 || b < best_bic) {
            best_bic = b;
            o.bic_win = s;
          }
        }
      }
    }
  });

  McReport rep;
  rep.scenario = sc.name;
  rep.R = sc.R;
  rep.fit_names = sc.fit_names;
  if (rep.fit_names.empty())
    for (int s = 0; s < S; ++s) rep.fit_names.push_back("spec" + std::to_string(s));
  rep.fit_failures.assign(static_cast<std::size_t>(S), 0);
  for (const Rep& o : reps)
    for (int s = 0; s < S; ++s)
      if (!o.fit_ok[static_cast<std::size_t>(s)]) ++rep.fit_failures[static_cast<std::size_t>(s)];
  for (const Rep& o : reps)
    if (o.fit_ok[0] && !o.infer_ok) ++rep.infer_failures;

  // coefficient cells: fold replications in index order (two passes)
  Eigen::VectorXd b_at(sc.generator.d_b()), c_at(sc.generator.d_c());
  const auto make_cells = [&](int level, int d, const std::vector<std::string>& names) {
    for (int p = 0; p < P; ++p) {
      const double pt = sc.points[static_cast<std::size_t>(p)];
      for (int jj = 0; jj < d; ++jj) {
        McCoefCell cell;
        cell.level = level;
        cell.coef = names[static_cast<std::size_t>(jj)];
        cell.point = pt;
        cell.truth = nan;
        if (have_truth) {
          if (level == 1) {
            sc.generator.basis1.eval_into(pt, b_at.data());
            cell.truth = sc.theta0.values.row(jj).dot(b_at);
          } else {
            sc.generator.basis2.eval_into(pt, c_at.data());
            cell.truth = sc.phi0.values.row(jj).dot(c_at);
          }
        }
        const std::size_t slot = static_cast<std::size_t>(p * d + jj);
        double sum = 0, sum_se = 0;
        long n = 0, covered = 0;
        for (const Rep& o : reps) {
          if (!o.infer_ok) continue;
          const double val = level == 1 ? o.c1val[slot] : o.c2val[slot];
          const double se = level == 1 ? o.c1se[slot] : o.c2se[slot];
          sum += val;
          sum_se += se;
          if (have_truth && std::abs(val - cell.truth) <= 1.96 * se) ++covered;
          ++n;
        }
        cell.n = static_cast<int>(n);
        cell.mean = n > 0 ? sum / static_cast<double>(n) : nan;
        cell.mean_se_hat = n > 0 ? sum_se / static_cast<double>(n) : nan;
        cell.coverage95 = (have_truth && n > 0) ? static_cast<double>(covered) / n : nan;
        if (n >= 2) {
          double ss = 0;
          for (const Rep& o : reps) {
            if (!o.infer_ok) continue;
            const double val = level == 1 ? o.c1val[slot] : o.c2val[slot];
            ss += (val - cell.mean) * (val - cell.mean);
          }
          cell.emp_se = std::sqrt(ss / static_cast<double>(n - 1));
        } else {
          cell.emp_se = nan;
        }
        rep.cells.push_back(std::move(cell));
      }
    }
  };
  make_cells(1, dx, sc.generator.x_names);
  make_cells(2, dz, sc.generator.z_names);

  bool single_rep_flagged = false;
  for (const McCoefCell& c : rep.cells)
    if (c.n < 2 && !single_rep_flagged) {
      rep.warnings.push_back("empirical se undefined with fewer than 2 replications");
      single_rep_flagged = true;
    }

  rep.gof_levels = sc.gof_levels;
  if (sc.gof_R > 0) {
    rep.gof_reject_rate.assign(static_cast<std::size_t>(L), 0.0);
    for (const Rep& o : reps) {
      if (!o.gof_ok) continue;
      ++rep.gof_n;
      for (int l = 0; l < L; ++l)
        rep.gof_reject_rate[static_cast<std::size_t>(l)] += o.reject[static_cast<std::size_t>(l)];
    }
    for (int l = 0; l < L; ++l)
      rep.gof_reject_rate[static_cast<std::size_t>(l)] =
          rep.gof_n > 0 ? rep.gof_reject_rate[static_cast<std::size_t>(l)] / rep.gof_n : nan;
  }

  if (S >= 2) {
    rep.aic_share.assign(static_cast<std::size_t>(S), 0.0);
    rep.bic_share.assign(static_cast<std::size_t>(S), 0.0);
    for (const Rep& o : reps) {
      if (o.aic_win < 0 || o.bic_win < 0) continue;
      ++rep.selection_n;
      rep.aic_share[static_cast<std::size_t>(o.aic_win)] += 1.0;
      rep.bic_share[static_cast<std::size_t>(o.bic_win)] += 1.0;
    }
    if (rep.selection_n > 0) {
      for (int s = 0; s < S; ++s) {
        rep.aic_share[static_cast<std::size_t>(s)] /= rep.selection_n;
        rep.bic_share[static_cast<std::size_t>(s)] /= rep.selection_n;
      }
    } else {
      rep.warnings.push_back("no replication produced a complete model-selection comparison");
    }
  }

  // forward a bounded number of per-replication notes
  std::size_t forwarded = 0;
  for (const Rep& o : reps)
    for (const std::string& note : o.notes) {
      if (forwarded < 20) rep.warnings.push_back(note);
      ++forwarded;
    }
  if (forwarded > 20)
    rep.warnings.push_back("(" + std::to_string(forwarded - 20) + " more notes suppressed)");

  return rep;
}

std::string mc_report_csv(const McReport& rep) {
  std::string out = "scenario,level,coef,point,truth,mean,se,se_hat,coverage95,n\n";
  for (const McCoefCell& c : rep.cells) {
    out += rep.scenario + ',' + std::to_string(c.level) + ',' + c.coef + ',' + fmt_g(c.point) +
           ',' + fmt_g(c.truth) + ',' + fmt_g(c.mean) + ',' + fmt_g(c.emp_se) + ',' +
           fmt_g(c.mean_se_hat) + ',' + fmt_g(c.coverage95) + ',' + std::to_string(c.n) + '\n';
  }
  return out;
}

}  // namespace panelq
