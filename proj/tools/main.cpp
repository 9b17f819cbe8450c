#include "panelq/diagnostics.hpp"
#include "panelq/estimator.hpp"
#include "panelq/inference.hpp"
#include "panelq/json_io.hpp"
#include "panelq/simulator.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace panelq;

// validation failure before any numeric work; carries the exit code
struct CliError {
  int code;
  std::string message;
};

struct Options {
  std::string data, spec, out = ".";
  double tol = 1e-5;
  int max_iters = 200;
  int gof_R = 100;
  long long seed = 1;
  int threads = 1;
  std::string grid = "0.2,0.4,0.6,0.8";
  bool center = false;
  bool apply_bias = false;
  bool allow_nonconverged = false;
  bool seed_given = false;
  bool gof_R_given = false;
};

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliError{2, "cannot open file: " + path};
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CliError{2, "cannot write file: " + path.string()};
  out << content;
}

std::filesystem::path prepare_out_dir(const Options& o) {
  std::filesystem::path dir(o.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw CliError{2, "cannot create output directory " + o.out + ": " + ec.message()};
  return dir;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> pts;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw CliError{2, "grid entry '" + tok + "' is not a number"};
    }
    while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used]))) ++used;
    if (used != tok.size()) throw CliError{2, "grid entry '" + tok + "' is not a number"};
    if (!(v > 0.0 && v < 1.0))
      throw CliError{2, "grid entries must lie strictly inside (0,1)"};
    pts.push_back(v);
  }
  if (pts.empty()) throw CliError{2, "grid must contain at least one point"};
  return pts;
}

void check_common(const Options& o) {
  if (!(o.tol > 0.0)) throw CliError{2, "tol must be positive"};
  if (o.max_iters < 1) throw CliError{2, "max-iters must be at least 1"};
  if (o.threads < 1) throw CliError{2, "threads must be at least 1"};
  if (o.gof_R < 1) throw CliError{2, "gof-R must be at least 1"};
}

FitOptions fit_options(const Options& o) {
  FitOptions f;
  f.tol = o.tol;
  f.max_outer_iters = o.max_iters;
  f.seed = static_cast<std::uint64_t>(o.seed);
  f.threads = o.threads;
  return f;
}

std::string fmt6(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// shifts every non-intercept covariate column by its grand mean (observations
// for x, clusters for z) so the support of the design includes zero
void center_covariates(PanelDataset& data, std::vector<double>& x_centers,
                       std::vector<double>& z_centers) {
  const long nt = data.total_obs();
  const int n = data.n_clusters();
  for (int j = 1; j < data.d_x(); ++j) {
    double s = 0.0;
    for (const auto& c : data.clusters) s += c.x.col(j).sum();
    x_centers[j] = s / static_cast<double>(nt);
    for (auto& c : data.clusters) c.x.col(j).array() -= x_centers[j];
  }
  for (int j = 1; j < data.d_z(); ++j) {
    double s = 0.0;
    for (const auto& c : data.clusters) s += c.z(j);
    z_centers[j] = s / static_cast<double>(n);
    for (auto& c : data.clusters) c.z(j) -= z_centers[j];
  }
}

ScenarioSpec resolve_scenario(const Options& o) {
  if (o.spec.empty()) throw CliError{2, "--spec is required (builtin scenario name or JSON path)"};
  const auto builtins = builtin_scenarios();
  ScenarioSpec sc;
  if (builtins.count(o.spec)) {
    sc = builtins.at(o.spec);
  } else if (std::filesystem::exists(o.spec)) {
    sc = parse_scenario_json(read_text_file(o.spec));
  } else {
    std::string names;
    for (const auto& [k, v] : builtins) names += (names.empty() ? "" : ", ") + k;
    throw CliError{2, "'" + o.spec + "' is neither a builtin scenario (" + names +
                          ") nor an existing file"};
  }
  if (o.seed_given) sc.seed = static_cast<std::uint64_t>(o.seed);
  if (o.gof_R_given) sc.gof_R = o.gof_R;
  return sc;
}

struct CoefRow {
  int level;
  std::string coef;
  double point, estimate, se, bias;
};

// coefficient table at the grid; falls back to plain basis evaluation with
// nan se/bias when the inference components are unavailable
std::vector<CoefRow> coefficient_rows(const FitResult& fit, const ModelSpec& spec,
                                      const InferenceComponents* comps,
                                      const std::vector<double>& grid, bool apply_bias) {
  std::vector<CoefRow> rows;
  const double qnan = std::nan("");
  for (double p : grid) {
    if (comps) {
      const CoefEstimate e1 = coef_level1_at(fit, spec, *comps, p);
      for (int j = 0; j < spec.d_x(); ++j) {
        const double est = e1.value(j) + (apply_bias ? e1.bias(j) : 0.0);
        rows.push_back({1, spec.x_names[j], p, est, e1.se(j), e1.bias(j)});
      }
    } else {
      std::vector<double> b(spec.d_b());
      spec.basis1.eval_into(p, b.data());
      const Eigen::VectorXd beta =
          fit.theta.values * Eigen::Map<const Eigen::VectorXd>(b.data(), spec.d_b());
      for (int j = 0; j < spec.d_x(); ++j)
        rows.push_back({1, spec.x_names[j], p, beta(j), qnan, qnan});
    }
  }
  for (double p : grid) {
    if (comps) {
      const CoefEstimate e2 = coef_level2_at(fit, spec, *comps, p);
      for (int j = 0; j < spec.d_z(); ++j) {
        const double est = e2.value(j) + (apply_bias ? e2.bias(j) : 0.0);
        rows.push_back({2, spec.z_names[j], p, est, e2.se(j), e2.bias(j)});
      }
    } else {
      std::vector<double> c(spec.d_c());
      spec.basis2.eval_into(p, c.data());
      const Eigen::VectorXd gamma =
          fit.phi.values * Eigen::Map<const Eigen::VectorXd>(c.data(), spec.d_c());
      for (int j = 0; j < spec.d_z(); ++j)
        rows.push_back({2, spec.z_names[j], p, gamma(j), qnan, qnan});
    }
  }
  return rows;
}

std::string coefficients_csv(const std::vector<CoefRow>& rows) {
  std::string out = "level,coef,point,estimate,se,bias\n";
  for (const CoefRow& r : rows)
    out += std::to_string(r.level) + "," + r.coef + "," + fmt6(r.point) + "," +
           fmt6(r.estimate) + "," + fmt6(r.se) + "," + fmt6(r.bias) + "\n";
  return out;
}

int cmd_fit(const Options& o) {
  check_common(o);
  const std::vector<double> grid = parse_grid(o.grid);
  if (o.data.empty()) throw CliError{2, "--data is required"};
  if (o.spec.empty()) throw CliError{2, "--spec is required"};

  PanelDataset data = read_panel_csv(o.data);
  std::vector<std::string> spec_warnings;
  const ModelSpec spec =
      parse_model_spec(read_text_file(o.spec), data.x_names, data.z_names, &spec_warnings);

  std::vector<double> x_centers(data.d_x(), 0.0), z_centers(data.d_z(), 0.0);
  if (o.center) center_covariates(data, x_centers, z_centers);

  const FitOptions fopt = fit_options(o);
  const FitResult fit = panelq::fit(data, spec, fopt);

  const auto dir = prepare_out_dir(o);
  write_file(dir / "fit.json", write_fit_json(fit, spec, data, fopt, x_centers, z_centers));

  InferenceComponents comps;
  bool have_comps = true;
  std::string infer_error;
  try {
    comps = estimate_components(fit, data, spec, o.threads);
  } catch (const std::exception& e) {
    have_comps = false;
    infer_error = e.what();
  }
  const auto rows = coefficient_rows(fit, spec, have_comps ? &comps : nullptr, grid, o.apply_bias);
  write_file(dir / "coefficients.csv", coefficients_csv(rows));

  std::ostringstream sum;
  sum << "model: " << data.d_x() << " level-1 and " << data.d_z()
      << " level-2 covariates; " << spec.d_b() << " + " << spec.d_c()
      << " basis functions (" << spec.q1() << " + " << spec.q2() << " active cells)\n";
  sum << "data: " << data.n_clusters() << " clusters, " << data.total_obs() << " observations\n";
  sum << "converged: " << (fit.converged ? "yes" : "NO") << " after " << fit.iterations
      << " iterations (loss1 " << fmt6(fit.loss1) << ", loss2 " << fmt6(fit.loss2) << ")\n";
  if (o.center) sum << "covariates centered at their sample means\n";
  if (o.apply_bias) sum << "estimates include the order-1/T bias correction\n";
  for (const auto& w : spec_warnings) sum << "warning: " << w << "\n";
  for (const auto& w : fit.warnings.messages) sum << "warning: " << w << "\n";
  if (have_comps)
    for (const auto& w : comps.warnings) sum << "warning: " << w << "\n";
  else
    sum << "warning: standard errors unavailable: " << infer_error << "\n";
  sum << "\nlevel coef point estimate se bias\n";
  for (const CoefRow& r : rows)
    sum << r.level << " " << r.coef << " " << fmt6(r.point) << " " << fmt6(r.estimate) << " "
        << fmt6(r.se) << " " << fmt6(r.bias) << "\n";
  write_file(dir / "summary.txt", sum.str());

  std::cout << "wrote " << (dir / "fit.json").string() << ", coefficients.csv, summary.txt\n";
  std::cout << "converged: " << (fit.converged ? "yes" : "no") << " (" << fit.iterations
            << " iterations)\n";
  if (!fit.converged && !o.allow_nonconverged) {
    std::cerr << "fit did not converge within " << o.max_iters
              << " iterations (rerun with --allow-nonconverged to accept)\n";
    return 3;
  }
  return 0;
}

int cmd_gof(const Options& o) {
  check_common(o);
  if (o.data.empty()) throw CliError{2, "--data is required"};
  if (o.spec.empty()) throw CliError{2, "--spec is required"};

  PanelDataset data = read_panel_csv(o.data);
  const ModelSpec spec = parse_model_spec(read_text_file(o.spec), data.x_names, data.z_names);
  std::vector<double> x_centers(data.d_x(), 0.0), z_centers(data.d_z(), 0.0);
  if (o.center) center_covariates(data, x_centers, z_centers);

  const FitOptions fopt = fit_options(o);
  const FitResult fit = panelq::fit(data, spec, fopt);
  if (!fit.converged && !o.allow_nonconverged) {
    std::cerr << "base fit did not converge; the test statistic would be meaningless "
                 "(rerun with --allow-nonconverged to force)\n";
    return 3;
  }

  const GofResult g = gof_test(fit, data, spec, o.gof_R,
                               static_cast<std::uint64_t>(o.seed), fopt, o.threads);

  JsonWriter w;
  w.begin_object();
  w.key("D").value_number(g.D);
  w.key("p_value").value_number(g.p_value);
  w.key("R").value_int(g.R);
  w.key("completed").value_int(g.completed);
  w.key("dropped").value_int(g.dropped);
  w.key("seed").value_int(o.seed);
  w.key("D_star").begin_array();
  for (double d : g.D_star) w.value_number(d);
  w.end_array();
  w.key("warnings").begin_array();
  for (const auto& m : g.warnings) w.value_string(m);
  w.end_array();
  w.end_object();

  const auto dir = prepare_out_dir(o);
  write_file(dir / "gof.json", w.take());

  std::cout << "D = " << fmt6(g.D) << ", p = " << fmt6(g.p_value) << " (" << g.completed
            << " of " << g.R << " replications completed)\n";
  for (const auto& m : g.warnings) std::cerr << "warning: " << m << "\n";
  std::cout << "wrote " << (dir / "gof.json").string() << "\n";
  return 0;
}

int cmd_simulate(const Options& o) {
  const ScenarioSpec sc = resolve_scenario(o);
  const SimulatedData sd = simulate(sc, 0);
  const PanelDataset& data = sd.data;

  std::string csv = "cluster,y";
  for (int j = 1; j < data.d_x(); ++j) csv += ",x_" + data.x_names[j];
  for (int j = 1; j < data.d_z(); ++j) csv += ",z_" + data.z_names[j];
  csv += "\n";
  std::string truth = "cluster,u,v\n";
  long k = 0;
  for (int i = 0; i < data.n_clusters(); ++i) {
    const Cluster& c = data.clusters[i];
    for (long t = 0; t < c.y.size(); ++t, ++k) {
      csv += c.id + "," + json_number_exact(c.y(t));
      for (int j = 1; j < data.d_x(); ++j) csv += "," + json_number_exact(c.x(t, j));
      for (int j = 1; j < data.d_z(); ++j) csv += "," + json_number_exact(c.z(j));
      csv += "\n";
      truth += c.id + "," + json_number_exact(sd.u_true[static_cast<std::size_t>(k)]) + "," +
               json_number_exact(sd.v_true(i)) + "\n";
    }
  }

  const auto dir = prepare_out_dir(o);
  write_file(dir / "panel.csv", csv);
  write_file(dir / "truth.csv", truth);
  write_file(dir / "fit-spec.json", write_model_spec_json(sc.fit_specs[0]));

  std::cout << "simulated " << data.n_clusters() << " clusters, " << data.total_obs()
            << " observations (scenario " << (sc.name.empty() ? o.spec : sc.name) << ", seed "
            << sc.seed << ")\n";
  std::cout << "wrote " << (dir / "panel.csv").string() << ", truth.csv, fit-spec.json\n";
  return 0;
}

int cmd_mc_study(const Options& o) {
  check_common(o);
  const ScenarioSpec sc = resolve_scenario(o);
  FitOptions fopt = fit_options(o);
  fopt.threads = 1;  // parallelism runs over replications
  const McReport rep = run_mc_study(sc, fopt, o.threads);

  JsonWriter w;
  w.begin_object();
  w.key("scenario").value_string(rep.scenario);
  w.key("R").value_int(rep.R);
  w.key("fit_names").begin_array();
  for (const auto& n : rep.fit_names) w.value_string(n);
  w.end_array();
  w.key("fit_failures").begin_array();
  for (int f : rep.fit_failures) w.value_int(f);
  w.end_array();
  w.key("infer_failures").value_int(rep.infer_failures);
  w.key("gof_R").value_int(sc.gof_R);
  w.key("gof_n").value_int(rep.gof_n);
  w.key("gof_levels").begin_array();
  for (double l : rep.gof_levels) w.value_number(l);
  w.end_array();
  w.key("gof_reject_rate").begin_array();
  for (double r : rep.gof_reject_rate) w.value_number(r);
  w.end_array();
  w.key("selection_n").value_int(rep.selection_n);
  w.key("aic_share").begin_array();
  for (double s : rep.aic_share) w.value_number(s);
  w.end_array();
  w.key("bic_share").begin_array();
  for (double s : rep.bic_share) w.value_number(s);
  w.end_array();
  w.key("warnings").begin_array();
  for (const auto& m : rep.warnings) w.value_string(m);
  w.end_array();
  w.end_object();

  const auto dir = prepare_out_dir(o);
  write_file(dir / "mc_report.csv", mc_report_csv(rep));
  write_file(dir / "mc_summary.json", w.take());

  std::cout << "scenario " << rep.scenario << ": " << rep.R << " replications";
  int fails = 0;
  for (int f : rep.fit_failures) fails += f;
  if (fails > 0) std::cout << ", " << fails << " failed fits";
  std::cout << "\n";
  for (const McCoefCell& c : rep.cells)
    std::cout << "level " << c.level << " " << c.coef << "(" << fmt6(c.point)
              << "): mean " << fmt6(c.mean) << ", se " << fmt6(c.emp_se) << ", se-hat "
              << fmt6(c.mean_se_hat) << ", cover95 " << fmt6(c.coverage95) << "\n";
  if (rep.gof_n > 0)
    for (std::size_t l = 0; l < rep.gof_levels.size(); ++l)
      std::cout << "gof reject @" << fmt6(rep.gof_levels[l]) << ": "
                << fmt6(rep.gof_reject_rate[l]) << " (" << rep.gof_n << " runs)\n";
  if (rep.selection_n > 0)
    for (std::size_t s = 0; s < rep.fit_names.size(); ++s)
      std::cout << "selected " << rep.fit_names[s] << ": aic " << fmt6(rep.aic_share[s])
                << ", bic " << fmt6(rep.bic_share[s]) << "\n";
  for (const auto& m : rep.warnings) std::cerr << "warning: " << m << "\n";
  std::cout << "wrote " << (dir / "mc_report.csv").string() << ", mc_summary.json\n";
  return 0;
}

struct PredictRow {
  std::string cluster;
  Eigen::VectorXd x, z;
};

std::vector<PredictRow> read_predict_csv(const std::string& path,
                                         const std::vector<std::string>& x_names,
                                         const std::vector<std::string>& z_names) {
  std::ifstream in(path);
  if (!in) throw CliError{2, "cannot open file: " + path};
  std::string line;
  if (!std::getline(in, line)) throw CliError{2, "prediction CSV is empty: " + path};
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) header.push_back(tok);
  }
  int cluster_col = -1;
  std::vector<int> x_cols(x_names.size(), -1), z_cols(z_names.size(), -1);
  std::vector<bool> used(header.size(), false);
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h == "cluster") {
      cluster_col = static_cast<int>(c);
      used[c] = true;
    } else if (h == "y") {
      used[c] = true;  // ignored: predictions need covariates only
    } else if (h.rfind("x_", 0) == 0 || h.rfind("z_", 0) == 0) {
      const bool is_x = h[0] == 'x';
      const std::string name = h.substr(2);
      const auto& names = is_x ? x_names : z_names;
      auto& cols = is_x ? x_cols : z_cols;
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end())
        throw CliError{2, "column " + h + " does not match any model covariate"};
      cols[static_cast<std::size_t>(it - names.begin())] = static_cast<int>(c);
      used[c] = true;
    } else {
      throw CliError{2, "unrecognized column '" + h + "' (expected cluster, y, x_*, z_*)"};
    }
  }
  for (std::size_t j = 1; j < x_names.size(); ++j)
    if (x_cols[j] < 0) throw CliError{2, "column x_" + x_names[j] + " is missing"};
  for (std::size_t j = 1; j < z_names.size(); ++j)
    if (z_cols[j] < 0) throw CliError{2, "column z_" + z_names[j] + " is missing"};

  std::vector<PredictRow> rows;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) cells.push_back(tok);
    if (cells.size() != header.size())
      throw CliError{2, "line " + std::to_string(lineno) + " has " +
                            std::to_string(cells.size()) + " fields, header has " +
                            std::to_string(header.size())};
    auto num = [&](int col) {
      try {
        return std::stod(cells[static_cast<std::size_t>(col)]);
      } catch (const std::exception&) {
        throw CliError{2, "line " + std::to_string(lineno) + ": '" +
                              cells[static_cast<std::size_t>(col)] + "' is not a number"};
      }
    };
    PredictRow r;
    r.cluster = cluster_col >= 0 ? cells[static_cast<std::size_t>(cluster_col)]
                                 : std::to_string(rows.size());
    r.x = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(x_names.size()));
    r.z = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(z_names.size()));
    for (std::size_t j = 1; j < x_names.size(); ++j) r.x(static_cast<Eigen::Index>(j)) = num(x_cols[j]);
    for (std::size_t j = 1; j < z_names.size(); ++j) r.z(static_cast<Eigen::Index>(j)) = num(z_cols[j]);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw CliError{2, "prediction CSV has no data rows: " + path};
  return rows;
}

int cmd_predict(const Options& o) {
  const std::vector<double> grid = parse_grid(o.grid);
  if (o.data.empty()) throw CliError{2, "--data is required"};
  if (o.spec.empty()) throw CliError{2, "--spec is required (path to a fit.json)"};

  const LoadedFit lf = read_fit_json(o.spec);
  auto rows = read_predict_csv(o.data, lf.spec.x_names, lf.spec.z_names);
  for (auto& r : rows) {
    for (std::size_t j = 0; j < lf.x_centers.size(); ++j)
      r.x(static_cast<Eigen::Index>(j)) -= lf.x_centers[j];
    for (std::size_t j = 0; j < lf.z_centers.size(); ++j)
      r.z(static_cast<Eigen::Index>(j)) -= lf.z_centers[j];
    // the intercept is never centered
    r.x(0) = 1.0;
    r.z(0) = 1.0;
  }

  std::string csv = "row,cluster,point,level1,level2\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (double p : grid) {
      const double q1 = quantile_level1(lf.spec, lf.theta, rows[i].x, p);
      const double q2 = quantile_level2(lf.spec, lf.phi, rows[i].z, p);
      csv += std::to_string(i) + "," + rows[i].cluster + "," + fmt6(p) + "," + fmt6(q1) +
             "," + fmt6(q2) + "\n";
    }

  const auto dir = prepare_out_dir(o);
  write_file(dir / "predictions.csv", csv);
  std::cout << "wrote " << (dir / "predictions.csv").string() << " (" << rows.size()
            << " rows x " << grid.size() << " points)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-level quantile regression coefficient models for panel data"};
  app.require_subcommand(1);
  Options o;

  auto add_fit_flags = [&](CLI::App* s) {
    s->add_option("--data", o.data, "panel CSV (cluster, y, x_*, z_* columns)");
    s->add_option("--spec", o.spec, "model spec JSON");
    s->add_option("--out", o.out, "output directory (default .)");
    s->add_option("--tol", o.tol, "convergence tolerance");
    s->add_option("--max-iters", o.max_iters, "outer iteration cap");
    s->add_option("--seed", o.seed, "RNG seed");
    s->add_option("--threads", o.threads, "worker threads");
    s->add_flag("--center", o.center, "center covariates at their sample means");
    s->add_flag("--allow-nonconverged", o.allow_nonconverged,
                "exit 0 even when the fit does not converge");
  };

  CLI::App* fit = app.add_subcommand("fit", "fit a model to panel data");
  add_fit_flags(fit);
  fit->add_option("--grid", o.grid, "report quantile levels, comma separated");
  fit->add_flag("--apply-bias-correction", o.apply_bias,
                "add the order-1/T correction to reported estimates");

  CLI::App* gof = app.add_subcommand("gof", "goodness-of-fit test via parametric bootstrap");
  add_fit_flags(gof);
  gof->add_option("--gof-R", o.gof_R, "bootstrap replications (default 100)");

  CLI::App* sim = app.add_subcommand("simulate", "draw one synthetic panel from a scenario");
  sim->add_option("--spec", o.spec, "builtin scenario name or scenario JSON path");
  sim->add_option("--out", o.out, "output directory");
  sim->add_option("--seed", o.seed, "override the scenario seed");

  CLI::App* mc = app.add_subcommand("mc-study", "Monte Carlo study over a scenario");
  mc->add_option("--spec", o.spec, "builtin scenario name or scenario JSON path");
  mc->add_option("--out", o.out, "output directory");
  mc->add_option("--tol", o.tol, "per-fit convergence tolerance");
  mc->add_option("--max-iters", o.max_iters, "per-fit iteration cap");
  mc->add_option("--gof-R", o.gof_R, "override the scenario's bootstrap replications");
  mc->add_option("--seed", o.seed, "override the scenario seed");
  mc->add_option("--threads", o.threads, "worker threads");

  CLI::App* pred = app.add_subcommand("predict", "evaluate fitted quantiles at new covariates");
  pred->add_option("--data", o.data, "covariate CSV (cluster, x_*, z_* columns; y ignored)");
  pred->add_option("--spec", o.spec, "fit.json produced by the fit command");
  pred->add_option("--out", o.out, "output directory");
  pred->add_option("--grid", o.grid, "quantile levels, comma separated");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  o.seed_given = (sim->count("--seed") > 0) || (mc->count("--seed") > 0);
  o.gof_R_given = mc->count("--gof-R") > 0;

  try {
    if (fit->parsed()) return cmd_fit(o);
    if (gof->parsed()) return cmd_gof(o);
    if (sim->parsed()) return cmd_simulate(o);
    if (mc->parsed()) return cmd_mc_study(o);
    if (pred->parsed()) return cmd_predict(o);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const SpecError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const SimError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const JsonIoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    // estimator, inference, and diagnostics failures are numeric conditions
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
