#include "panelq/diagnostics.hpp"
#include "panelq/estimator.hpp"
#include "panelq/inference.hpp"
#include "panelq/json_io.hpp"
#include "panelq/simulator.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cctype>

namespace py = pybind11;
using namespace panelq;

namespace {

// fit result bundled with what inference and refitting need
struct PyFit {
  PanelDataset data;
  ModelSpec spec;
  FitOptions opt;
  FitResult fit;
};

ScenarioSpec resolve_scenario(const std::string& text) {
  std::size_t i = 0;
  while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
  if (i < text.size() && text[i] == '{') return parse_scenario_json(text);
  const auto builtins = builtin_scenarios();
  const auto it = builtins.find(text);
  if (it == builtins.end()) {
    std::string names;
    for (const auto& [k, v] : builtins) names += (names.empty() ? "" : ", ") + k;
    throw SimError("'" + text + "' is neither a builtin scenario (" + names +
                   ") nor scenario JSON");
  }
  return it->second;
}

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::list coefficient_list(const PyFit& pf, const std::vector<double>& points, bool apply_bias) {
  const InferenceComponents comps = estimate_components(pf.fit, pf.data, pf.spec, pf.opt.threads);
  py::list rows;
  auto push = [&](int level, const std::string& name, double point, const CoefEstimate& e,
                  int j) {
    py::dict d;
    d["level"] = level;
    d["coef"] = name;
    d["point"] = point;
    d["estimate"] = e.value(j) + (apply_bias ? e.bias(j) : 0.0);
    d["se"] = e.se(j);
    d["bias"] = e.bias(j);
    rows.append(std::move(d));
  };
  for (double p : points) {
    const CoefEstimate e1 = coef_level1_at(pf.fit, pf.spec, comps, p);
    for (int j = 0; j < pf.spec.d_x(); ++j) push(1, pf.spec.x_names[j], p, e1, j);
  }
  for (double p : points) {
    const CoefEstimate e2 = coef_level2_at(pf.fit, pf.spec, comps, p);
    for (int j = 0; j < pf.spec.d_z(); ++j) push(2, pf.spec.z_names[j], p, e2, j);
  }
  return rows;
}

}  // namespace

PYBIND11_MODULE(_panelq, m) {
  m.doc() = "two-level quantile regression coefficient models for panel data";

  py::register_exception<DataError>(m, "DataError");
  py::register_exception<SpecError>(m, "SpecError");
  py::register_exception<EstimError>(m, "EstimError");
  py::register_exception<InferError>(m, "InferError");
  py::register_exception<DiagError>(m, "DiagError");
  py::register_exception<SimError>(m, "SimError");
  py::register_exception<JsonIoError>(m, "JsonIoError");

  py::class_<PanelDataset>(m, "Dataset")
      .def_property_readonly("n_clusters", &PanelDataset::n_clusters)
      .def_property_readonly("n_obs", &PanelDataset::total_obs)
      .def_property_readonly("x_names",
                             [](const PanelDataset& d) { return d.x_names; })
      .def_property_readonly("z_names",
                             [](const PanelDataset& d) { return d.z_names; })
      .def("cluster_ids",
           [](const PanelDataset& d) {
             std::vector<std::string> ids;
             for (const auto& c : d.clusters) ids.push_back(c.id);
             return ids;
           })
      .def("y", [](const PanelDataset& d, int i) { return d.clusters.at(i).y; },
           py::arg("cluster"))
      .def("x",
           [](const PanelDataset& d, int i) {
             return Eigen::MatrixXd(d.clusters.at(i).x);
           },
           py::arg("cluster"))
      .def("z", [](const PanelDataset& d, int i) { return d.clusters.at(i).z; },
           py::arg("cluster"))
      .def("__repr__", [](const PanelDataset& d) {
        return "<panelq.Dataset: " + std::to_string(d.n_clusters()) + " clusters, " +
               std::to_string(d.total_obs()) + " observations>";
      });

  py::class_<PyFit>(m, "Fit")
      .def_property_readonly("theta", [](const PyFit& f) { return f.fit.theta.values; })
      .def_property_readonly("phi", [](const PyFit& f) { return f.fit.phi.values; })
      .def_property_readonly("alpha", [](const PyFit& f) { return f.fit.alpha; })
      .def_property_readonly("loss1", [](const PyFit& f) { return f.fit.loss1; })
      .def_property_readonly("loss2", [](const PyFit& f) { return f.fit.loss2; })
      .def_property_readonly("converged", [](const PyFit& f) { return f.fit.converged; })
      .def_property_readonly("iterations", [](const PyFit& f) { return f.fit.iterations; })
      .def_property_readonly("warnings",
                             [](const PyFit& f) { return f.fit.warnings.messages; })
      .def_property_readonly("u_hat", [](const PyFit& f) { return to_array(f.fit.cdf.u_hat); })
      .def_property_readonly("v_hat", [](const PyFit& f) { return to_array(f.fit.cdf.v_hat); })
      .def("coefficients", &coefficient_list, py::arg("points"),
           py::arg("apply_bias") = false,
           "per-covariate estimates, delta-method standard errors, and order-1/T bias "
           "corrections at the given quantile levels")
      .def(
          "gof",
          [](const PyFit& f, int R, std::uint64_t seed, int threads) {
            const GofResult g = gof_test(f.fit, f.data, f.spec, R, seed, f.opt, threads);
            py::dict d;
            d["D"] = g.D;
            d["p_value"] = g.p_value;
            d["R"] = g.R;
            d["completed"] = g.completed;
            d["dropped"] = g.dropped;
            d["D_star"] = to_array(g.D_star);
            d["warnings"] = g.warnings;
            return d;
          },
          py::arg("R") = 100, py::arg("seed") = 1, py::arg("threads") = 1,
          "parametric-bootstrap Kolmogorov-Smirnov test of the fitted model")
      .def("information_criteria",
           [](const PyFit& f) {
             const InfoCriteria ic = information_criteria(f.fit);
             py::dict d;
             d["aic1"] = ic.aic1;
             d["bic1"] = ic.bic1;
             d["aic2"] = ic.aic2;
             d["bic2"] = ic.bic2;
             d["q1"] = ic.q1;
             d["q2"] = ic.q2;
             d["defined1"] = ic.defined1;
             d["defined2"] = ic.defined2;
             return d;
           })
      .def(
          "crossing",
          [](const PyFit& f, const std::vector<double>& grid) {
            const CrossingReport r = crossing_check(f.fit, f.data, f.spec, grid);
            py::dict d;
            d["checked1"] = r.checked1;
            d["violations1"] = r.violations1;
            d["checked2"] = r.checked2;
            d["violations2"] = r.violations2;
            return d;
          },
          py::arg("grid"), "counts quantile-crossing sites on the given interior grid")
      .def("to_json",
           [](const PyFit& f) {
             return write_fit_json(f.fit, f.spec, f.data, f.opt,
                                   std::vector<double>(f.data.d_x(), 0.0),
                                   std::vector<double>(f.data.d_z(), 0.0));
           })
      .def("__repr__", [](const PyFit& f) {
        return std::string("<panelq.Fit: ") + (f.fit.converged ? "converged" : "NOT converged") +
               " after " + std::to_string(f.fit.iterations) + " iterations>";
      });

  m.def("read_csv", &read_panel_csv, py::arg("path"),
        "panel CSV with header columns: cluster, y, x_* (level 1), z_* (level 2)");

  m.def(
      "from_arrays",
      [](const std::vector<std::string>& cluster, const std::vector<double>& y,
         const py::dict& x, const py::dict& z) {
        RawRows rows;
        rows.cluster = cluster;
        rows.y = y;
        for (const auto& item : x) {
          rows.x_names.push_back(py::cast<std::string>(item.first));
          rows.x_cols.push_back(py::cast<std::vector<double>>(item.second));
        }
        for (const auto& item : z) {
          rows.z_names.push_back(py::cast<std::string>(item.first));
          rows.z_cols.push_back(py::cast<std::vector<double>>(item.second));
        }
        return validate_dataset(rows);
      },
      py::arg("cluster"), py::arg("y"), py::arg("x"), py::arg("z"),
      "builds a dataset from parallel per-row columns; dict order fixes covariate order");

  m.def(
      "fit",
      [](const PanelDataset& data, const std::string& spec_json, double tol, int max_iters,
         std::uint64_t seed, int threads) {
        PyFit pf;
        pf.data = data;
        pf.spec = parse_model_spec(spec_json, data.x_names, data.z_names);
        pf.opt.tol = tol;
        pf.opt.max_outer_iters = max_iters;
        pf.opt.seed = seed;
        pf.opt.threads = threads;
        pf.fit = fit(data, pf.spec, pf.opt);
        return pf;
      },
      py::arg("data"), py::arg("spec"), py::arg("tol") = 1e-5, py::arg("max_iters") = 200,
      py::arg("seed") = 0, py::arg("threads") = 1,
      "fits the two-level model; spec is the {'level1': ..., 'level2': ...} JSON text");

  m.def(
      "simulate",
      [](const std::string& scenario, int replication) {
        const SimulatedData sd = simulate(resolve_scenario(scenario), replication);
        return py::make_tuple(sd.data, to_array(sd.u_true), sd.v_true);
      },
      py::arg("scenario"), py::arg("replication") = 0,
      "draws (dataset, u_true, v_true) from a builtin scenario name or scenario JSON text");

  m.def(
      "mc_study",
      [](const std::string& scenario, double tol, int max_iters, int threads) {
        FitOptions opt;
        opt.tol = tol;
        opt.max_outer_iters = max_iters;
        const McReport rep = run_mc_study(resolve_scenario(scenario), opt, threads);
        py::dict d;
        d["scenario"] = rep.scenario;
        d["R"] = rep.R;
        d["fit_names"] = rep.fit_names;
        d["fit_failures"] = rep.fit_failures;
        d["infer_failures"] = rep.infer_failures;
        d["gof_levels"] = to_array(rep.gof_levels);
        d["gof_reject_rate"] = to_array(rep.gof_reject_rate);
        d["gof_n"] = rep.gof_n;
        d["aic_share"] = to_array(rep.aic_share);
        d["bic_share"] = to_array(rep.bic_share);
        d["selection_n"] = rep.selection_n;
        d["warnings"] = rep.warnings;
        py::list cells;
        for (const McCoefCell& c : rep.cells) {
          py::dict cd;
          cd["level"] = c.level;
          cd["coef"] = c.coef;
          cd["point"] = c.point;
          cd["truth"] = c.truth;
          cd["mean"] = c.mean;
          cd["emp_se"] = c.emp_se;
          cd["mean_se_hat"] = c.mean_se_hat;
          cd["coverage95"] = c.coverage95;
          cd["n"] = c.n;
          cells.append(std::move(cd));
        }
        d["cells"] = std::move(cells);
        d["csv"] = mc_report_csv(rep);
        return d;
      },
      py::arg("scenario"), py::arg("tol") = 1e-5, py::arg("max_iters") = 200,
      py::arg("threads") = 1,
      "runs a Monte Carlo study; scenario is a builtin name or scenario JSON text");

  m.def("builtin_scenarios", []() {
    std::vector<std::string> names;
    for (const auto& [k, v] : builtin_scenarios()) names.push_back(k);
    return names;
  });
}
