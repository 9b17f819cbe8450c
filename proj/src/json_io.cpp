#include "panelq/json_io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace panelq {

namespace {

std::string shortest_roundtrip(double v, int max_digits) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  for (int p = 1; p < max_digits; ++p) {
    std::snprintf(buf, sizeof buf, "%.*g", p, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  std::snprintf(buf, sizeof buf, "%.*g", max_digits, v);
  return buf;
}

std::string escape_string(const std::string& s) {
  std::string out = "\"";
  for (unsigned char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  out += '"';
  return out;
}

}  // namespace

std::string json_number(double v) { return shortest_roundtrip(v, 12); }
std::string json_number_exact(double v) { return shortest_roundtrip(v, 17); }

void JsonWriter::indent(std::size_t depth) { out_.append(2 * depth, ' '); }

void JsonWriter::separate(bool composite_child) {
  if (pending_key_) {
    pending_key_ = false;
    return;
  }
  if (stack_.empty()) return;
  Frame& f = stack_.back();
  if (f.kind == 'o') return;  // objects separate at key()
  if (composite_child) f.composite = true;
  if (f.composite) {
    out_ += f.empty ? "\n" : ",\n";
    indent(stack_.size());
  } else if (!f.empty) {
    out_ += ", ";
  }
  f.empty = false;
}

JsonWriter& JsonWriter::begin_object() {
  separate(true);
  out_ += '{';
  stack_.push_back({'o'});
  return *this;
}

JsonWriter& JsonWriter::end_object() {
  Frame f = stack_.back();
  stack_.pop_back();
  if (!f.empty) {
    out_ += '\n';
    indent(stack_.size());
  }
  out_ += '}';
  return *this;
}

JsonWriter& JsonWriter::begin_array() {
  separate(true);
  out_ += '[';
  stack_.push_back({'a'});
  return *this;
}

JsonWriter& JsonWriter::end_array() {
  Frame f = stack_.back();
  stack_.pop_back();
  if (f.composite) {
    out_ += '\n';
    indent(stack_.size());
  }
  out_ += ']';
  return *this;
}

JsonWriter& JsonWriter::key(const std::string& k) {
  Frame& f = stack_.back();
  out_ += f.empty ? "\n" : ",\n";
  f.empty = false;
  indent(stack_.size());
  out_ += escape_string(k);
  out_ += ": ";
  pending_key_ = true;
  return *this;
}

void JsonWriter::raw_value(const std::string& text) {
  separate(false);
  out_ += text;
}

JsonWriter& JsonWriter::value_number(double v) {
  raw_value(json_number(v));
  return *this;
}

JsonWriter& JsonWriter::value_number_exact(double v) {
  raw_value(json_number_exact(v));
  return *this;
}

JsonWriter& JsonWriter::value_int(long long v) {
  raw_value(std::to_string(v));
  return *this;
}

JsonWriter& JsonWriter::value_bool(bool v) {
  raw_value(v ? "true" : "false");
  return *this;
}

JsonWriter& JsonWriter::value_string(const std::string& s) {
  raw_value(escape_string(s));
  return *this;
}

JsonWriter& JsonWriter::value_null() {
  raw_value("null");
  return *this;
}

std::string JsonWriter::take() {
  out_ += '\n';
  return std::move(out_);
}

namespace {

// per-covariate expression lists recovered from the pooled basis + mask
void write_level(JsonWriter& w, const std::vector<std::string>& names,
                 const BasisSet& basis, const MaskMatrix& mask) {
  w.begin_object();
  for (std::size_t j = 0; j < names.size(); ++j) {
    w.key(names[j]).begin_array();
    for (int k = 0; k < mask.cols(); ++k)
      if (mask(static_cast<int>(j), k)) w.value_string(basis.elements()[k].source);
    w.end_array();
  }
  w.end_object();
}

void write_matrix(JsonWriter& w, const Eigen::MatrixXd& m) {
  w.begin_array();
  for (Eigen::Index j = 0; j < m.rows(); ++j) {
    w.begin_array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) w.value_number(m(j, k));
    w.end_array();
  }
  w.end_array();
}

void write_centers(JsonWriter& w, const std::vector<std::string>& names,
                   const std::vector<double>& centers) {
  w.begin_object();
  for (std::size_t j = 0; j < names.size(); ++j)
    w.key(names[j]).value_number_exact(j < centers.size() ? centers[j] : 0.0);
  w.end_object();
}

}  // namespace

std::string write_model_spec_json(const ModelSpec& spec) {
  JsonWriter w;
  w.begin_object();
  w.key("level1");
  write_level(w, spec.x_names, spec.basis1, spec.mask1);
  w.key("level2");
  write_level(w, spec.z_names, spec.basis2, spec.mask2);
  w.end_object();
  return w.take();
}

std::string write_fit_json(const FitResult& fit, const ModelSpec& spec,
                           const PanelDataset& data, const FitOptions& opt,
                           const std::vector<double>& x_centers,
                           const std::vector<double>& z_centers) {
  JsonWriter w;
  w.begin_object();
  w.key("format").value_string("panelq-fit-v1");

  w.key("model").begin_object();
  {
    w.key("x_names").begin_array();
    for (const auto& n : spec.x_names) w.value_string(n);
    w.end_array();
    w.key("z_names").begin_array();
    for (const auto& n : spec.z_names) w.value_string(n);
    w.end_array();
    w.key("level1");
    write_level(w, spec.x_names, spec.basis1, spec.mask1);
    w.key("level2");
    write_level(w, spec.z_names, spec.basis2, spec.mask2);
  }
  w.end_object();

  w.key("theta");
  write_matrix(w, fit.theta.values);
  w.key("phi");
  write_matrix(w, fit.phi.values);

  w.key("cluster_ids").begin_array();
  for (const auto& c : data.clusters) w.value_string(c.id);
  w.end_array();
  w.key("alpha").begin_array();
  for (Eigen::Index i = 0; i < fit.alpha.size(); ++i) w.value_number(fit.alpha(i));
  w.end_array();

  w.key("centers").begin_object();
  w.key("x");
  write_centers(w, spec.x_names, x_centers);
  w.key("z");
  write_centers(w, spec.z_names, z_centers);
  w.end_object();

  w.key("loss1").value_number(fit.loss1);
  w.key("loss2").value_number(fit.loss2);
  w.key("converged").value_bool(fit.converged);
  w.key("iterations").value_int(fit.iterations);
  w.key("grad_max").begin_object();
  w.key("level1").value_number(fit.grad_theta_max);
  w.key("level2").value_number(fit.grad_phi_max);
  w.key("effects").value_number(fit.grad_alpha_max);
  w.end_object();

  w.key("clamped").begin_object();
  w.key("level1_obs").value_int(fit.warnings.n_clamped1);
  w.key("level2_clusters").value_int(fit.warnings.n_clamped2);
  w.end_object();
  w.key("monotone").begin_object();
  w.key("level1").value_bool(fit.warnings.monotone1);
  w.key("level2").value_bool(fit.warnings.monotone2);
  w.end_object();

  w.key("n_clusters").value_int(data.n_clusters());
  w.key("n_obs").value_int(data.total_obs());

  w.key("options").begin_object();
  w.key("tol").value_number_exact(opt.tol);
  w.key("max_iters").value_int(opt.max_outer_iters);
  w.key("newton_max_iters").value_int(opt.newton_max_iters);
  w.key("seed").value_int(static_cast<long long>(opt.seed));
  w.end_object();

  w.key("trace").begin_array();
  for (const IterTrace& t : fit.trace) {
    w.begin_object();
    w.key("loss1").value_number(t.loss1);
    w.key("loss2").value_number(t.loss2);
    w.key("max_param_change").value_number(t.max_param_change);
    w.end_object();
  }
  w.end_array();

  w.key("warnings").begin_array();
  for (const auto& m : fit.warnings.messages) w.value_string(m);
  w.end_array();

  w.end_object();
  return w.take();
}

LoadedFit read_fit_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw JsonIoError("cannot open fit file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw JsonIoError("fit file is not valid JSON: " + std::string(e.what()));
  }

  try {
    LoadedFit out;
    const auto& model = j.at("model");
    const auto x_names = model.at("x_names").get<std::vector<std::string>>();
    const auto z_names = model.at("z_names").get<std::vector<std::string>>();
    out.spec = parse_model_spec(model.dump(), x_names, z_names);

    auto read_matrix = [&](const char* key, int rows, int cols) {
      const auto& arr = j.at(key);
      if (static_cast<int>(arr.size()) != rows)
        throw JsonIoError(std::string(key) + " row count does not match the model");
      Eigen::MatrixXd m(rows, cols);
      for (int r = 0; r < rows; ++r) {
        if (static_cast<int>(arr[r].size()) != cols)
          throw JsonIoError(std::string(key) + " column count does not match the model");
        for (int c = 0; c < cols; ++c)
          m(r, c) = arr[r][c].is_null() ? std::nan("") : arr[r][c].get<double>();
      }
      return m;
    };
    out.theta = {read_matrix("theta", out.spec.d_x(), out.spec.d_b()), out.spec.mask1};
    out.phi = {read_matrix("phi", out.spec.d_z(), out.spec.d_c()), out.spec.mask2};
    out.theta.enforce_mask();
    out.phi.enforce_mask();

    out.cluster_ids = j.at("cluster_ids").get<std::vector<std::string>>();
    const auto alpha = j.at("alpha").get<std::vector<double>>();
    if (alpha.size() != out.cluster_ids.size())
      throw JsonIoError("alpha and cluster_ids lengths disagree");
    out.alpha = Eigen::Map<const Eigen::VectorXd>(alpha.data(),
                                                  static_cast<Eigen::Index>(alpha.size()));

    out.x_centers.assign(x_names.size(), 0.0);
    out.z_centers.assign(z_names.size(), 0.0);
    if (j.contains("centers")) {
      const auto& c = j.at("centers");
      for (std::size_t k = 0; k < x_names.size(); ++k)
        if (c.at("x").contains(x_names[k])) out.x_centers[k] = c.at("x").at(x_names[k]);
      for (std::size_t k = 0; k < z_names.size(); ++k)
        if (c.at("z").contains(z_names[k])) out.z_centers[k] = c.at("z").at(z_names[k]);
    }

    out.loss1 = j.at("loss1").is_null() ? std::nan("") : j.at("loss1").get<double>();
    out.loss2 = j.at("loss2").is_null() ? std::nan("") : j.at("loss2").get<double>();
    out.converged = j.at("converged").get<bool>();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw JsonIoError("fit file is missing or mistypes a field: " + std::string(e.what()));
  }
}

}  // namespace panelq
