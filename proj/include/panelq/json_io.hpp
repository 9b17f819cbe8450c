#pragma once

#include "panelq/estimator.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace panelq {

struct JsonIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest decimal string that parses back to exactly v, capped at 12
// significant digits; NaN and infinities render as null.
std::string json_number(double v);
// Same idea without the cap: always round-trips exactly (up to 17 digits).
std::string json_number_exact(double v);

// Streaming JSON writer with deterministic layout: object members one per
// line, scalar array elements inline, composite elements on their own lines.
// Key order is insertion order, so a fixed emission sequence gives
// byte-identical files for identical inputs.
class JsonWriter {
 public:
  JsonWriter& begin_object();
  JsonWriter& end_object();
  JsonWriter& begin_array();
  JsonWriter& end_array();
  JsonWriter& key(const std::string& k);
  JsonWriter& value_number(double v);
  JsonWriter& value_number_exact(double v);
  JsonWriter& value_int(long long v);
  JsonWriter& value_bool(bool v);
  JsonWriter& value_string(const std::string& s);
  JsonWriter& value_null();
  std::string take();

 private:
  struct Frame {
    char kind;       // 'o' or 'a'
    bool empty = true;
    bool composite = false;  // array holds objects/arrays -> one per line
  };
  void separate(bool composite_child);
  void raw_value(const std::string& text);
  void indent(std::size_t depth);

  std::string out_;
  std::vector<Frame> stack_;
  bool pending_key_ = false;
};

// {"level1": {covariate: [expr, ...]}, "level2": {...}} — the model-spec input
// format, recovered from the pooled bases and masks.
std::string write_model_spec_json(const ModelSpec& spec);

// Serializes theta-hat, phi-hat, alpha-hat, the model definition, losses, the
// convergence trace, and warnings with a fixed key order. Thread count is
// deliberately absent so reruns with different --threads stay byte-identical.
std::string write_fit_json(const FitResult& fit, const ModelSpec& spec,
                           const PanelDataset& data, const FitOptions& opt,
                           const std::vector<double>& x_centers,
                           const std::vector<double>& z_centers);

struct LoadedFit {
  ModelSpec spec;
  CoefMatrix theta, phi;
  Eigen::VectorXd alpha;
  std::vector<std::string> cluster_ids;
  std::vector<double> x_centers, z_centers;  // subtracted from covariates at fit time
  double loss1 = 0.0, loss2 = 0.0;
  bool converged = false;
};

// Parses a file produced by write_fit_json; shape mismatches and missing
// fields raise JsonIoError.
LoadedFit read_fit_json(const std::string& path);

}  // namespace panelq
