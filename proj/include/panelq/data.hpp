#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace panelq {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using RowMajorXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Cluster {
  std::string id;
  Eigen::VectorXd y;  // T_i
  RowMajorXd x;       // T_i x d_x (first column is the intercept)
  Eigen::VectorXd z;  // d_z (first entry is the intercept)
};

struct PanelDataset {
  std::vector<Cluster> clusters;
  std::vector<std::string> x_names;  // "const" first
  std::vector<std::string> z_names;  // "const" first
  std::vector<std::uint8_t> x_time_invariant;
  // cluster indices sorted by id; cross-cluster float reductions follow this
  // order so results do not depend on input row order
  std::vector<int> canonical_order;

  int n_clusters() const { return static_cast<int>(clusters.size()); }
  int d_x() const { return static_cast<int>(x_names.size()); }
  int d_z() const { return static_cast<int>(z_names.size()); }
  long total_obs() const {
    long n = 0;
    for (const auto& c : clusters) n += c.y.size();
    return n;
  }
};

// Column-oriented raw rows prior to grouping/validation.
struct RawRows {
  std::vector<std::string> cluster;          // per row
  std::vector<double> y;                     // per row
  std::vector<std::string> x_names;          // without intercept
  std::vector<std::vector<double>> x_cols;   // per column, per row
  std::vector<std::string> z_names;          // without intercept
  std::vector<std::vector<double>> z_cols;
};

// Groups rows by cluster (order of first appearance), prepends intercept columns,
// and checks: T_i >= 2, finite values, z constant within each cluster.
PanelDataset validate_dataset(const RawRows& rows);

// CSV with header: `cluster`, `y`, level-1 covariates prefixed `x_`,
// level-2 covariates prefixed `z_`. The prefix marks the level and is
// stripped from the covariate name; unprefixed columns are ignored.
PanelDataset read_panel_csv(const std::string& path);

}  // namespace panelq
