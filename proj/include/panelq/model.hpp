#pragma once

#include "panelq/basis.hpp"
#include "panelq/data.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace panelq {

struct SpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Coefficient matrix with structural zeros: values are exactly 0 wherever mask is 0.
struct CoefMatrix {
  Eigen::MatrixXd values;
  MaskMatrix mask;

  static CoefMatrix zeros(const MaskMatrix& mask) {
    return {Eigen::MatrixXd::Zero(mask.rows(), mask.cols()), mask};
  }
  void enforce_mask() {
    for (Eigen::Index j = 0; j < values.rows(); ++j)
      for (Eigen::Index k = 0; k < values.cols(); ++k)
        if (!mask(j, k)) values(j, k) = 0.0;
  }
};

struct Cell {
  int row;  // covariate index
  int col;  // basis element index
};

// Two-level model specification: pooled basis per level plus per-covariate
// 0/1 masks selecting which basis elements each covariate loads on.
struct ModelSpec {
  BasisSet basis1;  // b(u)
  BasisSet basis2;  // c(v)
  MaskMatrix mask1;  // d_x x d_b
  MaskMatrix mask2;  // d_z x d_c
  std::vector<std::string> x_names, z_names;

  // active cells in vec order (basis-element major, covariate minor)
  std::vector<Cell> active1, active2;

  int d_x() const { return static_cast<int>(mask1.rows()); }
  int d_z() const { return static_cast<int>(mask2.rows()); }
  int d_b() const { return static_cast<int>(mask1.cols()); }
  int d_c() const { return static_cast<int>(mask2.cols()); }
  int q1() const { return static_cast<int>(active1.size()); }
  int q2() const { return static_cast<int>(active2.size()); }

  Eigen::VectorXd pack1(const CoefMatrix& theta) const;
  Eigen::VectorXd pack2(const CoefMatrix& phi) const;
  CoefMatrix unpack1(const Eigen::VectorXd& par) const;
  CoefMatrix unpack2(const Eigen::VectorXd& par) const;
};

// Builds a spec from per-covariate expression lists (parallel to x_names/z_names).
// Identical expressions are pooled into one basis element shared via the masks.
ModelSpec make_model_spec(std::vector<std::string> x_names,
                          std::vector<std::string> z_names,
                          const std::vector<std::vector<std::string>>& level1,
                          const std::vector<std::vector<std::string>>& level2);

// JSON form: {"level1": {covariate: [expr, ...], ...}, "level2": {...}}.
// Covariates present in the data but absent from the JSON get all-zero mask
// rows; a warning is appended for each. Unknown covariate keys are errors.
ModelSpec parse_model_spec(const std::string& json_text,
                           const std::vector<std::string>& x_names,
                           const std::vector<std::string>& z_names,
                           std::vector<std::string>* warnings = nullptr);

// x' theta b(u) and z' phi c(v)
double quantile_level1(const ModelSpec& spec, const CoefMatrix& theta,
                       const Eigen::VectorXd& x, double u);
double quantile_level2(const ModelSpec& spec, const CoefMatrix& phi,
                       const Eigen::VectorXd& z, double v);

}  // namespace panelq
