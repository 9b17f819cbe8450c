#include "panelq/inference.hpp"

#include "panelq/parallel.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <cstddef>
#include <sstream>

namespace panelq {

Eigen::VectorXd vec(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

Eigen::MatrixXd unvec(const Eigen::VectorXd& v, int rows, int cols) {
  if (v.size() != static_cast<Eigen::Index>(rows) * cols)
    throw InferError("unvec: vector length does not match the requested shape");
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, cols);
}

namespace {

// out[a] = basis_vals[cell.col] * cov_vals[cell.row] over the active cells
void kron_cells(const std::vector<Cell>& cells, const double* basis_vals,
                const double* cov_vals, Eigen::VectorXd& out) {
  for (std::size_t a = 0; a < cells.size(); ++a)
    out[static_cast<Eigen::Index>(a)] = basis_vals[cells[a].col] * cov_vals[cells[a].row];
}

struct ClusterComp {
  Eigen::MatrixXd H1;   // q1 x q1 curvature block (own-cluster correction applied)
  Eigen::VectorXd m;    // q1 density-weighted regressor sum
  Eigen::VectorXd b1;   // q1
  Eigen::MatrixXd O1;   // q1 x q1
  Eigen::MatrixXd H2;   // q2 x q2, no correction
  Eigen::MatrixXd H2i;  // q2 x q2, corrected per-cluster block
  Eigen::MatrixXd X21;  // q2 x q1 cross term
  Eigen::VectorXd b2;   // q2
  Eigen::MatrixXd O2;   // q2 x q2
  double sigma2 = 0.0;
  double beta = 0.0;
  long floored1 = 0;
  int first_floored_t = -1;
  bool floored2 = false;
};

[[noreturn]] void throw_nonfinite(const char* what, const std::string& cluster_id, long t) {
  std::ostringstream os;
  os << what << " is not finite at cluster '" << cluster_id << "'";
  if (t >= 0) os << ", observation " << t;
  throw InferError(os.str());
}

ClusterComp cluster_components(const Cluster& c, const ModelSpec& spec,
                               const CoefMatrix& theta, const CoefMatrix& phi,
                               const CdfValues& cdf, long offset, int cluster_index) {
  const int d_b = spec.d_b();
  const int d_c = spec.d_c();
  const int q1 = spec.q1();
  const int q2 = spec.q2();
  const long T = c.y.size();

  ClusterComp out;
  out.H1.setZero(q1, q1);
  out.m.setZero(q1);
  out.b1.setZero(q1);
  out.O1.setZero(q1, q1);

  RowMajorXd rows = c.x * theta.values;                         // T x d_b
  Eigen::VectorXd coef2 = phi.values.transpose() * c.z;         // d_c

  // Per-observation basis values cached for the second pass.
  std::vector<double> bu(T * d_b), Bu(T * d_b), bp(T * d_b);
  std::vector<double> dens(T), curv(T), du(T);
  std::vector<double> bpp(d_b);

  double sum_inv_dens = 0.0;
  for (long t = 0; t < T; ++t) {
    const double u = cdf.u_hat[offset + t];
    double* bu_t = &bu[t * d_b];
    double* Bu_t = &Bu[t * d_b];
    double* bp_t = &bp[t * d_b];
    spec.basis1.eval_into(u, bu_t);
    spec.basis1.antideriv_into(u, Bu_t);
    spec.basis1.deriv1_into(u, bp_t);
    spec.basis1.deriv2_into(u, bpp.data());

    double d0 = 0.0, c2 = 0.0;
    for (int k = 0; k < d_b; ++k) {
      d0 += rows(t, k) * bp_t[k];
      c2 += rows(t, k) * bpp[k];
    }
    if (!std::isfinite(d0)) throw_nonfinite("level-1 density", c.id, t);
    if (!std::isfinite(c2)) throw_nonfinite("level-1 basis second derivative", c.id, t);
    if (!(d0 >= kInferDensityFloor)) {
      d0 = kInferDensityFloor;
      ++out.floored1;
      if (out.first_floored_t < 0) out.first_floored_t = static_cast<int>(t);
    }
    dens[t] = d0;
    curv[t] = c2;
    du[t] = u - 0.5;
    sum_inv_dens += 1.0 / d0;
  }

  const double s2 = static_cast<double>(T) / sum_inv_dens;
  double bias_sum = 0.0;
  for (long t = 0; t < T; ++t) {
    const double d3 = dens[t] * dens[t] * dens[t];
    bias_sum += du[t] / dens[t] - s2 * curv[t] / (24.0 * d3);
  }
  const double bi = s2 * s2 * bias_sum / static_cast<double>(T);
  out.sigma2 = s2;
  out.beta = bi;

  Eigen::VectorXd g(q1), gd(q1);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(q1, q1);
  for (long t = 0; t < T; ++t) {
    const double* xr = c.x.data() + t * spec.d_x();
    const double* bu_t = &bu[t * d_b];
    const double* bp_t = &bp[t * d_b];
    kron_cells(spec.active1, bu_t, xr, g);
    gd = g / dens[t];
    A.noalias() += gd * g.transpose();
    out.m += gd;
    const double d2 = dens[t] * dens[t];
    const double cb = (s2 * du[t] + bi) / dens[t] - s2 * s2 * curv[t] / (24.0 * d2 * dens[t]);
    const double cd = -s2 * s2 / (24.0 * d2);
    for (int a = 0; a < q1; ++a) {
      const Cell& cell = spec.active1[a];
      out.b1[a] += (cb * bu_t[cell.col] + cd * bp_t[cell.col]) * xr[cell.row];
    }
  }
  out.H1 = A - (s2 / static_cast<double>(T)) * out.m * out.m.transpose();

  const std::vector<double>& Bmean = spec.basis1.antideriv_mean();
  Eigen::VectorXd psi(q1);
  for (long t = 0; t < T; ++t) {
    const double* xr = c.x.data() + t * spec.d_x();
    const double* Bu_t = &Bu[t * d_b];
    for (int a = 0; a < q1; ++a) {
      const Cell& cell = spec.active1[a];
      psi[a] = (Bmean[cell.col] - Bu_t[cell.col]) * xr[cell.row] +
               (s2 / static_cast<double>(T)) * out.m[a] * du[t];
    }
    out.O1.noalias() += psi * psi.transpose();
  }

  const double v = cdf.v_hat[cluster_index];
  std::vector<double> cv(d_c), cp(d_c), cpp(d_c), Cv(d_c);
  spec.basis2.eval_into(v, cv.data());
  spec.basis2.deriv1_into(v, cp.data());
  spec.basis2.deriv2_into(v, cpp.data());
  spec.basis2.antideriv_into(v, Cv.data());

  double dd = 0.0, curv2 = 0.0;
  for (int k = 0; k < d_c; ++k) {
    dd += coef2[k] * cp[k];
    curv2 += coef2[k] * cpp[k];
  }
  if (!std::isfinite(dd)) throw_nonfinite("level-2 density", c.id, -1);
  if (!std::isfinite(curv2)) throw_nonfinite("level-2 basis second derivative", c.id, -1);
  if (!(dd >= kInferDensityFloor)) {
    dd = kInferDensityFloor;
    out.floored2 = true;
  }

  Eigen::VectorXd h2(q2), h2d(q2);
  kron_cells(spec.active2, cv.data(), c.z.data(), h2);
  h2d = h2 / dd;
  out.H2.noalias() = h2d * h2.transpose();
  out.H2i = out.H2 - (s2 / static_cast<double>(T)) * h2d * h2d.transpose();
  out.X21.noalias() = h2d * ((s2 / static_cast<double>(T)) * out.m.transpose());

  const double dd2 = dd * dd;
  const double cb2 = (s2 * (v - 0.5) - bi) / dd + s2 * s2 * curv2 / (24.0 * dd2 * dd);
  const double cd2 = -s2 * s2 / (24.0 * dd2);
  out.b2.setZero(q2);
  const std::vector<double>& Cmean = spec.basis2.antideriv_mean();
  Eigen::VectorXd w(q2);
  for (int a = 0; a < q2; ++a) {
    const Cell& cell = spec.active2[a];
    out.b2[a] = (cb2 * cv[cell.col] + cd2 * cp[cell.col]) * c.z[cell.row];
    w[a] = (Cmean[cell.col] - Cv[cell.col]) * c.z[cell.row];
  }
  out.O2.noalias() = w * w.transpose();
  return out;
}

}  // namespace

InferenceComponents estimate_components(const FitResult& fit, const PanelDataset& data,
                                        const ModelSpec& spec, int threads) {
  const int N = data.n_clusters();
  const long NT = data.total_obs();
  if (fit.theta.values.rows() != spec.d_x() || fit.theta.values.cols() != spec.d_b() ||
      fit.phi.values.rows() != spec.d_z() || fit.phi.values.cols() != spec.d_c() ||
      fit.alpha.size() != N ||
      static_cast<long>(fit.cdf.u_hat.size()) != NT ||
      static_cast<int>(fit.cdf.v_hat.size()) != N ||
      static_cast<int>(fit.cdf.offsets.size()) != N + 1)
    throw InferError("fitted values and dataset shapes disagree");

  std::vector<ClusterComp> parts(N);
  parallel_for(N, threads, [&](long i) {
    parts[i] = cluster_components(data.clusters[i], spec, fit.theta, fit.phi, fit.cdf,
                                  fit.cdf.offsets[i], static_cast<int>(i));
  });

  const int q1 = spec.q1();
  const int q2 = spec.q2();
  InferenceComponents comps;
  comps.H_theta.setZero(q1, q1);
  comps.H_phi.setZero(q2, q2);
  comps.H_phitheta.setZero(q2, q1);
  comps.b_theta.setZero(q1);
  comps.b_phi.setZero(q2);
  comps.Omega_theta.setZero(q1, q1);
  comps.Omega_phi.setZero(q2, q2);
  comps.sigma2.resize(N);
  comps.beta_i.resize(N);
  comps.H_phi_i.resize(N);
  comps.sum_T = NT;
  comps.n_clusters = N;

  int first1_cluster = -1, first1_t = -1, first2_cluster = -1;
  for (int i : data.canonical_order) {
    const ClusterComp& p = parts[i];
    comps.H_theta += p.H1;
    comps.b_theta += p.b1;
    comps.Omega_theta += p.O1;
    comps.H_phi += p.H2;
    comps.H_phitheta += p.X21;
    comps.b_phi += p.b2;
    comps.Omega_phi += p.O2;
    comps.n_floored_dens1 += p.floored1;
    if (p.floored1 > 0 && first1_cluster < 0) {
      first1_cluster = i;
      first1_t = p.first_floored_t;
    }
    if (p.floored2) {
      ++comps.n_floored_dens2;
      if (first2_cluster < 0) first2_cluster = i;
    }
  }
  for (int i = 0; i < N; ++i) {
    comps.sigma2[i] = parts[i].sigma2;
    comps.beta_i[i] = parts[i].beta;
    comps.H_phi_i[i] = std::move(parts[i].H2i);
  }

  for (const Cell& cell : spec.active1)
    if (spec.basis1.elements()[cell.col].var == 0 && data.x_time_invariant[cell.row])
      ++comps.structural_null1;

  const double nt = static_cast<double>(NT);
  comps.H_theta /= nt;
  comps.b_theta /= nt;
  comps.Omega_theta /= nt;
  comps.H_phi /= static_cast<double>(N);
  comps.H_phitheta /= static_cast<double>(N);
  comps.b_phi /= static_cast<double>(N);
  comps.Omega_phi /= static_cast<double>(N);

  if (comps.n_floored_dens1 > 0) {
    std::ostringstream os;
    os << "level-1 density below " << kInferDensityFloor << " at " << comps.n_floored_dens1
       << " observation(s) (first at cluster '" << data.clusters[first1_cluster].id
       << "', observation " << first1_t << "); floored";
    comps.warnings.push_back(os.str());
  }
  if (comps.n_floored_dens2 > 0) {
    std::ostringstream os;
    os << "level-2 density below " << kInferDensityFloor << " at " << comps.n_floored_dens2
       << " cluster(s) (first at cluster '" << data.clusters[first2_cluster].id
       << "'); floored";
    comps.warnings.push_back(os.str());
  }
  return comps;
}

namespace {

// Pseudo-inverse on the numerically identified subspace. Directions with
// singular value <= smax * 1e-10 are dropped; more drops than allowed_null
// means the matrix is singular beyond its structural deficiency.
Eigen::MatrixXd checked_inverse(const Eigen::MatrixXd& H, const char* label, int allowed_null) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double smax = s.size() > 0 ? s(0) : 0.0;
  const double smin = s.size() > 0 ? s(s.size() - 1) : 0.0;
  Eigen::VectorXd sinv = Eigen::VectorXd::Zero(s.size());
  int dropped = 0;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    if (s(k) > smax * 1e-10)
      sinv(k) = 1.0 / s(k);
    else
      ++dropped;
  }
  if (dropped > allowed_null) {
    std::ostringstream os;
    os << label << " is numerically singular (condition number ";
    if (smin > 0.0)
      os << smax / smin;
    else
      os << "infinite";
    os << ")";
    throw InferError(os.str());
  }
  return svd.matrixV() * sinv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace

CovarianceResult covariance_theta(const InferenceComponents& comps) {
  Eigen::MatrixXd Hinv =
      checked_inverse(comps.H_theta, "level-1 curvature matrix", comps.structural_null1);
  CovarianceResult out;
  out.cov = Hinv * comps.Omega_theta * Hinv / static_cast<double>(comps.sum_T);
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  const double t_bar = static_cast<double>(comps.sum_T) / comps.n_clusters;
  out.bias = Hinv * comps.b_theta / t_bar;
  return out;
}

CovarianceResult covariance_phi(const InferenceComponents& comps) {
  Eigen::MatrixXd Hphi_inv = checked_inverse(comps.H_phi, "level-2 curvature matrix", 0);
  Eigen::MatrixXd Htheta_inv =
      checked_inverse(comps.H_theta, "level-1 curvature matrix", comps.structural_null1);
  CovarianceResult out;
  out.cov = Hphi_inv * comps.Omega_phi * Hphi_inv / static_cast<double>(comps.n_clusters);
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  const double t_bar = static_cast<double>(comps.sum_T) / comps.n_clusters;
  out.bias = Hphi_inv * (comps.b_phi + comps.H_phitheta * (Htheta_inv * comps.b_theta)) / t_bar;
  return out;
}

namespace {

CoefEstimate coef_at(const Eigen::MatrixXd& coef_values, const BasisSet& basis,
                     const std::vector<Cell>& cells, const CovarianceResult& cr,
                     double at, const char* var_name) {
  if (!(at > 0.0 && at < 1.0)) {
    std::ostringstream os;
    os << var_name << " must lie strictly inside (0,1)";
    throw InferError(os.str());
  }
  std::vector<double> bv = basis.eval(at);
  const int d = static_cast<int>(coef_values.rows());
  CoefEstimate out;
  out.at = at;
  out.value = coef_values * Eigen::Map<const Eigen::VectorXd>(bv.data(), bv.size());
  out.se.setZero(d);
  out.bias.setZero(d);
  for (int j = 0; j < d; ++j) {
    double quad = 0.0, bias = 0.0;
    for (std::size_t a = 0; a < cells.size(); ++a) {
      if (cells[a].row != j) continue;
      const double wa = bv[cells[a].col];
      bias += cr.bias[static_cast<Eigen::Index>(a)] * wa;
      for (std::size_t e = 0; e < cells.size(); ++e) {
        if (cells[e].row != j) continue;
        quad += wa * bv[cells[e].col] *
                cr.cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(e));
      }
    }
    out.se[j] = std::sqrt(std::max(quad, 0.0));
    out.bias[j] = bias;
  }
  return out;
}

}  // namespace

CoefEstimate coef_level1_at(const FitResult& fit, const ModelSpec& spec,
                            const InferenceComponents& comps, double u) {
  return coef_at(fit.theta.values, spec.basis1, spec.active1, covariance_theta(comps), u, "u");
}

CoefEstimate coef_level2_at(const FitResult& fit, const ModelSpec& spec,
                            const InferenceComponents& comps, double v) {
  return coef_at(fit.phi.values, spec.basis2, spec.active2, covariance_phi(comps), v, "v");
}

}  // namespace panelq
