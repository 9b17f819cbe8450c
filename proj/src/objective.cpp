#include "panelq/objective.hpp"

#include "panelq/parallel.hpp"

#include <cmath>

namespace panelq {

namespace {

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

InvertResult invert_quantile(const BasisSet& basis, const double* coef, double target,
                             double* scratch) {
  const int d = basis.size();
  double u = 0.5;
  double step = 0.25;  // 2^-(s+1) at s=1
  double prev_u = -1.0, prev_q = 0.0;
  bool monotone = true;
  for (int s = 0; s < kBisectSteps; ++s, step *= 0.5) {
    basis.eval_into(u, scratch);
    const double q = dot(coef, scratch, d);
    if (!std::isfinite(q))
      throw DomainError("quantile function not finite during inversion");
    if (prev_u >= 0.0 && ((u > prev_u && q < prev_q) || (u < prev_u && q > prev_q)))
      monotone = false;
    prev_u = u;
    prev_q = q;
    if (target > q) u += step;
    else if (target < q) u -= step;
    else break;  // exact hit
  }
  InvertResult r;
  r.monotone_ok = monotone;
  basis.eval_into(kEps, scratch);
  const double qlo = dot(coef, scratch, d);
  basis.eval_into(1.0 - kEps, scratch);
  const double qhi = dot(coef, scratch, d);
  r.clamped = target < std::min(qlo, qhi) || target > std::max(qlo, qhi);
  r.prob = u < kEps ? kEps : (u > 1.0 - kEps ? 1.0 - kEps : u);
  return r;
}

InvertResult invert_level1(const ModelSpec& spec, const CoefMatrix& theta,
                           const Eigen::VectorXd& x, double target) {
  Eigen::VectorXd coef = theta.values.transpose() * x;
  Eigen::VectorXd scratch(spec.d_b());
  return invert_quantile(spec.basis1, coef.data(), target, scratch.data());
}

InvertResult invert_level2(const ModelSpec& spec, const CoefMatrix& phi,
                           const Eigen::VectorXd& z, double target) {
  Eigen::VectorXd coef = phi.values.transpose() * z;
  Eigen::VectorXd scratch(spec.d_c());
  return invert_quantile(spec.basis2, coef.data(), target, scratch.data());
}

CdfValues compute_cdf(const ModelSpec& spec, const CoefMatrix& theta,
                      const CoefMatrix& phi, const Eigen::VectorXd& alpha,
                      const PanelDataset& data, int threads) {
  const int N = data.n_clusters();
  CdfValues out;
  out.offsets.resize(N + 1);
  out.offsets[0] = 0;
  for (int i = 0; i < N; ++i)
    out.offsets[i + 1] = out.offsets[i] + data.clusters[i].y.size();
  const long NT = out.offsets[N];
  out.u_hat.resize(NT);
  out.u_clamped.resize(NT);
  out.v_hat.resize(N);
  out.v_clamped.resize(N);
  std::vector<std::uint8_t> mono1(N, 1), mono2(N, 1);

  parallel_for(N, threads, [&](long i) {
    const Cluster& c = data.clusters[i];
    Eigen::VectorXd scratch(std::max(spec.d_b(), spec.d_c()));
    const Eigen::MatrixXd rows = c.x * theta.values;  // T x d_b
    for (Eigen::Index t = 0; t < c.y.size(); ++t) {
      Eigen::VectorXd coef = rows.row(t);
      InvertResult r = invert_quantile(spec.basis1, coef.data(), c.y(t) - alpha(i),
                                       scratch.data());
      out.u_hat[out.offsets[i] + t] = r.prob;
      out.u_clamped[out.offsets[i] + t] = r.clamped;
      if (!r.monotone_ok) mono1[i] = 0;
    }
    Eigen::VectorXd coef2 = phi.values.transpose() * c.z;
    InvertResult r2 = invert_quantile(spec.basis2, coef2.data(), alpha(i), scratch.data());
    out.v_hat[i] = r2.prob;
    out.v_clamped[i] = r2.clamped;
    if (!r2.monotone_ok) mono2[i] = 0;
  });
  for (int i = 0; i < N; ++i) {
    if (!mono1[i]) out.monotone1 = false;
    if (!mono2[i]) out.monotone2 = false;
  }
  return out;
}

namespace {

// One cluster's share of a fused evaluation.
struct LevelPartial {
  double loss = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;  // lower triangle filled
  long n_clamped = 0;
  bool monotone_ok = true;
};

// Accumulates loss/grad/hess for "rows": coefficient vector r (d), design
// vector w (covariates), target. Shared between the two levels.
struct LevelAccum {
  const BasisSet& basis;
  const std::vector<Cell>& active;
  const Eigen::VectorXd& bmean;  // antiderivative means (d)
  bool want_grad, want_hess;
  double floor;

  LevelPartial part;

  // scratch
  Eigen::VectorXd bu, Bu, du, gcell;

  LevelAccum(const BasisSet& b, const std::vector<Cell>& act, const Eigen::VectorXd& bm,
             bool wg, bool wh, double fl)
      : basis(b), active(act), bmean(bm), want_grad(wg), want_hess(wh), floor(fl) {
    const int q = static_cast<int>(active.size());
    if (want_grad) part.grad = Eigen::VectorXd::Zero(q);
    if (want_hess) part.hess = Eigen::MatrixXd::Zero(q, q);
    bu.resize(basis.size());
    Bu.resize(basis.size());
    du.resize(basis.size());
    gcell.resize(q);
  }

  // returns u_hat
  double add(const double* r, const double* w, double target) {
    InvertResult res = invert_quantile(basis, r, target, bu.data());
    if (res.clamped) ++part.n_clamped;
    if (!res.monotone_ok) part.monotone_ok = false;
    const double u = res.prob;
    basis.antideriv_into(u, Bu.data());
    double term = target * (u - 0.5);
    for (int k = 0; k < basis.size(); ++k) term += r[k] * (bmean(k) - Bu(k));
    part.loss += term;
    if (want_grad) {
      for (std::size_t a = 0; a < active.size(); ++a)
        part.grad(a) += (bmean(active[a].col) - Bu(active[a].col)) * w[active[a].row];
    }
    if (want_hess && !res.clamped) {
      basis.eval_into(u, bu.data());
      basis.deriv1_into(u, du.data());
      double dens = 0.0;
      for (int k = 0; k < basis.size(); ++k) dens += r[k] * du(k);
      dens = std::abs(dens);
      if (dens < floor) dens = floor;
      for (std::size_t a = 0; a < active.size(); ++a)
        gcell(a) = bu(active[a].col) * w[active[a].row];
      part.hess.selfadjointView<Eigen::Lower>().rankUpdate(gcell, 1.0 / dens);
    }
    return u;
  }
};

Eigen::VectorXd to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

// Sequential reduction in canonical cluster order keeps results identical
// across thread counts and input cluster orderings.
FusedEval reduce_partials(std::vector<LevelPartial>& parts, const std::vector<int>& order,
                          int q, bool want_grad, bool want_hess) {
  FusedEval out;
  if (want_grad) out.grad = Eigen::VectorXd::Zero(q);
  Eigen::MatrixXd lower;
  if (want_hess) lower = Eigen::MatrixXd::Zero(q, q);
  for (int i : order) {
    LevelPartial& p = parts[i];
    out.loss += p.loss;
    out.n_clamped += p.n_clamped;
    if (!p.monotone_ok) out.monotone_ok = false;
    if (want_grad) out.grad += p.grad;
    if (want_hess) lower += p.hess;
  }
  if (want_hess) {
    Eigen::MatrixXd full = lower.selfadjointView<Eigen::Lower>();
    out.hess = std::move(full);
  }
  return out;
}

}  // namespace

FusedEval eval_level1(const ModelSpec& spec, const CoefMatrix& theta,
                      const Eigen::VectorXd& alpha, const PanelDataset& data,
                      bool want_grad, bool want_hess, double hess_floor, int threads) {
  const int N = data.n_clusters();
  const Eigen::VectorXd bmean = to_vec(spec.basis1.antideriv_mean());
  std::vector<LevelPartial> parts(N);
  parallel_for(N, threads, [&](long i) {
    LevelAccum acc(spec.basis1, spec.active1, bmean, want_grad, want_hess, hess_floor);
    const Cluster& c = data.clusters[i];
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows =
        c.x * theta.values;  // T x d_b
    Eigen::VectorXd xrow(spec.d_x());
    for (Eigen::Index t = 0; t < c.y.size(); ++t) {
      xrow = c.x.row(t);
      acc.add(rows.row(t).data(), xrow.data(), c.y(t) - alpha(i));
    }
    parts[i] = std::move(acc.part);
  });
  return reduce_partials(parts, data.canonical_order, spec.q1(), want_grad, want_hess);
}

FusedEval eval_level2(const ModelSpec& spec, const CoefMatrix& phi,
                      const Eigen::VectorXd& alpha, const PanelDataset& data,
                      bool want_grad, bool want_hess, double hess_floor, int threads) {
  const int N = data.n_clusters();
  const Eigen::VectorXd cmean = to_vec(spec.basis2.antideriv_mean());
  std::vector<LevelPartial> parts(N);
  parallel_for(N, threads, [&](long i) {
    LevelAccum acc(spec.basis2, spec.active2, cmean, want_grad, want_hess, hess_floor);
    const Cluster& c = data.clusters[i];
    Eigen::VectorXd coef = phi.values.transpose() * c.z;
    acc.add(coef.data(), c.z.data(), alpha(i));
    parts[i] = std::move(acc.part);
  });
  return reduce_partials(parts, data.canonical_order, spec.q2(), want_grad, want_hess);
}

double loss_l1(const ModelSpec& spec, const CoefMatrix& theta,
               const Eigen::VectorXd& alpha, const PanelDataset& data) {
  return eval_level1(spec, theta, alpha, data, false, false).loss;
}

double loss_l2(const ModelSpec& spec, const CoefMatrix& phi,
               const Eigen::VectorXd& alpha, const PanelDataset& data) {
  return eval_level2(spec, phi, alpha, data, false, false).loss;
}

Eigen::VectorXd grad_theta(const ModelSpec& spec, const CoefMatrix& theta,
                           const Eigen::VectorXd& alpha, const PanelDataset& data) {
  return eval_level1(spec, theta, alpha, data, true, false).grad;
}

Eigen::VectorXd grad_phi(const ModelSpec& spec, const CoefMatrix& phi,
                         const Eigen::VectorXd& alpha, const PanelDataset& data) {
  return eval_level2(spec, phi, alpha, data, true, false).grad;
}

double grad_alpha(const ModelSpec& spec, const CoefMatrix& theta, const CoefMatrix& phi,
                  double alpha_i, const Cluster& cluster) {
  Eigen::VectorXd scratch(std::max(spec.d_b(), spec.d_c()));
  const Eigen::MatrixXd rows = cluster.x * theta.values;
  double g = 0.0;
  for (Eigen::Index t = 0; t < cluster.y.size(); ++t) {
    Eigen::VectorXd coef = rows.row(t);
    InvertResult r =
        invert_quantile(spec.basis1, coef.data(), cluster.y(t) - alpha_i, scratch.data());
    g += 0.5 - r.prob;
  }
  Eigen::VectorXd coef2 = phi.values.transpose() * cluster.z;
  InvertResult r2 = invert_quantile(spec.basis2, coef2.data(), alpha_i, scratch.data());
  g += r2.prob - 0.5;
  return g;
}

}  // namespace panelq
