#include "panelq/estimator.hpp"

#include "panelq/parallel.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

namespace panelq {

namespace {

double median_sorted_copy(const Eigen::VectorXd& y) {
  std::vector<double> v(y.data(), y.data() + y.size());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Mid-ranks (rank - 0.5)/n. Ties are broken by the canonical position key so
// the assignment does not depend on input cluster order.
std::vector<double> mid_ranks(const std::vector<double>& vals,
                              const std::vector<long>& keys) {
  const std::size_t n = vals.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (vals[a] != vals[b]) return vals[a] < vals[b];
    return keys[a] < keys[b];
  });
  std::vector<double> out(n);
  for (std::size_t r = 0; r < n; ++r)
    out[order[r]] = (static_cast<double>(r) + 0.5) / static_cast<double>(n);
  return out;
}

std::string cell_name(const ModelSpec& spec, int col) {
  if (col < spec.q1()) {
    const Cell& c = spec.active1[col];
    return "level1 " + spec.x_names[c.row] + " x '" +
           spec.basis1.elements()[c.col].source + "'";
  }
  const Cell& c = spec.active2[col - spec.q1()];
  return "level2 " + spec.z_names[c.row] + " x '" +
         spec.basis2.elements()[c.col].source + "'";
}

void push_unique(FitWarnings* warn, const std::string& msg) {
  if (!warn) return;
  if (std::find(warn->messages.begin(), warn->messages.end(), msg) == warn->messages.end())
    warn->messages.push_back(msg);
}

struct SearchResult {
  bool accepted = false;
  double lam = 0.0;
  double loss = 0.0;
  Eigen::VectorXd par;
};

// Backtracking from lam=1, up to 30 halvings, requiring a strict loss decrease.
template <class LossFn>
SearchResult halving_search(LossFn&& loss_at, const Eigen::VectorXd& par,
                            const Eigen::VectorXd& d, double cur_loss) {
  double lam = 1.0;
  for (int h = 0; h <= 30; ++h, lam *= 0.5) {
    Eigen::VectorXd cand = par + lam * d;
    const double cl = loss_at(cand);
    if (std::isfinite(cl) && cl < cur_loss) return {true, lam, cl, std::move(cand)};
  }
  return {false, 0.0, cur_loss, par};
}

// Largest |y| in the data: anchors the step/loss/parameter thresholds so that
// every stopping decision is invariant to rescaling y (estimates then scale
// exactly with the data when the bases are functions of u,v only).
double y_scale(const PanelDataset& data) {
  double s = 0.0;
  for (const Cluster& c : data.clusters)
    s = std::max(s, c.y.lpNorm<Eigen::Infinity>());
  return s > 0.0 ? s : 1.0;
}

// Newton descent with step halving; falls back to a gradient step when the
// curvature term is singular, indefinite, or too degenerate to move.
template <class EvalFn>
Eigen::VectorXd newton_minimize(EvalFn&& ev, Eigen::VectorXd par, const FitOptions& opt,
                                double grad_scale, double par_scale, FitWarnings* warn,
                                const char* which) {
  auto loss_at = [&](const Eigen::VectorXd& p) { return ev(p, false, false).loss; };
  const double gtol = opt.tol * std::max(1.0, grad_scale);
  const double stol = opt.tol * par_scale;
  FusedEval cur = ev(par, true, true);
  for (int it = 0; it < opt.newton_max_iters; ++it) {
    const double gmax = cur.grad.lpNorm<Eigen::Infinity>();
    if (gmax <= gtol) break;

    Eigen::VectorXd d;
    bool newton_ok = false;
    {
      Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.hess);
      if (ldlt.info() == Eigen::Success) {
        d = ldlt.solve(-cur.grad);
        newton_ok = d.allFinite() && cur.grad.dot(d) < 0.0;
        // Floored densities can make the curvature huge where it is really
        // zero; a step that cannot move while the gradient is far from the
        // stopping threshold is treated as a singular Hessian.
        if (newton_ok && d.lpNorm<Eigen::Infinity>() <= stol && gmax > 10.0 * gtol)
          newton_ok = false;
      }
    }

    SearchResult sr;
    if (newton_ok) sr = halving_search(loss_at, par, d, cur.loss);
    if (!sr.accepted) {
      const double gnorm = cur.grad.norm();
      d = cur.grad * (-(par_scale + par.norm()) / gnorm);
      sr = halving_search(loss_at, par, d, cur.loss);
    }
    if (!sr.accepted) {
      push_unique(warn, std::string(which) +
                            ": line search could not reduce the loss; keeping best iterate");
      break;
    }
    const double step_norm = sr.lam * d.lpNorm<Eigen::Infinity>();
    par = std::move(sr.par);
    cur = ev(par, true, true);
    if (step_norm <= stol) break;
  }
  return par;
}

}  // namespace

StartingValues starting_values(const PanelDataset& data, const ModelSpec& spec) {
  const int N = data.n_clusters();
  const long NT = data.total_obs();
  StartingValues sv;
  sv.alpha.resize(N);
  for (int i = 0; i < N; ++i) sv.alpha(i) = median_sorted_copy(data.clusters[i].y);

  // canonical rank of each cluster and canonical flat position of each obs
  std::vector<long> canon_rank(N), canon_pos(NT);
  for (int r = 0; r < N; ++r) canon_rank[data.canonical_order[r]] = r;
  {
    std::vector<long> offs(N + 1, 0);
    for (int i = 0; i < N; ++i) offs[i + 1] = offs[i] + data.clusters[i].y.size();
    std::vector<long> canon_start(N);
    long run = 0;
    for (int i : data.canonical_order) {
      canon_start[i] = run;
      run += data.clusters[i].y.size();
    }
    for (int i = 0; i < N; ++i)
      for (Eigen::Index t = 0; t < data.clusters[i].y.size(); ++t)
        canon_pos[offs[i] + t] = canon_start[i] + t;
  }

  std::vector<double> resid;
  resid.reserve(NT);
  for (int i = 0; i < N; ++i) {
    const Cluster& c = data.clusters[i];
    for (Eigen::Index t = 0; t < c.y.size(); ++t) resid.push_back(c.y(t) - sv.alpha(i));
  }
  sv.u0 = mid_ranks(resid, canon_pos);
  std::vector<double> avals(sv.alpha.data(), sv.alpha.data() + N);
  std::vector<double> vr = mid_ranks(avals, canon_rank);
  sv.v0 = Eigen::Map<const Eigen::VectorXd>(vr.data(), N);

  // One joint least squares of y on the active-cell regressors at (u0, v0).
  // Rows are laid out in canonical cluster order so the solution does not
  // depend on the input ordering.
  std::vector<long> offsets(N + 1, 0);
  for (int i = 0; i < N; ++i)
    offsets[i + 1] = offsets[i] + data.clusters[i].y.size();
  const int q1 = spec.q1(), q2 = spec.q2(), q = q1 + q2;
  Eigen::MatrixXd D(NT, q);
  Eigen::VectorXd yv(NT);
  Eigen::VectorXd bu(spec.d_b()), cv(spec.d_c());
  long row = 0;
  for (int i : data.canonical_order) {
    const Cluster& c = data.clusters[i];
    spec.basis2.eval_into(sv.v0(i), cv.data());
    for (Eigen::Index t = 0; t < c.y.size(); ++t, ++row) {
      spec.basis1.eval_into(sv.u0[offsets[i] + t], bu.data());
      for (int a = 0; a < q1; ++a)
        D(row, a) = c.x(t, spec.active1[a].row) * bu(spec.active1[a].col);
      for (int a = 0; a < q2; ++a)
        D(row, q1 + a) = c.z(spec.active2[a].row) * cv(spec.active2[a].col);
      yv(row) = c.y(t);
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
  if (qr.rank() < q) {
    std::string msg = "starting-value least squares is rank-deficient; collinear cells:";
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < q; ++k)
      msg += " [" + cell_name(spec, perm(k)) + "]";
    throw EstimError(msg);
  }
  Eigen::VectorXd beta = qr.solve(yv);
  sv.theta = spec.unpack1(beta.head(q1));
  sv.phi = spec.unpack2(beta.tail(q2));
  return sv;
}

CoefMatrix solve_theta(const PanelDataset& data, const ModelSpec& spec,
                       const CoefMatrix& theta_init, const Eigen::VectorXd& alpha,
                       const FitOptions& opt, FitWarnings* warn) {
  auto ev = [&](const Eigen::VectorXd& p, bool wg, bool wh) {
    const CoefMatrix th = spec.unpack1(p);
    return eval_level1(spec, th, alpha, data, wg, wh, 1e-8, opt.threads);
  };
  Eigen::VectorXd par = newton_minimize(ev, spec.pack1(theta_init), opt,
                                        static_cast<double>(data.total_obs()),
                                        y_scale(data), warn, "solve_theta");
  return spec.unpack1(par);
}

CoefMatrix solve_phi(const PanelDataset& data, const ModelSpec& spec,
                     const CoefMatrix& phi_init, const Eigen::VectorXd& alpha,
                     const FitOptions& opt, FitWarnings* warn) {
  auto ev = [&](const Eigen::VectorXd& p, bool wg, bool wh) {
    const CoefMatrix ph = spec.unpack2(p);
    return eval_level2(spec, ph, alpha, data, wg, wh, 1e-8, opt.threads);
  };
  Eigen::VectorXd par = newton_minimize(ev, spec.pack2(phi_init), opt,
                                        static_cast<double>(data.n_clusters()),
                                        y_scale(data), warn, "solve_phi");
  return spec.unpack2(par);
}

Eigen::VectorXd solve_alpha(const PanelDataset& data, const ModelSpec& spec,
                            const CoefMatrix& theta, const CoefMatrix& phi,
                            const Eigen::VectorXd& alpha_init, int threads) {
  (void)alpha_init;  // the outer bisection always starts at v = 0.5
  const int N = data.n_clusters();
  Eigen::VectorXd out(N);
  parallel_for(N, threads, [&](long i) {
    const Cluster& c = data.clusters[i];
    const Eigen::Index T = c.y.size();
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows =
        c.x * theta.values;  // T x d_b
    const Eigen::VectorXd coef2 = phi.values.transpose() * c.z;
    Eigen::VectorXd cv(spec.d_c());
    Eigen::VectorXd scratch(spec.d_b());
    double v = 0.5;
    double step = 0.25;
    for (int s = 0; s < kBisectSteps; ++s, step *= 0.5) {
      spec.basis2.eval_into(v, cv.data());
      const double a = coef2.dot(cv);
      if (!std::isfinite(a))
        throw DomainError("level-2 quantile not finite during alpha bisection");
      double g = v - 0.5;  // d L2 / d alpha term with v_hat = v by construction
      for (Eigen::Index t = 0; t < T; ++t)
        g += 0.5 - invert_quantile(spec.basis1, rows.row(t).data(), c.y(t) - a,
                                   scratch.data())
                       .prob;
      if (g > 0.0) v -= step;
      else if (g < 0.0) v += step;
      else break;
    }
    if (v < kEps) v = kEps;
    else if (v > 1.0 - kEps) v = 1.0 - kEps;
    spec.basis2.eval_into(v, cv.data());
    out(i) = coef2.dot(cv);
  });
  return out;
}

FitResult fit(const PanelDataset& data, const ModelSpec& spec, const FitOptions& opt) {
  if (!(opt.tol > 0.0)) throw EstimError("tol must be > 0");
  if (opt.max_outer_iters < 1 || opt.newton_max_iters < 1)
    throw EstimError("iteration caps must be >= 1");

  StartingValues sv = starting_values(data, spec);
  const double ctol = opt.tol * y_scale(data);
  FitResult res;
  res.theta = sv.theta;
  res.phi = sv.phi;
  res.alpha = sv.alpha;

  double prev_total =
      eval_level1(spec, res.theta, res.alpha, data, false, false, 1e-8, opt.threads).loss +
      eval_level2(spec, res.phi, res.alpha, data, false, false, 1e-8, opt.threads).loss;

  int performed = 0;
  for (int outer = 1; outer <= opt.max_outer_iters; ++outer) {
    performed = outer;
    CoefMatrix theta_new = solve_theta(data, spec, res.theta, res.alpha, opt, &res.warnings);
    CoefMatrix phi_new = solve_phi(data, spec, res.phi, res.alpha, opt, &res.warnings);
    Eigen::VectorXd alpha_new =
        solve_alpha(data, spec, theta_new, phi_new, res.alpha, opt.threads);

    double dpar = (alpha_new - res.alpha).lpNorm<Eigen::Infinity>();
    dpar = std::max(dpar,
                    (theta_new.values - res.theta.values).lpNorm<Eigen::Infinity>());
    dpar = std::max(dpar, (phi_new.values - res.phi.values).lpNorm<Eigen::Infinity>());

    res.theta = std::move(theta_new);
    res.phi = std::move(phi_new);
    res.alpha = std::move(alpha_new);

    const double l1 =
        eval_level1(spec, res.theta, res.alpha, data, false, false, 1e-8, opt.threads).loss;
    const double l2 =
        eval_level2(spec, res.phi, res.alpha, data, false, false, 1e-8, opt.threads).loss;
    res.trace.push_back({l1, l2, dpar});
    const double total = l1 + l2;
    if (std::abs(prev_total - total) <= ctol || dpar <= ctol) {
      res.converged = true;
      prev_total = total;
      break;
    }
    prev_total = total;
  }
  res.iterations = performed;

  FusedEval e1 = eval_level1(spec, res.theta, res.alpha, data, true, false, 1e-8, opt.threads);
  FusedEval e2 = eval_level2(spec, res.phi, res.alpha, data, true, false, 1e-8, opt.threads);
  res.loss1 = e1.loss;
  res.loss2 = e2.loss;
  res.grad_theta_max = e1.grad.size() ? e1.grad.lpNorm<Eigen::Infinity>() : 0.0;
  res.grad_phi_max = e2.grad.size() ? e2.grad.lpNorm<Eigen::Infinity>() : 0.0;
  res.grad_alpha_max = 0.0;
  for (int i = 0; i < data.n_clusters(); ++i)
    res.grad_alpha_max =
        std::max(res.grad_alpha_max,
                 std::abs(grad_alpha(spec, res.theta, res.phi, res.alpha(i),
                                     data.clusters[i])));

  res.cdf = compute_cdf(spec, res.theta, res.phi, res.alpha, data, opt.threads);
  res.warnings.monotone1 = res.cdf.monotone1;
  res.warnings.monotone2 = res.cdf.monotone2;
  for (std::uint8_t f : res.cdf.u_clamped) res.warnings.n_clamped1 += f;
  for (std::uint8_t f : res.cdf.v_clamped) res.warnings.n_clamped2 += f;
  if (!res.converged)
    res.warnings.messages.push_back("fit did not converge within max_outer_iters");
  if (!res.cdf.monotone1)
    res.warnings.messages.push_back(
        "level-1 quantile function is non-monotone at some fitted points");
  if (!res.cdf.monotone2)
    res.warnings.messages.push_back(
        "level-2 quantile function is non-monotone at some fitted points");
  return res;
}

}  // namespace panelq
