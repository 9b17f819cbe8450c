#include "panelq/diagnostics.hpp"

#include "panelq/parallel.hpp"
#include "panelq/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace panelq {

namespace {

class Fenwick {
 public:
  explicit Fenwick(int n) : tree_(static_cast<std::size_t>(n) + 1, 0) {}
  void add(int pos) {
    for (int i = pos + 1; i < static_cast<int>(tree_.size()); i += i & -i) ++tree_[i];
  }
  long prefix(int count) const {  // total over positions [0, count)
    long s = 0;
    for (int i = count; i > 0; i -= i & -i) s += tree_[i];
    return s;
  }

 private:
  std::vector<long> tree_;
};

int count_active(const MaskMatrix& m) {
  int q = 0;
  for (Eigen::Index j = 0; j < m.rows(); ++j)
    for (Eigen::Index k = 0; k < m.cols(); ++k) q += (m(j, k) != 0) ? 1 : 0;
  return q;
}

void expand_uv(const CdfValues& cdf, std::vector<double>& u, std::vector<double>& v) {
  u = cdf.u_hat;
  v.resize(u.size());
  for (std::size_t i = 0; i + 1 < cdf.offsets.size(); ++i)
    for (long k = cdf.offsets[i]; k < cdf.offsets[i + 1]; ++k) v[k] = cdf.v_hat[i];
}

}  // namespace

double ks_statistic(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw DiagError("ks_statistic: u and v lengths differ");
  const long n = static_cast<long>(u.size());
  if (n == 0) return 0.0;
  for (long k = 0; k < n; ++k)
    if (!(u[k] > 0.0 && u[k] < 1.0) || !(v[k] > 0.0 && v[k] < 1.0))
      throw DiagError("ks_statistic: entries must lie strictly inside (0,1)");

  std::vector<long> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0L);
  std::sort(idx.begin(), idx.end(), [&](long a, long b) { return u[a] < u[b]; });
  std::vector<double> vs(v);
  std::sort(vs.begin(), vs.end());
  vs.erase(std::unique(vs.begin(), vs.end()), vs.end());
  const auto vrank = [&](double x) {  // unique values strictly below x; also x's own slot
    return static_cast<int>(std::lower_bound(vs.begin(), vs.end(), x) - vs.begin());
  };

  // Sweep groups of equal u. Before a group is inserted the tree holds exactly
  // the points with smaller u, giving the strict counts (the limit from below);
  // after insertion the inclusive counts follow from the same prefix sums.
  Fenwick fen(static_cast<int>(vs.size()));
  const double dn = static_cast<double>(n);
  double D = 0.0;
  long g = 0;
  while (g < n) {
    long h = g;
    while (h < n && u[idx[h]] == u[idx[g]]) ++h;
    for (long k = g; k < h; ++k) {
      const long p = idx[k];
      const long lt = fen.prefix(vrank(v[p]));
      D = std::max(D, std::abs(static_cast<double>(lt) / dn - u[p] * v[p]));
    }
    for (long k = g; k < h; ++k) fen.add(vrank(v[idx[k]]));
    for (long k = g; k < h; ++k) {
      const long p = idx[k];
      const long le = fen.prefix(vrank(v[p]) + 1);
      D = std::max(D, std::abs(static_cast<double>(le) / dn - u[p] * v[p]));
    }
    g = h;
  }
  return D;
}

GofResult gof_test(const FitResult& fit, const PanelDataset& data, const ModelSpec& spec, int R,
                   std::uint64_t seed, const FitOptions& fit_opt, int threads,
                   long stop_after_exceed) {
  if (R < 1) throw DiagError("gof_test: R must be positive");
  if (fit.cdf.offsets.size() != data.clusters.size() + 1 ||
      fit.cdf.offsets.back() != data.total_obs())
    throw DiagError("gof_test: fitted values and dataset shapes disagree");

  GofResult out;
  out.R = R;
  {
    std::vector<double> u, v;
    expand_uv(fit.cdf, u, v);
    out.D = ks_statistic(u, v);
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> dstar(static_cast<std::size_t>(R), nan);
  std::vector<std::uint8_t> ok(static_cast<std::size_t>(R), 0);

  const auto replicate = [&](long r) {
    PanelDataset sim = data;
    auto ug = make_stream(seed, static_cast<std::uint64_t>(r), StreamRole::U);
    auto vg = make_stream(seed, static_cast<std::uint64_t>(r), StreamRole::V);
    for (auto& c : sim.clusters) {
      const double a = quantile_level2(spec, fit.phi, c.z, uniform01(vg));
      for (long t = 0; t < c.y.size(); ++t)
        c.y[t] = quantile_level1(spec, fit.theta, c.x.row(t).transpose(), uniform01(ug)) + a;
    }
    try {
      const FitResult refit = panelq::fit(sim, spec, fit_opt);
      if (!refit.converged) return;
      std::vector<double> u, v;
      expand_uv(refit.cdf, u, v);
      dstar[static_cast<std::size_t>(r)] = ks_statistic(u, v);
      ok[static_cast<std::size_t>(r)] = 1;
    } catch (const std::exception&) {
      // dropped below
    }
  };

  long executed = R;
  if (stop_after_exceed > 0) {
    long count = 0;
    executed = 0;
    for (long r = 0; r < R; ++r) {
      replicate(r);
      ++executed;
      if (ok[static_cast<std::size_t>(r)] && dstar[static_cast<std::size_t>(r)] > out.D) ++count;
      if (count >= stop_after_exceed && r + 1 < R) {
        out.early_stopped = true;
        break;
      }
    }
  } else {
    parallel_for(R, threads, replicate);
  }

  long exceed = 0;
  for (long r = 0; r < executed; ++r) {
    if (!ok[static_cast<std::size_t>(r)]) {
      ++out.dropped;
      continue;
    }
    ++out.completed;
    out.D_star.push_back(dstar[static_cast<std::size_t>(r)]);
    if (dstar[static_cast<std::size_t>(r)] > out.D) ++exceed;
  }

  if (out.completed == 0)
    throw DiagError("gof_test: no replication refit converged; cannot form a p-value");
  out.p_value = static_cast<double>(exceed) / static_cast<double>(out.completed);
  if (out.dropped > 0.05 * R)
    out.warnings.push_back("gof_test: " + std::to_string(out.dropped) + " of " +
                           std::to_string(R) +
                           " replications dropped (refit did not converge)");
  return out;
}

InfoCriteria information_criteria(const FitResult& fit) {
  if (fit.cdf.offsets.size() < 2 || fit.cdf.offsets.back() < 1)
    throw DiagError("information_criteria: fit carries no observations");
  const double nt = static_cast<double>(fit.cdf.offsets.back());
  const double nc = static_cast<double>(fit.cdf.offsets.size() - 1);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  InfoCriteria ic;
  ic.q1 = count_active(fit.theta.mask);
  ic.q2 = count_active(fit.phi.mask);
  if (std::isfinite(fit.loss1) && fit.loss1 > 0.0) {
    ic.defined1 = true;
    ic.aic1 = std::log(fit.loss1) + static_cast<double>(ic.q1) / nt;
    ic.bic1 = std::log(fit.loss1) + static_cast<double>(ic.q1) * std::log(nt) / (2.0 * nt);
  } else {
    ic.aic1 = ic.bic1 = nan;
  }
  if (std::isfinite(fit.loss2) && fit.loss2 > 0.0) {
    ic.defined2 = true;
    ic.aic2 = std::log(fit.loss2) + static_cast<double>(ic.q2) / nc;
    ic.bic2 = std::log(fit.loss2) + static_cast<double>(ic.q2) * std::log(nc) / (2.0 * nc);
  } else {
    ic.aic2 = ic.bic2 = nan;
  }
  return ic;
}

CrossingReport crossing_check(const FitResult& fit, const PanelDataset& data,
                              const ModelSpec& spec, const std::vector<double>& grid,
                              std::size_t max_sites) {
  for (double g : grid)
    if (!(g > 0.0 && g < 1.0))
      throw DiagError("crossing_check: grid points must lie strictly inside (0,1)");

  CrossingReport rep;
  if (grid.empty()) return rep;

  const int db = spec.basis1.size();
  const int dc = spec.basis2.size();
  Eigen::MatrixXd bp(static_cast<Eigen::Index>(grid.size()), db);
  Eigen::MatrixXd cp(static_cast<Eigen::Index>(grid.size()), dc);
  Eigen::VectorXd tmp1(db), tmp2(dc);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    spec.basis1.deriv1_into(grid[g], tmp1.data());
    bp.row(static_cast<Eigen::Index>(g)) = tmp1.transpose();
    spec.basis2.deriv1_into(grid[g], tmp2.data());
    cp.row(static_cast<Eigen::Index>(g)) = tmp2.transpose();
  }

  for (int ci = 0; ci < data.n_clusters(); ++ci) {
    const Cluster& c = data.clusters[static_cast<std::size_t>(ci)];
    const Eigen::MatrixXd xt = c.x * fit.theta.values;  // T x d_b
    for (long t = 0; t < xt.rows(); ++t) {
      for (std::size_t g = 0; g < grid.size(); ++g) {
        ++rep.checked1;
        const double dens = xt.row(t).dot(bp.row(static_cast<Eigen::Index>(g)));
        if (dens < 0.0) {
          ++rep.violations1;
          if (rep.sites1.size() < max_sites) rep.sites1.push_back({ci, t, grid[g]});
        }
      }
    }
    const Eigen::RowVectorXd zp = c.z.transpose() * fit.phi.values;  // 1 x d_c
    for (std::size_t g = 0; g < grid.size(); ++g) {
      ++rep.checked2;
      const double dens2 = zp.dot(cp.row(static_cast<Eigen::Index>(g)));
      if (dens2 < 0.0) {
        ++rep.violations2;
        if (rep.sites2.size() < max_sites) rep.sites2.push_back({ci, -1, grid[g]});
      }
    }
  }
  return rep;
}

}  // namespace panelq
