#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "panelq/inference.hpp"

#include <cmath>
#include <numeric>
#include <vector>

using namespace panelq;

namespace {

PanelDataset tiny_dataset(const std::vector<std::vector<double>>& y_by_cluster,
                          const std::vector<std::vector<double>>& xcol = {},
                          const std::vector<double>& zcol = {}) {
  RawRows r;
  r.x_names = xcol.empty() ? std::vector<std::string>{} : std::vector<std::string>{"x_a"};
  r.z_names = zcol.empty() ? std::vector<std::string>{} : std::vector<std::string>{"z_a"};
  if (!xcol.empty()) r.x_cols.resize(1);
  if (!zcol.empty()) r.z_cols.resize(1);
  for (std::size_t i = 0; i < y_by_cluster.size(); ++i) {
    for (std::size_t t = 0; t < y_by_cluster[i].size(); ++t) {
      r.cluster.push_back("c" + std::to_string(i));
      r.y.push_back(y_by_cluster[i][t]);
      if (!xcol.empty()) r.x_cols[0].push_back(xcol[i][t]);
      if (!zcol.empty()) r.z_cols[0].push_back(zcol[i]);
    }
  }
  return validate_dataset(r);
}

double frac(double x) { return x - std::floor(x); }

PanelDataset synth_dataset(int N, int T, bool reversed = false) {
  RawRows r;
  r.x_names = {"x_a"};
  r.x_cols.resize(1);
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  if (reversed) std::reverse(order.begin(), order.end());
  for (int oi = 0; oi < N; ++oi) {
    const int i = order[oi];
    const double v = 0.02 + 0.96 * frac((i + 1) * 0.73205080756887729);
    for (int t = 0; t < T; ++t) {
      const long k = static_cast<long>(i) * T + t + 1;
      const double u = 0.02 + 0.96 * frac(k * 0.61803398874989485);
      const double x1 = frac(k * 0.41421356237309515);
      r.cluster.push_back("c" + std::to_string(i));
      r.y.push_back(1.0 + 0.5 * u + x1 * (0.5 + u) + 0.3 * norm_quantile(v));
      r.x_cols[0].push_back(x1);
    }
  }
  return validate_dataset(r);
}

ModelSpec synth_spec() {
  return make_model_spec({"const", "x_a"}, {"const"}, {{"1", "u"}, {"1", "u"}},
                         {{"qnorm(v)"}});
}

CoefMatrix coef_from(const MaskMatrix& mask, const std::vector<std::vector<double>>& rows) {
  CoefMatrix c = CoefMatrix::zeros(mask);
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t k = 0; k < rows[j].size(); ++k)
      c.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = rows[j][k];
  return c;
}

// Fit skeleton with given parameters; u_hat/v_hat recovered by inversion.
FitResult make_fit(const PanelDataset& data, const ModelSpec& spec,
                   const std::vector<std::vector<double>>& theta_rows,
                   const std::vector<std::vector<double>>& phi_rows,
                   const std::vector<double>& alpha) {
  FitResult f;
  f.theta = coef_from(spec.mask1, theta_rows);
  f.phi = coef_from(spec.mask2, phi_rows);
  f.alpha = Eigen::Map<const Eigen::VectorXd>(alpha.data(), alpha.size());
  f.cdf = compute_cdf(spec, f.theta, f.phi, f.alpha, data);
  f.converged = true;
  return f;
}

// Fit skeleton with u_hat/v_hat pinned directly.
FitResult make_fit_at(const PanelDataset& data, const ModelSpec& spec,
                      const std::vector<std::vector<double>>& theta_rows,
                      const std::vector<std::vector<double>>& phi_rows,
                      const std::vector<double>& u_hat, const std::vector<double>& v_hat) {
  FitResult f;
  f.theta = coef_from(spec.mask1, theta_rows);
  f.phi = coef_from(spec.mask2, phi_rows);
  f.alpha = Eigen::VectorXd::Zero(data.n_clusters());
  f.cdf.u_hat = u_hat;
  f.cdf.v_hat = v_hat;
  f.cdf.u_clamped.assign(u_hat.size(), 0);
  f.cdf.v_clamped.assign(v_hat.size(), 0);
  f.cdf.offsets.resize(data.n_clusters() + 1);
  f.cdf.offsets[0] = 0;
  for (int i = 0; i < data.n_clusters(); ++i)
    f.cdf.offsets[i + 1] = f.cdf.offsets[i] + data.clusters[i].y.size();
  f.converged = true;
  return f;
}

InferenceComponents identity_components(int q1, long sum_T, int n_clusters) {
  InferenceComponents c;
  c.H_theta = Eigen::MatrixXd::Identity(q1, q1);
  c.Omega_theta = Eigen::MatrixXd::Identity(q1, q1);
  c.b_theta = Eigen::VectorXd::Zero(q1);
  c.sum_T = sum_T;
  c.n_clusters = n_clusters;
  return c;
}

}  // namespace

TEST_CASE("vec and unvec are exact mutual inverses") {
  Eigen::MatrixXd m(3, 2);
  m << 0.1, -4.7, 2.25, 1e-9, -3.0, 17.5;
  Eigen::VectorXd v = vec(m);
  REQUIRE(v.size() == 6);
  CHECK(v(0) == 0.1);   // column-major: (0,0) first
  CHECK(v(1) == 2.25);  // then (1,0)
  CHECK(v(3) == -4.7);  // second column starts at index 3
  Eigen::MatrixXd back = unvec(v, 3, 2);
  CHECK((back - m).lpNorm<Eigen::Infinity>() == 0.0);
  Eigen::VectorXd v2 = vec(unvec(v, 3, 2));
  CHECK((v2 - v).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK_THROWS_AS(unvec(v, 4, 2), InferError);
}

TEST_CASE("sigma2 closed form for a linear quantile in u") {
  // b = (1, u), x = (1): density is theta_1 at every observation, so the
  // harmonic mean collapses to theta_1 itself.
  ModelSpec s = make_model_spec({"const"}, {"const"}, {{"1", "u"}}, {{"v"}});
  PanelDataset d = tiny_dataset({{0.45, 0.95, 0.62}, {0.55, 0.71, 1.05}});
  FitResult f = make_fit(d, s, {{0.3, 1.7}}, {{1.0}}, {0.4, 0.6});
  InferenceComponents c = estimate_components(f, d, s);
  REQUIRE(c.sigma2.size() == 2);
  CHECK(c.sigma2(0) == doctest::Approx(1.7).epsilon(1e-12));
  CHECK(c.sigma2(1) == doctest::Approx(1.7).epsilon(1e-12));
  CHECK(c.sigma2.minCoeff() > 0.0);
  CHECK(c.n_floored_dens1 == 0);
  CHECK(c.warnings.empty());
}

TEST_CASE("level-2 score variance: closed form and population limit") {
  const int N = 2000;
  std::vector<std::vector<double>> ys(N, {0.0, 0.0});
  PanelDataset d = tiny_dataset(ys);
  std::vector<double> u_hat(2 * N, 0.5), v_hat(N);
  for (int i = 0; i < N; ++i) v_hat[i] = (i + 0.5) / N;

  ModelSpec s1 = make_model_spec({"const"}, {"const"}, {{"1", "u"}}, {{"v-0.5"}});
  FitResult f1 = make_fit_at(d, s1, {{0.0, 1.0}}, {{1.0}}, u_hat, v_hat);
  InferenceComponents c1 = estimate_components(f1, d, s1);
  double expect = 0.0;
  for (int i = 0; i < N; ++i) {
    const double v = v_hat[i];
    const double dev = -1.0 / 12.0 - (v * v / 2.0 - v / 2.0);
    expect += dev * dev;
  }
  expect /= N;
  REQUIRE(c1.Omega_phi.rows() == 1);
  CHECK(c1.Omega_phi(0, 0) == doctest::Approx(expect).epsilon(1e-10));
  CHECK(c1.Omega_phi(0, 0) == doctest::Approx(1.0 / 720.0).epsilon(1e-4));

  // doubling the basis element quadruples the score variance: limit 1/180
  ModelSpec s2 = make_model_spec({"const"}, {"const"}, {{"1", "u"}}, {{"2*(v-0.5)"}});
  FitResult f2 = make_fit_at(d, s2, {{0.0, 1.0}}, {{1.0}}, u_hat, v_hat);
  InferenceComponents c2 = estimate_components(f2, d, s2);
  CHECK(c2.Omega_phi(0, 0) == doctest::Approx(1.0 / 180.0).epsilon(1e-4));
}

TEST_CASE("degenerate u_hat at 0.5: bias terms collapse and curvature vanishes") {
  // 4 clusters x 2 obs, all u_hat exactly 0.5, b=(1,u): sigma2=1, beta_i=0,
  // the first bracket of the bias integrand dies, and the curvature matrix
  // is exactly zero (no dispersion in u), which must be reported as singular.
  ModelSpec s = make_model_spec({"const"}, {"const"}, {{"1", "u"}}, {{"v"}});
  std::vector<std::vector<double>> ys(4, {0.0, 0.0});
  PanelDataset d = tiny_dataset(ys);
  std::vector<double> u_hat(8, 0.5), v_hat(4, 0.5);
  FitResult f = make_fit_at(d, s, {{0.0, 1.0}}, {{1.0}}, u_hat, v_hat);
  InferenceComponents c = estimate_components(f, d, s);

  for (int i = 0; i < 4; ++i) {
    CHECK(c.sigma2(i) == 1.0);
    CHECK(c.beta_i(i) == 0.0);
  }
  REQUIRE(c.b_theta.size() == 2);
  CHECK(c.b_theta(0) == 0.0);
  CHECK(c.b_theta(1) == -1.0 / 24.0);
  // score at the degenerate point: (Bbar - B(0.5)) = (0, 1/6 - 1/8)
  const double dev = 1.0 / 6.0 - 0.125;
  CHECK(c.Omega_theta(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(c.Omega_theta(1, 1) == doctest::Approx(dev * dev).epsilon(1e-12));
  CHECK(c.H_theta.lpNorm<Eigen::Infinity>() == 0.0);
  CHECK_THROWS_WITH_AS(covariance_theta(c), doctest::Contains("singular"), InferError);
}

TEST_CASE("identity components give the trivial sandwich") {
  InferenceComponents c = identity_components(2, 100, 10);
  CovarianceResult cr = covariance_theta(c);
  CHECK((cr.cov - Eigen::MatrixXd::Identity(2, 2) / 100.0).lpNorm<Eigen::Infinity>() < 1e-14);
  CHECK(cr.bias.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("coefficient values, unit-vector collapse, scaling, and bias mapping") {
  // basis (2*(u-0.5), 1) hits the unit vector e_2 at u = 0.5
  ModelSpec s = make_model_spec({"const"}, {"const"}, {{"2*(u-0.5)", "1"}}, {{"v"}});
  PanelDataset d = tiny_dataset({{0.1, 0.2}, {0.3, 0.4}});
  FitResult f = make_fit_at(d, s, {{0.8, 0.25}}, {{1.0}}, {0.5, 0.5, 0.5, 0.5}, {0.5, 0.5});

  InferenceComponents c = identity_components(2, 100, 10);
  c.Omega_theta = Eigen::Vector2d(9.0, 25.0).asDiagonal();
  CoefEstimate ce = coef_level1_at(f, s, c, 0.5);
  CHECK(ce.at == 0.5);
  CHECK(ce.value(0) == doctest::Approx(0.25).epsilon(1e-14));  // theta . (0,1)
  CHECK(ce.se(0) == doctest::Approx(0.5).epsilon(1e-12));      // sqrt(25/100)

  // quadrupling Omega doubles every standard error
  c.Omega_theta *= 4.0;
  CoefEstimate ce2 = coef_level1_at(f, s, c, 0.5);
  CHECK(ce2.se(0) == doctest::Approx(2.0 * ce.se(0)).epsilon(1e-12));

  // bias vector maps through the same basis weights: T_bar = 10
  c.b_theta = Eigen::Vector2d(0.12, -0.4);
  CoefEstimate ce3 = coef_level1_at(f, s, c, 0.5);
  CHECK(ce3.bias(0) == doctest::Approx(-0.04).epsilon(1e-12));

  CHECK_THROWS_AS(coef_level1_at(f, s, c, 0.0), InferError);
  CHECK_THROWS_AS(coef_level1_at(f, s, c, 1.0), InferError);
}

TEST_CASE("coefficient function values at reference parameters") {
  ModelSpec s = make_model_spec(
      {"const", "x_a"}, {"const"},
      {{"1", "-log(1-u)", "(u-0.5)^3"}, {"1", "-log(1-u)", "(u-0.5)^3"}}, {{"qnorm(v)"}});
  PanelDataset d = tiny_dataset({{0.1, 0.2}, {0.3, 0.4}}, {{0.1, 0.9}, {0.4, 0.7}});
  FitResult f = make_fit_at(d, s, {{1.0, 0.5, 0.0}, {1.0, 0.0, 10.0}}, {{0.5}},
                            {0.5, 0.5, 0.5, 0.5}, {0.5, 0.5});
  InferenceComponents c = identity_components(6, 100, 10);
  CoefEstimate ce = coef_level1_at(f, s, c, 0.6);
  const double expect0 = 1.0 + 0.5 * (-std::log(0.4));
  const double expect1 = 1.0 + 10.0 * std::pow(0.1, 3);
  CHECK(ce.value(0) == doctest::Approx(expect0).epsilon(1e-12));
  CHECK(ce.value(1) == doctest::Approx(expect1).epsilon(1e-12));
  // two-decimal reads: 1.46 and 1.01
  CHECK(std::round(ce.value(0) * 100.0) / 100.0 == 1.46);
  CHECK(std::round(ce.value(1) * 100.0) / 100.0 == 1.01);
}

TEST_CASE("brute-force oracle: every component on an unbalanced masked instance") {
  ModelSpec s = make_model_spec({"const", "x_a"}, {"const", "z_a"},
                                {{"1", "u"}, {"u", "u^2"}}, {{"v"}, {"v", "v^2"}});
  REQUIRE(s.q1() == 4);
  REQUIRE(s.q2() == 3);
  PanelDataset d = tiny_dataset(
      {{1.0, 1.2, 0.95, 1.3}, {1.1, 1.25}, {0.9, 1.35, 1.05, 1.15, 1.28}},
      {{0.2, 0.8, 0.5, 0.1}, {0.9, 0.3}, {0.6, 0.4, 0.7, 0.05, 0.95}},
      {0.3, 1.1, 0.7});
  std::vector<std::vector<double>> theta_rows = {{0.8, 0.6, 0.0}, {0.0, 0.4, 0.3}};
  std::vector<std::vector<double>> phi_rows = {{0.5, 0.0}, {0.2, 0.1}};
  FitResult f = make_fit(d, s, theta_rows, phi_rows, {0.15, 0.3, 0.2});
  InferenceComponents c = estimate_components(f, d, s);
  CHECK(c.n_floored_dens1 == 0);
  CHECK(c.n_floored_dens2 == 0);

  // Independent recomputation in full (d_x*d_b, d_z*d_c) coordinates with the
  // active submatrices selected only at the end.
  const int d_x = 2, d_b = 3, d_z = 2, d_c = 2;
  const int Q1 = d_x * d_b, Q2 = d_z * d_c;
  const int N = d.n_clusters();
  const long NT = d.total_obs();
  Eigen::MatrixXd theta(d_x, d_b), phi(d_z, d_c);
  theta << 0.8, 0.6, 0.0, 0.0, 0.4, 0.3;
  phi << 0.5, 0.0, 0.2, 0.1;

  Eigen::MatrixXd H1 = Eigen::MatrixXd::Zero(Q1, Q1), O1 = Eigen::MatrixXd::Zero(Q1, Q1);
  Eigen::MatrixXd H2 = Eigen::MatrixXd::Zero(Q2, Q2), O2 = Eigen::MatrixXd::Zero(Q2, Q2);
  Eigen::MatrixXd X21 = Eigen::MatrixXd::Zero(Q2, Q1);
  Eigen::VectorXd B1 = Eigen::VectorXd::Zero(Q1), B2 = Eigen::VectorXd::Zero(Q2);
  Eigen::VectorXd sig2(N), bet(N);
  std::vector<Eigen::MatrixXd> H2i(N);

  auto kron = [](const std::vector<double>& b, const Eigen::VectorXd& x) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(b.size()) * x.size());
    for (std::size_t k = 0; k < b.size(); ++k)
      for (Eigen::Index j = 0; j < x.size(); ++j)
        out(static_cast<Eigen::Index>(k) * x.size() + j) = b[k] * x(j);
    return out;
  };

  long off = 0;
  for (int i = 0; i < N; ++i) {
    const Cluster& cl = d.clusters[i];
    const long T = cl.y.size();
    double sinv = 0.0;
    std::vector<double> dens(T), curv(T), uh(T);
    for (long t = 0; t < T; ++t) {
      uh[t] = f.cdf.u_hat[off + t];
      Eigen::VectorXd xt = cl.x.row(t).transpose();
      std::vector<double> bp = s.basis1.deriv(uh[t], 1), bpp = s.basis1.deriv(uh[t], 2);
      dens[t] = 0.0;
      curv[t] = 0.0;
      for (int k = 0; k < d_b; ++k) {
        const double xtk = (xt.transpose() * theta.col(k))(0);
        dens[t] += xtk * bp[static_cast<std::size_t>(k)];
        curv[t] += xtk * bpp[static_cast<std::size_t>(k)];
      }
      sinv += 1.0 / dens[t];
    }
    const double s2 = T / sinv;
    double bsum = 0.0;
    for (long t = 0; t < T; ++t)
      bsum += (uh[t] - 0.5) / dens[t] - s2 * curv[t] / (24.0 * std::pow(dens[t], 3));
    const double bi = s2 * s2 * bsum / T;
    sig2(i) = s2;
    bet(i) = bi;

    Eigen::VectorXd m = Eigen::VectorXd::Zero(Q1);
    for (long t = 0; t < T; ++t)
      m += kron(s.basis1.eval(uh[t]), cl.x.row(t).transpose()) / dens[t];

    for (long t = 0; t < T; ++t) {
      Eigen::VectorXd xt = cl.x.row(t).transpose();
      std::vector<double> bu = s.basis1.eval(uh[t]), bp = s.basis1.deriv(uh[t], 1);
      std::vector<double> Bu = s.basis1.antideriv(uh[t]);
      Eigen::VectorXd g = kron(bu, xt);
      H1 += g * g.transpose() / dens[t];

      std::vector<double> num(static_cast<std::size_t>(d_b));
      for (int k = 0; k < d_b; ++k)
        num[static_cast<std::size_t>(k)] =
            (s2 * (uh[t] - 0.5) + bi) * bu[static_cast<std::size_t>(k)] / dens[t] -
            s2 * s2 * bu[static_cast<std::size_t>(k)] * curv[t] / (24.0 * std::pow(dens[t], 3)) -
            s2 * s2 * bp[static_cast<std::size_t>(k)] / (24.0 * dens[t] * dens[t]);
      B1 += kron(num, xt);

      std::vector<double> dev(static_cast<std::size_t>(d_b));
      const std::vector<double>& Bm = s.basis1.antideriv_mean();
      for (int k = 0; k < d_b; ++k)
        dev[static_cast<std::size_t>(k)] =
            Bm[static_cast<std::size_t>(k)] - Bu[static_cast<std::size_t>(k)];
      Eigen::VectorXd score = kron(dev, xt) + (s2 / T) * m * (uh[t] - 0.5);
      O1 += score * score.transpose();
    }
    H1 -= (s2 / T) * m * m.transpose();

    const double vh = f.cdf.v_hat[i];
    std::vector<double> cv = s.basis2.eval(vh), cp = s.basis2.deriv(vh, 1),
                        cpp = s.basis2.deriv(vh, 2), Cv = s.basis2.antideriv(vh);
    double dd = 0.0, c2v = 0.0;
    for (int k = 0; k < d_c; ++k) {
      const double zk = (cl.z.transpose() * phi.col(k))(0);
      dd += zk * cp[static_cast<std::size_t>(k)];
      c2v += zk * cpp[static_cast<std::size_t>(k)];
    }
    Eigen::VectorXd h = kron(cv, cl.z);
    H2 += h * h.transpose() / dd;
    H2i[i] = h * h.transpose() / dd - (s2 / T) * (h / dd) * (h / dd).transpose();
    X21 += (h / dd) * (s2 / T) * m.transpose();

    std::vector<double> num2(static_cast<std::size_t>(d_c));
    for (int k = 0; k < d_c; ++k)
      num2[static_cast<std::size_t>(k)] =
          (s2 * (vh - 0.5) - bi) * cv[static_cast<std::size_t>(k)] / dd +
          s2 * s2 * cv[static_cast<std::size_t>(k)] * c2v / (24.0 * std::pow(dd, 3)) -
          s2 * s2 * cp[static_cast<std::size_t>(k)] / (24.0 * dd * dd);
    B2 += kron(num2, cl.z);

    std::vector<double> dev2(static_cast<std::size_t>(d_c));
    const std::vector<double>& Cm = s.basis2.antideriv_mean();
    for (int k = 0; k < d_c; ++k)
      dev2[static_cast<std::size_t>(k)] =
          Cm[static_cast<std::size_t>(k)] - Cv[static_cast<std::size_t>(k)];
    Eigen::VectorXd w = kron(dev2, cl.z);
    O2 += w * w.transpose();
    off += T;
  }
  H1 /= static_cast<double>(NT);
  O1 /= static_cast<double>(NT);
  B1 /= static_cast<double>(NT);
  H2 /= N;
  O2 /= N;
  B2 /= N;
  X21 /= N;

  auto full1 = [&](int a) { return s.active1[a].col * d_x + s.active1[a].row; };
  auto full2 = [&](int a) { return s.active2[a].col * d_z + s.active2[a].row; };
  for (int a = 0; a < s.q1(); ++a) {
    CHECK(c.b_theta(a) == doctest::Approx(B1(full1(a))).epsilon(1e-12));
    for (int e = 0; e < s.q1(); ++e) {
      CHECK(c.H_theta(a, e) == doctest::Approx(H1(full1(a), full1(e))).epsilon(1e-12));
      CHECK(c.Omega_theta(a, e) == doctest::Approx(O1(full1(a), full1(e))).epsilon(1e-12));
    }
    for (int b = 0; b < s.q2(); ++b)
      CHECK(c.H_phitheta(b, a) == doctest::Approx(X21(full2(b), full1(a))).epsilon(1e-12));
  }
  for (int a = 0; a < s.q2(); ++a) {
    CHECK(c.b_phi(a) == doctest::Approx(B2(full2(a))).epsilon(1e-12));
    for (int e = 0; e < s.q2(); ++e) {
      CHECK(c.H_phi(a, e) == doctest::Approx(H2(full2(a), full2(e))).epsilon(1e-12));
      CHECK(c.Omega_phi(a, e) == doctest::Approx(O2(full2(a), full2(e))).epsilon(1e-12));
    }
  }
  for (int i = 0; i < N; ++i) {
    CHECK(c.sigma2(i) == doctest::Approx(sig2(i)).epsilon(1e-12));
    CHECK(c.beta_i(i) == doctest::Approx(bet(i)).epsilon(1e-12));
    for (int a = 0; a < s.q2(); ++a)
      for (int e = 0; e < s.q2(); ++e)
        CHECK(c.H_phi_i[i](a, e) == doctest::Approx(H2i[i](full2(a), full2(e))).epsilon(1e-12));
  }
  CHECK(c.sum_T == NT);
  CHECK(c.n_clusters == N);
}

TEST_CASE("fitted model: covariance invariants, determinism, continuity") {
  PanelDataset d = synth_dataset(12, 9);
  ModelSpec s = synth_spec();
  FitResult f = fit(d, s);
  REQUIRE(f.converged);

  InferenceComponents c1 = estimate_components(f, d, s, 1);
  InferenceComponents c3 = estimate_components(f, d, s, 3);
  CHECK((c1.H_theta - c3.H_theta).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((c1.Omega_theta - c3.Omega_theta).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((c1.b_theta - c3.b_theta).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((c1.H_phi - c3.H_phi).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((c1.H_phitheta - c3.H_phitheta).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((c1.sigma2 - c3.sigma2).lpNorm<Eigen::Infinity>() == 0.0);

  CHECK(c1.sigma2.minCoeff() > 0.0);

  auto check_psd = [](const Eigen::MatrixXd& m, double tol_scale) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    CHECK(es.eigenvalues().minCoeff() >= -tol_scale * m.trace());
  };
  check_psd(c1.Omega_theta, 1e-10);
  check_psd(c1.Omega_phi, 1e-10);

  // the global intercept cell ("1" x const) is profiled away by the fixed
  // effects: exactly one structural near-null direction, projected out
  CHECK(c1.structural_null1 == 1);

  CovarianceResult ct = covariance_theta(c1);
  CovarianceResult cp = covariance_phi(c1);
  CHECK((ct.cov - ct.cov.transpose()).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((cp.cov - cp.cov.transpose()).lpNorm<Eigen::Infinity>() < 1e-12);
  check_psd(ct.cov, 1e-10);
  check_psd(cp.cov, 1e-10);

  // standard errors vary continuously in the evaluation point
  for (double u : {0.3, 0.5, 0.7}) {
    CoefEstimate a = coef_level1_at(f, s, c1, u);
    CoefEstimate b = coef_level1_at(f, s, c1, u + 1e-3);
    for (int j = 0; j < a.se.size(); ++j) {
      CHECK(a.se(j) > 0.0);
      CHECK(std::abs(a.se(j) - b.se(j)) < 0.1 * a.se(j));
    }
  }
  CoefEstimate g2 = coef_level2_at(f, s, c1, 0.4);
  CHECK(g2.se(0) > 0.0);

  // cluster input order must not change any component
  PanelDataset dr = synth_dataset(12, 9, true);
  FitResult fr = fit(dr, s);
  InferenceComponents cr = estimate_components(fr, dr, s, 1);
  CHECK((c1.H_theta - cr.H_theta).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((c1.Omega_phi - cr.Omega_phi).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((c1.b_theta - cr.b_theta).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("floored densities are counted and reported, not fatal") {
  ModelSpec s = make_model_spec({"const"}, {"const"}, {{"1", "u"}}, {{"v"}});
  std::vector<std::vector<double>> ys(2, {0.0, 0.0});
  PanelDataset d = tiny_dataset(ys);

  // level-1 density 5e-11 sits below the floor at every observation
  FitResult f1 = make_fit_at(d, s, {{0.0, 5e-11}}, {{1.0}}, {0.3, 0.7, 0.4, 0.6}, {0.5, 0.5});
  InferenceComponents c1 = estimate_components(f1, d, s);
  CHECK(c1.n_floored_dens1 == 4);
  CHECK(c1.sigma2.minCoeff() > 0.0);
  REQUIRE(!c1.warnings.empty());
  CHECK(c1.warnings[0].find("floored") != std::string::npos);
  CHECK(c1.warnings[0].find("c0") != std::string::npos);

  // level-2 density exactly zero (phi = 0)
  FitResult f2 = make_fit_at(d, s, {{0.0, 1.0}}, {{0.0}}, {0.3, 0.7, 0.4, 0.6}, {0.5, 0.5});
  InferenceComponents c2 = estimate_components(f2, d, s);
  CHECK(c2.n_floored_dens2 == 2);
  bool found = false;
  for (const auto& w : c2.warnings) found = found || w.find("level-2") != std::string::npos;
  CHECK(found);
}

TEST_CASE("shape mismatches are rejected") {
  ModelSpec s = make_model_spec({"const"}, {"const"}, {{"1", "u"}}, {{"v"}});
  PanelDataset d = tiny_dataset({{0.1, 0.2}, {0.3, 0.4}});
  FitResult f = make_fit(d, s, {{0.0, 1.0}}, {{1.0}}, {0.15, 0.25});
  f.alpha.resize(3);
  CHECK_THROWS_WITH_AS(estimate_components(f, d, s), doctest::Contains("disagree"), InferError);
}
