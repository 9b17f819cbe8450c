#include "panelq/quadrature.hpp"

#include <array>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace panelq::quad {

namespace {

// Legendre roots by Newton iteration on the three-term recurrence.
void build_rule(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
    w[n - 1 - i] = w[i];
  }
}

struct Rules {
  std::vector<double> x16, w16, x32, w32, x64, w64;
  Rules() {
    build_rule(16, x16, w16);
    build_rule(32, x32, w32);
    build_rule(64, x64, w64);
  }
};

const Rules& rules() {
  static const Rules r;
  return r;
}

}  // namespace

void gl_rule(int n, const double** nodes, const double** weights) {
  const Rules& r = rules();
  switch (n) {
    case 16: *nodes = r.x16.data(); *weights = r.w16.data(); return;
    case 32: *nodes = r.x32.data(); *weights = r.w32.data(); return;
    case 64: *nodes = r.x64.data(); *weights = r.w64.data(); return;
    default: throw std::invalid_argument("gl_rule: unsupported order");
  }
}

}  // namespace panelq::quad
