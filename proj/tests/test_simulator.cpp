#include "doctest.h"

#include <cmath>

#include "backstep/simulator.hpp"
#include "backstep/verify.hpp"

using namespace backstep;
using doctest::Approx;

namespace {

StateSnapshot sines(int n, int N, double t0 = 0.0) {
  return sample_state(n, N, t0, [](int, double x) { return std::sin(M_PI * x); });
}

double bump(double x) { return std::pow(std::sin(M_PI * x), 2); }

// example_1_5 without coupling or control, started from sin²(πx) which meets the boundary relations to first order:
// y1 leaves at unit speed, y2 carries y1(·,0) in.
double exact_example(int i, double t, double x) {
  if (i == 0) return x + t < 1 ? bump(x + t) : 0.0;
  const double level = t + std::log(1 + t) - x;
  if (level <= 0) return bump(-level);
  double lo = 0, hi = t;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mid + std::log(1 + mid) < level ? lo : hi) = mid;
  }
  const double s = 0.5 * (lo + hi);
  return s < 1 ? bump(s) : 0.0;
}

}  // namespace

TEST_CASE("pure transport empties the domain") {
  const SystemSpec spec = catalog("const_2x2");
  for (double t0 : {0.0, 3.0}) {
    const Trace tr = simulate(open_loop(spec), sines(2, 100, t0), 2.0, 0.01);
    CHECK(tr.t.back() == Approx(t0 + 2.0));
    CHECK(tr.l2.back() <= 1e-10);
  }
}

TEST_CASE("transport with time-dependent speed converges at first order or better") {
  const SystemSpec spec = catalog("example_1_5");
  const double T = 1.5;
  std::vector<double> err;
  for (int N : {100, 200, 400}) {
    const Trace tr = simulate(open_loop(spec), sample_state(2, N, 0.0, [](int, double x) { return bump(x); }), T, 1.0 / N);
    const StateSnapshot& y = tr.last();
    double e = 0;
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k <= N; ++k) e = std::max(e, std::abs(y.y(i, k) - exact_example(i, y.t, y.x(k))));
    err.push_back(e);
  }
  MESSAGE("max errors " << err[0] << " " << err[1] << " " << err[2]);
  CHECK(err[0] / err[1] >= 1.6);
  CHECK(err[1] / err[2] >= 1.6);
}

TEST_CASE("zero duration returns the initial state") {
  const StateSnapshot y0 = sines(2, 50);
  const Trace tr = simulate(open_loop(catalog("unstable_2x2", {{"c", "4"}})), y0, 0.0, 0.02);
  REQUIRE(tr.snapshots.size() == 1);
  CHECK(tr.snapshots[0].y == y0.y);
  CHECK(tr.t.size() == 1);
}

TEST_CASE("trace bookkeeping") {
  SimulationOptions so;
  so.store_every = 10;
  const Trace tr = simulate(open_loop(catalog("unstable_2x2", {{"c", "2"}})), sines(2, 40), 1.0, 0.025, so);
  CHECK(tr.t.size() == 41);
  CHECK(tr.snapshots.size() == 5);
  CHECK(tr.last().t == Approx(1.0));
  for (std::size_t q = 1; q < tr.t.size(); ++q) CHECK(tr.t[q] - tr.t[q - 1] == Approx(0.025));
}

TEST_CASE("open loop growth for strong coupling") {
  const Trace tr = simulate(open_loop(catalog("unstable_2x2", {{"c", "4"}})), sines(2, 100), 4.0, 0.01);
  CHECK(tr.l2.back() > 2 * tr.l2.front());
}

TEST_CASE("Volterra operator on constants") {
  KernelTable K;
  K.grid = {TimeAxis::stationary(), 10};
  K.n = 2;
  K.m = 1;
  K.rows = 1;
  K.entries = {SheetedField::single(K.grid, true), SheetedField::single(K.grid, true)};
  std::fill(K.entries[0].below.begin(), K.entries[0].below.end(), 1.0);
  const StateSnapshot w = sample_state(2, 20, 0.0, [](int, double) { return 1.0; });
  const StateSnapshot g = apply_volterra(K, w);
  for (int k = 0; k <= 20; ++k) {
    CHECK(g.y(0, k) == Approx(1.0 - w.x(k)).epsilon(1e-14));
    CHECK(g.y(1, k) == 1.0);
  }
}

TEST_CASE("Fredholm operator on constants") {
  FredholmKernelTable H;
  H.grid = {TimeAxis::stationary(), 10};
  H.m = 2;
  H.entries.resize(4);
  SheetedField f = SheetedField::single(H.grid, false);
  std::fill(f.below.begin(), f.below.end(), 1.0);
  H.entries[2] = f;  // h_21
  const StateSnapshot z = sample_state(3, 20, 0.0, [](int, double) { return 1.0; });
  const StateSnapshot g = apply_fredholm(H, z);
  for (int k = 0; k <= 20; ++k) {
    CHECK(g.y(0, k) == 1.0);
    CHECK(std::abs(g.y(1, k)) <= 1e-14);
    CHECK(g.y(2, k) == 1.0);
  }
}

TEST_CASE("L2 norms") {
  CHECK(l2_norm(sample_state(2, 10, 0, [](int, double) { return 0.0; })) == 0.0);
  CHECK(l2_norm(sample_state(3, 10, 0, [](int, double) { return 1.0; })) == Approx(std::sqrt(3.0)).epsilon(1e-14));
  CHECK(l2_norm(sines(1, 64)) == Approx(1 / std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("finite-time check on pure transport") {
  FiniteTimeOptions fo;
  fo.T = 2.0;
  fo.N = 100;
  fo.dt = 0.01;
  fo.tol = 1e-10;
  fo.t0 = {0.0, 1.5};
  const CheckReport r = check_finite_time(open_loop(catalog("const_2x2")), fo);
  CHECK(r.pass);
  CHECK(r.samples == 2);
}

TEST_CASE("compatible initial data meet the boundary relations") {
  GeneralSystem sys = open_loop(catalog("unstable_2x2", {{"c", "4"}}));
  sys.F = [](double, double xi) {
    Eigen::MatrixXd F(1, 2);
    F << xi, 1.0 - xi;
    return F;
  };
  const StateSnapshot y = compatible_state(sys, sample_state(2, 40, 0, [](int i, double x) { return i + std::cos(x); }));
  double integral = 0;
  for (int k = 0; k <= 40; ++k) integral += (k == 0 || k == 40 ? 0.5 : 1.0) / 40 * (sys.F(0, y.x(k)) * y.y.col(k))(0);
  CHECK(y.y(0, 40) == Approx(integral).epsilon(1e-12));
  CHECK(y.y(1, 0) == Approx(y.y(0, 0)).epsilon(1e-12));
}

TEST_CASE("blow-up is reported as a numerical error") {
  SystemSpec spec = catalog("unstable_2x2", {{"c", "1e200"}});
  CHECK_THROWS_AS(simulate(open_loop(spec), sines(2, 20), 5.0, 0.05), NumericalError);
}
