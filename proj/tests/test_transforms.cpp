#include "doctest.h"

#include <cmath>
#include <random>

#include "backstep/transforms.hpp"
#include "backstep/verify.hpp"

using namespace backstep;
using doctest::Approx;

namespace {

KernelGrid stationary_grid(int nx) { return {TimeAxis::stationary(), nx}; }

SystemSpec three_by_three() {
  return catalog("custom", {{"n", "3"},
                            {"m", "2"},
                            {"eps", "0.25"},
                            {"l1", "-2"},
                            {"l2", "-1"},
                            {"l3", "1"},
                            {"m12", "1"},
                            {"m21", "0.5"},
                            {"m13", "0.3"},
                            {"m31", "-1"},
                            {"m23", "0.4"},
                            {"q11", "1"},
                            {"q12", "0.5"}});
}

struct Solved {
  Pretransform pre;
  KernelTable K;
  MatrixTable G2;
};

Solved solve(const SystemSpec& spec, int nx) {
  CharacteristicCache cache(spec);
  Solved s{exp_pretransform(cache, stationary_grid(nx)), {}, {}};
  s.K = volterra_solve(s.pre, cache);
  s.G2 = g2_assemble(s.K, s.pre);
  return s;
}

double max_node_gap(const KernelTable& fine, const KernelTable& coarse) {
  const int r = fine.grid.nx / coarse.grid.nx;
  double worst = 0;
  for (int i = 0; i < coarse.rows; ++i)
    for (int j = 0; j < coarse.n; ++j)
      for (int a = 0; a <= coarse.grid.nx; ++a)
        for (int b = 0; b <= a; ++b)
          worst = std::max(worst, std::abs(coarse.entry(i, j).node_auto(0, a, b) - fine.entry(i, j).node_auto(0, r * a, r * b)));
  return worst;
}

}  // namespace

TEST_CASE("pre-transform removes a constant diagonal") {
  const double c = 0.7;
  const SystemSpec spec = catalog("const_2x2", {{"m11", "0.7"}});
  CharacteristicCache cache(spec);
  const Pretransform pre = exp_pretransform(cache, stationary_grid(20));
  for (double x : {0.0, 0.25, 0.5, 1.0}) CHECK(pre.phi_at(0, 0.0, x) == Approx(std::exp(-c * (1 - x))).epsilon(1e-9));
  CHECK(pre.phi_at(0, 0.0, 1.0) == Approx(1.0));
  CHECK(pre.m1(0, 0, 0.0, 0.3) == 0.0);
}

TEST_CASE("property: pre-transform invariants") {
  const SystemSpec spec = synthesis_spec(catalog("example_1_5", {{"m11", "1 + t*x/10"}, {"m22", "-x"}, {"m12", "0.5"}}));
  CharacteristicCache cache(spec);
  const TimeAxis axis = TimeAxis::window(-4.0, 6.0, 41);
  const Pretransform pre = exp_pretransform(cache, {axis, 20});
  for (int k = 0; k < axis.nt; ++k) {
    const double t = axis.node(k);
    CHECK(pre.phi_at(0, t, 1.0) == Approx(1.0).epsilon(1e-12));
    for (int a = 0; a <= 20; ++a) {
      CHECK(pre.phi_at(0, t, a / 20.0) > 0);
      CHECK(pre.phi_at(1, t, a / 20.0) > 0);
      CHECK(pre.m1(1, 1, t, a / 20.0) == 0.0);
    }
  }
  // r_ij = −m1_ij/(λ_j − λ_i)
  CHECK(pre.r(0, 1, 1.0, 0.5) == Approx(-pre.m1(0, 1, 1.0, 0.5) / (spec.lam(1, 1.0, 0.5) - spec.lam(0, 1.0, 0.5))));
}

TEST_CASE("Volterra kernel trace for a unit coupling") {
  const SystemSpec spec = catalog("const_2x2", {{"m12", "1"}});
  const Solved s = solve(spec, 20);
  for (int a = 0; a <= 20; ++a) CHECK(s.K.entry(0, 1).node_auto(0, a, a) == Approx(-0.5).epsilon(1e-12));
  CHECK(check_trace(s.K, s.pre, 5e-8).pass);
}

TEST_CASE("property: kernel identities on the 2x2 and 3x3 specs") {
  for (const SystemSpec& spec : {catalog("unstable_2x2", {{"c", "4"}}), three_by_three()}) {
    CAPTURE(spec.name);
    const Solved s = solve(spec, 20);
    CHECK(s.K.converged);
    const CheckReport tr = check_trace(s.K, s.pre, 5e-8);
    CAPTURE(tr.residual);
    CHECK(tr.pass);
    CHECK(check_reflection(s.K, s.pre).pass);
    CHECK(check_triangular(s.G2, spec.m, 5e-8).pass);
    CHECK(check_compatibility(s.K, s.pre, 5e-8).pass);
  }
}

TEST_CASE("property: kernel PDE residual vanishes under refinement") {
  const SystemSpec spec = three_by_three();
  double prev = 0;
  for (int nx : {20, 40, 80}) {
    const Solved s = solve(spec, nx);
    const CheckReport r = check_kernel_pde(s.K, s.pre, 1.0, 300, 9);
    MESSAGE("nx=" << nx << " kernel PDE residual " << r.residual << " over " << r.samples << " samples");
    CHECK(r.samples > 0);
    if (prev > 0) CHECK(r.residual < prev);
    prev = r.residual;
  }
}

TEST_CASE("Volterra kernel converges under grid refinement") {
  const SystemSpec spec = catalog("unstable_2x2", {{"c", "4"}});
  const Solved s10 = solve(spec, 10), s20 = solve(spec, 20), s40 = solve(spec, 40);
  const double e1 = max_node_gap(s20.K, s10.K), e2 = max_node_gap(s40.K, s20.K);
  MESSAGE("self-convergence gaps " << e1 << " " << e2);
  CHECK(e1 / e2 >= 1.8);
}

TEST_CASE("G2 of unstable_2x2 from raw kernel values") {
  const SystemSpec spec = catalog("unstable_2x2", {{"c", "4"}});
  const Solved s = solve(spec, 20);
  for (int a = 0; a <= 20; ++a) {
    const double k21 = s.K.entry(1, 0).node_auto(0, a, 0), k22 = s.K.entry(1, 1).node_auto(0, a, 0);
    const double expected = -k21 * (-1.0) - k22 * 1.0 * s.pre.q1(0, 0, 0.0);
    CHECK(s.G2.node(0, a)(1, 0) == Approx(expected).epsilon(1e-14));
    CHECK(s.G2.node(0, a)(0, 0) == 0.0);
    CHECK(s.G2.node(0, a).col(1).isZero(0.0));
  }
}

TEST_CASE("Fredholm kernel on constant speeds matches the transported data") {
  // λ = (−2, −1, 1): for the pair (2, 1), s_out_1(t, ξ) = t + ξ/2, the foot is x − ξ/2 and b = g/2.
  SystemSpec spec = make_spec(3, 2, 0.25);
  spec.lambda = {ScalarField(-2.0), ScalarField(-1.0), ScalarField(1.0)};
  CharacteristicCache cache(spec);
  const int nx = 40;
  const KernelGrid grid = stationary_grid(nx);
  MatrixTable G2 = MatrixTable::zeros(grid.time, nx, 3, 3);
  auto g = [](double x) { return 1.0 + 3.0 * x; };
  for (int a = 0; a <= nx; ++a) G2.node(0, a)(1, 0) = g(a / double(nx));
  const FredholmKernelTable H = fredholm_solve(G2, cache, grid);
  auto closed = [&](double x, double xi) { return xi < 2 * x ? g(x - xi / 2) / 2 : 0.0; };

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<> U(0.0, 1.0);
  std::uniform_int_distribution<> node(0, nx);
  for (int q = 0; q < 100; ++q) {
    const int a = node(rng), b = node(rng);
    const double x = a / double(nx), xi = b / double(nx);
    if (b == 2 * a) continue;  // on the surface both sheets are admissible
    CHECK(std::abs(H.entry(1, 0)->node_auto(0, a, b) - closed(x, xi)) <= 1e-8);
  }
  int checked = 0;
  while (checked < 100) {
    const double x = U(rng), xi = U(rng);
    if (std::abs(xi - 2 * x) < 3.0 / nx) continue;
    ++checked;
    CHECK(std::abs(H.eval(1, 0, 0.0, x, xi) - closed(x, xi)) <= 1e-8);
  }
  CHECK(H.entry(0, 1) == nullptr);
  CHECK(check_nilpotency(H).pass);
}

TEST_CASE("F2 equals a dense solve of the discretized Fredholm equation") {
  const SystemSpec spec = three_by_three();
  const Solved s = solve(spec, 20);
  CharacteristicCache cache(spec);
  const FredholmKernelTable H = fredholm_solve(s.G2, cache, s.K.grid);
  const MatrixTable F2 = f2_solve(H, 3);
  const int nx = 20, m = 2, N = nx + 1;
  // unknown row vector f over (i, b): f = −H(1,·) + Σ_c w_c f(ζ_c) H(ζ_c, ·)
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(m * N, m * N);
  Eigen::MatrixXd rhs(m, m * N);
  for (int b = 0; b < N; ++b)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) rhs(i, j * N + b) = i > j ? -H.entry(i, j)->node_auto(0, nx, b) : 0.0;
  for (int c = 0; c < N; ++c) {
    const double w = (c == 0 || c == nx ? 0.5 : 1.0) / nx;
    for (int b = 0; b < N; ++b)
      for (int l = 0; l < m; ++l)
        for (int j = 0; j < l; ++j) A(l * N + c, j * N + b) -= w * H.entry(l, j)->node_auto(0, c, b);
  }
  // f A = rhs
  const Eigen::MatrixXd f = A.transpose().fullPivLu().solve(rhs.transpose()).transpose();
  double worst = 0;
  for (int b = 0; b < N; ++b)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) worst = std::max(worst, std::abs(F2.node(0, b)(i, j) - f(i, j * N + b)));
  CHECK(worst <= 1e-10);
  CHECK(F2.node(0, 0).col(2).isZero(0.0));
  CHECK(check_fredholm_residual(H, F2).pass);
  CHECK(check_nilpotency(H).pass);
}

TEST_CASE("kernel tables: node queries and two-sheet jumps") {
  const SystemSpec spec = catalog("unstable_2x2", {{"c", "4"}});
  const Solved s = solve(spec, 10);
  for (int a = 0; a <= 10; ++a)
    for (int b = 0; b <= a; ++b)
      CHECK(kernel_eval(s.K, 0, 1, 0.0, a / 10.0, b / 10.0) == s.K.entry(0, 1).node_auto(0, a, b));

  const KernelGrid grid = stationary_grid(10);
  SheetedField f = SheetedField::split(grid, true);
  for (auto& v : f.psi.v) v = 0.45;
  for (int a = 0; a <= 10; ++a)
    for (int b = 0; b <= a; ++b) {
      const std::size_t id = grid.index(0, a, b);
      const bool below = b / 10.0 < 0.45;
      f.region[id] = below ? SheetedField::below_only : SheetedField::above_only;
      (below ? f.below : f.above)[id] = below ? 1.0 : 2.0;
    }
  f.fill_ghosts();
  CHECK(f.eval(0.0, 0.9, 0.44) == Approx(1.0));
  CHECK(f.eval(0.0, 0.9, 0.46) == Approx(2.0));
  CHECK(f.eval(0.0, 0.9, 0.44, Side::above) == Approx(2.0));
  CHECK(f.eval(0.0, 0.9, 0.46, Side::below) == Approx(1.0));
}

TEST_CASE("gain synthesis") {
  SynthesisOptions opt;
  opt.nx = 20;
  opt.t_horizon = 4.0;
  const Synthesis zero = synthesize(catalog("example_1_5"), opt);
  for (const auto& M : zero.gain.F.v) CHECK(M.isZero(0.0));
  CHECK(zero.topt.value == Approx(2.0).epsilon(1e-3));
  CHECK(zero.gain.F.time.t0 == 0.0);
  CHECK(zero.gain.F.time.t1 == 4.0);

  opt.compute_topt = false;
  const Synthesis u = synthesize(catalog("unstable_2x2", {{"c", "4"}}), opt);
  CHECK(u.gain.F.time.mode == TimeAxis::Mode::stationary);
  // m = 1: F2 = 0 and F1 is the kernel trace at x = 1
  for (int b = 0; b <= 20; ++b) {
    CHECK(u.gain.F2.node(0, b).isZero(0.0));
    CHECK(u.gain.F1.node(0, b)(0, 1) == u.K.entry(0, 1).node_auto(0, 20, b));
  }
  CHECK_THROWS_AS(synthesize(catalog("remark_1_7_3x3"), opt), HypothesisError);
}
