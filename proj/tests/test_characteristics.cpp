#include "doctest.h"

#include <cmath>
#include <random>

#include "backstep/characteristics.hpp"
#include "backstep/transforms.hpp"
#include "backstep/verify.hpp"

using namespace backstep;
using doctest::Approx;

namespace {

SystemSpec speeds(std::vector<std::string> lam, int m, double eps = 0.25) {
  SystemSpec s = make_spec(static_cast<int>(lam.size()), m, eps);
  for (std::size_t i = 0; i < lam.size(); ++i) s.lambda[i] = ScalarField::parse(lam[i]);
  return synthesis_spec(s);
}

double bisect(const std::function<double(double)>& f, double lo, double hi) {
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (f(lo) * f(mid) <= 0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

const SystemSpec& example() {
  static const SystemSpec s = extend_time(catalog("example_1_5"), default_delta(catalog("example_1_5")));
  return s;
}

}  // namespace

TEST_CASE("flow of example_1_5") {
  CharacteristicCache cache(example());
  CHECK(flow(cache, 0, 2.5, 3.0, 0.2) == Approx(-2.5 + 3.0 + 0.2).epsilon(1e-12));
  for (double s : {0.5, 1.3, 2.0}) {
    const double t = 1.0, x = 0.1;
    const double exact = s + std::log(1 + s) - t - std::log(1 + t) + x;
    CHECK(std::abs(flow(cache, 1, s, t, x) - exact) <= 1e-8);
  }
  for (int i = 0; i < 2; ++i) CHECK(flow(cache, i, 0.7, 0.7, 0.4) == 0.4);
}

TEST_CASE("boundary times") {
  CharacteristicCache unit(speeds({"-1", "1"}, 1));
  const BoundaryTimes b = boundary_times(unit, 0, 3.0, 0.25);
  CHECK(b.s_in == Approx(2.25).epsilon(1e-10));
  CHECK(b.s_out == Approx(3.25).epsilon(1e-10));

  CharacteristicCache cache(example());
  const double oracle = bisect([](double s) { return (s - 1) + std::log((1 + s) / 2) - 1; }, 1.0, 3.0);
  CHECK(oracle == Approx(1.6999).epsilon(1e-4));
  CHECK(std::abs(boundary_times(cache, 1, 1.0, 0.0).s_out - oracle) <= 1e-6);
  for (double t : {0.0, 0.5, 4.0}) CHECK(boundary_times(cache, 0, t, 1.0).s_in == t);
  CHECK(boundary_times(cache, 1, 2.0, 0.0).s_in == 2.0);
}

TEST_CASE("memoized boundary times agree with fresh integration") {
  CharacteristicCache cache(example());
  for (double t : {0.3, 1.7, 5.0})
    for (double x : {0.0, 0.4, 1.0})
      for (int i = 0; i < 2; ++i) {
        const BoundaryTimes a = boundary_times(cache, i, t, x);
        const BoundaryTimes b = boundary_times_uncached(cache, i, t, x);
        CHECK(a.s_in == Approx(b.s_in).epsilon(1e-12));
        CHECK(a.s_out == Approx(b.s_out).epsilon(1e-12));
      }
  CHECK(cache.memo_size() > 0);
}

TEST_CASE("crossing times") {
  CharacteristicCache cache(speeds({"-2", "-1", "1"}, 2));
  const double t = 5.0, x = 0.6, xi = 0.3;
  CHECK(crossing_time(cache, 1, 0, t, x, xi, Direction::backward).value() == Approx(t - (x - xi)).epsilon(1e-9));
  CHECK(crossing_time(cache, 1, 0, t, 1.0, xi, Direction::backward).value() == Approx(t).epsilon(1e-12));
  CHECK_FALSE(crossing_time(cache, 1, 0, t, x, xi, Direction::forward).has_value());
  for (int i = 0; i < 2; ++i)
    CHECK(crossing_time(cache, i, i, t, x, xi, Direction::forward).value() ==
          Approx(boundary_times(cache, i, t, xi).s_out).epsilon(1e-9));
}

TEST_CASE("psi surfaces") {
  CharacteristicCache cache(speeds({"-2", "-1", "1"}, 2));
  for (double x : {0.1, 0.5, 0.9}) CHECK(psi(cache, 0, 1, 2.0, x) == Approx(x / 2).epsilon(1e-9));
  CHECK(psi(cache, 0, 1, 2.0, 0.0) == 0.0);
  CharacteristicCache one(example());
  CHECK_THROWS_AS(psi(one, 0, 1, 1.0, 0.5), std::invalid_argument);

  // exit-time characterization on a time-dependent pair
  CharacteristicCache tv(speeds({"-(3 + sin(t))", "-(1 + x/4)", "1"}, 2));
  for (double t : {0.5, 2.0})
    for (double x : {0.2, 0.7}) {
      const double p = psi(tv, 0, 1, t, x);
      if (p < 1.0) CHECK(boundary_times(tv, 1, t, p).s_out == Approx(boundary_times(tv, 0, t, x).s_out).epsilon(1e-8));
    }
  CHECK(check_psi(tv, 0, 1, 1e-5).pass);
  CHECK(check_psi(cache, 0, 1, 1e-6).pass);
}

TEST_CASE("omega exit times") {
  CharacteristicCache unit(speeds({"-1", "1"}, 1));
  CHECK(omega(unit, 0, 1.0, 2.0, 0.3) == Approx(2.3).epsilon(1e-10));
  CHECK(omega(unit, 0, 1.0, 2.0, 0.0) == 2.0);
  CHECK_THROWS_AS(omega(unit, 0, 1.5, 0.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(omega(unit, 1, 1.0, 0.0, 0.5), std::invalid_argument);

  // time-independent speed: Ω = φ(x) − νφ(ξ), φ(x) = ∫_0^x dy / (1 + y)
  CharacteristicCache lin(speeds({"-(1+x)", "1"}, 1));
  const double nu = 0.5, x = 0.8, xi = 0.3, t = 1.0;
  const double Om = omega(lin, 0, 1.0, t, x) - omega(lin, 0, nu, t, xi);
  CHECK(Om == Approx(std::log(1 + x) - nu * std::log(1 + xi)).epsilon(1e-8));
}

TEST_CASE("omega monotonicity and lower bounds on its derivatives") {
  CharacteristicCache tv(speeds({"-(3 + sin(t))", "-(1 + x/4)", "1"}, 2));
  for (int i = 0; i < 2; ++i) {
    const CheckReport r = check_omega(tv, i, 100, 3);
    INFO(r.note);
    CHECK(r.pass);
  }
  CharacteristicCache c(catalog("const_2x2"));
  CHECK(check_omega(c, 0, 100, 5).pass);

  // ∂tω ≥ εδ, ∂xω ≥ νδ, ∂νω ≥ 0
  const SystemSpec& s = tv.spec();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<> U(0.0, 1.0);
  const double h = 1e-5;
  for (int q = 0; q < 50; ++q) {
    const int i = q % 2;
    const double t = 0.1 + 5 * U(rng), x = 0.05 + 0.9 * U(rng), nu = 0.3 + 0.6 * U(rng);
    double sup_l = 0, sup_dl = 0;
    for (int a = 0; a <= 20; ++a)
      for (int k = 0; k <= 40; ++k) {
        sup_l = std::max(sup_l, std::abs(s.lam(i, k * 0.25, a / 20.0)));
        sup_dl = std::max(sup_dl, std::abs(s.dlam_dx(i, k * 0.25, a / 20.0)));
      }
    const double delta = std::exp(-sup_dl / s.eps) / sup_l;
    const double dt = (omega(tv, i, nu, t + h, x) - omega(tv, i, nu, t - h, x)) / (2 * h);
    const double dx = (omega(tv, i, nu, t, x + h) - omega(tv, i, nu, t, x - h)) / (2 * h);
    const double dn = (omega(tv, i, nu + h, t, x) - omega(tv, i, nu - h, t, x)) / (2 * h);
    // the sampled sup of |λ| slightly underestimates the true one
    CHECK(dt >= s.eps * delta * (1 - 1e-3));
    CHECK(dx >= nu * delta * (1 - 1e-3));
    CHECK(dn >= 0.0);
  }
}

TEST_CASE("settling time") {
  CharacteristicCache unit(speeds({"-1", "1"}, 1));
  CHECK(compute_topt(unit, 10, 21).value == Approx(2.0).epsilon(1e-9));
  CHECK(topt_time_independent(unit.spec()) == Approx(2.0).epsilon(1e-10));
  CharacteristicCache fast(speeds({"-2", "1"}, 1));
  CHECK(compute_topt(fast, 10, 21).value == Approx(1.5).epsilon(1e-9));
  CHECK(topt_time_independent(fast.spec()) == Approx(1.5).epsilon(1e-10));
  CHECK(std::abs(topt_time_independent(speeds({"-(1+x)", "1"}, 1)) - (std::log(2.0) + 1)) <= 1e-10);
  CHECK_THROWS_AS(topt_time_independent(example()), std::invalid_argument);

  CharacteristicCache cache(example());
  const ToptResult r = compute_topt(cache, 1e3);
  CHECK(r.tail_extrapolated);
  CHECK(r.value == Approx(2.0).epsilon(1e-3));
  CHECK(r.value < 2.0 / example().eps);
  CHECK(r.grid_max <= r.value);
}

TEST_CASE("property: group law of the flow") {
  CharacteristicCache cache(speeds({"-(3 + sin(t))", "-(1 + x/4)", "1 + t*x/10"}, 2));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<> U(0.0, 1.0);
  const double tol = 10 * 1e-10;  // RK4 at h_ode = 1e-3 on smooth speeds
  int inside = 0;
  for (int q = 0; q < 200; ++q) {
    const int i = q % 3;
    const double t = 1 + 2 * U(rng), x = U(rng), s = t + (U(rng) - 0.5), sigma = t + (U(rng) - 0.5);
    const double direct = flow(cache, i, sigma, t, x), mid = flow(cache, i, s, t, x);
    // outside [0,1] the speed is clamped in x and no longer smooth
    if (std::min(direct, mid) < 0 || std::max(direct, mid) > 1) continue;
    ++inside;
    CHECK(std::abs(direct - flow(cache, i, sigma, s, mid)) <= tol);
  }
  CHECK(inside >= 10);
}

TEST_CASE("property: exit times are invariant along their characteristic") {
  CharacteristicCache cache(speeds({"-(3 + sin(t))", "-(1 + x/4)", "1 + t*x/10"}, 2));
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<> U(0.0, 1.0);
  for (int q = 0; q < 60; ++q) {
    const int i = q % 3;
    const double t = 1 + 2 * U(rng), x = 0.1 + 0.8 * U(rng);
    const BoundaryTimes b = boundary_times(cache, i, t, x);
    const double s = b.s_in + (b.s_out - b.s_in) * (0.1 + 0.8 * U(rng));
    const BoundaryTimes c = boundary_times_uncached(cache, i, s, flow(cache, i, s, t, x));
    CHECK(std::abs(c.s_in - b.s_in) <= 1e-8);
    CHECK(std::abs(c.s_out - b.s_out) <= 1e-8);
  }
}

TEST_CASE("property: monotonicity, ordering and bounds of exit times") {
  const SystemSpec spec = speeds({"-(3 + sin(t))", "-(1 + x/4)", "1 + t*x/10"}, 2);
  CharacteristicCache cache(spec);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<> U(0.0, 1.0);
  const double h = 1e-3;
  for (int q = 0; q < 60; ++q) {
    const double t = 0.5 + 4 * U(rng), x = 0.05 + 0.9 * U(rng);
    for (int i = 0; i < 3; ++i) {
      const BoundaryTimes b0 = boundary_times(cache, i, t, x), b1 = boundary_times(cache, i, t + h, x);
      CHECK(b1.s_in > b0.s_in);
      CHECK(b1.s_out > b0.s_out);
      const BoundaryTimes bx = boundary_times(cache, i, t, x + h);
      if (i < 2) {
        CHECK(bx.s_out > b0.s_out);
        CHECK(bx.s_in > b0.s_in);
      } else {
        CHECK(bx.s_out < b0.s_out);
        CHECK(bx.s_in < b0.s_in);
      }
      CHECK(t - b0.s_in < 1.0 / spec.eps);
      CHECK(b0.s_out - t < 1.0 / spec.eps);
    }
    CHECK(boundary_times(cache, 0, t, x).s_out < boundary_times(cache, 1, t, x).s_out);
  }
}

TEST_CASE("property: psi residual and Omega decreasing along kernel characteristics") {
  CharacteristicCache cache(speeds({"-(3 + sin(t))", "-(1 + x/4)", "1"}, 2));
  const CheckReport r = check_psi(cache, 0, 1, 1e-5, 100, 21);
  INFO(r.residual);
  CHECK(r.pass);

  // along (χ_i(s;t,x), χ_j(s;t,ξ)) with j >= i the weight decreases
  const int i = 0;
  const double nu = omega_nu(cache.spec(), i);
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<> U(0.0, 1.0);
  for (int q = 0; q < 50; ++q) {
    const int j = 1 + q % 2;  // j > i among negative and positive families
    const double t = 1 + 3 * U(rng), x = 0.3 + 0.6 * U(rng), xi = 0.1 + 0.5 * (x - 0.1) * U(rng);
    auto Om = [&](double s) {
      return omega(cache, i, 1.0, s, flow(cache, i, s, t, x)) - omega(cache, i, nu, s, flow(cache, j, s, t, xi));
    };
    const double ds = 0.02;
    CHECK(Om(t + ds) < Om(t));
  }
}
