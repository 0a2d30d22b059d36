#include "doctest.h"

#include <cmath>

#include "backstep/system.hpp"

using namespace backstep;
using doctest::Approx;

TEST_CASE("expression parser evaluates the catalog speeds") {
  CHECK(Expression::parse("1 + 1/(1+t)")(0.0, 0.0) == 2.0);
  CHECK(Expression::parse("-(x)")(0.0, 0.5) == -0.5);
  CHECK(std::abs(Expression::parse("exp(-t)")(1.0, 0.0) - 1.0 / std::exp(1.0)) <= 1e-12);
}

TEST_CASE("expression precedence and associativity") {
  CHECK(Expression::parse("2^3^2")(0, 0) == 512.0);
  CHECK(Expression::parse("-2^2")(0, 0) == -4.0);
  CHECK(Expression::parse("8/4/2")(0, 0) == 1.0);
  CHECK(Expression::parse("1 - 2 - 3")(0, 0) == -4.0);
  CHECK(Expression::parse("2*3+4*5")(0, 0) == 26.0);
  CHECK(Expression::parse("log(exp(t*x))")(2.0, 0.5) == Approx(1.0).epsilon(1e-14));
  CHECK(Expression::parse("sin(pi*x)")(0.0, 0.5) == Approx(1.0).epsilon(1e-14));
  CHECK(Expression::parse("cos(2*pi*t)")(1.0, 0.0) == Approx(1.0).epsilon(1e-14));
}

TEST_CASE("expression printing round trips") {
  for (const char* text : {"1 + 1/(1+t)", "-(1 - exp(-t)/2)", "x^2*t - 3", "sin(2*pi*t)*x", "-x^2"}) {
    const Expression e = Expression::parse(text);
    const Expression again = Expression::parse(e.str());
    CHECK(e == again);
    CHECK(again(0.7, 0.3) == e(0.7, 0.3));
  }
}

TEST_CASE("expression dependencies and constants") {
  const Expression e = Expression::parse("3*x + 1");
  CHECK(e.depends_on_x());
  CHECK_FALSE(e.depends_on_t());
  CHECK_FALSE(e.constant().has_value());
  CHECK(Expression::parse("2*(1+1)").constant().value() == 4.0);
}

TEST_CASE("parse errors report the offset") {
  CHECK_THROWS_AS(Expression::parse("1 +"), ParseError);
  CHECK_THROWS_AS(Expression::parse("foo(t)"), ParseError);
  CHECK_THROWS_AS(Expression::parse("(t"), ParseError);
  CHECK_THROWS_AS(Expression::parse("y"), ParseError);
  try {
    Expression::parse("1 + $");
    FAIL("no throw");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 4);
  }
}

TEST_CASE("tabulated field is exact at nodes and bilinear between") {
  Table2 tb;
  tb.t_axis = {0.0, 1.0, 2.0};
  tb.x_axis = {0.0, 0.5, 1.0};
  tb.values.resize(3, 3);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) tb.values(a, b) = tb.t_axis[a] * tb.x_axis[b];
  const ScalarField f(tb);
  for (double t : tb.t_axis)
    for (double x : tb.x_axis) CHECK(f(t, x) == t * x);
  CHECK(f(0.5, 0.25) == Approx(0.125));
  CHECK_THROWS_AS(evaluate(f, 3.0, 0.5), DomainError);
  CHECK(f.depends_on_t());
}

TEST_CASE("periodic tables wrap in time") {
  Table2 tb;
  tb.t_axis = {0.0, 0.5, 1.0};
  tb.x_axis = {0.0, 1.0};
  tb.values.resize(3, 2);
  tb.values << 0, 0, 1, 1, 0, 0;
  tb.policy = Table2::TimePolicy::periodic;
  tb.period = 1.0;
  const ScalarField f(tb);
  CHECK(f(1.5, 0.0) == Approx(1.0));
  CHECK(f(-0.25, 1.0) == Approx(0.5));
}

TEST_CASE("fields clamp x to the unit interval") {
  const ScalarField f = ScalarField::parse("x");
  CHECK(f(0.0, 1.5) == 1.0);
  CHECK(f(0.0, -0.5) == 0.0);
}

TEST_CASE("periodic extension reads one period back") {
  SystemSpec s = catalog("const_2x2", {{"l1", "-(1 + sin(2*pi*t)/4)"}, {"period", "1"}});
  CHECK(s.lam(0, -0.25, 0.3) == Approx(s.lam(0, 0.75, 0.3)).epsilon(1e-14));
}

TEST_CASE("delta extension of example_1_5") {
  const SystemSpec s = extend_time(catalog("example_1_5"), 0.05);
  // λ(0) + δ(λ(0) − λ(1 − e^{t/δ})) at t = −1 with λ(0) = 2 and λ(1) = 3/2
  const double expected = 2.0 + 0.05 * (2.0 - (1.0 + 1.0 / (2.0 - std::exp(-20.0))));
  CHECK(s.lam(1, -1.0, 0.0) == Approx(expected).epsilon(1e-14));
  CHECK(s.lam(1, -1.0, 0.0) == Approx(2.025).epsilon(1e-8));
  CHECK(s.lam(1, 0.0, 0.0) == 2.0);
  // the extended speed stays separated from 0 and from λ_1 by more than ε/2
  for (double t = -4.0; t < 0; t += 0.01) {
    CHECK(s.lam(1, t, 0.5) > s.eps / 2);
    CHECK(s.lam(1, t, 0.5) - s.lam(0, t, 0.5) > s.eps / 2);
  }
}

TEST_CASE("time before zero needs an extension") {
  const SystemSpec s = catalog("example_1_5");
  CHECK_THROWS_AS(s.lam(1, -0.5, 0.0), DomainError);
  CHECK(s.lam(1, -1e-12, 0.0) == 2.0);
  CHECK_THROWS_AS(extend_time(s, 0.0), std::invalid_argument);
}

TEST_CASE("validation flags sign and gap violations") {
  SystemSpec a = make_spec(2, 1, 0.5);
  a.lambda = {ScalarField(-1.0), ScalarField(-0.5)};
  const ValidationReport ra = validate(a);
  CHECK_FALSE(ra.ok());
  bool sign = false;
  for (const auto& v : ra.violations) sign = sign || v.kind == "sign";
  CHECK(sign);

  SystemSpec b = make_spec(3, 2, 0.5);
  b.lambda = {ScalarField(-1.0), ScalarField(-1.0 + 0.25), ScalarField(1.0)};
  const ValidationReport rb = validate(b);
  CHECK(rb.only("gap"));

  CHECK(validate(catalog("example_1_5")).ok());
  CHECK(validate(catalog("unstable_2x2", {{"c", "4"}})).ok());
}

TEST_CASE("catalog entries") {
  const SystemSpec u = catalog("unstable_2x2", {{"c", "4"}});
  CHECK(u.m_at(0, 1, 0.0, 0.5) == -4.0);
  CHECK(u.m_at(1, 0, 3.0, 0.5) == -4.0);
  CHECK(u.q_at(0, 0, 0.0) == 1.0);
  CHECK_THROWS_AS(catalog("unstable_2x2"), std::invalid_argument);
  CHECK_THROWS_AS(catalog("nope"), std::invalid_argument);

  const SystemSpec r = catalog("remark_1_7_3x3");
  CHECK(r.simulation_only);
  CHECK(r.lam(1, 0.0, 0.2) == Approx(-0.5));
  CHECK(r.Q_at(0.0)(0, 1) == 1.0);

  const SystemSpec c = catalog("custom", {{"n", "3"}, {"m", "1"}, {"eps", "0.25"}, {"l1", "-1"}, {"l2", "1"}, {"l3", "2"}});
  CHECK(c.n == 3);
  CHECK(c.Q_at(0.0).rows() == 2);
  CHECK(validate(c).ok());
}

TEST_CASE("time independence detection") {
  CHECK(is_time_independent(catalog("unstable_2x2", {{"c", "4"}})));
  CHECK_FALSE(is_time_independent(catalog("example_1_5")));
}

TEST_CASE("default extension parameter is admissible") {
  const SystemSpec s = catalog("example_1_5");
  const double d = default_delta(s);
  CHECK(d == Approx(0.5 / (16 * 2.0)));
  CHECK_NOTHROW(extend_time(s, d));
}
