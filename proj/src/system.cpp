#include "backstep/system.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

namespace backstep {

namespace {

double wrap(double t, double period) {
  double u = std::fmod(t, period);
  if (u < 0) u += period;
  return u;
}

}  // namespace

double SystemSpec::extension_time(double t) const {
  if (t >= 0) return t;
  if (period) return wrap(t, *period);
  return 0.0;
}

double SystemSpec::lam(int i, double t, double x) const {
  x = std::clamp(x, 0.0, 1.0);
  const ScalarField& f = lambda[i];
  if (t >= 0) return f(t, x);
  if (!period && !delta && (t > -1e-9 || !f.depends_on_t())) return f(0.0, x);
  if (period) return f(wrap(t, *period), x);
  if (!delta) throw DomainError(fmt::format("t = {} needs a time extension", t));
  const double d = *delta;
  const double l0 = f(0.0, x);
  return l0 + d * (l0 - f(-std::expm1(t / d), x));
}

double SystemSpec::dlam_dx(int i, double t, double x) const {
  constexpr double h = 1e-6;
  const double lo = std::max(0.0, x - h);
  const double hi = std::min(1.0, x + h);
  return (lam(i, t, hi) - lam(i, t, lo)) / (hi - lo);
}

double SystemSpec::m_at(int i, int j, double t, double x) const {
  return M[i][j](extension_time(t), std::clamp(x, 0.0, 1.0));
}

double SystemSpec::q_at(int l, int j, double t) const { return Q[l][j](extension_time(t), 0.0); }

Eigen::VectorXd SystemSpec::lambda_at(double t, double x) const {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = lam(i, t, x);
  return v;
}

Eigen::MatrixXd SystemSpec::M_at(double t, double x) const {
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = m_at(i, j, t, x);
  return a;
}

Eigen::MatrixXd SystemSpec::Q_at(double t) const {
  Eigen::MatrixXd a(p(), m);
  for (int l = 0; l < p(); ++l)
    for (int j = 0; j < m; ++j) a(l, j) = q_at(l, j, t);
  return a;
}

SystemSpec make_spec(int n, int m, double eps) {
  if (n < 2 || m < 1 || m > n - 1) throw std::invalid_argument("need n >= 2 and 1 <= m <= n-1");
  if (!(eps > 0)) throw std::invalid_argument("eps must be positive");
  SystemSpec s;
  s.n = n;
  s.m = m;
  s.eps = eps;
  s.lambda.assign(n, ScalarField(0.0));
  s.M.assign(n, std::vector<ScalarField>(n, ScalarField(0.0)));
  s.Q.assign(n - m, std::vector<ScalarField>(m, ScalarField(0.0)));
  return s;
}

double default_delta(const SystemSpec& spec) {
  double sup = 0.0;
  for (int i = 0; i < spec.n; ++i)
    for (int a = 0; a <= 20; ++a)
      for (int b = 0; b <= 20; ++b) sup = std::max(sup, std::abs(spec.lambda[i](0.5 * a, b / 20.0)));
  return spec.eps / (16.0 * std::max(sup, 1e-12));
}

SystemSpec extend_time(SystemSpec spec, double delta) {
  if (!(delta > 0)) throw std::invalid_argument("delta must be positive");
  spec.delta = delta;
  if (spec.period) return spec;
  ValidationOptions opt;
  opt.nt = 81;
  opt.nx = 41;
  opt.t_max = 0.0;
  opt.eps_scale = 0.5;
  opt.include_extension = true;
  const ValidationReport rep = validate(spec, opt);
  for (const Violation& v : rep.violations)
    if (v.t < 0 && v.kind != "periodic")
      throw std::invalid_argument(fmt::format("delta = {} too large: {} violated at t = {}", delta, v.kind, v.t));
  return spec;
}

bool ValidationReport::only(const std::string& kind) const {
  if (violations.empty()) return false;
  return std::all_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.kind == kind; });
}

ValidationReport validate(const SystemSpec& spec, const ValidationOptions& opt) {
  ValidationReport rep;
  const double eps = spec.eps * opt.eps_scale;
  std::vector<double> ts;
  const double t_hi = spec.period ? *spec.period : opt.t_max;
  for (int k = 0; k < opt.nt; ++k) ts.push_back(opt.nt == 1 ? 0.0 : t_hi * k / (opt.nt - 1));
  if (opt.include_extension && (spec.delta || spec.period)) {
    const double lo = -2.0 / spec.eps;
    for (int k = 0; k < opt.nt; ++k) ts.push_back(lo * (k + 1) / opt.nt);
  }
  auto add = [&](std::string kind, int i, double t, double x, double v, std::string d) {
    rep.violations.push_back({std::move(kind), i, t, x, v, std::move(d)});
  };
  std::vector<double> lam(spec.n);
  for (double t : ts) {
    for (int a = 0; a < opt.nx; ++a) {
      const double x = opt.nx == 1 ? 0.0 : static_cast<double>(a) / (opt.nx - 1);
      ++rep.samples;
      for (int i = 0; i < spec.n; ++i) {
        lam[i] = spec.lam(i, t, x);
        if (!std::isfinite(lam[i])) {
          add("bounded", i, t, x, lam[i], "non-finite speed");
          continue;
        }
        const bool neg = i < spec.m;
        if (neg ? !(lam[i] < 0) : !(lam[i] > 0))
          add("sign", i, t, x, lam[i], neg ? "speed should be negative" : "speed should be positive");
        if (!(std::abs(lam[i]) > eps))
          add("separation", i, t, x, lam[i], fmt::format("|lambda| not > eps = {}", eps));
      }
      for (int i = 0; i + 1 < spec.n; ++i)
        if (!(lam[i + 1] - lam[i] > eps))
          add("gap", i, t, x, lam[i + 1] - lam[i], fmt::format("lambda_{} - lambda_{} not > eps = {}", i + 2, i + 1, eps));
      for (int i = 0; i < spec.n; ++i)
        for (int j = 0; j < spec.n; ++j)
          if (!std::isfinite(spec.m_at(i, j, t, x))) add("bounded", i, t, x, spec.m_at(i, j, t, x), "non-finite coupling");
      if (spec.period && t >= 0) {
        const double tau = *spec.period;
        auto check = [&](const ScalarField& f, int i, const char* what) {
          const double a0 = f(t, x), a1 = f(t + tau, x);
          if (std::abs(a1 - a0) > 1e-9 * (1.0 + std::abs(a0))) add("periodic", i, t, x, a1 - a0, what);
        };
        for (int i = 0; i < spec.n; ++i) {
          check(spec.lambda[i], i, "speed not periodic");
          for (int j = 0; j < spec.n; ++j) check(spec.M[i][j], i, "coupling not periodic");
        }
        if (a == 0)
          for (int l = 0; l < spec.p(); ++l)
            for (int j = 0; j < spec.m; ++j) check(spec.Q[l][j], spec.m + l, "boundary matrix not periodic");
      }
    }
    for (int l = 0; l < spec.p(); ++l)
      for (int j = 0; j < spec.m; ++j)
        if (!std::isfinite(spec.q_at(l, j, t))) add("bounded", spec.m + l, t, 0.0, spec.q_at(l, j, t), "non-finite boundary coefficient");
  }
  return rep;
}

bool is_time_independent(const SystemSpec& spec, int samples) {
  auto flat = [&](const ScalarField& f, bool x_dependent) {
    if (!f.depends_on_t()) return true;
    for (int k = 1; k < samples; ++k) {
      const double t = 10.0 * k / (samples - 1);
      for (int a = 0; a <= (x_dependent ? 10 : 0); ++a) {
        const double x = a / 10.0;
        if (f(t, x) != f(0.0, x)) return false;
      }
    }
    return true;
  };
  for (int i = 0; i < spec.n; ++i) {
    if (!flat(spec.lambda[i], true)) return false;
    for (int j = 0; j < spec.n; ++j)
      if (!flat(spec.M[i][j], true)) return false;
  }
  for (auto& row : spec.Q)
    for (auto& f : row)
      if (!flat(f, false)) return false;
  return true;
}

namespace {

std::string get(const Params& p, const std::string& key, const std::string& fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

std::string require(const Params& p, const std::string& key, const std::string& name) {
  auto it = p.find(key);
  if (it == p.end()) throw std::invalid_argument(fmt::format("catalog '{}' is missing parameter '{}'", name, key));
  return it->second;
}

double number(const std::string& text) {
  const Expression e = Expression::parse(text);
  auto c = e.constant();
  if (!c) throw std::invalid_argument("expected a constant, got '" + text + "'");
  return *c;
}

void fill_coupling(SystemSpec& s, const Params& p, const std::string& fallback) {
  for (int i = 0; i < s.n; ++i)
    for (int j = 0; j < s.n; ++j) s.M[i][j] = ScalarField::parse(get(p, fmt::format("m{}{}", i + 1, j + 1), fallback));
}

}  // namespace

SystemSpec catalog(const std::string& name, const Params& params) {
  if (name == "example_1_5") {
    SystemSpec s = make_spec(2, 1, number(get(params, "eps", "0.5")));
    s.name = name;
    s.lambda[0] = ScalarField::parse("-1");
    s.lambda[1] = ScalarField::parse("1 + 1/(1+t)");
    fill_coupling(s, params, "0");
    s.Q[0][0] = ScalarField::parse(get(params, "q", "1"));
    return s;
  }
  if (name == "unstable_2x2") {
    SystemSpec s = make_spec(2, 1, number(get(params, "eps", "0.5")));
    s.name = name;
    const double c = number(require(params, "c", name));
    s.lambda[0] = ScalarField(-1.0);
    s.lambda[1] = ScalarField(1.0);
    s.M[0][1] = ScalarField(-c);
    s.M[1][0] = ScalarField(-c);
    s.Q[0][0] = ScalarField(1.0);
    return s;
  }
  if (name == "remark_1_7_3x3") {
    SystemSpec s = make_spec(3, 2, number(get(params, "eps", "0.25")));
    s.name = name;
    s.lambda[0] = ScalarField::parse("-1");
    s.lambda[1] = ScalarField::parse("-(1 - exp(-t)/2)");
    s.lambda[2] = ScalarField::parse("1");
    s.M[0][1] = ScalarField(1.0);
    s.Q[0][1] = ScalarField(1.0);
    s.simulation_only = true;
    return s;
  }
  if (name == "const_2x2") {
    SystemSpec s = make_spec(2, 1, number(get(params, "eps", "0.5")));
    s.name = name;
    s.lambda[0] = ScalarField::parse(get(params, "l1", "-1"));
    s.lambda[1] = ScalarField::parse(get(params, "l2", "1"));
    fill_coupling(s, params, "0");
    s.Q[0][0] = ScalarField::parse(get(params, "q", "0"));
    if (params.count("period")) s.period = number(params.at("period"));
    return s;
  }
  if (name == "custom") {
    const int n = static_cast<int>(number(require(params, "n", name)));
    const int m = static_cast<int>(number(require(params, "m", name)));
    SystemSpec s = make_spec(n, m, number(require(params, "eps", name)));
    s.name = get(params, "name", name);
    for (int i = 0; i < n; ++i) s.lambda[i] = ScalarField::parse(require(params, fmt::format("l{}", i + 1), name));
    fill_coupling(s, params, "0");
    for (int l = 0; l < s.p(); ++l)
      for (int j = 0; j < m; ++j) s.Q[l][j] = ScalarField::parse(get(params, fmt::format("q{}{}", l + 1, j + 1), "0"));
    if (params.count("period")) s.period = number(params.at("period"));
    return s;
  }
  throw std::invalid_argument("unknown catalog entry '" + name + "'");
}

}  // namespace backstep
