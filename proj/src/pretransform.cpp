#include <cmath>

#include "backstep/parallel.hpp"
#include "backstep/transforms.hpp"

namespace backstep {

namespace {

double max_speed(const SystemSpec& spec) {
  double sup = 0.0;
  for (int i = 0; i < spec.n; ++i)
    for (int a = 0; a <= 10; ++a)
      for (int k = 0; k <= 10; ++k) sup = std::max(sup, std::abs(spec.lam(i, k * 0.5, a / 10.0)));
  return sup;
}

Table2 to_table(const TimeAxis& time, int nx, const std::function<double(int, int)>& value) {
  Table2 tb;
  for (int k = 0; k < time.nt; ++k) tb.t_axis.push_back(time.node(k));
  for (int a = 0; a <= nx; ++a) tb.x_axis.push_back(static_cast<double>(a) / nx);
  tb.values.resize(time.nt, nx + 1);
  for (int k = 0; k < time.nt; ++k)
    for (int a = 0; a <= nx; ++a) tb.values(k, a) = value(k, a);
  switch (time.mode) {
    case TimeAxis::Mode::stationary: tb.policy = Table2::TimePolicy::clamp; break;
    case TimeAxis::Mode::window: tb.policy = Table2::TimePolicy::clamp; break;
    case TimeAxis::Mode::periodic:
      tb.policy = Table2::TimePolicy::periodic;
      tb.period = time.t1 - time.t0;
      break;
  }
  return tb;
}

}  // namespace

double Pretransform::phi_at(int i, double t, double x) const { return identity ? 1.0 : phi[i](t, x); }

double Pretransform::m1(int i, int j, double t, double x) const {
  if (i == j) return 0.0;
  const double mij = spec.m_at(i, j, t, x);
  if (identity || mij == 0.0) return mij;
  return phi_at(i, t, x) * mij / phi_at(j, t, x);
}

double Pretransform::mt1(int l, int j, double t, double x) const {
  return (l == j ? spec.dlam_dx(j, t, x) : 0.0) + m1(l, j, t, x);
}

double Pretransform::r(int i, int j, double t, double x) const {
  const double num = m1(i, j, t, x);
  if (num == 0.0) return 0.0;
  return -num / (spec.lam(j, t, x) - spec.lam(i, t, x));
}

double Pretransform::q1(int l, int j, double t) const {
  const double q = spec.q_at(l, j, t);
  if (identity || q == 0.0) return q;
  return phi_at(spec.m + l, t, 0.0) * q / phi_at(j, t, 0.0);
}

double Pretransform::qt1(int l, int j, double t) const {
  return -spec.lam(spec.m + l, t, 0.0) * q1(l, j, t) / spec.lam(j, t, 0.0);
}

Eigen::MatrixXd Pretransform::M1_at(double t, double x) const {
  Eigen::MatrixXd a(spec.n, spec.n);
  for (int i = 0; i < spec.n; ++i)
    for (int j = 0; j < spec.n; ++j) a(i, j) = m1(i, j, t, x);
  return a;
}

Eigen::MatrixXd Pretransform::Q1_at(double t) const {
  Eigen::MatrixXd a(spec.p(), spec.m);
  for (int l = 0; l < spec.p(); ++l)
    for (int j = 0; j < spec.m; ++j) a(l, j) = q1(l, j, t);
  return a;
}

ScalarField Pretransform::phi_field(int i) const {
  return ScalarField(to_table(grid.time, grid.nx, [&](int k, int a) { return identity ? 1.0 : phi[i].node(k, a); }));
}

ScalarField Pretransform::m1_field(int i, int j) const {
  return ScalarField(to_table(grid.time, grid.nx, [&](int k, int a) { return m1(i, j, grid.time.node(k), grid.x(a)); }));
}

ScalarField Pretransform::q1_field(int l, int j) const {
  Table2 tb = to_table(grid.time, 1, [&](int k, int) { return q1(l, j, grid.time.node(k)); });
  return ScalarField(std::move(tb));
}

Pretransform exp_pretransform(const CharacteristicCache& cache, const KernelGrid& grid, double sample_step) {
  const SystemSpec& spec = cache.spec();
  Pretransform pre;
  pre.spec = spec;
  pre.grid = grid;
  pre.identity = true;
  for (int i = 0; i < spec.n; ++i) {
    auto c = spec.M[i][i].constant();
    if (!c || *c != 0.0) pre.identity = false;
  }
  if (pre.identity) return pre;
  if (sample_step <= 0) sample_step = grid.h() / std::max(max_speed(spec), 1e-12);

  pre.phi.assign(spec.n, GridScalar{grid.time, grid.nx, std::vector<double>(static_cast<std::size_t>(grid.nt()) * (grid.nx + 1), 1.0)});
  for (int i = 0; i < spec.n; ++i) {
    auto c = spec.M[i][i].constant();
    if (c && *c == 0.0) continue;
    const unsigned ev = i < spec.m ? ev_x_hits_1 : ev_x_hits_0;
    const std::size_t count = static_cast<std::size_t>(grid.nt()) * (grid.nx + 1);
    parallel_for(count, 0, [&](std::size_t b, std::size_t e, int) {
      for (std::size_t id = b; id < e; ++id) {
        const int k = static_cast<int>(id / (grid.nx + 1)), a = static_cast<int>(id % (grid.nx + 1));
        const double t = grid.time.node(k), x = grid.x(a);
        const PairPath path = trace_pair(cache, i, -1, t, x, 0.0, Direction::backward, ev, sample_step);
        double integral = 0.0;
        for (std::size_t q = 1; q < path.points.size(); ++q) {
          const PathPoint& p0 = path.points[q - 1];
          const PathPoint& p1 = path.points[q];
          integral += 0.5 * (p0.s - p1.s) * (spec.m_at(i, i, p0.s, p0.x) + spec.m_at(i, i, p1.s, p1.x));
        }
        pre.phi[i].node(k, a) = std::exp(-integral);
      }
    });
    if (!std::all_of(pre.phi[i].v.begin(), pre.phi[i].v.end(), [](double v) { return std::isfinite(v) && v > 0; }))
      throw std::runtime_error("pre-transform quadrature failed (unbounded coupling)");
  }
  return pre;
}

}  // namespace backstep
