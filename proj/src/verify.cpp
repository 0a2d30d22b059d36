#include "backstep/verify.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace backstep {

void CheckReport::offend(std::string where) {
  if (offending.size() < 10) offending.push_back(std::move(where));
}

namespace {

double sample_time(const TimeAxis& axis, std::mt19937_64& rng) {
  switch (axis.mode) {
    case TimeAxis::Mode::stationary: return 0.0;
    case TimeAxis::Mode::periodic: return std::uniform_real_distribution<>(axis.t0, axis.t1)(rng);
    case TimeAxis::Mode::window: {
      const double pad = 0.1 * (axis.t1 - axis.t0);
      return std::uniform_real_distribution<>(axis.t0 + pad, axis.t1 - pad)(rng);
    }
  }
  return 0.0;
}

}  // namespace

CheckReport check_trace(const KernelTable& K, const Pretransform& pre, double tol) {
  CheckReport r{.name = "trace", .tolerance = tol};
  const SystemSpec& spec = pre.spec;
  const KernelGrid& g = K.grid;
  for (int k = 0; k < g.nt(); ++k) {
    const double t = g.time.node(k);
    for (int a = 0; a <= g.nx; ++a) {
      const double x = g.x(a);
      for (int i = 0; i < K.m; ++i)
        for (int j = 0; j < K.n; ++j) {
          // at the corner x = ξ = 0 the reflection condition of columns j < m takes precedence
          if (j == i || (a == 0 && j < K.m)) continue;
          const double res =
              (spec.lam(j, t, x) - spec.lam(i, t, x)) * K.entry(i, j).node_auto(k, a, a) + pre.m1(i, j, t, x);
          ++r.samples;
          if (std::abs(res) > r.residual) r.residual = std::abs(res);
          if (std::abs(res) > tol) r.offend(fmt::format("k{}{} t={} x={} residual={:.3e}", i + 1, j + 1, t, x, res));
        }
    }
  }
  r.finish();
  return r;
}

CheckReport check_triangular(const MatrixTable& G2, int m, double tol) {
  CheckReport r{.name = "triangular", .tolerance = tol};
  for (int k = 0; k < G2.time.nt; ++k)
    for (int a = 0; a <= G2.nx; ++a)
      for (int i = 0; i < m; ++i)
        for (int j = i; j < m; ++j) {
          const double v = std::abs(G2.node(k, a)(i, j));
          ++r.samples;
          r.residual = std::max(r.residual, v);
          if (v > tol)
            r.offend(fmt::format("g2_{}{} t={} x={} value={:.3e}", i + 1, j + 1, G2.time.node(k),
                                 static_cast<double>(a) / G2.nx, v));
        }
  r.finish();
  return r;
}

CheckReport check_reflection(const KernelTable& K, const Pretransform& pre, double tol) {
  CheckReport r{.name = "reflection", .tolerance = tol};
  const SystemSpec& spec = pre.spec;
  const KernelGrid& g = K.grid;
  const int m = K.m, p = K.n - K.m;
  for (int k = 0; k < g.nt(); ++k) {
    const double t = g.time.node(k);
    const Eigen::MatrixXd Q1 = pre.Q1_at(t);
    for (int a = 0; a <= g.nx; ++a)
      for (int i = 0; i < m; ++i)
        for (int j = i; j < m; ++j) {
          double v = K.entry(i, j).node_auto(k, a, 0) * spec.lam(j, t, 0.0);
          double scale = std::abs(v);
          for (int l = 0; l < p; ++l) {
            const double term = K.entry(i, m + l).node_auto(k, a, 0) * spec.lam(m + l, t, 0.0) * Q1(l, j);
            v += term;
            scale = std::max(scale, std::abs(term));
          }
          const double res = std::abs(v) / (1.0 + scale);
          ++r.samples;
          r.residual = std::max(r.residual, res);
          if (res > tol) r.offend(fmt::format("k{}{} t={} x={} residual={:.3e}", i + 1, j + 1, t, g.x(a), res));
        }
  }
  r.tolerance = std::max(tol, 1e-13);
  r.finish();
  return r;
}

CheckReport check_compatibility(const KernelTable& K, const Pretransform& pre, double tol) {
  CheckReport r{.name = "compatibility", .tolerance = tol};
  const KernelGrid& g = K.grid;
  for (int k = 0; k < g.nt(); ++k) {
    const double t = g.time.node(k);
    for (int i = 0; i < K.m; ++i)
      for (int j = 0; j < i; ++j) {
        const double res = std::abs(K.entry(i, j).node_auto(k, g.nx, g.nx) - pre.r(i, j, t, 1.0));
        ++r.samples;
        r.residual = std::max(r.residual, res);
        if (res > tol) r.offend(fmt::format("a{}{} t={} residual={:.3e}", i + 1, j + 1, t, res));
      }
  }
  r.finish();
  return r;
}

CheckReport check_kernel_pde(const KernelTable& K, const Pretransform& pre, double tol, int samples, std::uint64_t seed) {
  CheckReport r{.name = "kernel_pde", .tolerance = tol};
  const SystemSpec& spec = pre.spec;
  const KernelGrid& g = K.grid;
  const double h = g.h(), sigma = 0.25 * h, margin = 2.5 * h;
  const CharacteristicCache cache(spec);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<> U(0.0, 1.0);
  int accepted = 0, attempts = 0;
  while (accepted < samples && attempts < 200 * samples) {
    ++attempts;
    const double t = sample_time(g.time, rng);
    const double x = margin + (1 - 2 * margin) * U(rng);
    const double xi = margin + (x - 2 * margin) * U(rng);
    if (xi < margin || x - xi < margin) continue;
    const int i = std::uniform_int_distribution<>(0, K.rows - 1)(rng);
    bool near_surface = false;
    for (int l = 0; l < K.n; ++l) {
      const SheetedField& e = K.entry(i, l);
      if (e.two_sheets && std::abs(xi - e.psi(t, x)) < margin) near_surface = true;
    }
    // characteristics through the corners carry kinks of the kernel
    for (int l = 0; l < K.n && !near_surface; ++l) {
      const PairRule rule = kernel_rule(i, l, K.m);
      const PathPoint e = trace_pair(cache, i, l, t, x, xi, rule.dir, rule.events, 0.0).end;
      const double to_far = std::max(1 - e.x, 1 - e.xi), to_near = std::max(e.x, e.xi);
      if (std::min(to_far, to_near) < 2 * margin) near_surface = true;
    }
    if (near_surface) continue;
    ++accepted;
    const double li = spec.lam(i, t, x);
    for (int j = 0; j < K.n; ++j) {
      const double lj = spec.lam(j, t, xi);
      const SheetedField& e = K.entry(i, j);
      const Side side = e.pick(t, x, xi);
      const double fwd = e.eval(t + sigma, x + sigma * li, xi + sigma * lj, side);
      const double bwd = e.eval(t - sigma, x - sigma * li, xi - sigma * lj, side);
      double res = (fwd - bwd) / (2 * sigma);
      for (int l = 0; l < K.n; ++l) res += kernel_eval(K, i, l, t, x, xi) * pre.mt1(l, j, t, xi);
      ++r.samples;
      r.residual = std::max(r.residual, std::abs(res));
      if (std::abs(res) > tol)
        r.offend(fmt::format("k{}{} t={:.4f} x={:.4f} xi={:.4f} residual={:.3e}", i + 1, j + 1, t, x, xi, res));
    }
  }
  r.finish();
  return r;
}

namespace {

std::vector<double> trapezoid_weights(int nx) {
  std::vector<double> w(nx + 1, 1.0 / nx);
  w.front() = w.back() = 0.5 / nx;
  return w;
}

Eigen::MatrixXd h_block(const FredholmKernelTable& H, int k, int c, int b) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(H.m, H.m);
  for (int i = 0; i < H.m; ++i)
    for (int j = 0; j < i; ++j)
      if (const SheetedField* e = H.entry(i, j)) out(i, j) = e->node_auto(k, c, b);
  return out;
}

}  // namespace

CheckReport check_fredholm_residual(const FredholmKernelTable& H, const MatrixTable& F2, double tol) {
  CheckReport r{.name = "fredholm_residual", .tolerance = tol};
  const int nx = H.grid.nx, m = H.m;
  const std::vector<double> w = trapezoid_weights(nx);
  for (int k = 0; k < H.grid.nt(); ++k)
    for (int b = 0; b <= nx; ++b) {
      Eigen::MatrixXd res = F2.node(k, b).leftCols(m) + h_block(H, k, nx, b);
      for (int c = 0; c <= nx; ++c) res -= w[c] * F2.node(k, c).leftCols(m) * h_block(H, k, c, b);
      const double v = res.cwiseAbs().maxCoeff();
      ++r.samples;
      r.residual = std::max(r.residual, v);
      if (v > tol) r.offend(fmt::format("t={} xi={} residual={:.3e}", H.grid.time.node(k), H.grid.x(b), v));
    }
  r.finish();
  return r;
}

CheckReport check_nilpotency(const FredholmKernelTable& H, double tol, std::uint64_t seed) {
  CheckReport r{.name = "nilpotency", .tolerance = tol};
  const int nx = H.grid.nx, m = H.m;
  const std::vector<double> w = trapezoid_weights(nx);
  std::mt19937_64 rng(seed);
  std::normal_distribution<> Z;
  for (int k = 0; k < H.grid.nt(); ++k) {
    std::vector<Eigen::RowVectorXd> f(nx + 1, Eigen::RowVectorXd(m));
    for (auto& v : f)
      for (int i = 0; i < m; ++i) v(i) = Z(rng);
    for (int q = 0; q < m; ++q) {
      std::vector<Eigen::RowVectorXd> next(nx + 1, Eigen::RowVectorXd::Zero(m));
      for (int c = 0; c <= nx; ++c)
        for (int b = 0; b <= nx; ++b) next[b] += w[c] * f[c] * h_block(H, k, c, b);
      f = std::move(next);
    }
    for (const auto& v : f) {
      ++r.samples;
      r.residual = std::max(r.residual, v.cwiseAbs().maxCoeff());
    }
  }
  r.finish();
  return r;
}

CheckReport check_finite_time(const GeneralSystem& sys, const FiniteTimeOptions& opt) {
  CheckReport r{.name = "finite_time", .tolerance = opt.tol};
  std::vector<InitialData> data = opt.y0;
  if (data.empty()) data.push_back([](int, double x) { return std::sin(M_PI * x); });
  for (double t0 : opt.t0)
    for (std::size_t q = 0; q < data.size(); ++q) {
      const StateSnapshot y0 = sample_state(sys.spec.n, opt.N, t0, data[q]);
      SimulationOptions so;
      so.store_every = 0;
      const Trace tr = simulate(sys, y0, opt.T, opt.dt, so);
      const double ratio = tr.l2.back() / std::max(tr.l2.front(), 1e-300);
      ++r.samples;
      r.residual = std::max(r.residual, ratio);
      if (ratio > opt.tol) r.offend(fmt::format("t0={} y0#{} ratio={:.3e}", t0, q, ratio));
    }
  r.note = fmt::format("terminal ratio |y(t0+T)|/|y0| at T={}, N={}, dt={}", opt.T, opt.N, opt.dt);
  r.finish();
  return r;
}

CheckReport check_uniform_stability(const GeneralSystem& sys, const std::vector<double>& t0_grid, const InitialData& y0,
                                    double T_window, int N, double dt, double bound) {
  CheckReport r{.name = "uniform_stability", .tolerance = bound};
  std::vector<double> peaks;
  for (double t0 : t0_grid) {
    SimulationOptions so;
    so.store_every = 0;
    const Trace tr = simulate(sys, sample_state(sys.spec.n, N, t0, y0), T_window, dt, so);
    const double peak = *std::max_element(tr.l2.begin(), tr.l2.end()) / std::max(tr.l2.front(), 1e-300);
    peaks.push_back(peak);
    ++r.samples;
    r.residual = std::max(r.residual, peak);
    if (peak > bound) r.offend(fmt::format("t0={} peak ratio={:.3e}", t0, peak));
  }
  std::string list;
  for (std::size_t q = 0; q < peaks.size(); ++q) list += fmt::format("{}{}:{:.4g}", q ? " " : "", t0_grid[q], peaks[q]);
  r.note = "sampled probe of uniform stability, not a proof; peak ratio per t0: " + list;
  r.finish();
  return r;
}

CheckReport check_psi(const CharacteristicCache& cache, int i, int j, double tol, int samples, std::uint64_t seed) {
  CheckReport r{.name = fmt::format("psi_{}{}", i + 1, j + 1), .tolerance = tol};
  const SystemSpec& spec = cache.spec();
  const double h = 1e-4;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<> U(0.0, 1.0);
  const double t_span = spec.period ? *spec.period : 5.0;
  int attempts = 0;
  while (static_cast<int>(r.samples) < samples && attempts < 50 * samples) {
    ++attempts;
    const double t = 0.01 + t_span * U(rng), x = 0.02 + 0.96 * U(rng);
    const double v = psi(cache, i, j, t, x);
    if (v > 1.0 - 1e-3) continue;  // clamped region
    const double vt = (psi(cache, i, j, t + h, x) - psi(cache, i, j, t - h, x)) / (2 * h);
    const double vx = (psi(cache, i, j, t, x + h) - psi(cache, i, j, t, x - h)) / (2 * h);
    const double res = std::abs(vt + spec.lam(i, t, x) * vx - spec.lam(j, t, v));
    const double b = std::abs(psi(cache, i, j, t, 0.0));
    ++r.samples;
    r.residual = std::max({r.residual, res, b});
    if (res > tol || b > tol) r.offend(fmt::format("t={:.4f} x={:.4f} residual={:.3e} boundary={:.3e}", t, x, res, b));
  }
  r.finish();
  return r;
}

double omega_nu(const SystemSpec& spec, int i) {
  double ratio = 0.0;
  for (int j = 0; j < i; ++j)
    for (int a = 0; a <= 20; ++a)
      for (int k = 0; k <= 20; ++k) {
        const double t = (spec.period ? *spec.period : 10.0) * k / 20.0, x = a / 20.0;
        ratio = std::max(ratio, spec.lam(i, t, x) / spec.lam(j, t, x));
      }
  return 0.5 * (1.0 + ratio);
}

CheckReport check_omega(const CharacteristicCache& cache, int i, int samples, std::uint64_t seed) {
  CheckReport r{.name = fmt::format("omega_{}", i + 1), .tolerance = 0.0};
  const SystemSpec& spec = cache.spec();
  const double nu = omega_nu(spec, i);
  // Lower bound on ∂_t ω^ν and the spread of the speed ratios give the margin ε0.
  double sup_l = 0.0, sup_dl = 0.0, ratio = 0.0;
  const double t_span = spec.period ? *spec.period : 10.0;
  for (int a = 0; a <= 20; ++a)
    for (int k = 0; k <= 20; ++k) {
      const double t = t_span * k / 20.0, x = a / 20.0;
      sup_l = std::max(sup_l, std::abs(spec.lam(i, t, x)));
      sup_dl = std::max(sup_dl, std::abs(spec.dlam_dx(i, t, x)));
      for (int j = 0; j < i; ++j) ratio = std::max(ratio, spec.lam(i, t, x) / spec.lam(j, t, x));
    }
  const double delta = std::exp(-sup_dl / spec.eps) / sup_l;
  const double factor = i > 0 ? std::min(nu / ratio - 1.0, 1.0 - nu) : 1.0 - nu;
  const double eps0 = spec.eps * delta * factor;
  auto Omega = [&](double t, double x, double xi) { return omega(cache, i, 1.0, t, x) - omega(cache, i, nu, t, xi); };
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<> U(0.0, 1.0);
  const double h = 1e-5;
  double margin = std::numeric_limits<double>::infinity();
  for (int q = 0; q < samples; ++q) {
    const double t = 0.01 + t_span * U(rng), x = 0.05 + 0.9 * U(rng);
    const double xi = 0.02 + (x - 0.04) * U(rng);
    const double om = Omega(t, x, xi);
    margin = std::min(margin, om + 1e-9);
    if (om < -1e-9) r.offend(fmt::format("Omega<0 at t={:.4f} x={:.4f} xi={:.4f}", t, x, xi));
    const double li = spec.lam(i, t, x);
    for (int j = 0; j < spec.n; ++j) {
      const double lj = spec.lam(j, t, xi);
      const double d = (Omega(t + h, x + h * li, xi + h * lj) - Omega(t - h, x - h * li, xi - h * lj)) / (2 * h);
      const double signed_margin = (j < i ? d : -d) - 0.5 * eps0;
      margin = std::min(margin, signed_margin);
      ++r.samples;
      if (signed_margin < 0)
        r.offend(fmt::format("j={} t={:.4f} x={:.4f} xi={:.4f} derivative={:.3e}", j + 1, t, x, xi, d));
    }
  }
  r.residual = std::max(0.0, -margin);
  r.note = fmt::format("nu={:.4f} eps0={:.3e} min margin={:.3e}", nu, eps0, margin);
  r.finish();
  return r;
}

StateSnapshot compatible_state(const GeneralSystem& sys, StateSnapshot s) {
  const SystemSpec& spec = sys.spec;
  const int n = spec.n, m = spec.m, N = s.N();
  const std::vector<double> w = trapezoid_weights(N);
  std::vector<Eigen::MatrixXd> F;
  if (sys.F)
    for (int k = 0; k <= N; ++k) F.push_back(sys.F(s.t, s.x(k)) * w[k]);
  const Eigen::MatrixXd Q = sys.Q ? sys.Q(s.t) : spec.Q_at(s.t);
  auto residual = [&](const Eigen::MatrixXd& y) {
    Eigen::VectorXd res(n);
    res.head(m) = y.col(N).head(m);
    for (std::size_t k = 0; k < F.size(); ++k) res.head(m) -= F[k] * y.col(k);
    res.tail(n - m) = y.col(0).tail(n - m) - Q * y.col(0).head(m);
    return res;
  };
  Eigen::MatrixXd A(n, n);
  std::vector<Eigen::MatrixXd> basis(n);
  for (int i = 0; i < n; ++i) {
    basis[i] = Eigen::MatrixXd::Zero(n, N + 1);
    for (int k = 0; k <= N; ++k) {
      const double x = s.x(k);
      basis[i](i, k) = i < m ? x * x : (1 - x) * (1 - x);
    }
    A.col(i) = residual(basis[i]);
  }
  const Eigen::VectorXd c = A.colPivHouseholderQr().solve(-residual(s.y));
  for (int i = 0; i < n; ++i) s.y += c(i) * basis[i];
  return s;
}

namespace {

MatrixFn table_fn(const MatrixTable& tb) {
  return [tb](double t, double x) { return tb(t, x); };
}

double mismatch(const Trace& target, const Trace& source, const std::function<StateSnapshot(const StateSnapshot&)>& map) {
  double worst = 0.0;
  for (std::size_t q = 0; q < std::min(target.snapshots.size(), source.snapshots.size()); ++q) {
    StateSnapshot d = map(source.snapshots[q]);
    d.y -= target.snapshots[q].y;
    worst = std::max(worst, l2_norm(d));
  }
  return worst;
}

}  // namespace

CheckReport check_transform_consistency(const Synthesis& syn, const InitialData& y0, const ConsistencyOptions& opt) {
  CheckReport r{.name = "transform_consistency", .tolerance = opt.tol};
  if (!syn.K.full()) throw std::invalid_argument("transform consistency needs the full Volterra kernel");
  const SystemSpec& spec = syn.spec;
  const int n = spec.n, m = spec.m;
  const Pretransform& pre = syn.pre;
  const bool stationary = syn.K.grid.time.mode == TimeAxis::Mode::stationary;
  BoundaryFn Q1 = [&pre](double t) { return pre.Q1_at(t); };

  GeneralSystem target;
  target.spec = spec;
  target.M = [n](double, double) { return Eigen::MatrixXd::Zero(n, n); };
  target.G = table_fn(syn.G2);
  target.F = table_fn(syn.gain.F2);
  target.Q = Q1;
  target.stationary = stationary;

  SimulationOptions so;
  so.store_every = opt.compare_every > 0 ? opt.compare_every : std::max(1, opt.N / 4);

  GeneralSystem source = target;
  source.M = [&pre](double t, double x) { return pre.M1_at(t, x); };
  source.G = nullptr;
  source.F = table_fn(syn.gain.F1);
  const StateSnapshot w0 = compatible_state(source, sample_state(n, opt.N, opt.t0, y0));
  const Trace ws = simulate(source, w0, opt.T, opt.dt, so);
  const Trace gs = simulate(target, apply_volterra(syn.K, w0), opt.T, opt.dt, so);
  const double volterra = mismatch(gs, ws, [&](const StateSnapshot& s) { return apply_volterra(syn.K, s); });
  r.residual = volterra;
  r.samples = ws.snapshots.size();
  r.note = fmt::format("volterra mismatch={:.3e}", volterra);

  if (m > 1) {
    GeneralSystem zsys = target;
    const MatrixTable G2 = syn.G2;
    zsys.G = [G2, m](double t, double x) {
      Eigen::MatrixXd g = G2(t, x);
      g.topRows(m).setZero();
      return g;
    };
    zsys.F = nullptr;
    const StateSnapshot z0 = compatible_state(zsys, sample_state(n, opt.N, opt.t0, y0));
    const Trace zs = simulate(zsys, z0, opt.T, opt.dt, so);
    const Trace g2s = simulate(target, apply_fredholm(syn.H, z0), opt.T, opt.dt, so);
    const double fredholm = mismatch(g2s, zs, [&](const StateSnapshot& s) { return apply_fredholm(syn.H, s); });
    r.residual = std::max(r.residual, fredholm);
    r.samples += zs.snapshots.size();
    r.note += fmt::format(", fredholm mismatch={:.3e}", fredholm);
  }
  r.finish();
  return r;
}

CheckReport check_periodicity(const GainTable& gain, std::optional<double> tau, double tol) {
  if (!tau) throw std::invalid_argument("check_periodicity needs a periodic system (period not set)");
  CheckReport r{.name = "periodicity", .tolerance = tol};
  const MatrixTable& F = gain.F;
  if (F.time.mode == TimeAxis::Mode::stationary) {
    r.samples = 1;
    r.note = "time-independent gain";
    r.finish();
    return r;
  }
  for (int k = 0; k < F.time.nt; ++k) {
    const double t = F.time.node(k);
    if (t + *tau > F.time.t1 + 1e-12 && F.time.mode == TimeAxis::Mode::window) break;
    for (int b = 0; b <= F.nx; ++b) {
      const double xi = static_cast<double>(b) / F.nx;
      const double v = (F(t + *tau, xi) - F.node(k, b)).cwiseAbs().maxCoeff();
      ++r.samples;
      r.residual = std::max(r.residual, v);
      if (v > tol) r.offend(fmt::format("t={} xi={} jump={:.3e}", t, xi, v));
    }
  }
  r.finish();
  return r;
}

CheckReport check_topt(const CharacteristicCache& cache, double t0_max, double tol) {
  CheckReport r{.name = "topt", .tolerance = tol};
  const ToptResult res = compute_topt(cache, t0_max);
  r.samples = res.t0.size();
  const SystemSpec& spec = cache.spec();
  if (is_time_independent(spec)) {
    const double ref = topt_time_independent(spec);
    r.residual = std::abs(res.value - ref);
    r.note = fmt::format("topt={:.10f} closed form={:.10f}", res.value, ref);
  } else {
    const double bound = 2.0 / spec.eps;
    r.residual = res.value > 0 && res.value < bound ? 0.0 : res.value;
    r.note = fmt::format("topt={:.10f} grid max={:.10f} tail extrapolated={} bound 2/eps={}", res.value, res.grid_max,
                         res.tail_extrapolated, bound);
  }
  r.finish();
  return r;
}

}  // namespace backstep
