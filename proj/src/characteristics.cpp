#include "backstep/characteristics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fmt/format.h>
#include <functional>
#include <stdexcept>

namespace backstep {

CharacteristicCache::CharacteristicCache(SystemSpec spec, OdeSettings settings)
    : spec_(std::move(spec)), settings_(settings) {
  if (!(settings_.h_ode > 0) || !(settings_.tol_root > 0)) throw std::invalid_argument("integrator settings must be positive");
}

std::size_t CharacteristicCache::KeyHash::operator()(const Key& k) const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  };
  mix(static_cast<std::uint64_t>(k.i));
  mix(k.t);
  mix(k.x);
  return static_cast<std::size_t>(h);
}

BoundaryTimes CharacteristicCache::boundary_times(int i, double t, double x) const {
  const Key key{i, std::bit_cast<std::uint64_t>(t), std::bit_cast<std::uint64_t>(x)};
  {
    std::lock_guard lock(mu_);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  }
  const BoundaryTimes bt = boundary_times_uncached(*this, i, t, x);
  std::lock_guard lock(mu_);
  if (memo_.size() > 4'000'000) memo_.clear();
  memo_.emplace(key, bt);
  return bt;
}

std::size_t CharacteristicCache::memo_size() const {
  std::lock_guard lock(mu_);
  return memo_.size();
}

double flow(const CharacteristicCache& cache, int i, double s, double t, double x) {
  if (s == t) return x;
  const SystemSpec& sp = cache.spec();
  const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(s - t) / cache.settings().h_ode - 1e-9)));
  const double h = (s - t) / steps;
  double y = x, tau = t;
  for (int k = 0; k < steps; ++k) {
    const double k1 = sp.lam(i, tau, y);
    const double k2 = sp.lam(i, tau + 0.5 * h, y + 0.5 * h * k1);
    const double k3 = sp.lam(i, tau + 0.5 * h, y + 0.5 * h * k2);
    const double k4 = sp.lam(i, tau + h, y + h * k3);
    y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    tau = t + (k + 1) * h;
  }
  return y;
}

PairPath trace_pair(const CharacteristicCache& cache, int a, int b, double t, double x, double xi, Direction dir,
                    unsigned events, double sample_step, std::optional<double> s_limit, double nu) {
  const SystemSpec& sp = cache.spec();
  const double h_ode = cache.settings().h_ode;
  const double tol = cache.settings().tol_root;
  const double sign = dir == Direction::forward ? 1.0 : -1.0;

  auto step = [&](double s, double ya, double yb, double h, double& oa, double& ob) {
    const double inv = 1.0 / nu;
    const double a1 = sp.lam(a, s, ya) * inv;
    const double a2 = sp.lam(a, s + 0.5 * h, ya + 0.5 * h * a1) * inv;
    const double a3 = sp.lam(a, s + 0.5 * h, ya + 0.5 * h * a2) * inv;
    const double a4 = sp.lam(a, s + h, ya + h * a3) * inv;
    oa = ya + h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4);
    if (b < 0) {
      ob = yb;
      return;
    }
    const double b1 = sp.lam(b, s, yb);
    const double b2 = sp.lam(b, s + 0.5 * h, yb + 0.5 * h * b1);
    const double b3 = sp.lam(b, s + 0.5 * h, yb + 0.5 * h * b2);
    const double b4 = sp.lam(b, s + h, yb + h * b3);
    ob = yb + h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4);
  };
  auto fired = [&](double ya, double yb) {
    unsigned f = 0;
    if ((events & ev_meet) && ya - yb <= 0) f |= ev_meet;
    if ((events & ev_x_hits_1) && ya >= 1) f |= ev_x_hits_1;
    if ((events & ev_x_hits_0) && ya <= 0) f |= ev_x_hits_0;
    if ((events & ev_xi_hits_0) && yb <= 0) f |= ev_xi_hits_0;
    if ((events & ev_xi_hits_1) && yb >= 1) f |= ev_xi_hits_1;
    return f;
  };
  auto snap = [](unsigned f, double& ya, double& yb) {
    if (f & ev_x_hits_1) ya = 1.0;
    if (f & ev_x_hits_0) ya = 0.0;
    if (f & ev_xi_hits_0) yb = 0.0;
    if (f & ev_xi_hits_1) yb = 1.0;
    if (f & ev_meet) yb = ya;
  };

  PairPath out;
  out.points.push_back({t, x, xi});
  if (s_limit && *s_limit == t) {
    out.event = ev_time;
    out.end = out.points.back();
    return out;
  }
  if (unsigned f = fired(x, xi)) {
    out.event = f;
    double ya = x, yb = xi;
    snap(f, ya, yb);
    out.end = {t, ya, yb};
    out.points.back() = out.end;
    return out;
  }

  int substeps = 1;
  double h = h_ode;
  if (sample_step > 0) {
    substeps = std::max(1, static_cast<int>(std::ceil(sample_step / h_ode - 1e-9)));
    h = sample_step / substeps;
  }
  const double max_dur = s_limit ? std::abs(*s_limit - t) : 2.0 / (sp.eps * nu);

  double s = t, ya = x, yb = xi;
  long count = 0;
  for (;;) {
    double hh = sign * h;
    bool last = false;
    if (s_limit && sign * (s + hh - *s_limit) >= 0) {
      hh = *s_limit - s;
      last = true;
    } else if (!s_limit && std::abs(s + hh - t) > max_dur * (1.0 + 1e-9) + h) {
      throw std::runtime_error(fmt::format("characteristic of family {} through (t={}, x={}) fails to exit within {}", a + 1, t, x, max_dur));
    }
    double na, nb;
    step(s, ya, yb, hh, na, nb);
    if (unsigned f = fired(na, nb)) {
      double lo = 0.0, hi = 1.0;
      while ((hi - lo) * std::abs(hh) > tol) {
        const double mid = 0.5 * (lo + hi);
        double ma, mb;
        step(s, ya, yb, mid * hh, ma, mb);
        if (fired(ma, mb))
          hi = mid;
        else
          lo = mid;
      }
      double ea, eb;
      step(s, ya, yb, hi * hh, ea, eb);
      unsigned g = fired(ea, eb);
      if (!g) g = f;
      snap(g, ea, eb);
      out.event = g;
      out.end = {s + hi * hh, ea, eb};
      out.points.push_back(out.end);
      return out;
    }
    s = last ? *s_limit : s + hh;
    ya = na;
    yb = nb;
    ++count;
    if (last) {
      out.event = ev_time;
      out.end = {s, ya, yb};
      out.points.push_back(out.end);
      return out;
    }
    if (sample_step > 0 && count % substeps == 0) out.points.push_back({s, ya, yb});
  }
}

BoundaryTimes boundary_times_uncached(const CharacteristicCache& cache, int i, double t, double x) {
  const bool neg = i < cache.spec().m;
  const PairPath in = trace_pair(cache, i, -1, t, x, 0.0, Direction::backward, neg ? ev_x_hits_1 : ev_x_hits_0);
  const PairPath out = trace_pair(cache, i, -1, t, x, 0.0, Direction::forward, neg ? ev_x_hits_0 : ev_x_hits_1);
  return {in.end.s, out.end.s};
}

BoundaryTimes boundary_times(const CharacteristicCache& cache, int i, double t, double x) {
  return cache.boundary_times(i, t, x);
}

PairRule kernel_rule(int i, int j, int m) {
  if (i < m) {
    if (j < i) return {Direction::backward, ev_meet | ev_x_hits_1};
    if (j == i) return {Direction::forward, ev_xi_hits_0};
    if (j < m) return {Direction::forward, ev_meet | ev_xi_hits_0};
    return {Direction::forward, ev_meet};
  }
  if (j < m) return {Direction::backward, ev_meet};
  if (j < i) return {Direction::backward, ev_meet | ev_xi_hits_0};
  if (j == i) return {Direction::forward, ev_x_hits_1};
  return {Direction::forward, ev_meet | ev_x_hits_1};
}

std::optional<double> crossing_time(const CharacteristicCache& cache, int i, int j, double t, double x, double xi,
                                    Direction dir) {
  const PairRule rule = kernel_rule(i, j, cache.spec().m);
  if (rule.dir != dir) return std::nullopt;
  return trace_pair(cache, i, j, t, x, xi, dir, rule.events).end.s;
}

double psi(const CharacteristicCache& cache, int i, int j, double t, double x) {
  const int m = cache.spec().m;
  if (i >= m || j >= m || i == j) throw std::invalid_argument("psi needs two distinct indices of negative speed");
  if (x <= 0) return 0.0;
  const double si = boundary_times(cache, i, t, x).s_out;
  const PairPath back = trace_pair(cache, j, -1, si, 0.0, 0.0, Direction::backward, ev_x_hits_1, 0.0, t);
  if (back.event & ev_x_hits_1) return 1.0;
  return std::clamp(back.end.x, 0.0, 1.0);
}

double omega(const CharacteristicCache& cache, int i, double nu, double t, double x) {
  if (!(nu > 0 && nu <= 1)) throw std::invalid_argument("nu must lie in (0,1]");
  if (i >= cache.spec().m) throw std::invalid_argument("omega is defined for negative speeds only");
  return trace_pair(cache, i, -1, t, x, 0.0, Direction::forward, ev_x_hits_0, 0.0, std::nullopt, nu).end.s;
}

double settling_time_from(const CharacteristicCache& cache, double t0) {
  const int m = cache.spec().m;
  const double s1 = boundary_times(cache, m - 1, t0, 1.0).s_out;
  return boundary_times(cache, m, s1, 0.0).s_out - t0;
}

ToptResult compute_topt(const CharacteristicCache& cache, double t0_max, int grid) {
  ToptResult r;
  grid = std::max(grid, 3);
  const bool periodic = cache.spec().period.has_value();
  const double span = periodic ? *cache.spec().period : t0_max;
  r.t0.resize(grid);
  r.h.resize(grid);
  for (int k = 0; k < grid; ++k) {
    r.t0[k] = span * k / (grid - 1);
    r.h[k] = settling_time_from(cache, r.t0[k]);
  }
  const int k = static_cast<int>(std::max_element(r.h.begin(), r.h.end()) - r.h.begin());
  r.grid_max = r.h[k];
  r.argmax = r.t0[k];

  // Golden-section refinement on the bracket around the grid maximizer.
  double lo = r.t0[std::max(k - 1, 0)], hi = r.t0[std::min(k + 1, grid - 1)];
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = hi - g * (hi - lo), d = lo + g * (hi - lo);
  double fc = settling_time_from(cache, c), fd = settling_time_from(cache, d);
  for (int it = 0; it < 60 && hi - lo > 1e-9 * (1.0 + span); ++it) {
    if (fc >= fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - g * (hi - lo);
      fc = settling_time_from(cache, c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + g * (hi - lo);
      fd = settling_time_from(cache, d);
    }
  }
  if (std::max(fc, fd) > r.grid_max) {
    r.grid_max = std::max(fc, fd);
    r.argmax = fc >= fd ? c : d;
  }
  r.value = r.grid_max;

  // Monotone bounded tail: the sup is a limit as t0 grows; extrapolate geometrically
  // from h(T/4), h(T/2), h(T).
  if (!periodic && k >= grid - 1 - grid / 100) {
    bool monotone = true;
    for (int q = grid - grid / 10; q < grid; ++q)
      if (r.h[q] < r.h[q - 1] - 1e-12) monotone = false;
    const double h1 = settling_time_from(cache, 0.25 * span);
    const double h2 = settling_time_from(cache, 0.5 * span);
    const double h3 = settling_time_from(cache, span);
    const double d1 = h2 - h1, d2 = h3 - h2;
    if (monotone && d1 > 0 && d2 >= 0 && d2 < d1) {
      r.tail_extrapolated = true;
      r.value = std::max(r.grid_max, h3 + d2 * d2 / (d1 - d2));
    }
  }
  return r;
}

namespace {

double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb, double whole,
               double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15 * tol) return left + right + (left + right - whole) / 15.0;
  return simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return simpson(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4 * fm + fb), tol, 50);
}

}  // namespace

double topt_time_independent(const SystemSpec& spec) {
  if (!is_time_independent(spec)) throw std::invalid_argument("topt_time_independent needs time-independent speeds");
  const int m = spec.m;
  auto f = [&](double xi) { return 1.0 / (-spec.lam(m - 1, 0.0, xi)) + 1.0 / spec.lam(m, 0.0, xi); };
  return integrate(f, 0.0, 1.0, 1e-12);
}

}  // namespace backstep
