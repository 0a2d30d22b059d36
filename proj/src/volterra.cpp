#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "backstep/parallel.hpp"
#include "backstep/transforms.hpp"

namespace backstep {

namespace {

// Interpolation stencil of one quadrature point, frozen at build time.
struct Sample {
  std::uint32_t id[3];
  std::uint32_t k0, k1;
  std::uint32_t mask;  // bit l: read the upper sheet of entry (i, l)
  double w[3];
  double wt;
};

struct Formula {
  int j;
  Side side;
  std::size_t node;
  double k0;
  std::size_t begin, end;  // range in the row's sample store
};

struct Chunk {
  std::vector<Sample> samples;
  std::vector<double> coefs;  // n per sample
  std::vector<Formula> formulas;
};

Sample make_sample(const KernelGrid& g, double t, double x, double xi, std::uint32_t mask) {
  Sample s{};
  const TimeAxis::Stencil st = g.time.locate(t);
  s.k0 = static_cast<std::uint32_t>(st.k0);
  s.k1 = static_cast<std::uint32_t>(st.k1);
  s.wt = st.k0 == st.k1 ? 0.0 : st.w;
  s.mask = mask;
  const int nx = g.nx;
  const double u = std::clamp(x, 0.0, 1.0) * nx;
  const double v = std::min(std::clamp(xi, 0.0, 1.0) * nx, u);
  const int a = std::min(static_cast<int>(u), nx - 1);
  const int b = std::min(static_cast<int>(v), nx - 1);
  const double du = u - a, dv = v - b;
  const std::uint32_t w = static_cast<std::uint32_t>(nx + 1);
  s.id[0] = a * w + b;
  s.id[2] = (a + 1) * w + b + 1;
  if (dv <= du) {
    s.id[1] = (a + 1) * w + b;
    s.w[0] = 1 - du;
    s.w[1] = du - dv;
    s.w[2] = dv;
  } else {
    s.id[1] = a * w + b + 1;
    s.w[0] = 1 - dv;
    s.w[1] = dv - du;
    s.w[2] = du;
  }
  return s;
}

double max_speed(const SystemSpec& spec, const TimeAxis& time) {
  double sup = 0.0;
  for (int i = 0; i < spec.n; ++i)
    for (int a = 0; a <= 10; ++a)
      for (int k = 0; k < std::min(time.nt, 11); ++k) sup = std::max(sup, std::abs(spec.lam(i, time.node(k * std::max(1, time.nt / 11)), a / 10.0)));
  return sup;
}

class RowSolver {
 public:
  RowSolver(const Pretransform& pre, const CharacteristicCache& cache, const SolverOptions& opt, KernelTable& K, int i,
            double sample_step)
      : pre_(pre), cache_(cache), opt_(opt), K_(K), g_(K.grid), n_(K.n), m_(K.m), i_(i), step_(sample_step) {}

  void build() {
    prepare_surfaces();
    std::vector<std::size_t> nodes;
    for (int k = 0; k < g_.nt(); ++k)
      for (int a = 0; a <= g_.nx; ++a)
        for (int b = 0; b <= a; ++b) nodes.push_back(g_.index(k, a, b));
    const int workers = resolve_workers(opt_.workers);
    std::vector<Chunk> chunks(workers);
    parallel_for(nodes.size(), workers, [&](std::size_t b, std::size_t e, int w) {
      for (std::size_t q = b; q < e; ++q) build_node(nodes[q], chunks[w]);
    });
    for (Chunk& c : chunks) {
      const std::size_t base = samples_.size();
      for (Formula f : c.formulas) {
        f.begin += base;
        f.end += base;
        formulas_.push_back(f);
      }
      samples_.insert(samples_.end(), c.samples.begin(), c.samples.end());
      coefs_.insert(coefs_.end(), c.coefs.begin(), c.coefs.end());
      c = Chunk{};
    }
  }

  void iterate() {
    for (const Formula& f : formulas_) store(f, f.k0);
    fill();
    std::vector<double> next(formulas_.size());
    double inc = 0.0;
    int it = 0;
    const int workers = resolve_workers(opt_.workers);
    std::vector<double> part(workers);
    for (it = 1; it <= opt_.max_iter; ++it) {
      std::fill(part.begin(), part.end(), 0.0);
      parallel_for(formulas_.size(), workers, [&](std::size_t b, std::size_t e, int w) {
        double local = 0.0;
        for (std::size_t q = b; q < e; ++q) {
          next[q] = apply(formulas_[q]);
          local = std::max(local, std::abs(next[q] - load(formulas_[q])));
        }
        part[w] = local;
      });
      inc = *std::max_element(part.begin(), part.end());
      if (!std::isfinite(inc)) throw ConvergenceError(fmt::format("kernel iteration diverged in row {}", i_ + 1), inc);
      for (std::size_t q = 0; q < formulas_.size(); ++q) store(formulas_[q], next[q]);
      fill();
      if (inc <= opt_.tol_fp) break;
    }
    K_.iterations = std::max(K_.iterations, std::min(it, opt_.max_iter));
    K_.last_increment = std::max(K_.last_increment, inc);
    if (inc > opt_.tol_fp) {
      K_.converged = false;
      throw ConvergenceError(fmt::format("kernel iteration did not converge in row {}: last increment {:.3e} after {} iterations",
                                         i_ + 1, inc, opt_.max_iter),
                             inc);
    }
  }

  std::size_t sample_count() const { return samples_.size(); }

 private:
  bool split(int j) const { return K_.two_sheet(i_, j); }

  void prepare_surfaces() {
    for (int j = 0; j < n_; ++j) {
      SheetedField& f = K_.entry(i_, j);
      f = split(j) ? SheetedField::split(g_, true) : SheetedField::single(g_, true);
      if (!split(j)) continue;
      for (int k = 0; k < g_.nt(); ++k) {
        const double t = g_.time.node(k);
        for (int a = 0; a <= g_.nx; ++a) {
          f.psi.node(k, a) = psi(cache_, i_, j, t, g_.x(a));
          const double si = boundary_times(cache_, i_, t, g_.x(a)).s_out;
          for (int b = 0; b <= a; ++b) {
            const double sj = boundary_times(cache_, j, t, g_.x(b)).s_out;
            const double tol = 1e-9 * (1.0 + std::abs(t));
            f.region[g_.index(k, a, b)] = si < sj - tol ? SheetedField::above_only
                                          : si > sj + tol ? SheetedField::below_only
                                                          : SheetedField::surface;
          }
        }
      }
    }
  }

  std::uint32_t mask_at(double s, double x, double xi) const {
    std::uint32_t mask = 0;
    for (int l = i_ + 1; l < m_; ++l)
      if (xi > K_.entry(i_, l).psi(s, x)) mask |= 1u << l;
    return mask;
  }

  // Adds sign * scale * integral of sum_l k_il(path) mt1_{l col}(s, xi(s)) ds. The path is split where it
  // crosses a jump surface of the row so that each piece reads a single sheet.
  void add_path(const PairPath& path, int col, double scale, double sign, Chunk& c) const {
    const auto& raw = path.points;
    if (raw.size() < 2) return;
    std::vector<PathPoint> pts;
    std::vector<std::uint32_t> masks;
    pts.reserve(raw.size() + 4);
    masks.reserve(raw.size() + 4);
    for (std::size_t q = 0; q < raw.size(); ++q) {
      const std::uint32_t mq = mask_at(raw[q].s, raw[q].x, raw[q].xi);
      if (q > 0 && mq != masks.back()) {
        const PathPoint& a = raw[q - 1];
        const PathPoint& b = raw[q];
        double theta = 1.0;
        for (int l = i_ + 1; l < m_; ++l) {
          if (((mq ^ masks.back()) >> l & 1u) == 0) continue;
          const double fa = a.xi - K_.entry(i_, l).psi(a.s, a.x), fb = b.xi - K_.entry(i_, l).psi(b.s, b.x);
          if (fa != fb) theta = std::min(theta, std::clamp(fa / (fa - fb), 0.0, 1.0));
        }
        const PathPoint cross{a.s + theta * (b.s - a.s), a.x + theta * (b.x - a.x), a.xi + theta * (b.xi - a.xi)};
        pts.push_back(cross);
        masks.push_back(masks.back());
        pts.push_back(cross);
        masks.push_back(mq);
      }
      pts.push_back(raw[q]);
      masks.push_back(mq);
    }
    for (std::size_t q = 0; q < pts.size(); ++q) {
      const double left = q > 0 ? std::abs(pts[q].s - pts[q - 1].s) : 0.0;
      const double right = q + 1 < pts.size() ? std::abs(pts[q + 1].s - pts[q].s) : 0.0;
      const double w = 0.5 * (left + right) * sign * scale;
      if (w == 0.0) continue;
      bool any = false;
      const std::size_t at = c.coefs.size();
      c.coefs.resize(at + n_);
      for (int l = 0; l < n_; ++l) {
        const double v = w * pre_.mt1(l, col, pts[q].s, pts[q].xi);
        c.coefs[at + l] = v;
        any = any || v != 0.0;
      }
      if (!any) {
        c.coefs.resize(at);
        continue;
      }
      c.samples.push_back(make_sample(g_, pts[q].s, pts[q].x, pts[q].xi, masks[q]));
    }
  }

  double artificial(int j, double s, double xi) const {
    if (opt_.artificial) return opt_.artificial(pre_, i_, j, s, xi);
    return pre_.r(i_, j, s, 1.0);
  }

  void build_formula(int j, Side side, unsigned events, std::size_t node, double t, double x, double xi, Chunk& c) const {
    const PairRule rule = kernel_rule(i_, j, m_);
    Formula f{j, side, node, 0.0, c.samples.size(), 0};
    const PairPath path = trace_pair(cache_, i_, j, t, x, xi, rule.dir, events, step_);
    const PathPoint& e = path.end;
    if (path.event & ev_meet) {
      f.k0 = pre_.r(i_, j, e.s, e.x);
    } else if (path.event & ev_x_hits_1) {
      if (i_ < m_)
        f.k0 = artificial(j, e.s, e.xi);
      else
        f.k0 = j == i_ ? 0.0 : pre_.r(i_, j, e.s, 1.0);
    } else if (path.event & ev_xi_hits_0) {
      if (i_ < m_) {
        for (int l = 0; l < n_ - m_; ++l) {
          const double qt = pre_.qt1(l, j, e.s);
          if (qt == 0.0) continue;
          const PairPath nested = trace_pair(cache_, i_, m_ + l, e.s, e.x, 0.0, Direction::forward, ev_meet, step_);
          f.k0 += qt * pre_.r(i_, m_ + l, nested.end.s, nested.end.x);
          add_path(nested, m_ + l, qt, 1.0, c);
        }
      } else {
        f.k0 = pre_.r(i_, j, e.s, 0.0);
      }
    } else {
      throw std::runtime_error("kernel characteristic ended without a stopping event");
    }
    add_path(path, j, 1.0, rule.dir == Direction::forward ? 1.0 : -1.0, c);
    f.end = c.samples.size();
    c.formulas.push_back(f);
  }

  void build_node(std::size_t node, Chunk& c) const {
    const std::size_t slice = g_.slice();
    const int k = static_cast<int>(node / slice);
    const int a = static_cast<int>((node % slice) / (g_.nx + 1));
    const int b = static_cast<int>(node % (g_.nx + 1));
    const double t = g_.time.node(k), x = g_.x(a), xi = g_.x(b);
    for (int j = 0; j < n_; ++j) {
      if (!split(j)) {
        build_formula(j, Side::below, kernel_rule(i_, j, m_).events, node, t, x, xi, c);
        continue;
      }
      const std::uint8_t r = K_.entry(i_, j).region[node];
      if (r != SheetedField::above_only) build_formula(j, Side::below, ev_xi_hits_0, node, t, x, xi, c);
      if (r != SheetedField::below_only) build_formula(j, Side::above, ev_meet, node, t, x, xi, c);
    }
  }

  double load(const Formula& f) const {
    const SheetedField& e = K_.entry(i_, f.j);
    return (f.side == Side::above ? e.above : e.below)[f.node];
  }
  void store(const Formula& f, double v) {
    SheetedField& e = K_.entry(i_, f.j);
    (f.side == Side::above ? e.above : e.below)[f.node] = v;
  }
  void fill() {
    for (int j = 0; j < n_; ++j)
      if (split(j)) K_.entry(i_, j).fill_ghosts();
  }

  double apply(const Formula& f) const {
    const std::size_t slice = g_.slice();
    double acc = f.k0;
    for (std::size_t q = f.begin; q < f.end; ++q) {
      const Sample& s = samples_[q];
      const double* cf = coefs_.data() + q * n_;
      const std::size_t o0 = s.k0 * slice, o1 = s.k1 * slice;
      for (int l = 0; l < n_; ++l) {
        if (cf[l] == 0.0) continue;
        const SheetedField& e = K_.entry(i_, l);
        const double* d = (s.mask >> l & 1u) ? e.above.data() : e.below.data();
        double v = s.w[0] * d[o0 + s.id[0]] + s.w[1] * d[o0 + s.id[1]] + s.w[2] * d[o0 + s.id[2]];
        if (s.wt != 0.0) {
          const double v1 = s.w[0] * d[o1 + s.id[0]] + s.w[1] * d[o1 + s.id[1]] + s.w[2] * d[o1 + s.id[2]];
          v += s.wt * (v1 - v);
        }
        acc += cf[l] * v;
      }
    }
    return acc;
  }

  const Pretransform& pre_;
  const CharacteristicCache& cache_;
  const SolverOptions& opt_;
  KernelTable& K_;
  const KernelGrid g_;
  const int n_, m_, i_;
  const double step_;
  std::vector<Sample> samples_;
  std::vector<double> coefs_;
  std::vector<Formula> formulas_;
};

}  // namespace

KernelTable volterra_solve(const Pretransform& pre, const CharacteristicCache& cache, const SolverOptions& opt) {
  const SystemSpec& spec = cache.spec();
  KernelTable K;
  K.grid = pre.grid;
  K.n = spec.n;
  K.m = spec.m;
  K.rows = opt.full ? spec.n : spec.m;
  K.entries.resize(static_cast<std::size_t>(K.rows) * K.n);
  K.converged = true;
  const double step = opt.sample_step > 0 ? opt.sample_step : K.grid.h() / std::max(max_speed(spec, K.grid.time), 1e-12);
  for (int i = 0; i < K.rows; ++i) {
    RowSolver row(pre, cache, opt, K, i, step);
    row.build();
    row.iterate();
  }
  return K;
}

}  // namespace backstep
