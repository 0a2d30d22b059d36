#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "backstep/parallel.hpp"
#include "backstep/transforms.hpp"

namespace backstep {

MatrixTable g2_assemble(const KernelTable& K, const Pretransform& pre, double tol_tri) {
  const SystemSpec& spec = pre.spec;
  const int n = K.n, m = K.m, p = n - m;
  const KernelGrid& g = K.grid;
  MatrixTable G2 = MatrixTable::zeros(g.time, g.nx, n, n);
  for (int k = 0; k < g.nt(); ++k) {
    const double t = g.time.node(k);
    Eigen::VectorXd lam0 = spec.lambda_at(t, 0.0);
    const Eigen::MatrixXd Q1 = pre.Q1_at(t);
    for (int a = 0; a <= g.nx; ++a) {
      Eigen::MatrixXd& G = G2.node(k, a);
      for (int i = 0; i < K.rows; ++i)
        for (int j = 0; j < m; ++j) {
          double v = -K.entry(i, j).node_auto(k, a, 0) * lam0(j);
          double scale = std::abs(v);
          for (int l = 0; l < p; ++l) {
            const double term = K.entry(i, m + l).node_auto(k, a, 0) * lam0(m + l) * Q1(l, j);
            v -= term;
            scale = std::max(scale, std::abs(term));
          }
          G(i, j) = v;
          if (i < m && i <= j && std::abs(v) > tol_tri * (1.0 + scale))
            throw std::runtime_error(fmt::format("G2_(--) not strictly lower triangular: g2_{}{} = {:.3e} at t = {}, x = {}",
                                                 i + 1, j + 1, v, t, g.x(a)));
        }
    }
  }
  return G2;
}

FredholmKernelTable fredholm_solve(const MatrixTable& G2, const CharacteristicCache& cache, const KernelGrid& grid,
                                   double sample_step) {
  const SystemSpec& spec = cache.spec();
  const int m = spec.m;
  FredholmKernelTable H;
  H.grid = grid;
  H.m = m;
  H.entries.resize(static_cast<std::size_t>(m) * m);
  if (sample_step <= 0) sample_step = grid.h();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < i; ++j) {
      SheetedField f = SheetedField::split(grid, false);
      const Expression* lj = spec.lambda[j].expression();
      const bool flat = lj && !lj->depends_on_x();
      for (int k = 0; k < grid.nt(); ++k) {
        const double t = grid.time.node(k);
        for (int a = 0; a <= grid.nx; ++a) f.psi.node(k, a) = psi(cache, i, j, t, grid.x(a));
      }
      const std::size_t count = grid.size();
      parallel_for(count, 0, [&](std::size_t b0, std::size_t e0, int) {
        for (std::size_t id = b0; id < e0; ++id) {
          const int k = static_cast<int>(id / grid.slice());
          const int a = static_cast<int>((id % grid.slice()) / (grid.nx + 1));
          const int b = static_cast<int>(id % (grid.nx + 1));
          const double t = grid.time.node(k), x = grid.x(a), xi = grid.x(b);
          const double si = boundary_times(cache, i, t, x).s_out;
          const double sj = boundary_times(cache, j, t, xi).s_out;
          const double tol = 1e-9 * (1.0 + std::abs(t));
          const std::uint8_t r = si > sj + tol ? SheetedField::below_only
                                 : si < sj - tol ? SheetedField::above_only
                                                 : SheetedField::surface;
          f.region[id] = r;
          f.above[id] = 0.0;
          if (r == SheetedField::above_only) continue;
          const double X = flow(cache, i, sj, t, x);
          const double bij = -G2(sj, X)(i, j) / spec.lam(j, sj, 0.0);
          double expo = 0.0;
          if (!flat && sj > t) {
            const PairPath path = trace_pair(cache, j, -1, t, xi, 0.0, Direction::forward, ev_x_hits_0, sample_step);
            for (std::size_t q = 1; q < path.points.size(); ++q) {
              const PathPoint& p0 = path.points[q - 1];
              const PathPoint& p1 = path.points[q];
              expo += 0.5 * (p1.s - p0.s) * (spec.dlam_dx(j, p0.s, p0.x) + spec.dlam_dx(j, p1.s, p1.x));
            }
          }
          f.below[id] = bij * std::exp(expo);
        }
      });
      f.fill_ghosts();
      H.entries[static_cast<std::size_t>(i) * m + j] = std::move(f);
    }
  return H;
}

MatrixTable f2_solve(const FredholmKernelTable& H, int n) {
  const KernelGrid& g = H.grid;
  const int m = H.m, nx = g.nx;
  MatrixTable F2 = MatrixTable::zeros(g.time, nx, m, n);
  if (m < 2) return F2;
  std::vector<double> w(nx + 1, g.h());
  w.front() = w.back() = 0.5 * g.h();
  for (int k = 0; k < g.nt(); ++k) {
    // Hn[c][b] = H(t_k, zeta_c, xi_b), m x m.
    std::vector<Eigen::MatrixXd> Hn(static_cast<std::size_t>(nx + 1) * (nx + 1), Eigen::MatrixXd::Zero(m, m));
    for (int c = 0; c <= nx; ++c)
      for (int b = 0; b <= nx; ++b)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < i; ++j)
            if (const SheetedField* e = H.entry(i, j)) Hn[c * (nx + 1) + b](i, j) = e->node_auto(k, c, b);
    std::vector<Eigen::MatrixXd> term(nx + 1), sum(nx + 1);
    for (int b = 0; b <= nx; ++b) {
      term[b] = -Hn[nx * (nx + 1) + b];
      sum[b] = term[b];
    }
    for (int q = 1; q < m; ++q) {
      std::vector<Eigen::MatrixXd> next(nx + 1, Eigen::MatrixXd::Zero(m, m));
      for (int b = 0; b <= nx; ++b)
        for (int c = 0; c <= nx; ++c) next[b].noalias() += w[c] * term[c] * Hn[c * (nx + 1) + b];
      term = std::move(next);
      for (int b = 0; b <= nx; ++b) sum[b] += term[b];
    }
    for (int b = 0; b <= nx; ++b) F2.node(k, b).leftCols(m) = sum[b];
  }
  return F2;
}

MatrixTable f1_compose(const KernelTable& K, const MatrixTable& F2) {
  const KernelGrid& g = K.grid;
  if (!(F2.time == g.time) || F2.nx != g.nx) throw std::invalid_argument("f1_compose: grid mismatch between kernel and F2");
  const int n = K.n, m = K.m, nx = g.nx;
  MatrixTable F1 = MatrixTable::zeros(g.time, nx, m, n);
  for (int k = 0; k < g.nt(); ++k) {
    const double t = g.time.node(k);
    bool f2_zero = true;
    for (int b = 0; b <= nx; ++b) f2_zero = f2_zero && F2.node(k, b).isZero(0.0);
    // K_{q j}(t, zeta, xi) for q < m with an explicit sheet choice per entry.
    auto kmat = [&](double zeta, double xi, double zeta_mid) {
      Eigen::MatrixXd out(m, n);
      for (int q = 0; q < m; ++q)
        for (int j = 0; j < n; ++j) {
          const SheetedField& e = K.entry(q, j);
          out(q, j) = e.eval(t, zeta, std::min(xi, zeta), e.pick(t, zeta_mid, xi));
        }
      return out;
    };
    auto f2 = [&](double zeta) -> Eigen::MatrixXd { return F2(t, zeta).leftCols(m); };
    for (int b = 0; b <= nx; ++b) {
      Eigen::MatrixXd F = Eigen::MatrixXd::Zero(m, n);
      for (int q = 0; q < m; ++q)
        for (int j = 0; j < n; ++j) F(q, j) = K.entry(q, j).node_auto(k, nx, b);
      F += F2.node(k, b);
      if (!f2_zero) {
        const double xi = g.x(b);
        Eigen::MatrixXd integral = Eigen::MatrixXd::Zero(m, n);
        for (int c = b; c < nx; ++c) {
          const double z0 = g.x(c), z1 = g.x(c + 1);
          std::vector<double> cuts{z0, z1};
          for (int q = 0; q < m; ++q)
            for (int j = q + 1; j < m; ++j) {
              const SheetedField& e = K.entry(q, j);
              const double d0 = e.psi.node(k, c) - xi, d1 = e.psi.node(k, c + 1) - xi;
              if (d0 * d1 < 0) cuts.push_back(z0 + (z1 - z0) * d0 / (d0 - d1));
            }
          std::sort(cuts.begin(), cuts.end());
          for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
            const double za = cuts[s], zb = cuts[s + 1];
            if (zb <= za) continue;
            const double mid = 0.5 * (za + zb);
            integral += 0.5 * (zb - za) * (f2(za) * kmat(za, xi, mid) + f2(zb) * kmat(zb, xi, mid));
          }
        }
        F -= integral;
      }
      F1.node(k, b) = F;
    }
  }
  return F1;
}

}  // namespace backstep
