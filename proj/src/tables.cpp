#include "backstep/tables.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace backstep {

namespace {

// Piecewise linear on the triangles obtained by cutting each cell along u = v.
double slice_interp(const double* f, int nx, double x, double xi, bool triangular) {
  double u = std::clamp(x, 0.0, 1.0) * nx;
  double v = std::clamp(xi, 0.0, 1.0) * nx;
  if (triangular && v > u) v = u;
  const int a = std::min(static_cast<int>(u), nx - 1);
  const int b = std::min(static_cast<int>(v), nx - 1);
  const double du = u - a, dv = v - b;
  const std::size_t w = static_cast<std::size_t>(nx) + 1;
  const double f00 = f[a * w + b];
  const double f11 = f[(a + 1) * w + b + 1];
  if (dv <= du) {
    const double f10 = f[(a + 1) * w + b];
    return f00 + du * (f10 - f00) + dv * (f11 - f10);
  }
  const double f01 = f[a * w + b + 1];
  return f00 + dv * (f01 - f00) + du * (f11 - f01);
}

}  // namespace

double GridScalar::operator()(double t, double x) const {
  const TimeAxis::Stencil st = time.locate(t);
  const double u = std::clamp(x, 0.0, 1.0) * nx;
  const int a = std::min(static_cast<int>(u), nx - 1);
  const double w = u - a;
  auto at = [&](int k) { return (1 - w) * node(k, a) + w * node(k, a + 1); };
  if (st.k0 == st.k1) return at(st.k0);
  return (1 - st.w) * at(st.k0) + st.w * at(st.k1);
}

SheetedField SheetedField::single(const KernelGrid& g, bool triangular) {
  SheetedField f;
  f.grid = g;
  f.triangular = triangular;
  f.below.assign(g.size(), 0.0);
  return f;
}

SheetedField SheetedField::split(const KernelGrid& g, bool triangular) {
  SheetedField f = single(g, triangular);
  f.two_sheets = true;
  f.above.assign(g.size(), 0.0);
  f.region.assign(g.size(), below_only);
  f.psi.time = g.time;
  f.psi.nx = g.nx;
  f.psi.v.assign(static_cast<std::size_t>(g.nt()) * (g.nx + 1), 0.0);
  return f;
}

double SheetedField::node_auto(int k, int a, int b) const {
  const std::size_t id = grid.index(k, a, b);
  if (two_sheets && region[id] == above_only) return above[id];
  return below[id];
}

bool SheetedField::valid(Side s, int k, int a, int b) const {
  if (!two_sheets) return true;
  const std::uint8_t r = region[grid.index(k, a, b)];
  if (s == Side::above) return r != below_only;
  return r != above_only;
}

Side SheetedField::pick(double t, double x, double xi) const {
  if (!two_sheets) return Side::below;
  return xi <= psi(t, x) ? Side::below : Side::above;
}

double SheetedField::eval(double t, double x, double xi, Side side) const {
  if (side == Side::automatic) side = pick(t, x, xi);
  const std::vector<double>& f = sheet(side);
  const TimeAxis::Stencil st = grid.time.locate(t);
  const double* s0 = f.data() + grid.slice() * st.k0;
  const double v0 = slice_interp(s0, grid.nx, x, xi, triangular);
  if (st.k0 == st.k1 || st.w == 0.0) return v0;
  const double* s1 = f.data() + grid.slice() * st.k1;
  return (1 - st.w) * v0 + st.w * slice_interp(s1, grid.nx, x, xi, triangular);
}

void SheetedField::fill_ghosts() {
  if (!two_sheets) return;
  const int nx = grid.nx;
  for (int k = 0; k < grid.nt(); ++k)
    for (int a = 0; a <= nx; ++a) {
      const int bmax = triangular ? a : nx;
      for (Side s : {Side::below, Side::above}) {
        std::vector<double>& f = s == Side::above ? above : below;
        const std::vector<double>& other = s == Side::above ? below : above;
        for (int b = 0; b <= bmax; ++b) {
          if (valid(s, k, a, b)) continue;
          int best = -1;
          for (int d = 1; d <= bmax && best < 0; ++d) {
            if (b - d >= 0 && valid(s, k, a, b - d))
              best = b - d;
            else if (b + d <= bmax && valid(s, k, a, b + d))
              best = b + d;
          }
          const std::size_t id = grid.index(k, a, b);
          f[id] = best >= 0 ? f[grid.index(k, a, best)] : other[id];
        }
      }
    }
}

double kernel_eval(const KernelTable& K, int i, int j, double t, double x, double xi, Side side) {
  return K.entry(i, j).eval(t, x, std::min(xi, x), side);
}

double FredholmKernelTable::eval(int i, int j, double t, double x, double xi, Side side) const {
  const SheetedField* e = entry(i, j);
  return e ? e->eval(t, x, xi, side) : 0.0;
}

MatrixTable MatrixTable::zeros(const TimeAxis& time, int nx, int rows, int cols) {
  MatrixTable t;
  t.time = time;
  t.nx = nx;
  t.rows = rows;
  t.cols = cols;
  t.v.assign(static_cast<std::size_t>(time.nt) * (nx + 1), Eigen::MatrixXd::Zero(rows, cols));
  return t;
}

Eigen::MatrixXd MatrixTable::operator()(double t, double x) const {
  if (period && time.mode == TimeAxis::Mode::window && t > time.t1) t -= *period * std::ceil((t - time.t1) / *period);
  const TimeAxis::Stencil st = time.locate(t);
  const double u = std::clamp(x, 0.0, 1.0) * nx;
  const int a = std::min(static_cast<int>(u), nx - 1);
  const double w = u - a;
  auto at = [&](int k) -> Eigen::MatrixXd { return (1 - w) * node(k, a) + w * node(k, a + 1); };
  if (st.k0 == st.k1 || st.w == 0.0) return at(st.k0);
  return (1 - st.w) * at(st.k0) + st.w * at(st.k1);
}

double MatrixTable::covers_from() const {
  return time.mode == TimeAxis::Mode::window ? time.t0 : -std::numeric_limits<double>::infinity();
}

double MatrixTable::covers_to() const {
  if (time.mode != TimeAxis::Mode::window || period) return std::numeric_limits<double>::infinity();
  return time.t1;
}

}  // namespace backstep
