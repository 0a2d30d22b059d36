#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "backstep/field.hpp"

namespace backstep {

// Uniform (t, x, xi) grid; x and xi share the nodes a/nx so the diagonal is a node set.
struct KernelGrid {
  TimeAxis time;
  int nx = 40;

  double h() const { return 1.0 / nx; }
  int nt() const { return time.nt; }
  std::size_t slice() const { return static_cast<std::size_t>(nx + 1) * (nx + 1); }
  std::size_t index(int k, int a, int b) const { return (static_cast<std::size_t>(k) * (nx + 1) + a) * (nx + 1) + b; }
  std::size_t size() const { return slice() * nt(); }
  double x(int a) const { return static_cast<double>(a) / nx; }

  bool operator==(const KernelGrid&) const = default;
};

enum class Side { below, above, automatic };

// Scalar on the (t, x) nodes of a KernelGrid.
struct GridScalar {
  TimeAxis time;
  int nx = 0;
  std::vector<double> v;  // k * (nx + 1) + a

  double node(int k, int a) const { return v[static_cast<std::size_t>(k) * (nx + 1) + a]; }
  double& node(int k, int a) { return v[static_cast<std::size_t>(k) * (nx + 1) + a]; }
  double operator()(double t, double x) const;
};

// One kernel entry over (t, x, xi), with an optional second sheet across xi = psi(t, x).
struct SheetedField {
  enum Region : std::uint8_t { below_only = 0, above_only = 1, surface = 2 };

  KernelGrid grid;
  bool triangular = true;  // domain xi <= x
  bool two_sheets = false;
  std::vector<double> below;   // the only sheet when two_sheets is false
  std::vector<double> above;
  std::vector<std::uint8_t> region;
  GridScalar psi;

  static SheetedField single(const KernelGrid& g, bool triangular);
  static SheetedField split(const KernelGrid& g, bool triangular);

  const std::vector<double>& sheet(Side s) const { return s == Side::above && two_sheets ? above : below; }
  double node(Side s, int k, int a, int b) const { return sheet(s)[grid.index(k, a, b)]; }
  // At a node the side follows the stored region (surface resolves to below).
  double node_auto(int k, int a, int b) const;
  bool valid(Side s, int k, int a, int b) const;

  Side pick(double t, double x, double xi) const;
  double eval(double t, double x, double xi, Side side = Side::automatic) const;

  // Copies the nearest valid node along xi into nodes that lie on the other side of the surface.
  void fill_ghosts();
};

// Volterra kernel K; rows 0..m-1 always, rows m..n-1 in full mode.
struct KernelTable {
  KernelGrid grid;
  int n = 0, m = 0, rows = 0;
  std::vector<SheetedField> entries;  // rows * n
  int iterations = 0;
  double last_increment = 0.0;
  bool converged = false;

  bool full() const { return rows == n; }
  const SheetedField& entry(int i, int j) const { return entries[static_cast<std::size_t>(i) * n + j]; }
  SheetedField& entry(int i, int j) { return entries[static_cast<std::size_t>(i) * n + j]; }
  bool two_sheet(int i, int j) const { return i < j && j < m; }
};

double kernel_eval(const KernelTable& K, int i, int j, double t, double x, double xi, Side side = Side::automatic);

// Fredholm kernel H over the square; only entries i > j (both < m) are stored.
struct FredholmKernelTable {
  KernelGrid grid;
  int m = 0;
  std::vector<std::optional<SheetedField>> entries;  // m * m

  const SheetedField* entry(int i, int j) const {
    const auto& e = entries[static_cast<std::size_t>(i) * m + j];
    return e ? &*e : nullptr;
  }
  double eval(int i, int j, double t, double x, double xi, Side side = Side::automatic) const;
};

// Matrix-valued table on (t, x) nodes, bilinear.
struct MatrixTable {
  TimeAxis time;
  int nx = 0;
  int rows = 0, cols = 0;
  std::optional<double> period;  // wrap queries beyond a window by this period
  std::vector<Eigen::MatrixXd> v;  // k * (nx + 1) + a

  static MatrixTable zeros(const TimeAxis& time, int nx, int rows, int cols);
  const Eigen::MatrixXd& node(int k, int a) const { return v[static_cast<std::size_t>(k) * (nx + 1) + a]; }
  Eigen::MatrixXd& node(int k, int a) { return v[static_cast<std::size_t>(k) * (nx + 1) + a]; }
  Eigen::MatrixXd operator()(double t, double x) const;
  double covers_from() const;
  double covers_to() const;
};

struct GainTable {
  MatrixTable F, F1, F2;  // m x n each
  std::map<std::string, std::string> meta;

  Eigen::MatrixXd operator()(double t, double xi) const { return F(t, xi); }
};

}  // namespace backstep
