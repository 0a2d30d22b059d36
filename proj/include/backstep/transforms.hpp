#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>

#include "backstep/characteristics.hpp"
#include "backstep/tables.hpp"

namespace backstep {

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double increment) : std::runtime_error(what), increment_(increment) {}
  double increment() const { return increment_; }

 private:
  double increment_;
};

// Diagonal change of variables removing the diagonal of M.
struct Pretransform {
  SystemSpec spec;
  KernelGrid grid;
  std::vector<GridScalar> phi;  // n, tabulated on the (t, x) nodes
  bool identity = false;        // every m_ii vanishes

  double phi_at(int i, double t, double x) const;
  double m1(int i, int j, double t, double x) const;
  double mt1(int l, int j, double t, double x) const;  // d_xi lambda_j delta_lj + m1_lj
  double r(int i, int j, double t, double x) const;
  double q1(int l, int j, double t) const;
  double qt1(int l, int j, double t) const;

  Eigen::MatrixXd M1_at(double t, double x) const;
  Eigen::MatrixXd Q1_at(double t) const;

  ScalarField phi_field(int i) const;
  ScalarField m1_field(int i, int j) const;
  ScalarField q1_field(int l, int j) const;
};

Pretransform exp_pretransform(const CharacteristicCache& cache, const KernelGrid& grid, double sample_step = 0.0);

// Artificial data on x = 1 for entries j < i < m; must equal r_ij(t, 1) at xi = 1.
using ArtificialData = std::function<double(const Pretransform&, int i, int j, double t, double xi)>;

struct SolverOptions {
  double tol_fp = 1e-8;
  int max_iter = 200;
  int workers = 0;
  bool full = true;            // also compute rows m..n-1 (needed for G2_{+-})
  double sample_step = 0.0;    // quadrature spacing along characteristics; 0 picks h / max|lambda|
  ArtificialData artificial;   // empty: a_ij = r_ij(t, 1)
};

KernelTable volterra_solve(const Pretransform& pre, const CharacteristicCache& cache, const SolverOptions& opt = {});

// G2 (n x n, columns m..n-1 zero) at the (t, x) nodes.
MatrixTable g2_assemble(const KernelTable& K, const Pretransform& pre, double tol_tri = 1e-6);

FredholmKernelTable fredholm_solve(const MatrixTable& G2, const CharacteristicCache& cache, const KernelGrid& grid,
                                   double sample_step = 0.0);

// F2 (m x n) on the (t, xi) nodes.
MatrixTable f2_solve(const FredholmKernelTable& H, int n);

MatrixTable f1_compose(const KernelTable& K, const MatrixTable& F2);

// F = F1 diag(phi); `axis` resamples in time (default: the axis of F1).
MatrixTable f_compose(const Pretransform& pre, const MatrixTable& F1, std::optional<TimeAxis> axis = std::nullopt);

struct Synthesis {
  Pretransform pre;
  KernelTable K;
  MatrixTable G2;
  FredholmKernelTable H;
  GainTable gain;
  ToptResult topt;
  SystemSpec spec;  // the extended spec actually used
};

struct SynthesisOptions {
  int nx = 40;
  int nt = 0;                 // time nodes for time-dependent specs; 0 picks a default
  double t_horizon = 10.0;    // gains are produced on [0, t_horizon]
  double t0_max = 1e3;
  int topt_grid = 2001;
  bool compute_topt = true;
  double tol_tri = 1e-6;
  std::optional<TimeAxis> time;  // overrides the automatic choice
  SolverOptions solver;
  OdeSettings ode;
};

// Time axis for the kernel: one node for time-independent specs, one period for periodic ones,
// otherwise a window covering [-2/eps, t_horizon + 2/eps].
TimeAxis kernel_time_axis(const SystemSpec& spec, const SynthesisOptions& opt);

// The spec synthesis actually works with: adds the delta extension when neither a period nor delta is set.
SystemSpec synthesis_spec(const SystemSpec& spec);

Synthesis synthesize(const SystemSpec& spec, const SynthesisOptions& opt = {});

}  // namespace backstep
