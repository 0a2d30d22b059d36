#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "backstep/simulator.hpp"
#include "backstep/transforms.hpp"

namespace backstep {

struct CheckReport {
  std::string name;
  std::size_t samples = 0;
  double residual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::vector<std::string> offending;  // at most 10
  std::string note;

  void finish() { pass = residual <= tolerance; }
  void offend(std::string where);
};

using InitialData = std::function<double(int i, double x)>;

// (λ_j − λ_i) k_ij(t,x,x) + m1_ij(t,x) at every diagonal node, rows i < m.
CheckReport check_trace(const KernelTable& K, const Pretransform& pre, double tol);

// |g2_ij| for i <= j < m at every node.
CheckReport check_triangular(const MatrixTable& G2, int m, double tol);

// Boundary condition on ξ = 0 for entries i <= j < m, recomputed from the stored kernel.
CheckReport check_reflection(const KernelTable& K, const Pretransform& pre, double tol = 0.0);

// a_ij(t,1) = r_ij(t,1) for j < i < m.
CheckReport check_compatibility(const KernelTable& K, const Pretransform& pre, double tol);

// Directional derivative along (1, λ_i, λ_j) plus the coupling sum at random interior points.
CheckReport check_kernel_pde(const KernelTable& K, const Pretransform& pre, double tol, int samples = 200,
                             std::uint64_t seed = 1);

// F2 − ∫ F2 H + H_-(t,1,·) on the nodes with the solver's quadrature.
CheckReport check_fredholm_residual(const FredholmKernelTable& H, const MatrixTable& F2, double tol = 1e-8);

// m applications of the discrete Fredholm operator to random data.
CheckReport check_nilpotency(const FredholmKernelTable& H, double tol = 1e-12, std::uint64_t seed = 1);

struct FiniteTimeOptions {
  std::vector<double> t0 = {0.0};
  std::vector<InitialData> y0;
  double T = 2.0;
  int N = 400;
  double dt = 1.0 / 400;
  double tol = 0.05;
};

CheckReport check_finite_time(const GeneralSystem& sys, const FiniteTimeOptions& opt);

CheckReport check_uniform_stability(const GeneralSystem& sys, const std::vector<double>& t0_grid, const InitialData& y0,
                                    double T_window, int N, double dt, double bound);

CheckReport check_psi(const CharacteristicCache& cache, int i, int j, double tol = 1e-5, int samples = 100,
                      std::uint64_t seed = 1);

CheckReport check_omega(const CharacteristicCache& cache, int i, int samples = 100, std::uint64_t seed = 1);

// Volterra stage: (M1, 0, F1, Q1) against (0, G2, F2, Q1); Fredholm stage (m > 1): (0, G3, 0, Q1) against (0, G2, F2, Q1).
// Residual: sup over matched snapshots of the L2 mismatch.
struct ConsistencyOptions {
  double t0 = 0.0;
  double T = 1.0;
  int N = 200;
  double dt = 1.0 / 200;
  int compare_every = 0;  // steps between compared snapshots; 0 picks N / 4
  double tol = 0.05;
};
CheckReport check_transform_consistency(const Synthesis& syn, const InitialData& y0, const ConsistencyOptions& opt);

CheckReport check_periodicity(const GainTable& gain, std::optional<double> tau, double tol = 1e-6);

CheckReport check_topt(const CharacteristicCache& cache, double t0_max = 1e3, double tol = 1e-6);

// Adds multiples of x^2 (negative families) and (1-x)^2 (positive families) so the state meets the boundary relations.
StateSnapshot compatible_state(const GeneralSystem& sys, StateSnapshot s);

// ν in (max λ_i/λ_j over j < i, 1) used for Ω_i.
double omega_nu(const SystemSpec& spec, int i);

}  // namespace backstep
