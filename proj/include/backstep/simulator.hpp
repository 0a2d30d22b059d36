#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <vector>

#include "backstep/system.hpp"
#include "backstep/tables.hpp"

namespace backstep {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// y(t, x_k) on the uniform grid x_k = k / N; y is n x (N+1).
struct StateSnapshot {
  double t = 0.0;
  Eigen::MatrixXd y;

  int N() const { return static_cast<int>(y.cols()) - 1; }
  double x(int k) const { return static_cast<double>(k) / N(); }
};

struct Trace {
  std::vector<StateSnapshot> snapshots;  // every `store_every` steps plus the last
  std::vector<double> t;                 // every step
  std::vector<double> l2;
  std::vector<double> feedback_sup;      // sup over i < m of |y_i(t, 1)|
  double dt = 0.0;

  const StateSnapshot& last() const { return snapshots.back(); }
};

using MatrixFn = std::function<Eigen::MatrixXd(double t, double x)>;
using BoundaryFn = std::function<Eigen::MatrixXd(double t)>;

// y_t + Λ y_x = M y + G y(t, 0), y_-(t,1) = ∫ F y dξ, y_+(t,0) = Q y_-(t,0).
struct GeneralSystem {
  SystemSpec spec;
  MatrixFn M;        // n x n; empty: spec.M_at
  MatrixFn G;        // n x n; empty: zero
  BoundaryFn Q;      // p x m; empty: spec.Q_at
  MatrixFn F;        // m x n; empty: open loop
  bool stationary = false;  // coefficients and gain do not depend on t
};

GeneralSystem open_loop(const SystemSpec& spec);
GeneralSystem closed_loop(const SystemSpec& spec, const GainTable& gain);

struct SimulationOptions {
  double h_ode = 1e-3;
  int store_every = 1;  // 0 keeps only the first and last snapshots
};

Trace simulate(const GeneralSystem& sys, const StateSnapshot& y0, double T, double dt,
               const SimulationOptions& opt = {});

StateSnapshot sample_state(int n, int N, double t, const std::function<double(int i, double x)>& f);

// γ = w − ∫_0^x K(t,x,ξ) w(t,ξ) dξ for the rows K stores.
StateSnapshot apply_volterra(const KernelTable& K, const StateSnapshot& w);

// γ = z − ∫_0^1 H(t,x,ξ) z(t,ξ) dξ; only the first m components change.
StateSnapshot apply_fredholm(const FredholmKernelTable& H, const StateSnapshot& z);

double l2_norm(const StateSnapshot& s);

}  // namespace backstep
