#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <vector>

#include "backstep/system.hpp"

namespace backstep {

struct OdeSettings {
  double h_ode = 1e-3;
  double tol_root = 1e-10;
};

struct BoundaryTimes {
  double s_in = 0.0;
  double s_out = 0.0;
};

enum class Direction { backward, forward };

// Stopping events for the pair (chi_a(s;t,x), chi_b(s;t,xi)), with x the first coordinate.
enum Event : unsigned {
  ev_none = 0,
  ev_meet = 1u,       // chi_a = chi_b
  ev_x_hits_1 = 2u,
  ev_x_hits_0 = 4u,
  ev_xi_hits_0 = 8u,
  ev_xi_hits_1 = 16u,
  ev_time = 32u,      // reached the requested time limit
};

struct PathPoint {
  double s, x, xi;
};

struct PairPath {
  std::vector<PathPoint> points;  // start, every sample, end
  unsigned event = ev_none;
  PathPoint end{};
};

class CharacteristicCache {
 public:
  explicit CharacteristicCache(SystemSpec spec, OdeSettings settings = {});

  const SystemSpec& spec() const { return spec_; }
  const OdeSettings& settings() const { return settings_; }

  BoundaryTimes boundary_times(int i, double t, double x) const;
  std::size_t memo_size() const;

 private:
  struct Key {
    int i;
    std::uint64_t t, x;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const;
  };

  SystemSpec spec_;
  OdeSettings settings_;
  mutable std::mutex mu_;
  mutable std::unordered_map<Key, BoundaryTimes, KeyHash> memo_;
};

// chi_i(s; t, x).
double flow(const CharacteristicCache& cache, int i, double s, double t, double x);

// Entry and exit times of chi_i(.; t, x); memoized.
BoundaryTimes boundary_times(const CharacteristicCache& cache, int i, double t, double x);
BoundaryTimes boundary_times_uncached(const CharacteristicCache& cache, int i, double t, double x);

// Integrates (chi_a, chi_b) from (t, x, xi) until one of `events` fires or s reaches s_limit.
// sample_step > 0 records intermediate points roughly every sample_step in time.
// b < 0 integrates chi_a alone (xi is carried unchanged). nu scales the speed of chi_a by 1/nu.
PairPath trace_pair(const CharacteristicCache& cache, int a, int b, double t, double x, double xi, Direction dir,
                    unsigned events, double sample_step = 0.0, std::optional<double> s_limit = std::nullopt,
                    double nu = 1.0);

// Stopping rule for the kernel characteristic of entry (i, j).
struct PairRule {
  Direction dir;
  unsigned events;
};
PairRule kernel_rule(int i, int j, int m);

// Crossing time of the kernel characteristic through (t, x, xi); nullopt if `dir`
// is not the direction the case table prescribes for (i, j).
std::optional<double> crossing_time(const CharacteristicCache& cache, int i, int j, double t, double x, double xi,
                                    Direction dir);

// psi_ij(t, x) = chi_j(t; s_out_i(t,x), 0), clamped to [0,1]. Both indices < m.
double psi(const CharacteristicCache& cache, int i, int j, double t, double x);

// Exit time at x = 0 of the nu-slowed flow of family i < m.
double omega(const CharacteristicCache& cache, int i, double nu, double t, double x);

struct ToptResult {
  double value = 0.0;         // reported T_opt (extrapolated when a tail is detected)
  double grid_max = 0.0;      // best value found on the grid
  double argmax = 0.0;
  bool tail_extrapolated = false;
  std::vector<double> t0, h;  // sampled curve
};

// h(t0) = s_out_{m+1}(s_out_m(t0, 1), 0) - t0.
double settling_time_from(const CharacteristicCache& cache, double t0);

ToptResult compute_topt(const CharacteristicCache& cache, double t0_max = 1e3, int grid = 2001);

double topt_time_independent(const SystemSpec& spec);

}  // namespace backstep
