#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "backstep/field.hpp"

namespace backstep {

// y_t + Λ y_x = M y, y_-(t,1) = u, y_+(t,0) = Q y_-(t,0).
// Indices are zero-based: families 0..m-1 have negative speed.
struct SystemSpec {
  std::string name = "custom";
  int n = 2;
  int m = 1;
  double eps = 0.5;
  std::vector<ScalarField> lambda;            // n
  std::vector<std::vector<ScalarField>> M;    // n x n
  std::vector<std::vector<ScalarField>> Q;    // p x m, functions of t
  std::optional<double> period;
  std::optional<double> delta;                // time extension parameter for t < 0
  bool simulation_only = false;

  int p() const { return n - m; }

  // Extended coefficients: t < 0 uses the periodic wrap or the delta extension,
  // x is clamped to [0,1].
  double lam(int i, double t, double x) const;
  double dlam_dx(int i, double t, double x) const;
  double m_at(int i, int j, double t, double x) const;
  double q_at(int l, int j, double t) const;

  Eigen::VectorXd lambda_at(double t, double x) const;
  Eigen::MatrixXd M_at(double t, double x) const;
  Eigen::MatrixXd Q_at(double t) const;

  double extension_time(double t) const;  // the time at which M and Q are read
};

using Params = std::map<std::string, std::string>;

SystemSpec make_spec(int n, int m, double eps);

SystemSpec extend_time(SystemSpec spec, double delta);

// Extension parameter comfortably inside the admissible range of the delta extension.
double default_delta(const SystemSpec& spec);

// A spec that breaks the synthesis hypotheses.
class HypothesisError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Violation {
  std::string kind;  // sign, separation, gap, bounded, periodic, ordering
  int i = -1;
  double t = 0.0;
  double x = 0.0;
  double value = 0.0;
  std::string detail;
};

struct ValidationOptions {
  int nt = 201;
  int nx = 201;
  double t_max = 10.0;  // periodic specs are sampled over one period instead
  double eps_scale = 1.0;
  bool include_extension = false;  // also sample t in [-2/eps, 0)
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::size_t samples = 0;
  bool ok() const { return violations.empty(); }
  bool only(const std::string& kind) const;
};

ValidationReport validate(const SystemSpec& spec, const ValidationOptions& opt = {});

bool is_time_independent(const SystemSpec& spec, int samples = 41);

// example_1_5, unstable_2x2, remark_1_7_3x3, const_2x2, custom.
SystemSpec catalog(const std::string& name, const Params& params = {});

}  // namespace backstep
