#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include "backstep/expression.hpp"

namespace backstep {

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Uniform time axis shared by every tabulated object produced by the solver.
// stationary: one node, constant in t.
// periodic:   nt nodes on [t0, t0 + period), wrapped.
// window:     nt nodes on [t0, t1], clamped outside.
struct TimeAxis {
  enum class Mode { stationary, periodic, window };

  Mode mode = Mode::stationary;
  double t0 = 0.0;
  double t1 = 0.0;
  int nt = 1;

  static TimeAxis stationary() { return {}; }
  static TimeAxis periodic(double period, int nt, double t0 = 0.0) { return {Mode::periodic, t0, t0 + period, nt}; }
  static TimeAxis window(double t0, double t1, int nt) { return {Mode::window, t0, t1, nt}; }

  double node(int k) const;
  double step() const;

  // Linear interpolation stencil: value = (1-w)*f[k0] + w*f[k1].
  struct Stencil {
    int k0 = 0, k1 = 0;
    double w = 0.0;
  };
  Stencil locate(double t) const;

  bool operator==(const TimeAxis&) const = default;
};

// Bilinear table over explicit (possibly non-uniform) t- and x-axes; values(it, ix).
struct Table2 {
  enum class TimePolicy { error, clamp, periodic };

  std::vector<double> t_axis;
  std::vector<double> x_axis;
  Eigen::MatrixXd values;
  TimePolicy policy = TimePolicy::error;
  double period = 0.0;

  double operator()(double t, double x) const;
};

class ScalarField {
 public:
  ScalarField() : ScalarField(0.0) {}
  explicit ScalarField(double c) : rep_(Expression(c)) {}
  explicit ScalarField(Expression e) : rep_(std::move(e)) {}
  explicit ScalarField(Table2 table);

  static ScalarField parse(std::string_view text) { return ScalarField(Expression::parse(text)); }

  // Unchecked evaluation; x is clamped to [0,1].
  double operator()(double t, double x) const;

  bool is_expression() const { return std::holds_alternative<Expression>(rep_); }
  const Expression* expression() const { return std::get_if<Expression>(&rep_); }
  const Table2* table() const { return std::get_if<Table2>(&rep_); }

  std::optional<double> constant() const;
  bool depends_on_t() const;

  // Declared domain. Expressions live on t >= 0 unless widened.
  double t_min() const;
  double t_max() const;

 private:
  std::variant<Expression, Table2> rep_;
};

// Domain-checked evaluation.
double evaluate(const ScalarField& field, double t, double x);

}  // namespace backstep
