#include "backstep/field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace backstep {

double TimeAxis::node(int k) const {
  switch (mode) {
    case Mode::stationary: return t0;
    case Mode::periodic: return t0 + (t1 - t0) * k / nt;
    case Mode::window: return nt == 1 ? t0 : t0 + (t1 - t0) * k / (nt - 1);
  }
  return t0;
}

double TimeAxis::step() const {
  switch (mode) {
    case Mode::stationary: return std::numeric_limits<double>::infinity();
    case Mode::periodic: return (t1 - t0) / nt;
    case Mode::window: return nt == 1 ? std::numeric_limits<double>::infinity() : (t1 - t0) / (nt - 1);
  }
  return 0.0;
}

TimeAxis::Stencil TimeAxis::locate(double t) const {
  if (mode == Mode::stationary || nt == 1) return {0, 0, 0.0};
  if (mode == Mode::periodic) {
    const double period = t1 - t0;
    double u = std::fmod(t - t0, period);
    if (u < 0) u += period;
    double pos = u / period * nt;
    int k = static_cast<int>(std::floor(pos));
    if (k >= nt) k = nt - 1;
    if (k < 0) k = 0;
    double w = pos - k;
    return {k, (k + 1) % nt, std::clamp(w, 0.0, 1.0)};
  }
  if (t <= t0) return {0, 0, 0.0};
  if (t >= t1) return {nt - 1, nt - 1, 0.0};
  double pos = (t - t0) / (t1 - t0) * (nt - 1);
  int k = std::min(static_cast<int>(std::floor(pos)), nt - 2);
  return {k, k + 1, pos - k};
}

namespace {

// Returns index i and weight w with value = (1-w) f[i] + w f[i+1].
void locate_axis(const std::vector<double>& ax, double v, int& i, double& w) {
  const int n = static_cast<int>(ax.size());
  if (n == 1) {
    i = 0;
    w = 0.0;
    return;
  }
  if (v <= ax.front()) {
    i = 0;
    w = 0.0;
    return;
  }
  if (v >= ax.back()) {
    i = n - 2;
    w = 1.0;
    return;
  }
  auto it = std::upper_bound(ax.begin(), ax.end(), v);
  i = static_cast<int>(it - ax.begin()) - 1;
  w = (v - ax[i]) / (ax[i + 1] - ax[i]);
}

}  // namespace

double Table2::operator()(double t, double x) const {
  const int nt = static_cast<int>(t_axis.size());
  int it0 = 0, it1 = 0;
  double wt = 0.0;
  if (nt > 1) {
    if (policy == TimePolicy::periodic) {
      // Axis covers [t_axis[0], t_axis[0] + period); a closing node equal to the period is allowed.
      double u = std::fmod(t - t_axis.front(), period);
      if (u < 0) u += period;
      const double tt = t_axis.front() + u;
      if (tt >= t_axis.back()) {
        const bool closed = t_axis.back() >= t_axis.front() + period - 1e-12;
        if (closed) {
          it0 = nt - 1;
          it1 = nt - 1;
          wt = 0.0;
        } else {
          it0 = nt - 1;
          it1 = 0;
          wt = (tt - t_axis.back()) / (t_axis.front() + period - t_axis.back());
        }
      } else {
        locate_axis(t_axis, tt, it0, wt);
        it1 = it0 + 1;
      }
    } else {
      locate_axis(t_axis, t, it0, wt);
      it1 = it0 + 1;
    }
  }
  int ix = 0;
  double wx = 0.0;
  locate_axis(x_axis, x, ix, wx);
  const int nx = static_cast<int>(x_axis.size());
  const int ix1 = nx > 1 ? ix + 1 : 0;
  auto row = [&](int k) { return (1 - wx) * values(k, ix) + wx * values(k, ix1); };
  if (nt == 1) return row(0);
  return (1 - wt) * row(it0) + wt * row(it1);
}

ScalarField::ScalarField(Table2 table) : rep_(std::move(table)) {
  const Table2& tb = std::get<Table2>(rep_);
  if (tb.t_axis.empty() || tb.x_axis.empty()) throw std::invalid_argument("table needs non-empty axes");
  if (tb.values.rows() != static_cast<Eigen::Index>(tb.t_axis.size()) ||
      tb.values.cols() != static_cast<Eigen::Index>(tb.x_axis.size()))
    throw std::invalid_argument("table values do not match axes");
  if (!std::is_sorted(tb.t_axis.begin(), tb.t_axis.end()) || !std::is_sorted(tb.x_axis.begin(), tb.x_axis.end()))
    throw std::invalid_argument("table axes must be increasing");
  if (tb.policy == Table2::TimePolicy::periodic && !(tb.period > 0)) throw std::invalid_argument("periodic table needs a period");
}

double ScalarField::operator()(double t, double x) const {
  x = std::clamp(x, 0.0, 1.0);
  if (const auto* e = std::get_if<Expression>(&rep_)) return (*e)(t, x);
  return std::get<Table2>(rep_)(t, x);
}

std::optional<double> ScalarField::constant() const {
  if (const auto* e = std::get_if<Expression>(&rep_)) return e->constant();
  const Table2& tb = std::get<Table2>(rep_);
  const double v = tb.values(0, 0);
  if ((tb.values.array() == v).all()) return v;
  return std::nullopt;
}

bool ScalarField::depends_on_t() const {
  if (const auto* e = std::get_if<Expression>(&rep_)) return e->depends_on_t();
  const Table2& tb = std::get<Table2>(rep_);
  for (Eigen::Index k = 1; k < tb.values.rows(); ++k)
    if ((tb.values.row(k).array() != tb.values.row(0).array()).any()) return true;
  return false;
}

double ScalarField::t_min() const {
  if (is_expression()) return 0.0;
  const Table2& tb = *table();
  if (tb.policy != Table2::TimePolicy::error || tb.t_axis.size() == 1) return -std::numeric_limits<double>::infinity();
  return tb.t_axis.front();
}

double ScalarField::t_max() const {
  if (is_expression()) return std::numeric_limits<double>::infinity();
  const Table2& tb = *table();
  if (tb.policy != Table2::TimePolicy::error || tb.t_axis.size() == 1) return std::numeric_limits<double>::infinity();
  return tb.t_axis.back();
}

double evaluate(const ScalarField& field, double t, double x) {
  constexpr double slack = 1e-12;
  if (!(x >= -slack && x <= 1.0 + slack)) throw DomainError("x = " + std::to_string(x) + " outside [0,1]");
  if (!(t >= field.t_min() - slack && t <= field.t_max() + slack))
    throw DomainError("t = " + std::to_string(t) + " outside the field's time domain");
  return field(t, std::clamp(x, 0.0, 1.0));
}

}  // namespace backstep
