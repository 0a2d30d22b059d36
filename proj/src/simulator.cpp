#include "backstep/simulator.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace backstep {

namespace {

bool speeds_stationary(const SystemSpec& spec) {
  return std::none_of(spec.lambda.begin(), spec.lambda.end(), [](const ScalarField& f) { return f.depends_on_t(); });
}

// Where the backward characteristic of one grid node lands after one step.
struct Foot {
  bool boundary = false;
  int k0 = 0;        // interior: interpolation stencil
  double w = 0.0;
  double tau = 0.0;  // time from the foot (or boundary entry) to arrival
};

class Marcher {
 public:
  Marcher(const GeneralSystem& sys, int N, double dt, double h_ode)
      : sys_(sys), spec_(sys.spec), n_(spec_.n), m_(spec_.m), N_(N), dt_(dt), h_ode_(h_ode) {
    weights_.assign(N_ + 1, 1.0 / N_);
    weights_.front() = weights_.back() = 0.5 / N_;
  }

  Trace run(const StateSnapshot& y0, int steps, int store_every) {
    Trace tr;
    tr.dt = dt_;
    StateSnapshot cur = y0;
    record(tr, cur, true);
    Level lv = level(cur.t);
    corner_average(cur, lv);
    for (int s = 1; s <= steps; ++s) {
      const double t1 = y0.t + s * dt_;
      Level lv1 = sys_.stationary ? lv : level(t1);
      StateSnapshot next = step(cur, lv, lv1, t1);
      if (!next.y.allFinite()) throw NumericalError(fmt::format("simulation blew up at t = {}", t1));
      cur = std::move(next);
      lv = std::move(lv1);
      record(tr, cur, s == steps || (store_every > 0 && s % store_every == 0));
    }
    return tr;
  }

 private:
  struct Level {
    double t = 0.0;
    std::vector<Eigen::MatrixXd> M, G, F;  // per node
    Eigen::MatrixXd Q;
    bool has_G = false, has_F = false;
  };

  Level level(double t) const {
    Level lv;
    lv.t = t;
    lv.M.resize(N_ + 1);
    for (int k = 0; k <= N_; ++k) lv.M[k] = sys_.M ? sys_.M(t, x(k)) : spec_.M_at(t, x(k));
    if (sys_.G) {
      lv.has_G = true;
      lv.G.resize(N_ + 1);
      for (int k = 0; k <= N_; ++k) lv.G[k] = sys_.G(t, x(k));
    }
    if (sys_.F) {
      lv.has_F = true;
      lv.F.resize(N_ + 1);
      for (int k = 0; k <= N_; ++k) lv.F[k] = sys_.F(t, x(k)) * weights_[k];
    }
    lv.Q = sys_.Q ? sys_.Q(t) : spec_.Q_at(t);
    return lv;
  }

  double x(int k) const { return static_cast<double>(k) / N_; }

  // Incompatible data put a jump at the inflow corners; the node there carries the mean of both sides.
  void corner_average(StateSnapshot& s, const Level& lv) const {
    const Eigen::VectorXd b = feedback(lv, s.y);
    s.y.col(N_).head(m_) = 0.5 * (s.y.col(N_).head(m_) + b);
    const Eigen::VectorXd c = lv.Q * s.y.col(0).head(m_);
    s.y.col(0).tail(n_ - m_) = 0.5 * (s.y.col(0).tail(n_ - m_) + c);
  }

  Eigen::MatrixXd source(const Level& lv, const Eigen::MatrixXd& y) const {
    Eigen::MatrixXd S(n_, N_ + 1);
    for (int k = 0; k <= N_; ++k) {
      S.col(k) = lv.M[k] * y.col(k);
      if (lv.has_G) S.col(k) += lv.G[k] * y.col(0);
    }
    return S;
  }

  Eigen::VectorXd feedback(const Level& lv, const Eigen::MatrixXd& y) const {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(m_);
    if (!lv.has_F) return b;
    for (int k = 0; k <= N_; ++k) b += lv.F[k] * y.col(k);
    return b;
  }

  double rk4(int i, double s, double X, double h) const {
    auto f = [&](double ss, double xx) { return spec_.lam(i, ss, xx); };
    const double k1 = f(s, X);
    const double k2 = f(s + h / 2, X + h / 2 * k1);
    const double k3 = f(s + h / 2, X + h / 2 * k2);
    const double k4 = f(s + h, X + h * k3);
    return X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }

  Foot trace_foot(int i, double t1, int k) const {
    Foot f;
    const bool neg = i < m_;
    if ((neg && k == N_) || (!neg && k == 0)) {
      f.boundary = true;
      return f;
    }
    const int ns = std::max(1, static_cast<int>(std::ceil(dt_ / h_ode_ - 1e-9)));
    const double hs = dt_ / ns;
    double s = t1, X = x(k);
    auto out = [&](double v) { return neg ? v > 1.0 : v < 0.0; };
    for (int q = 0; q < ns; ++q) {
      const double Xn = rk4(i, s, X, -hs);
      if (out(Xn)) {
        double lo = 0.0, hi = hs;
        while (hi - lo > 1e-14 * std::max(1.0, hs)) {
          const double mid = 0.5 * (lo + hi);
          (out(rk4(i, s, X, -mid)) ? hi : lo) = mid;
        }
        f.boundary = true;
        f.tau = t1 - (s - 0.5 * (lo + hi));
        return f;
      }
      X = Xn;
      s -= hs;
    }
    const double u = std::clamp(X, 0.0, 1.0) * N_;
    f.k0 = std::min(static_cast<int>(u), N_ - 1);
    f.w = u - f.k0;
    f.tau = dt_;
    return f;
  }

  const std::vector<Foot>& feet(double t1) {
    if (!feet_.empty() && speeds_fixed_) return feet_;
    speeds_fixed_ = speeds_stationary(spec_);
    feet_.resize(static_cast<std::size_t>(n_) * (N_ + 1));
    for (int i = 0; i < n_; ++i)
      for (int k = 0; k <= N_; ++k) feet_[static_cast<std::size_t>(i) * (N_ + 1) + k] = trace_foot(i, t1, k);
    return feet_;
  }

  // One sweep over the components in [i_begin, i_end).
  void sweep(int i_begin, int i_end, const StateSnapshot& cur, const Eigen::MatrixXd& S0, const Eigen::MatrixXd& S1,
             const Eigen::VectorXd& bd0, const Eigen::VectorXd& bd1, const std::vector<Foot>& ft, Eigen::MatrixXd& y) const {
    for (int i = i_begin; i < i_end; ++i) {
      const int kb = i < m_ ? N_ : 0;
      const int r = i < m_ ? i : i - m_;
      for (int k = 0; k <= N_; ++k) {
        const Foot& f = ft[static_cast<std::size_t>(i) * (N_ + 1) + k];
        if (f.boundary) {
          const double th = 1.0 - f.tau / dt_;  // position of the entry time inside the step
          const double bv = (1 - th) * bd0(r) + th * bd1(r);
          const double Sb = (1 - th) * S0(i, kb) + th * S1(i, kb);
          y(i, k) = bv + 0.5 * f.tau * (Sb + S1(i, k));
        } else {
          const double y0 = (1 - f.w) * cur.y(i, f.k0) + f.w * cur.y(i, f.k0 + 1);
          const double Sf = (1 - f.w) * S0(i, f.k0) + f.w * S0(i, f.k0 + 1);
          y(i, k) = y0 + 0.5 * f.tau * (Sf + S1(i, k));
        }
      }
    }
  }

  StateSnapshot step(const StateSnapshot& cur, const Level& lv0, const Level& lv1, double t1) {
    const std::vector<Foot>& ft = feet(t1);
    const Eigen::MatrixXd S0 = source(lv0, cur.y);
    Eigen::VectorXd bm0 = cur.y.col(N_).head(m_), bp0 = cur.y.col(0).tail(n_ - m_);
    StateSnapshot out;
    out.t = t1;
    out.y = cur.y;
    Eigen::MatrixXd S1 = S0;
    Eigen::VectorXd bm1 = bm0;
    for (int pass = 0; pass < 2; ++pass) {
      sweep(0, m_, cur, S0, S1, bm0, bm1, ft, out.y);
      const Eigen::VectorXd bp1 = lv1.Q * out.y.col(0).head(m_);
      sweep(m_, n_, cur, S0, S1, bp0, bp1, ft, out.y);
      out.y.col(0).tail(n_ - m_) = bp1;
      bm1 = feedback(lv1, out.y);
      out.y.col(N_).head(m_) = bm1;
      S1 = source(lv1, out.y);
    }
    return out;
  }

  void record(Trace& tr, const StateSnapshot& s, bool keep) const {
    tr.t.push_back(s.t);
    tr.l2.push_back(l2_norm(s));
    tr.feedback_sup.push_back(m_ > 0 ? s.y.col(N_).head(m_).cwiseAbs().maxCoeff() : 0.0);
    if (keep) tr.snapshots.push_back(s);
  }

  const GeneralSystem& sys_;
  const SystemSpec& spec_;
  int n_, m_, N_;
  double dt_, h_ode_;
  std::vector<double> weights_;
  std::vector<Foot> feet_;
  bool speeds_fixed_ = false;
};

}  // namespace

GeneralSystem open_loop(const SystemSpec& spec) {
  GeneralSystem sys;
  sys.spec = spec;
  sys.stationary = is_time_independent(spec);
  return sys;
}

GeneralSystem closed_loop(const SystemSpec& spec, const GainTable& gain) {
  GeneralSystem sys = open_loop(spec);
  sys.F = [F = gain.F](double t, double x) { return F(t, x); };
  sys.stationary = sys.stationary && gain.F.time.mode == TimeAxis::Mode::stationary;
  return sys;
}

Trace simulate(const GeneralSystem& sys, const StateSnapshot& y0, double T, double dt, const SimulationOptions& opt) {
  const SystemSpec& spec = sys.spec;
  if (y0.y.rows() != spec.n || y0.N() < 1) throw std::invalid_argument("initial state does not match the system size");
  if (!(dt > 0) || T < 0) throw std::invalid_argument("simulate requires dt > 0 and T >= 0");
  if (!y0.y.allFinite()) throw NumericalError("non-finite initial state");
  const int steps = T == 0 ? 0 : std::max(1, static_cast<int>(std::lround(T / dt)));
  const double step = steps ? T / steps : dt;
  Marcher marcher(sys, y0.N(), step, opt.h_ode);
  return marcher.run(y0, steps, opt.store_every);
}

StateSnapshot sample_state(int n, int N, double t, const std::function<double(int, double)>& f) {
  StateSnapshot s;
  s.t = t;
  s.y.resize(n, N + 1);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k <= N; ++k) s.y(i, k) = f(i, static_cast<double>(k) / N);
  return s;
}

namespace {

// ∫_lo^hi kernel(ξ) w(ξ) dξ on the snapshot grid, trapezoid, with one optional split point.
template <class KernelFn>
double integrate(const Eigen::Ref<const Eigen::RowVectorXd>& w, int N, int c_end, KernelFn kernel,
                 std::optional<double> split) {
  auto wv = [&](double xi) {
    const double u = std::clamp(xi, 0.0, 1.0) * N;
    const int a = std::min(static_cast<int>(u), N - 1);
    return (1 - (u - a)) * w(a) + (u - a) * w(a + 1);
  };
  double sum = 0.0;
  for (int c = 0; c < c_end; ++c) {
    const double z0 = static_cast<double>(c) / N, z1 = static_cast<double>(c + 1) / N;
    if (split && *split > z0 && *split < z1) {
      const double p = *split;
      sum += 0.5 * (p - z0) * (kernel(z0, Side::below) * w(c) + kernel(p, Side::below) * wv(p));
      sum += 0.5 * (z1 - p) * (kernel(p, Side::above) * wv(p) + kernel(z1, Side::above) * w(c + 1));
    } else {
      const Side side = split && z1 <= *split ? Side::below : split ? Side::above : Side::automatic;
      sum += 0.5 * (z1 - z0) * (kernel(z0, side) * w(c) + kernel(z1, side) * w(c + 1));
    }
  }
  return sum;
}

}  // namespace

StateSnapshot apply_volterra(const KernelTable& K, const StateSnapshot& w) {
  StateSnapshot out = w;
  const int N = w.N();
  for (int i = 0; i < K.rows; ++i)
    for (int k = 1; k <= N; ++k) {
      const double x = w.x(k);
      double acc = 0.0;
      for (int j = 0; j < K.n; ++j) {
        const SheetedField& e = K.entry(i, j);
        std::optional<double> split;
        if (e.two_sheets) split = e.psi(w.t, x);
        acc += integrate(w.y.row(j), N, k,
                         [&](double xi, Side s) { return e.eval(w.t, x, std::min(xi, x), s == Side::automatic ? Side::below : s); },
                         split);
      }
      out.y(i, k) = w.y(i, k) - acc;
    }
  return out;
}

StateSnapshot apply_fredholm(const FredholmKernelTable& H, const StateSnapshot& z) {
  StateSnapshot out = z;
  const int N = z.N();
  for (int i = 0; i < H.m; ++i)
    for (int j = 0; j < i; ++j) {
      const SheetedField* e = H.entry(i, j);
      if (!e) continue;
      for (int k = 0; k <= N; ++k) {
        const double x = z.x(k);
        std::optional<double> split;
        if (e->two_sheets) split = e->psi(z.t, x);
        out.y(i, k) -= integrate(z.y.row(j), N, N, [&](double xi, Side s) { return e->eval(z.t, x, xi, s); }, split);
      }
    }
  return out;
}

double l2_norm(const StateSnapshot& s) {
  const int N = s.N();
  double sum = 0.0;
  for (int k = 0; k <= N; ++k) sum += (k == 0 || k == N ? 0.5 : 1.0) * s.y.col(k).squaredNorm();
  return std::sqrt(sum / N);
}

}  // namespace backstep
