#include <cmath>
#include <fmt/format.h>

#include "backstep/transforms.hpp"

namespace backstep {

MatrixTable f_compose(const Pretransform& pre, const MatrixTable& F1, std::optional<TimeAxis> axis) {
  const TimeAxis time = axis ? *axis : F1.time;
  MatrixTable F = MatrixTable::zeros(time, F1.nx, F1.rows, F1.cols);
  F.period = F1.period;
  if (axis && F1.time.mode == TimeAxis::Mode::periodic) F.period = F1.time.t1 - F1.time.t0;
  for (int k = 0; k < time.nt; ++k) {
    const double t = time.node(k);
    for (int b = 0; b <= F1.nx; ++b) {
      const double xi = static_cast<double>(b) / F1.nx;
      Eigen::MatrixXd f = axis ? F1(t, xi) : F1.node(k, b);
      for (int j = 0; j < F1.cols; ++j) f.col(j) *= pre.phi_at(j, t, xi);
      F.node(k, b) = f;
    }
  }
  return F;
}

TimeAxis kernel_time_axis(const SystemSpec& spec, const SynthesisOptions& opt) {
  if (opt.time) return *opt.time;
  if (is_time_independent(spec)) return TimeAxis::stationary();
  const double h = 1.0 / opt.nx;
  if (spec.period) {
    const int nt = opt.nt > 0 ? opt.nt : std::max(8, static_cast<int>(std::ceil(*spec.period / h)));
    return TimeAxis::periodic(*spec.period, nt);
  }
  const double t0 = -2.0 / spec.eps, t1 = opt.t_horizon + 2.0 / spec.eps;
  const int nt = opt.nt > 0 ? opt.nt : static_cast<int>(std::ceil((t1 - t0) / (4 * h))) + 1;
  return TimeAxis::window(t0, t1, nt);
}

SystemSpec synthesis_spec(const SystemSpec& spec) {
  if (spec.period || spec.delta) return spec;
  return extend_time(spec, default_delta(spec));
}

Synthesis synthesize(const SystemSpec& input, const SynthesisOptions& opt) {
  if (input.simulation_only)
    throw HypothesisError(fmt::format("system '{}' violates the synthesis hypotheses and is simulation-only", input.name));
  const SystemSpec spec = synthesis_spec(input);
  ValidationOptions vo;
  vo.t_max = std::max(10.0, opt.t_horizon);
  const ValidationReport report = validate(spec, vo);
  if (!report.ok()) {
    const Violation& v = report.violations.front();
    throw HypothesisError(fmt::format("hypothesis violated ({}): family {} at t = {}, x = {}: {}", v.kind, v.i + 1,
                                            v.t, v.x, v.detail));
  }
  CharacteristicCache cache(spec, opt.ode);
  KernelGrid grid{kernel_time_axis(spec, opt), opt.nx};

  Synthesis out;
  out.spec = spec;
  out.pre = exp_pretransform(cache, grid);
  out.K = volterra_solve(out.pre, cache, opt.solver);
  out.G2 = g2_assemble(out.K, out.pre, opt.tol_tri);
  out.H = fredholm_solve(out.G2, cache, grid);
  out.gain.F2 = f2_solve(out.H, spec.n);
  out.gain.F1 = f1_compose(out.K, out.gain.F2);

  std::optional<TimeAxis> gain_axis;
  if (grid.time.mode != TimeAxis::Mode::stationary) {
    const double dt = grid.time.mode == TimeAxis::Mode::periodic ? grid.time.step()
                                                                 : (grid.time.t1 - grid.time.t0) / (grid.time.nt - 1);
    const int nt = std::max(2, static_cast<int>(std::ceil(opt.t_horizon / dt - 1e-9)) + 1);
    gain_axis = TimeAxis::window(0.0, opt.t_horizon, nt);
  }
  out.gain.F = f_compose(out.pre, out.gain.F1, gain_axis);

  if (opt.compute_topt) out.topt = compute_topt(cache, opt.t0_max, opt.topt_grid);

  auto& meta = out.gain.meta;
  meta["system"] = spec.name;
  meta["n"] = std::to_string(spec.n);
  meta["m"] = std::to_string(spec.m);
  meta["nx"] = std::to_string(grid.nx);
  meta["nt"] = std::to_string(grid.nt());
  meta["time_mode"] = grid.time.mode == TimeAxis::Mode::stationary ? "stationary"
                      : grid.time.mode == TimeAxis::Mode::periodic ? "periodic"
                                                                   : "window";
  meta["iterations"] = std::to_string(out.K.iterations);
  meta["last_increment"] = fmt::format("{:.6e}", out.K.last_increment);
  meta["tol_fp"] = fmt::format("{:.3e}", opt.solver.tol_fp);
  meta["h_ode"] = fmt::format("{:.3e}", opt.ode.h_ode);
  if (spec.delta) meta["delta"] = fmt::format("{:.17g}", *spec.delta);
  if (opt.compute_topt) meta["topt"] = fmt::format("{:.17g}", out.topt.value);
  return out;
}

}  // namespace backstep
