#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "backstep/io.hpp"
#include "backstep/transforms.hpp"
#include "backstep/verify.hpp"

namespace fs = std::filesystem;
using namespace backstep;

namespace {

enum Exit { ok = 0, check_failed = 1, usage = 2, numerical = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Json defaults() {
  return {
      {"catalog", nullptr},
      {"params", Json::object()},
      {"system_file", nullptr},
      {"M", nullptr},
      {"nx", 40},
      {"nt", 0},
      {"N", 400},
      {"dt", 1.0 / 400},
      {"h_ode", 1e-3},
      {"tol_fp", 1e-8},
      {"tol_root", 1e-10},
      {"tol_tri", 1e-6},
      {"t0_max", 1e3},
      {"t_horizon", 10.0},
      {"topt_grid", 2001},
      {"t0", 0.0},
      {"T", nullptr},
      {"open_loop", false},
      {"kernel_csv", false},
      {"gain", nullptr},
      {"kernels", nullptr},
      {"y0", Json::array()},
      {"store_every", 0},
      {"checks", nullptr},
      {"out", "."},
      {"seed", 1},
      {"workers", 0},
  };
}

struct Flags {
  std::string config;
  std::optional<std::string> catalog, system_file, M, gain, kernels, out, checks;
  std::vector<std::string> params, y0;
  std::optional<std::string> c;
  std::optional<int> nx, nt, N, topt_grid, store_every, workers;
  std::optional<std::uint64_t> seed;
  std::optional<double> dt, h_ode, tol_fp, tol_root, tol_tri, t0_max, t_horizon, t0, T;
  bool open_loop = false, kernel_csv = false;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "scenario JSON file (flags override its values)");
  app->add_option("--catalog", f.catalog, "catalog system: example_1_5, unstable_2x2, remark_1_7_3x3, const_2x2, custom");
  app->add_option("--param", f.params, "catalog parameter key=value (repeatable)");
  app->add_option("--c", f.c, "coupling strength c of unstable_2x2");
  app->add_option("--system", f.system_file, "system description JSON file");
  app->add_option("--M", f.M, "'zero' replaces the coupling matrix by 0");
  app->add_option("--nx", f.nx, "kernel grid cells per unit length");
  app->add_option("--nt", f.nt, "kernel time nodes (0: automatic)");
  app->add_option("--h-ode", f.h_ode, "RK4 step for characteristics");
  app->add_option("--tol-fp", f.tol_fp, "fixed-point tolerance");
  app->add_option("--tol-root", f.tol_root, "root-finding tolerance");
  app->add_option("--tol-tri", f.tol_tri, "triangularity tolerance for G2");
  app->add_option("--t0-max", f.t0_max, "horizon for the settling time search");
  app->add_option("--t-horizon", f.t_horizon, "gains are tabulated on [0, t_horizon]");
  app->add_option("--topt-grid", f.topt_grid, "samples of h(t0)");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--seed", f.seed, "seed for sampled checks");
  app->add_option("--workers", f.workers, "worker threads (0: hardware)");
}

void add_simulation(CLI::App* app, Flags& f) {
  app->add_option("--N", f.N, "spatial cells");
  app->add_option("--dt", f.dt, "time step");
  app->add_option("--t0", f.t0, "initial time");
  app->add_option("--T", f.T, "simulated duration");
  app->add_option("--y0", f.y0, "initial data expression per component (repeatable; default sin(pi*x))");
  app->add_option("--store-every", f.store_every, "steps between stored snapshots (0: about 100 snapshots)");
}

Json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  try {
    Json j;
    in >> j;
    if (!j.is_object()) throw UsageError(path + ": config must be a JSON object");
    return j;
  } catch (const Json::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
}

Json resolve(const Flags& f) {
  Json cfg = defaults();
  if (!f.config.empty()) {
    const Json file = read_config_file(f.config);
    for (auto it = file.begin(); it != file.end(); ++it) {
      if (!cfg.contains(it.key()) && it.key() != "system") throw UsageError("unknown config key '" + it.key() + "'");
      cfg[it.key()] = it.value();
    }
  }
  auto set = [&](const char* key, const auto& v) {
    if (v) cfg[key] = *v;
  };
  set("catalog", f.catalog);
  set("system_file", f.system_file);
  set("M", f.M);
  set("gain", f.gain);
  set("kernels", f.kernels);
  set("out", f.out);
  set("checks", f.checks);
  set("nx", f.nx);
  set("nt", f.nt);
  set("N", f.N);
  set("topt_grid", f.topt_grid);
  set("store_every", f.store_every);
  set("workers", f.workers);
  set("seed", f.seed);
  set("dt", f.dt);
  set("h_ode", f.h_ode);
  set("tol_fp", f.tol_fp);
  set("tol_root", f.tol_root);
  set("tol_tri", f.tol_tri);
  set("t0_max", f.t0_max);
  set("t_horizon", f.t_horizon);
  set("t0", f.t0);
  set("T", f.T);
  if (f.open_loop) cfg["open_loop"] = true;
  if (f.kernel_csv) cfg["kernel_csv"] = true;
  if (f.c) cfg["params"]["c"] = *f.c;
  for (const std::string& kv : f.params) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--param expects key=value, got '" + kv + "'");
    cfg["params"][kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  if (!f.y0.empty()) cfg["y0"] = f.y0;
  if (cfg["nx"].get<int>() < 2 || cfg["N"].get<int>() < 2) throw UsageError("grid counts must be at least 2");
  for (const char* key : {"dt", "h_ode", "tol_fp", "tol_root", "tol_tri"})
    if (!(cfg[key].get<double>() > 0)) throw UsageError(fmt::format("{} must be positive", key));
  return cfg;
}

// The hash ignores where outputs go.
std::uint64_t hash_of(const Json& cfg) {
  Json h = cfg;
  h.erase("out");
  return config_hash(h);
}

SystemSpec load_spec(const Json& cfg) {
  SystemSpec spec;
  if (cfg.contains("system") && cfg["system"].is_object()) {
    spec = system_from_json(cfg["system"]);
  } else if (!cfg["system_file"].is_null()) {
    spec = load_system(cfg["system_file"].get<std::string>());
  } else if (!cfg["catalog"].is_null()) {
    Params p;
    for (auto it = cfg["params"].begin(); it != cfg["params"].end(); ++it)
      p[it.key()] = it.value().is_string() ? it.value().get<std::string>() : it.value().dump();
    spec = catalog(cfg["catalog"].get<std::string>(), p);
  } else {
    throw UsageError("no system given (use --catalog, --system or a config file)");
  }
  if (!cfg["M"].is_null()) {
    if (cfg["M"].get<std::string>() != "zero") throw UsageError("--M only accepts 'zero'");
    for (auto& row : spec.M)
      for (auto& e : row) e = ScalarField(0.0);
  }
  return spec;
}

SynthesisOptions synthesis_options(const Json& cfg) {
  SynthesisOptions o;
  o.nx = cfg["nx"].get<int>();
  o.nt = cfg["nt"].get<int>();
  o.t_horizon = cfg["t_horizon"].get<double>();
  o.t0_max = cfg["t0_max"].get<double>();
  o.topt_grid = cfg["topt_grid"].get<int>();
  o.tol_tri = cfg["tol_tri"].get<double>();
  o.solver.tol_fp = cfg["tol_fp"].get<double>();
  o.solver.workers = cfg["workers"].get<int>();
  o.ode.h_ode = cfg["h_ode"].get<double>();
  o.ode.tol_root = cfg["tol_root"].get<double>();
  return o;
}

OdeSettings ode_settings(const Json& cfg) {
  return {cfg["h_ode"].get<double>(), cfg["tol_root"].get<double>()};
}

fs::path out_dir(const Json& cfg) {
  fs::path dir = cfg["out"].get<std::string>();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string());
  return dir;
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

InitialData initial_data(const Json& cfg, int n) {
  std::vector<Expression> e;
  for (const auto& s : cfg["y0"]) e.push_back(Expression::parse(s.get<std::string>()));
  if (e.empty()) e.push_back(Expression::parse("sin(pi*x)"));
  if (e.size() != 1 && static_cast<int>(e.size()) != n) throw UsageError("--y0 needs one expression or one per component");
  return [e](int i, double x) { return e[e.size() == 1 ? 0 : i](0.0, x); };
}

int cmd_synthesize(const Json& cfg) {
  const SystemSpec spec = load_spec(cfg);
  const std::uint64_t hash = hash_of(cfg);
  const Synthesis syn = synthesize(spec, synthesis_options(cfg));
  const fs::path dir = out_dir(cfg);
  write_gain_csv(dir / "gain.csv", syn.gain, hash);
  save_gain(dir / "gain.bin", syn.gain, hash);
  save_kernels(dir / "kernels.bin", syn.K, syn.H, hash);
  if (cfg["kernel_csv"].get<bool>()) write_kernel_csv(dir / "kernels.csv", syn.K, hash);

  const double tol = 5 * cfg["tol_fp"].get<double>();
  const std::vector<CheckReport> checks = {check_trace(syn.K, syn.pre, tol),
                                           check_triangular(syn.G2, spec.m, tol),
                                           check_reflection(syn.K, syn.pre)};
  Json summary;
  summary["config"] = cfg;
  summary["config_hash"] = hash_hex(hash);
  summary["system"] = system_to_json(syn.spec);
  summary["topt"] = syn.topt.value;
  summary["topt_grid_max"] = syn.topt.grid_max;
  summary["topt_tail_extrapolated"] = syn.topt.tail_extrapolated;
  summary["meta"] = syn.gain.meta;
  summary["gain_sup"] = [&] {
    double s = 0;
    for (const auto& M : syn.gain.F.v) s = std::max(s, M.cwiseAbs().maxCoeff());
    return s;
  }();
  Json reports = Json::array();
  bool pass = true;
  for (const auto& r : checks) {
    reports.push_back(report_json(r));
    pass = pass && r.pass;
    std::cout << report_line(r) << '\n';
  }
  summary["checks"] = reports;
  write_json(dir / "summary.json", summary);
  std::cout << fmt::format("topt={:.10f} gain_sup={:.6e} iterations={} written to {}\n", syn.topt.value,
                           summary["gain_sup"].get<double>(), syn.K.iterations, dir.string());
  return pass ? ok : check_failed;
}

int cmd_simulate(const Json& cfg) {
  const SystemSpec spec = load_spec(cfg);
  const std::uint64_t hash = hash_of(cfg);
  const bool open = cfg["open_loop"].get<bool>();
  if (open == !cfg["gain"].is_null()) throw UsageError("simulate needs exactly one of --open-loop and --gain");
  const int N = cfg["N"].get<int>();
  const double dt = cfg["dt"].get<double>(), t0 = cfg["t0"].get<double>();

  GeneralSystem sys;
  std::optional<double> topt;
  if (open) {
    sys = open_loop(spec);
  } else {
    const GainTable gain = load_gain(cfg["gain"].get<std::string>());
    auto meta = [&](const char* k) { return gain.meta.count(k) ? gain.meta.at(k) : std::string(); };
    if (meta("n") != std::to_string(spec.n) || meta("m") != std::to_string(spec.m) || meta("system") != spec.name)
      throw UsageError(fmt::format("gain file was made for system '{}' (n={}, m={}), not '{}' (n={}, m={})", meta("system"),
                                   meta("n"), meta("m"), spec.name, spec.n, spec.m));
    if (!meta("topt").empty()) topt = std::stod(meta("topt"));
    sys = closed_loop(spec, gain);
  }
  const double T = !cfg["T"].is_null() ? cfg["T"].get<double>() : topt ? *topt + 2 * dt : 10.0;
  if (T < 0) throw UsageError("T must be non-negative");

  const StateSnapshot y0 = sample_state(spec.n, N, t0, initial_data(cfg, spec.n));
  SimulationOptions so;
  so.h_ode = cfg["h_ode"].get<double>();
  const int steps = static_cast<int>(std::lround(T / dt));
  so.store_every = cfg["store_every"].get<int>() > 0 ? cfg["store_every"].get<int>() : std::max(1, steps / 100);
  const Trace tr = simulate(sys, y0, T, dt, so);

  const fs::path dir = out_dir(cfg);
  write_trace_csv(dir / "trace.csv", tr, hash);
  write_norms_csv(dir / "norms.csv", tr, hash);
  const double ratio = tr.l2.back() / std::max(tr.l2.front(), 1e-300);
  Json summary{{"config", cfg},         {"config_hash", hash_hex(hash)}, {"T", T},
               {"steps", tr.t.size() - 1}, {"initial_l2", tr.l2.front()},  {"final_l2", tr.l2.back()},
               {"ratio", ratio}};
  write_json(dir / "summary.json", summary);
  std::cout << fmt::format("t={:.6f} l2={:.6e} ratio={:.6e}\n", tr.t.back(), tr.l2.back(), ratio);
  return ok;
}

int cmd_topt(const Json& cfg) {
  const SystemSpec spec = synthesis_spec(load_spec(cfg));
  const std::uint64_t hash = hash_of(cfg);
  CharacteristicCache cache(spec, ode_settings(cfg));
  const ToptResult r = compute_topt(cache, cfg["t0_max"].get<double>(), cfg["topt_grid"].get<int>());
  const fs::path dir = out_dir(cfg);
  write_topt_csv(dir / "topt.csv", r, hash);
  Json summary{{"config", cfg},
               {"config_hash", hash_hex(hash)},
               {"topt", r.value},
               {"grid_max", r.grid_max},
               {"argmax", r.argmax},
               {"tail_extrapolated", r.tail_extrapolated}};
  if (is_time_independent(spec)) summary["closed_form"] = topt_time_independent(spec);
  write_json(dir / "summary.json", summary);
  std::cout << fmt::format("topt={:.10f}{}\n", r.value, r.tail_extrapolated ? " (tail extrapolated)" : "");
  return ok;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_verify(const Json& cfg) {
  const SystemSpec input = load_spec(cfg);
  const std::uint64_t hash = hash_of(cfg);
  const std::vector<std::string> checks =
      split(cfg["checks"].is_null() ? "trace,triangular,reflection,compatibility,fredholm,nilpotency"
                                    : cfg["checks"].get<std::string>());
  const std::set<std::string> known = {"topt",     "trace",  "triangular", "reflection",  "compatibility",
                                       "kernel_pde", "fredholm", "nilpotency", "psi",        "omega",
                                       "finite_time", "periodicity", "uniform", "consistency"};
  for (const auto& c : checks)
    if (!known.count(c)) throw UsageError("unknown check '" + c + "'");
  auto wants = [&](std::initializer_list<const char*> names) {
    for (const char* n : names)
      if (std::find(checks.begin(), checks.end(), n) != checks.end()) return true;
    return false;
  };

  const SynthesisOptions so = synthesis_options(cfg);
  const SystemSpec spec = input.simulation_only ? input : synthesis_spec(input);
  CharacteristicCache cache(spec, so.ode);
  std::optional<Synthesis> syn;
  auto synthesis = [&]() -> Synthesis& {
    if (!syn) syn = synthesize(input, so);
    return *syn;
  };

  // Kernel artifacts: from file when given, otherwise synthesized.
  std::optional<KernelBundle> bundle;
  std::optional<Pretransform> pre;
  std::optional<MatrixTable> G2;
  const bool kernel_checks = wants({"trace", "triangular", "reflection", "compatibility", "kernel_pde", "fredholm", "nilpotency"});
  if (kernel_checks) {
    if (!cfg["kernels"].is_null()) {
      bundle = load_kernels(cfg["kernels"].get<std::string>());
      if (bundle->K.n != spec.n || bundle->K.m != spec.m) throw UsageError("kernel file does not match the system size");
      pre = exp_pretransform(cache, bundle->K.grid);
      G2 = g2_assemble(bundle->K, *pre, std::numeric_limits<double>::infinity());
    } else {
      Synthesis& s = synthesis();
      bundle = KernelBundle{s.K, s.H, hash};
      pre = s.pre;
      G2 = s.G2;
    }
  }
  std::optional<GainTable> gain;
  auto gain_table = [&]() -> const GainTable& {
    if (!gain) gain = !cfg["gain"].is_null() ? load_gain(cfg["gain"].get<std::string>()) : synthesis().gain;
    return *gain;
  };

  const double tol = 5 * so.solver.tol_fp;
  const std::uint64_t seed = cfg["seed"].get<std::uint64_t>();
  const int N = cfg["N"].get<int>();
  const double dt = cfg["dt"].get<double>();
  std::vector<CheckReport> reports;
  for (const std::string& c : checks) {
    if (c == "topt") reports.push_back(check_topt(cache, so.t0_max));
    else if (c == "trace") reports.push_back(check_trace(bundle->K, *pre, tol));
    else if (c == "triangular") reports.push_back(check_triangular(*G2, spec.m, tol));
    else if (c == "reflection") reports.push_back(check_reflection(bundle->K, *pre));
    else if (c == "compatibility") reports.push_back(check_compatibility(bundle->K, *pre, tol));
    else if (c == "kernel_pde") reports.push_back(check_kernel_pde(bundle->K, *pre, 2.0 / bundle->K.grid.nx, 200, seed));
    else if (c == "fredholm") reports.push_back(check_fredholm_residual(bundle->H, f2_solve(bundle->H, spec.n)));
    else if (c == "nilpotency") reports.push_back(check_nilpotency(bundle->H, 1e-12, seed));
    else if (c == "psi") {
      for (int i = 0; i < spec.m; ++i)
        for (int j = 0; j < spec.m; ++j)
          if (i != j) reports.push_back(check_psi(cache, i, j, 1e-5, 100, seed));
    } else if (c == "omega") {
      for (int i = 0; i < spec.m; ++i) reports.push_back(check_omega(cache, i, 100, seed));
    } else if (c == "finite_time") {
      const GainTable& g = gain_table();
      FiniteTimeOptions fo;
      const double topt = g.meta.count("topt") ? std::stod(g.meta.at("topt")) : compute_topt(cache, so.t0_max).value;
      fo.T = !cfg["T"].is_null() ? cfg["T"].get<double>() : topt + 2 * dt;
      fo.N = N;
      fo.dt = dt;
      fo.t0 = {cfg["t0"].get<double>()};
      fo.y0 = {initial_data(cfg, spec.n)};
      reports.push_back(check_finite_time(closed_loop(input, g), fo));
    } else if (c == "periodicity") {
      reports.push_back(check_periodicity(gain_table(), spec.period));
    } else if (c == "uniform") {
      const GainTable& g = gain_table();
      reports.push_back(check_uniform_stability(closed_loop(input, g), {0.0, 5.0, 10.0, 50.0}, initial_data(cfg, spec.n),
                                                !cfg["T"].is_null() ? cfg["T"].get<double>() : 4.0, N, dt, 10.0));
    } else if (c == "consistency") {
      ConsistencyOptions co;
      co.N = N;
      co.dt = dt;
      co.t0 = cfg["t0"].get<double>();
      reports.push_back(check_transform_consistency(synthesis(), initial_data(cfg, spec.n), co));
    }
  }

  const fs::path dir = out_dir(cfg);
  Json j{{"config", cfg}, {"config_hash", hash_hex(hash)}, {"reports", Json::array()}};
  std::string text = "# config_hash=" + hash_hex(hash) + "\n";
  bool pass = true;
  for (const auto& r : reports) {
    j["reports"].push_back(report_json(r));
    text += report_line(r) + "\n";
    pass = pass && r.pass;
  }
  j["pass"] = pass;
  write_json(dir / "report.json", j);
  write_text(dir / "report.txt", text);
  std::cout << text;
  return pass ? ok : check_failed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite-time boundary feedback synthesis for time-varying hyperbolic systems"};
  app.require_subcommand(1);
  Flags f;
  CLI::App* syn = app.add_subcommand("synthesize", "compute kernels and the feedback gain");
  CLI::App* sim = app.add_subcommand("simulate", "simulate the open- or closed-loop system");
  CLI::App* top = app.add_subcommand("topt", "compute the settling time");
  CLI::App* ver = app.add_subcommand("verify", "run checks on a system and its artifacts");
  syn->add_flag("--kernel-csv", f.kernel_csv, "also write kernels.csv (one row per node and sheet)");
  for (CLI::App* s : {syn, sim, top, ver}) add_common(s, f);
  add_simulation(sim, f);
  add_simulation(ver, f);
  sim->add_flag("--open-loop", f.open_loop, "simulate without feedback");
  sim->add_option("--gain", f.gain, "gain container from synthesize");
  ver->add_option("--gain", f.gain, "gain container to check");
  ver->add_option("--kernels", f.kernels, "kernel container to check");
  ver->add_option("--checks", f.checks,
                  "comma list: topt, trace, triangular, reflection, compatibility, kernel_pde, fredholm, nilpotency, "
                  "psi, omega, finite_time, periodicity, uniform, consistency");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    const Json cfg = resolve(f);
    if (syn->parsed()) return cmd_synthesize(cfg);
    if (sim->parsed()) return cmd_simulate(cfg);
    if (top->parsed()) return cmd_topt(cfg);
    return cmd_verify(cfg);
  } catch (const HypothesisError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return check_failed;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const Json::exception& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return usage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return numerical;
  }
}
