#include "backstep/io.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace backstep {

namespace fs = std::filesystem;

namespace {

ScalarField field_from_json(const Json& j, const std::string& where) {
  if (j.is_number()) return ScalarField(j.get<double>());
  if (j.is_string()) {
    try {
      return ScalarField::parse(j.get<std::string>());
    } catch (const ParseError& e) {
      throw IoError(fmt::format("{}: {}", where, e.what()));
    }
  }
  if (j.is_object()) {
    Table2 tb;
    tb.t_axis = j.at("t").get<std::vector<double>>();
    tb.x_axis = j.at("x").get<std::vector<double>>();
    const auto rows = j.at("values").get<std::vector<std::vector<double>>>();
    if (rows.size() != tb.t_axis.size()) throw IoError(where + ": table needs one row per t node");
    tb.values.resize(static_cast<Eigen::Index>(tb.t_axis.size()), static_cast<Eigen::Index>(tb.x_axis.size()));
    for (std::size_t a = 0; a < rows.size(); ++a) {
      if (rows[a].size() != tb.x_axis.size()) throw IoError(where + ": table row length differs from the x axis");
      for (std::size_t b = 0; b < rows[a].size(); ++b) tb.values(a, b) = rows[a][b];
    }
    const std::string policy = j.value("time_policy", "error");
    if (policy == "error") tb.policy = Table2::TimePolicy::error;
    else if (policy == "clamp") tb.policy = Table2::TimePolicy::clamp;
    else if (policy == "periodic") tb.policy = Table2::TimePolicy::periodic;
    else throw IoError(where + ": unknown time_policy '" + policy + "'");
    tb.period = j.value("period", 0.0);
    try {
      return ScalarField(std::move(tb));
    } catch (const std::invalid_argument& e) {
      throw IoError(fmt::format("{}: {}", where, e.what()));
    }
  }
  throw IoError(where + ": expected a number, an expression string or a table block");
}

Json field_to_json(const ScalarField& f) {
  if (const Expression* e = f.expression()) return e->str();
  const Table2& tb = *f.table();
  Json j;
  j["t"] = tb.t_axis;
  j["x"] = tb.x_axis;
  Json rows = Json::array();
  for (Eigen::Index a = 0; a < tb.values.rows(); ++a) {
    std::vector<double> r(tb.values.cols());
    for (Eigen::Index b = 0; b < tb.values.cols(); ++b) r[b] = tb.values(a, b);
    rows.push_back(r);
  }
  j["values"] = rows;
  j["time_policy"] = tb.policy == Table2::TimePolicy::error     ? "error"
                     : tb.policy == Table2::TimePolicy::clamp ? "clamp"
                                                              : "periodic";
  if (tb.policy == Table2::TimePolicy::periodic) j["period"] = tb.period;
  return j;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <class T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void doubles(const std::vector<double>& v) {
    put<std::uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  void bytes(const std::vector<std::uint8_t>& v) {
    put<std::uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size()));
  }
  void string(const std::string& s) {
    put<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void axis(const TimeAxis& a) {
    put<std::uint32_t>(static_cast<std::uint32_t>(a.mode));
    put(a.t0);
    put(a.t1);
    put<std::int32_t>(a.nt);
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string name) : in_(in), name_(std::move(name)) {}
  template <class T>
  T get() {
    T v;
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    check();
    return v;
  }
  std::uint64_t count(std::uint64_t limit = 1ull << 32) {
    const auto n = get<std::uint64_t>();
    if (n > limit) throw IoError(name_ + ": corrupt length field");
    return n;
  }
  std::vector<double> doubles() {
    std::vector<double> v(count());
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    check();
    return v;
  }
  std::vector<std::uint8_t> bytes() {
    std::vector<std::uint8_t> v(count());
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size()));
    check();
    return v;
  }
  std::string string() {
    std::string s(count(1 << 20), '\0');
    in_.read(s.data(), static_cast<std::streamsize>(s.size()));
    check();
    return s;
  }
  TimeAxis axis() {
    TimeAxis a;
    const auto mode = get<std::uint32_t>();
    if (mode > 2) throw IoError(name_ + ": unknown time axis mode");
    a.mode = static_cast<TimeAxis::Mode>(mode);
    a.t0 = get<double>();
    a.t1 = get<double>();
    a.nt = get<std::int32_t>();
    if (a.nt < 1) throw IoError(name_ + ": bad time axis");
    return a;
  }

 private:
  void check() {
    if (!in_) throw IoError(name_ + ": truncated file");
  }
  std::ifstream& in_;
  std::string name_;
};

constexpr char magic[8] = {'B', 'K', 'S', 'T', 'E', 'P', '\0', '\0'};

void write_header(Writer& w, std::ofstream& out, ContainerKind kind, std::uint64_t hash) {
  out.write(magic, sizeof magic);
  w.put(container_version);
  w.put(static_cast<std::uint32_t>(kind));
  w.put(hash);
}

std::uint64_t read_header(Reader& r, std::ifstream& in, ContainerKind kind, const std::string& name) {
  char m[8];
  in.read(m, sizeof m);
  if (!in || std::memcmp(m, magic, sizeof m) != 0) throw IoError(name + ": not a table container");
  const auto version = r.get<std::uint32_t>();
  if (version != container_version) throw IoError(fmt::format("{}: unsupported container version {}", name, version));
  const auto k = r.get<std::uint32_t>();
  if (k != static_cast<std::uint32_t>(kind)) throw IoError(name + ": wrong container kind");
  return r.get<std::uint64_t>();
}

void write_grid(Writer& w, const KernelGrid& g) {
  w.axis(g.time);
  w.put<std::int32_t>(g.nx);
}

KernelGrid read_grid(Reader& r) {
  KernelGrid g;
  g.time = r.axis();
  g.nx = r.get<std::int32_t>();
  if (g.nx < 1) throw IoError("bad grid size");
  return g;
}

void write_sheeted(Writer& w, const SheetedField& f) {
  w.put<std::uint8_t>(f.triangular);
  w.put<std::uint8_t>(f.two_sheets);
  w.doubles(f.below);
  if (f.two_sheets) {
    w.doubles(f.above);
    w.bytes(f.region);
    w.doubles(f.psi.v);
  }
}

SheetedField read_sheeted(Reader& r, const KernelGrid& g, const std::string& name) {
  SheetedField f;
  f.grid = g;
  f.triangular = r.get<std::uint8_t>() != 0;
  f.two_sheets = r.get<std::uint8_t>() != 0;
  f.below = r.doubles();
  if (f.below.size() != g.size()) throw IoError(name + ": entry size does not match the grid");
  if (f.two_sheets) {
    f.above = r.doubles();
    f.region = r.bytes();
    f.psi.time = g.time;
    f.psi.nx = g.nx;
    f.psi.v = r.doubles();
    if (f.above.size() != g.size() || f.region.size() != g.size() ||
        f.psi.v.size() != static_cast<std::size_t>(g.nt()) * (g.nx + 1))
      throw IoError(name + ": sheet size does not match the grid");
  }
  return f;
}

void write_matrix_table(Writer& w, const MatrixTable& tb) {
  w.axis(tb.time);
  w.put<std::int32_t>(tb.nx);
  w.put<std::int32_t>(tb.rows);
  w.put<std::int32_t>(tb.cols);
  w.put<std::uint8_t>(tb.period.has_value());
  w.put(tb.period.value_or(0.0));
  std::vector<double> flat;
  flat.reserve(tb.v.size() * tb.rows * tb.cols);
  for (const auto& M : tb.v)
    for (int i = 0; i < tb.rows; ++i)
      for (int j = 0; j < tb.cols; ++j) flat.push_back(M(i, j));
  w.doubles(flat);
}

MatrixTable read_matrix_table(Reader& r, const std::string& name) {
  const TimeAxis axis = r.axis();
  const int nx = r.get<std::int32_t>(), rows = r.get<std::int32_t>(), cols = r.get<std::int32_t>();
  if (nx < 1 || rows < 0 || cols < 0) throw IoError(name + ": bad table shape");
  MatrixTable tb = MatrixTable::zeros(axis, nx, rows, cols);
  const bool periodic = r.get<std::uint8_t>() != 0;
  const double period = r.get<double>();
  if (periodic) tb.period = period;
  const std::vector<double> flat = r.doubles();
  if (flat.size() != tb.v.size() * rows * cols) throw IoError(name + ": table size mismatch");
  std::size_t q = 0;
  for (auto& M : tb.v)
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) M(i, j) = flat[q++];
  return tb;
}

void write_csv_header(std::ofstream& out, std::uint64_t hash, const std::string& columns) {
  out << "# config_hash=" << hash_hex(hash) << '\n' << columns << '\n';
}

}  // namespace

SystemSpec system_from_json(const Json& j) {
  try {
    const int n = j.at("n").get<int>();
    const int m = j.at("m").get<int>();
    SystemSpec s = make_spec(n, m, j.at("eps").get<double>());
    s.name = j.value("name", "custom");
    const Json& lam = j.at("lambda");
    if (!lam.is_array() || static_cast<int>(lam.size()) != n) throw IoError("lambda needs n entries");
    for (int i = 0; i < n; ++i) s.lambda[i] = field_from_json(lam[i], fmt::format("lambda[{}]", i));
    if (j.contains("M")) {
      const Json& M = j.at("M");
      if (!M.is_array() || static_cast<int>(M.size()) != n) throw IoError("M needs n rows");
      for (int a = 0; a < n; ++a) {
        if (!M[a].is_array() || static_cast<int>(M[a].size()) != n) throw IoError("M rows need n entries");
        for (int b = 0; b < n; ++b) s.M[a][b] = field_from_json(M[a][b], fmt::format("M[{}][{}]", a, b));
      }
    }
    if (j.contains("Q")) {
      const Json& Q = j.at("Q");
      if (!Q.is_array() || static_cast<int>(Q.size()) != n - m) throw IoError("Q needs n - m rows");
      for (int a = 0; a < n - m; ++a) {
        if (!Q[a].is_array() || static_cast<int>(Q[a].size()) != m) throw IoError("Q rows need m entries");
        for (int b = 0; b < m; ++b) s.Q[a][b] = field_from_json(Q[a][b], fmt::format("Q[{}][{}]", a, b));
      }
    }
    if (j.contains("period") && !j.at("period").is_null()) s.period = j.at("period").get<double>();
    if (j.contains("delta") && !j.at("delta").is_null()) s.delta = j.at("delta").get<double>();
    s.simulation_only = j.value("simulation_only", false);
    return s;
  } catch (const Json::exception& e) {
    throw IoError(std::string("system description: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("system description: ") + e.what());
  }
}

Json system_to_json(const SystemSpec& spec) {
  Json j;
  j["name"] = spec.name;
  j["n"] = spec.n;
  j["m"] = spec.m;
  j["eps"] = spec.eps;
  Json lam = Json::array();
  for (const auto& f : spec.lambda) lam.push_back(field_to_json(f));
  j["lambda"] = lam;
  Json M = Json::array();
  for (const auto& row : spec.M) {
    Json r = Json::array();
    for (const auto& f : row) r.push_back(field_to_json(f));
    M.push_back(r);
  }
  j["M"] = M;
  Json Q = Json::array();
  for (const auto& row : spec.Q) {
    Json r = Json::array();
    for (const auto& f : row) r.push_back(field_to_json(f));
    Q.push_back(r);
  }
  j["Q"] = Q;
  if (spec.period) j["period"] = *spec.period;
  if (spec.delta) j["delta"] = *spec.delta;
  if (spec.simulation_only) j["simulation_only"] = true;
  return j;
}

SystemSpec load_system(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open system description " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return system_from_json(j);
}

std::uint64_t config_hash(const Json& config) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) { return fmt::format("{:016x}", h); }

std::string fmt17(double v) { return fmt::format("{:.17g}", v); }

void write_gain_csv(const fs::path& path, const GainTable& gain, std::uint64_t hash) {
  std::ofstream out = open_out(path);
  write_csv_header(out, hash, "k,b,t,xi,i,j,F,F1,F2");
  const MatrixTable& F = gain.F;
  const bool same = F.time == gain.F1.time && F.nx == gain.F1.nx;
  for (int k = 0; k < F.time.nt; ++k)
    for (int b = 0; b <= F.nx; ++b) {
      const double t = F.time.node(k), xi = static_cast<double>(b) / F.nx;
      const Eigen::MatrixXd F1 = same ? gain.F1.node(k, b) : gain.F1(t, xi);
      const Eigen::MatrixXd F2 = same ? gain.F2.node(k, b) : gain.F2(t, xi);
      for (int i = 0; i < F.rows; ++i)
        for (int j = 0; j < F.cols; ++j)
          out << k << ',' << b << ',' << fmt17(t) << ',' << fmt17(xi) << ',' << i + 1 << ',' << j + 1 << ','
              << fmt17(F.node(k, b)(i, j)) << ',' << fmt17(F1(i, j)) << ',' << fmt17(F2(i, j)) << '\n';
    }
}

void write_kernel_csv(const fs::path& path, const KernelTable& K, std::uint64_t hash) {
  std::ofstream out = open_out(path);
  write_csv_header(out, hash, "k,a,b,t,x,xi,i,j,sheet,value");
  const KernelGrid& g = K.grid;
  for (int i = 0; i < K.rows; ++i)
    for (int j = 0; j < K.n; ++j) {
      const SheetedField& e = K.entry(i, j);
      for (int k = 0; k < g.nt(); ++k)
        for (int a = 0; a <= g.nx; ++a)
          for (int b = 0; b <= a; ++b)
            for (Side s : {Side::below, Side::above}) {
              if (s == Side::above && !e.two_sheets) continue;
              if (!e.valid(s, k, a, b)) continue;
              out << k << ',' << a << ',' << b << ',' << fmt17(g.time.node(k)) << ',' << fmt17(g.x(a)) << ','
                  << fmt17(g.x(b)) << ',' << i + 1 << ',' << j + 1 << ',' << (s == Side::above ? "above" : "below")
                  << ',' << fmt17(e.node(s, k, a, b)) << '\n';
            }
    }
}

void write_trace_csv(const fs::path& path, const Trace& trace, std::uint64_t hash) {
  std::ofstream out = open_out(path);
  const int n = trace.snapshots.empty() ? 0 : static_cast<int>(trace.snapshots.front().y.rows());
  std::string cols = "t,x";
  for (int i = 0; i < n; ++i) cols += fmt::format(",y_{}", i + 1);
  write_csv_header(out, hash, cols);
  for (const StateSnapshot& s : trace.snapshots)
    for (int k = 0; k <= s.N(); ++k) {
      out << fmt17(s.t) << ',' << fmt17(s.x(k));
      for (int i = 0; i < n; ++i) out << ',' << fmt17(s.y(i, k));
      out << '\n';
    }
}

void write_norms_csv(const fs::path& path, const Trace& trace, std::uint64_t hash) {
  std::ofstream out = open_out(path);
  write_csv_header(out, hash, "t,l2_norm,feedback_sup");
  for (std::size_t q = 0; q < trace.t.size(); ++q)
    out << fmt17(trace.t[q]) << ',' << fmt17(trace.l2[q]) << ',' << fmt17(trace.feedback_sup[q]) << '\n';
}

void write_topt_csv(const fs::path& path, const ToptResult& r, std::uint64_t hash) {
  std::ofstream out = open_out(path);
  write_csv_header(out, hash, "t0,h");
  for (std::size_t q = 0; q < r.t0.size(); ++q) out << fmt17(r.t0[q]) << ',' << fmt17(r.h[q]) << '\n';
}

void save_kernels(const fs::path& path, const KernelTable& K, const FredholmKernelTable& H, std::uint64_t hash) {
  std::ofstream out = open_out(path, true);
  Writer w(out);
  write_header(w, out, ContainerKind::kernels, hash);
  write_grid(w, K.grid);
  w.put<std::int32_t>(K.n);
  w.put<std::int32_t>(K.m);
  w.put<std::int32_t>(K.rows);
  w.put<std::int32_t>(K.iterations);
  w.put(K.last_increment);
  w.put<std::uint8_t>(K.converged);
  for (const SheetedField& e : K.entries) write_sheeted(w, e);
  write_grid(w, H.grid);
  w.put<std::int32_t>(H.m);
  for (int i = 0; i < H.m; ++i)
    for (int j = 0; j < i; ++j) {
      const SheetedField* e = H.entry(i, j);
      w.put<std::uint8_t>(e != nullptr);
      if (e) write_sheeted(w, *e);
    }
  if (!out) throw IoError("write failed: " + path.string());
}

KernelBundle load_kernels(const fs::path& path) {
  std::ifstream in = open_in(path);
  const std::string name = path.string();
  Reader r(in, name);
  KernelBundle out;
  out.hash = read_header(r, in, ContainerKind::kernels, name);
  KernelTable& K = out.K;
  K.grid = read_grid(r);
  K.n = r.get<std::int32_t>();
  K.m = r.get<std::int32_t>();
  K.rows = r.get<std::int32_t>();
  if (K.n < 2 || K.m < 1 || K.m >= K.n || (K.rows != K.m && K.rows != K.n)) throw IoError(name + ": bad kernel shape");
  K.iterations = r.get<std::int32_t>();
  K.last_increment = r.get<double>();
  K.converged = r.get<std::uint8_t>() != 0;
  for (int q = 0; q < K.rows * K.n; ++q) K.entries.push_back(read_sheeted(r, K.grid, name));
  FredholmKernelTable& H = out.H;
  H.grid = read_grid(r);
  H.m = r.get<std::int32_t>();
  if (H.m != K.m) throw IoError(name + ": Fredholm block size mismatch");
  H.entries.resize(static_cast<std::size_t>(H.m) * H.m);
  for (int i = 0; i < H.m; ++i)
    for (int j = 0; j < i; ++j)
      if (r.get<std::uint8_t>()) H.entries[static_cast<std::size_t>(i) * H.m + j] = read_sheeted(r, H.grid, name);
  return out;
}

void save_gain(const fs::path& path, const GainTable& gain, std::uint64_t hash) {
  std::ofstream out = open_out(path, true);
  Writer w(out);
  write_header(w, out, ContainerKind::gain, hash);
  write_matrix_table(w, gain.F);
  write_matrix_table(w, gain.F1);
  write_matrix_table(w, gain.F2);
  w.put<std::uint64_t>(gain.meta.size());
  for (const auto& [k, v] : gain.meta) {
    w.string(k);
    w.string(v);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

GainTable load_gain(const fs::path& path, std::uint64_t* hash) {
  std::ifstream in = open_in(path);
  const std::string name = path.string();
  Reader r(in, name);
  const std::uint64_t h = read_header(r, in, ContainerKind::gain, name);
  if (hash) *hash = h;
  GainTable g;
  g.F = read_matrix_table(r, name);
  g.F1 = read_matrix_table(r, name);
  g.F2 = read_matrix_table(r, name);
  const std::uint64_t count = r.count(1 << 16);
  for (std::uint64_t q = 0; q < count; ++q) {
    std::string k = r.string();
    g.meta[k] = r.string();
  }
  return g;
}

Json report_json(const CheckReport& r) {
  Json j;
  j["name"] = r.name;
  j["samples"] = r.samples;
  j["residual"] = r.residual;
  j["tolerance"] = r.tolerance;
  j["pass"] = r.pass;
  j["offending"] = r.offending;
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

std::string report_line(const CheckReport& r) {
  std::string line = fmt::format("{} {} residual={:.6e} tolerance={:.3e} samples={}", r.pass ? "PASS" : "FAIL", r.name,
                                 r.residual, r.tolerance, r.samples);
  if (!r.note.empty()) line += " (" + r.note + ")";
  for (const auto& o : r.offending) line += "\n    at " + o;
  return line;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
}

}  // namespace backstep
