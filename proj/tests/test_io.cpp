#include "doctest.h"

#include <cstring>
#include <fstream>
#include <sstream>

#include "backstep/io.hpp"
#include "backstep/transforms.hpp"

using namespace backstep;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "backstep_io_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

const Synthesis& sample() {
  static const Synthesis s = [] {
    SynthesisOptions opt;
    opt.nx = 8;
    opt.t_horizon = 2.0;
    opt.compute_topt = false;
    return synthesize(catalog("custom", {{"n", "3"}, {"m", "2"}, {"eps", "0.25"}, {"l1", "-(2 + x/2)"}, {"l2", "-1"},
                                         {"l3", "1"}, {"m12", "1"}, {"m21", "0.5"}, {"q11", "1"}}),
                      opt);
  }();
  return s;
}

}  // namespace

TEST_CASE("system descriptions round trip through JSON") {
  SystemSpec s = catalog("example_1_5", {{"m12", "sin(2*pi*t)*x"}});
  Table2 tb;
  tb.t_axis = {0.0, 1.0};
  tb.x_axis = {0.0, 0.5, 1.0};
  tb.values.resize(2, 3);
  tb.values << 0, 1, 2, 3, 4, 5;
  tb.policy = Table2::TimePolicy::clamp;
  s.M[1][0] = ScalarField(tb);
  s.delta = 0.01;
  const Json j = system_to_json(s);
  const SystemSpec r = system_from_json(Json::parse(j.dump()));
  CHECK(r.name == "example_1_5");
  CHECK(r.n == 2);
  CHECK(r.delta.value() == 0.01);
  for (double t : {0.0, 0.3, 2.0})
    for (double x : {0.0, 0.25, 0.9}) {
      CHECK(r.lam(1, t, x) == s.lam(1, t, x));
      CHECK(r.m_at(0, 1, t, x) == s.m_at(0, 1, t, x));
      CHECK(r.m_at(1, 0, t, x) == s.m_at(1, 0, t, x));
    }
  CHECK(system_to_json(r) == j);
}

TEST_CASE("system description errors") {
  CHECK_THROWS_AS(system_from_json(Json::parse(R"({"n": 2, "m": 1})")), IoError);
  CHECK_THROWS_AS(system_from_json(Json::parse(R"({"n": 2, "m": 1, "eps": 0.5, "lambda": ["-1"]})")), IoError);
  CHECK_THROWS_AS(system_from_json(Json::parse(R"({"n": 2, "m": 1, "eps": 0.5, "lambda": ["-1", "1 +"]})")), IoError);
  CHECK_THROWS_AS(load_system(scratch("missing.json")), IoError);
  const SystemSpec ok = system_from_json(
      Json::parse(R"({"n": 2, "m": 1, "eps": 0.5, "lambda": [-1, "1"], "M": [[0, "-4"], ["-4", 0]], "Q": [[1]]})"));
  CHECK(ok.m_at(0, 1, 0, 0) == -4.0);
  CHECK(ok.q_at(0, 0, 0) == 1.0);
}

TEST_CASE("config hash is canonical") {
  const Json a = Json::parse(R"({"b": 1, "a": [1, 2], "c": {"y": 1, "x": 2}})");
  const Json b = Json::parse(R"({"c": {"x": 2, "y": 1}, "a": [1, 2], "b": 1})");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a) != config_hash(Json::parse(R"({"b": 2, "a": [1, 2], "c": {"y": 1, "x": 2}})")));
  CHECK(hash_hex(config_hash(Json::object())) == "08f44b07b5901a25");  // FNV-1a of "{}"
}

TEST_CASE("seventeen significant digits") {
  CHECK(std::stod(fmt17(0.1)) == 0.1);
  CHECK(std::stod(fmt17(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(fmt17(0.1) == "0.10000000000000001");
}

TEST_CASE("kernel container round trips bit for bit") {
  const Synthesis& s = sample();
  const fs::path p = scratch("kernels.bin");
  save_kernels(p, s.K, s.H, 0x1234);
  const KernelBundle b = load_kernels(p);
  CHECK(b.hash == 0x1234);
  CHECK(b.K.grid == s.K.grid);
  CHECK(b.K.rows == s.K.rows);
  for (std::size_t q = 0; q < s.K.entries.size(); ++q) {
    CHECK(same_bits(b.K.entries[q].below, s.K.entries[q].below));
    CHECK(same_bits(b.K.entries[q].above, s.K.entries[q].above));
    CHECK(b.K.entries[q].region == s.K.entries[q].region);
    CHECK(same_bits(b.K.entries[q].psi.v, s.K.entries[q].psi.v));
  }
  REQUIRE(b.H.entry(1, 0) != nullptr);
  CHECK(same_bits(b.H.entry(1, 0)->below, s.H.entry(1, 0)->below));
  save_kernels(scratch("kernels2.bin"), b.K, b.H, 0x1234);
  CHECK(slurp(p) == slurp(scratch("kernels2.bin")));
}

TEST_CASE("gain container round trips bit for bit") {
  const Synthesis& s = sample();
  const fs::path p = scratch("gain.bin");
  save_gain(p, s.gain, 77);
  std::uint64_t h = 0;
  const GainTable g = load_gain(p, &h);
  CHECK(h == 77);
  CHECK(g.meta == s.gain.meta);
  CHECK(g.F.time == s.gain.F.time);
  for (std::size_t q = 0; q < g.F.v.size(); ++q) {
    CHECK(std::memcmp(g.F.v[q].data(), s.gain.F.v[q].data(), sizeof(double) * g.F.v[q].size()) == 0);
    CHECK(g.F1.v[q].cols() == s.gain.F1.v[q].cols());
  }
  save_gain(scratch("gain2.bin"), g, 77);
  CHECK(slurp(p) == slurp(scratch("gain2.bin")));
}

TEST_CASE("corrupt containers are rejected") {
  const fs::path p = scratch("bad.bin");
  write_text(p, "not a container");
  CHECK_THROWS_AS(load_kernels(p), IoError);
  const std::string good = slurp(scratch("gain.bin"));
  write_text(p, good.substr(0, good.size() / 2));
  CHECK_THROWS_AS(load_gain(p), IoError);
  CHECK_THROWS_AS(load_kernels(scratch("gain.bin")), IoError);
}

TEST_CASE("CSV files carry the hash and full precision") {
  const Synthesis& s = sample();
  const fs::path p = scratch("gain.csv");
  write_gain_csv(p, s.gain, 0xabc);
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  CHECK(line == "# config_hash=0000000000000abc");
  std::getline(in, line);
  CHECK(line == "k,b,t,xi,i,j,F,F1,F2");
  std::getline(in, line);
  CHECK(std::count(line.begin(), line.end(), ',') == 8);

  Trace tr;
  StateSnapshot y{0.0, Eigen::MatrixXd::Ones(2, 3)};
  tr.snapshots = {y};
  tr.t = {0.0};
  tr.l2 = {1.0 / 3.0};
  tr.feedback_sup = {0.0};
  write_norms_csv(scratch("norms.csv"), tr, 1);
  write_trace_csv(scratch("trace.csv"), tr, 1);
  CHECK(slurp(scratch("norms.csv")).find("t,l2_norm,feedback_sup\n0,0.33333333333333331,0\n") != std::string::npos);
  CHECK(slurp(scratch("trace.csv")).find("t,x,y_1,y_2\n0,0,1,1\n0,0.5,1,1\n") != std::string::npos);
}

TEST_CASE("reports serialize to JSON and text") {
  CheckReport r{.name = "trace", .samples = 3, .residual = 0.5, .tolerance = 0.1};
  r.offend("here");
  r.finish();
  const Json j = report_json(r);
  CHECK(j["name"] == "trace");
  CHECK(j["pass"] == false);
  CHECK(j["offending"].size() == 1);
  CHECK(report_line(r).rfind("FAIL trace", 0) == 0);
}
