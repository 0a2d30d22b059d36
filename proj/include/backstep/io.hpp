#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "backstep/simulator.hpp"
#include "backstep/tables.hpp"
#include "backstep/verify.hpp"

namespace backstep {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Json = nlohmann::json;

// System description:
// {"name", "n", "m", "eps", "lambda": [field], "M": [[field]], "Q": [[field]], "period", "delta"}
// field: number | expression string | {"t": [...], "x": [...], "values": [[...]] (row-major, one row per t),
//                                      "time_policy": "error" | "clamp" | "periodic", "period"}
SystemSpec system_from_json(const Json& j);
Json system_to_json(const SystemSpec& spec);
SystemSpec load_system(const std::filesystem::path& path);

// FNV-1a over the canonical (sorted-key, compact) dump.
std::uint64_t config_hash(const Json& config);
std::string hash_hex(std::uint64_t h);

std::string fmt17(double v);

// CSV exports; the first line is "# config_hash=<hex>".
void write_gain_csv(const std::filesystem::path& path, const GainTable& gain, std::uint64_t hash);
void write_kernel_csv(const std::filesystem::path& path, const KernelTable& K, std::uint64_t hash);
void write_trace_csv(const std::filesystem::path& path, const Trace& trace, std::uint64_t hash);
void write_norms_csv(const std::filesystem::path& path, const Trace& trace, std::uint64_t hash);
void write_topt_csv(const std::filesystem::path& path, const ToptResult& r, std::uint64_t hash);

// Binary container, little endian:
//   magic "BKSTEP\0\0", u32 version, u32 kind, u64 config hash, payload.
// Every table carries its time axis (u32 mode, f64 t0, f64 t1, i32 nt) and nx; doubles are stored raw.
// Kernel payload: i32 n, m, rows; entries row-major (i, j) for i < rows, j < n;
//   then i32 m and the Fredholm entries (i, j) for i > j, both < m.
// Gain payload: F, F1, F2 as matrix tables, then the metadata map.
inline constexpr std::uint32_t container_version = 1;
enum class ContainerKind : std::uint32_t { kernels = 1, gain = 2 };

struct KernelBundle {
  KernelTable K;
  FredholmKernelTable H;
  std::uint64_t hash = 0;
};

void save_kernels(const std::filesystem::path& path, const KernelTable& K, const FredholmKernelTable& H,
                  std::uint64_t hash);
KernelBundle load_kernels(const std::filesystem::path& path);

void save_gain(const std::filesystem::path& path, const GainTable& gain, std::uint64_t hash);
GainTable load_gain(const std::filesystem::path& path, std::uint64_t* hash = nullptr);

Json report_json(const CheckReport& r);
std::string report_line(const CheckReport& r);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace backstep
