#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dsgd/analysis.hpp"
#include "dsgd/topology.hpp"

namespace dsgd {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

using Cell = std::variant<std::string, double, std::size_t>;

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;
};

/// 12 significant digits; "inf", "-inf" and "nan" spelled out.
std::string format_real(double v);
std::string to_csv(const Table& table);

/// Writes via a temporary file and a rename. Throws InputError when the
/// target directory is not writable.
void write_atomically(const std::filesystem::path& path, const std::string& content);

void emit_csv(const Table& table, const std::filesystem::path& path);
/// Adds "schema_version" before writing.
void emit_json_summary(nlohmann::json summary, const std::filesystem::path& path);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

Table topology_table(TopologyKind kind, const SpectrumReport& spectrum);
Table spectrum_table(const SpectrumReport& spectrum);
Table stability_table(const Curve& curve);
Table gengap_table(const Curve& curve);
Table bound_table(const Curve& stability, std::span<const double> bound);
Table compare_table(std::span<const TopologyRow> rows);
Table control_table(const ControlSweep& sweep);
Table histogram_table(const GaussianityReport& report);
Table gaussianity_table(const GaussianityReport& report);
/// Replicate-averaged consensus distance and mean local risk per logged
/// iteration.
Table trace_table(std::span<const RunTrace> runs);

}  // namespace dsgd
