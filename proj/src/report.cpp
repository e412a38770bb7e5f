#include "dsgd/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

namespace dsgd {

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string to_csv(const Table& table) {
  std::string out;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i) out += ',';
    out += table.header[i];
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      std::visit(
          [&out](const auto& v) {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, std::string>) out += v;
            else if constexpr (std::is_same_v<V, double>) out += format_real(v);
            else out += std::to_string(v);
          },
          row[i]);
    }
    out += '\n';
  }
  return out;
}

void write_atomically(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out << content;
    out.flush();
    if (!out) throw InputError("write failed for '" + path.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw InputError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

void emit_csv(const Table& table, const std::filesystem::path& path) {
  write_atomically(path, to_csv(table));
}

void emit_json_summary(nlohmann::json summary, const std::filesystem::path& path) {
  summary["schema_version"] = kSchemaVersion;
  write_atomically(path, summary.dump(2) + "\n");
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw NumericalError("sha256 failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

Table topology_table(TopologyKind kind, const SpectrumReport& spectrum) {
  Table t{{"kind", "m", "lambda", "gap"}, {}};
  t.rows.push_back({std::string(to_string(kind)), spectrum.eigenvalues.size(), spectrum.lambda,
                    spectrum.spectral_gap});
  return t;
}

Table spectrum_table(const SpectrumReport& spectrum) {
  Table t{{"index", "eigenvalue"}, {}};
  for (std::size_t i = 0; i < spectrum.eigenvalues.size(); ++i)
    t.rows.push_back({i, spectrum.eigenvalues[i]});
  return t;
}

namespace {

Table curve_table(const Curve& c, const std::string& mean, const std::string& se) {
  Table t{{"iter", mean, se}, {}};
  for (std::size_t i = 0; i < c.iters.size(); ++i) t.rows.push_back({c.iters[i], c.mean[i], c.se[i]});
  return t;
}

}  // namespace

Table stability_table(const Curve& curve) {
  return curve_table(curve, "stability_mean", "stability_se");
}

Table gengap_table(const Curve& curve) { return curve_table(curve, "gap_mean", "gap_se"); }

Table bound_table(const Curve& stability, std::span<const double> bound) {
  Table t{{"iter", "stability_mean", "stability_se", "bound"}, {}};
  for (std::size_t i = 0; i < stability.iters.size(); ++i)
    t.rows.push_back({stability.iters[i], stability.mean[i], stability.se[i],
                      bound[stability.iters[i]]});
  return t;
}

Table compare_table(std::span<const TopologyRow> rows) {
  Table t{{"kind", "lambda", "stability_final", "stability_se", "gengap_final", "gengap_se"}, {}};
  for (const auto& r : rows)
    t.rows.push_back({std::string(to_string(r.kind)), r.lambda, r.study.estimate.curve.final_mean(),
                      r.study.estimate.curve.final_se(), r.gap.final_mean(), r.gap.final_se()});
  return t;
}

Table control_table(const ControlSweep& sweep) {
  Table t{{"t_gamma", "stability_final", "stability_se"}, {}};
  for (const auto& p : sweep.points) t.rows.push_back({p.t_gamma, p.stability, p.se});
  return t;
}

Table histogram_table(const GaussianityReport& report) {
  Table t{{"bin_left", "bin_right", "count"}, {}};
  for (const auto& b : report.histogram) t.rows.push_back({b.left, b.right, b.count});
  return t;
}

Table gaussianity_table(const GaussianityReport& report) {
  Table t{{"worker", "mean_norm", "variance", "skewness", "excess_kurtosis"}, {}};
  for (std::size_t k = 0; k < report.workers.size(); ++k) {
    const auto& w = report.workers[k];
    t.rows.push_back({k, w.mean_norm, w.variance, w.skewness, w.excess_kurtosis});
  }
  return t;
}

Table trace_table(std::span<const RunTrace> runs) {
  Table t{{"iter", "consensus_distance", "mean_local_risk"}, {}};
  if (runs.empty()) return t;
  const double count = static_cast<double>(runs.size());
  for (std::size_t s = 0; s < runs.front().snapshots.size(); ++s) {
    double dist = 0.0, risk = 0.0;
    for (const auto& r : runs) {
      dist += r.snapshots[s].consensus_distance;
      risk += r.snapshots[s].mean_risk;
    }
    t.rows.push_back({runs.front().snapshots[s].iter, dist / count, risk / count});
  }
  return t;
}

}  // namespace dsgd
