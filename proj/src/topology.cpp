#include "dsgd/topology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace dsgd {

namespace {

bool is_power_of_two(std::size_t m) { return m != 0 && (m & (m - 1)) == 0; }

std::size_t exact_sqrt(std::size_t m) {
  auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(m))));
  while (r * r > m) --r;
  while ((r + 1) * (r + 1) <= m) ++r;
  return r;
}

}  // namespace

std::string_view to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::FullyConnected: return "fully_connected";
    case TopologyKind::Ring: return "ring";
    case TopologyKind::Grid2dTorus: return "grid";
    case TopologyKind::StaticExponential: return "exponential";
    case TopologyKind::Disconnected: return "disconnected";
    case TopologyKind::Custom: return "custom";
  }
  return "unknown";
}

TopologyKind parse_topology_kind(std::string_view name) {
  if (name == "fully_connected" || name == "fully-connected" || name == "complete")
    return TopologyKind::FullyConnected;
  if (name == "ring") return TopologyKind::Ring;
  if (name == "grid" || name == "grid2d" || name == "torus") return TopologyKind::Grid2dTorus;
  if (name == "exponential" || name == "static_exponential") return TopologyKind::StaticExponential;
  if (name == "disconnected") return TopologyKind::Disconnected;
  if (name == "custom") return TopologyKind::Custom;
  throw InputError("unknown topology kind '" + std::string(name) + "'");
}

void check_structure(TopologyKind kind, std::size_t m) {
  const std::string name(to_string(kind));
  switch (kind) {
    case TopologyKind::Disconnected:
      if (m < 1) throw InputError("disconnected topology requires m >= 1");
      return;
    case TopologyKind::Grid2dTorus: {
      const std::size_t side = exact_sqrt(m);
      if (m < 2 || side * side != m)
        throw InputError("grid topology requires m to be a perfect square >= 4 (got m=" +
                         std::to_string(m) + ")");
      return;
    }
    case TopologyKind::StaticExponential:
      if (m < 2 || !is_power_of_two(m))
        throw InputError("exponential topology requires m to be a power of two >= 2 (got m=" +
                         std::to_string(m) + ")");
      return;
    case TopologyKind::FullyConnected:
    case TopologyKind::Ring:
      if (m < 2) throw InputError(name + " topology requires m >= 2");
      return;
    case TopologyKind::Custom:
      throw InputError("custom topology is loaded from a matrix file, not built");
  }
}

GossipMatrix GossipMatrix::from_entries(Matrix entries, TopologyKind kind, double tolerance) {
  const std::size_t m = entries.rows();
  if (m == 0 || entries.cols() != m)
    throw InputError("gossip matrix must be square and non-empty (got " +
                     std::to_string(entries.rows()) + "x" + std::to_string(entries.cols()) + ")");
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t l = 0; l < m; ++l) {
      const double v = entries(k, l);
      if (!std::isfinite(v)) throw InputError("gossip matrix has a non-finite entry");
      if (v < 0.0 || v > 1.0)
        throw InputError("gossip matrix entry (" + std::to_string(k) + "," + std::to_string(l) +
                         ") outside [0, 1]");
    }
  }
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t l = k + 1; l < m; ++l)
      if (std::abs(entries(k, l) - entries(l, k)) > tolerance)
        throw InputError("gossip matrix is asymmetric at (" + std::to_string(k) + "," +
                         std::to_string(l) + ")");
  for (std::size_t k = 0; k < m; ++k) {
    double row = 0.0;
    double col = 0.0;
    for (std::size_t l = 0; l < m; ++l) {
      row += entries(k, l);
      col += entries(l, k);
    }
    if (std::abs(row - 1.0) > tolerance)
      throw InputError("gossip matrix row " + std::to_string(k) + " does not sum to 1");
    if (std::abs(col - 1.0) > tolerance)
      throw InputError("gossip matrix column " + std::to_string(k) + " does not sum to 1");
  }
  return GossipMatrix(std::move(entries), kind);
}

std::vector<std::vector<std::size_t>> topology_neighbors(TopologyKind kind, std::size_t m) {
  check_structure(kind, m);
  std::vector<std::set<std::size_t>> sets(m);
  auto link = [&](std::size_t a, std::size_t b) {
    if (a == b) return;
    sets[a].insert(b);
    sets[b].insert(a);
  };
  switch (kind) {
    case TopologyKind::FullyConnected:
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = a + 1; b < m; ++b) link(a, b);
      break;
    case TopologyKind::Ring:
      for (std::size_t a = 0; a < m; ++a) link(a, (a + 1) % m);
      break;
    case TopologyKind::Grid2dTorus: {
      const std::size_t side = exact_sqrt(m);
      for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
          const std::size_t a = r * side + c;
          link(a, r * side + (c + 1) % side);
          link(a, ((r + 1) % side) * side + c);
        }
      }
      break;
    }
    case TopologyKind::StaticExponential:
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t hop = 1; hop < m; hop <<= 1) link(a, (a + hop) % m);
      break;
    case TopologyKind::Disconnected:
    case TopologyKind::Custom:
      break;
  }
  std::vector<std::vector<std::size_t>> out(m);
  for (std::size_t a = 0; a < m; ++a) out[a].assign(sets[a].begin(), sets[a].end());
  return out;
}

GossipMatrix build_gossip_matrix(TopologyKind kind, std::size_t m) {
  const auto neighbors = topology_neighbors(kind, m);
  Matrix p(m, m);
  for (std::size_t a = 0; a < m; ++a) {
    const double w = 1.0 / static_cast<double>(neighbors[a].size() + 1);
    p(a, a) = w;
    for (std::size_t b : neighbors[a]) p(a, b) = w;
  }
  return GossipMatrix::from_entries(std::move(p), kind, 1e-12);
}

GossipMatrix load_gossip_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open matrix file '" + path.string() + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw InputError("");
      } catch (const std::exception&) {
        throw InputError("matrix file '" + path.string() + "': malformed number '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  const std::size_t m = rows.size();
  for (const auto& r : rows)
    if (r.size() != m)
      throw InputError("matrix file '" + path.string() + "': matrix is not square");
  Matrix p(m, m);
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t l = 0; l < m; ++l) p(k, l) = rows[k][l];
  return GossipMatrix::from_entries(std::move(p), TopologyKind::Custom, 1e-9);
}

std::vector<double> jacobi_eigenvalues(Matrix a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw InputError("jacobi_eigenvalues: matrix is not square");
  constexpr double kThreshold = 1e-12;
  constexpr int kMaxSweeps = 100;

  auto max_off_diagonal = [&] {
    double v = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) v = std::max(v, std::abs(a(p, q)));
    return v;
  };

  int sweep = 0;
  while (max_off_diagonal() >= kThreshold) {
    if (sweep++ == kMaxSweeps)
      throw NumericalError("Jacobi eigensolver did not converge within 100 sweeps");
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        // Rotation angle zeroing a(p,q): t = tan(theta), smaller root.
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
      }
    }
  }

  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

SpectrumReport eigenvalues_symmetric(const GossipMatrix& p) {
  SpectrumReport report;
  report.eigenvalues = jacobi_eigenvalues(p.entries());
  // Round-off residue of zero eigenvalues (fully connected: all but one).
  const double floor = 64.0 * std::numeric_limits<double>::epsilon();
  for (auto& ev : report.eigenvalues)
    if (std::abs(ev) < floor) ev = 0.0;
  // Exclude exactly one leading eigenvalue by position; repeated unit
  // eigenvalues (disconnected graphs) then give lambda = 1.
  if (report.eigenvalues.size() > 1) {
    report.lambda = std::max(std::abs(report.eigenvalues[1]), std::abs(report.eigenvalues.back()));
  } else {
    report.lambda = 0.0;
  }
  report.lambda = std::clamp(report.lambda, 0.0, 1.0);
  report.spectral_gap = 1.0 - report.lambda;
  return report;
}

double spectral_gap(const GossipMatrix& p) { return eigenvalues_symmetric(p).spectral_gap; }

double mixing_error(const GossipMatrix& p, int k) {
  if (k < 1) throw InputError("mixing_error requires k >= 1");
  const std::size_t m = p.size();
  Matrix power = p.entries();
  for (int i = 1; i < k; ++i) power = power * p.entries();
  const Matrix averaging(m, m, 1.0 / static_cast<double>(m));
  const auto eig = jacobi_eigenvalues(power - averaging);
  return std::max(std::abs(eig.front()), std::abs(eig.back()));
}

double analytic_gap_order(TopologyKind kind, std::size_t m) {
  const double dm = static_cast<double>(m);
  switch (kind) {
    case TopologyKind::Ring: return 1.0 / (dm * dm);
    case TopologyKind::Grid2dTorus: return 1.0 / (dm * std::log2(dm));
    case TopologyKind::StaticExponential: return 1.0 / std::log2(dm);
    case TopologyKind::FullyConnected: return 1.0;
    case TopologyKind::Disconnected: return 0.0;
    case TopologyKind::Custom: break;
  }
  throw InputError("analytic_gap_order: unsupported topology kind 'custom'");
}

}  // namespace dsgd
