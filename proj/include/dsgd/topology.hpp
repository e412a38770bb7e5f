#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dsgd/common.hpp"

namespace dsgd {

enum class TopologyKind {
  FullyConnected,
  Ring,
  Grid2dTorus,
  StaticExponential,
  Disconnected,
  Custom,
};

std::string_view to_string(TopologyKind kind);

/// Accepts the names used in configs: "fully_connected", "ring", "grid",
/// "exponential", "disconnected", "custom" (plus a few aliases).
TopologyKind parse_topology_kind(std::string_view name);

/// Throws InputError naming the constraint when m is not allowed for kind.
void check_structure(TopologyKind kind, std::size_t m);

/// Symmetric doubly stochastic mixing matrix. Only constructible through the
/// validating factories below, so every instance satisfies the invariants.
class GossipMatrix {
 public:
  std::size_t size() const { return entries_.rows(); }
  TopologyKind kind() const { return kind_; }
  const Matrix& entries() const { return entries_; }
  double operator()(std::size_t k, std::size_t l) const { return entries_(k, l); }

  /// Validates symmetry, entry range and row/column sums within `tolerance`.
  static GossipMatrix from_entries(Matrix entries, TopologyKind kind, double tolerance);

 private:
  GossipMatrix(Matrix entries, TopologyKind kind) : entries_(std::move(entries)), kind_(kind) {}

  Matrix entries_;
  TopologyKind kind_ = TopologyKind::Custom;
};

/// Neighbour sets (self excluded) of the undirected graph behind `kind`.
std::vector<std::vector<std::size_t>> topology_neighbors(TopologyKind kind, std::size_t m);

/// Uniform closed-neighbourhood weights: each node averages itself and its
/// neighbours with weight 1/(degree+1). All supported kinds are regular.
GossipMatrix build_gossip_matrix(TopologyKind kind, std::size_t m);

/// Reads an m x m CSV matrix (no header) and validates it with tolerance 1e-9.
GossipMatrix load_gossip_matrix(const std::filesystem::path& path);

struct SpectrumReport {
  std::vector<double> eigenvalues;  // descending
  double lambda = 0.0;              // max(|lambda_2|, |lambda_m|)
  double spectral_gap = 0.0;        // 1 - lambda
};

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// descending. Converged once every off-diagonal magnitude is below 1e-12;
/// throws NumericalError after 100 sweeps.
std::vector<double> jacobi_eigenvalues(Matrix a);

SpectrumReport eigenvalues_symmetric(const GossipMatrix& p);
double spectral_gap(const GossipMatrix& p);

/// Operator 2-norm of P^k - (1/m) 11^T.
double mixing_error(const GossipMatrix& p, int k);

/// Order of the spectral gap with constants set to one. Only meaningful for
/// ratio checks; never a gap value.
double analytic_gap_order(TopologyKind kind, std::size_t m);

}  // namespace dsgd
