#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dsgd/matops.hpp"
#include "dsgd/stacked.hpp"

namespace dsgd {

/// Spectral quantities of a gossip matrix. For m = 1 every field is reported
/// as 0 except gap = 1.
struct SpectralProfile {
  double lambda2 = 0.0;     ///< second largest eigenvalue
  double lambda_min = 0.0;  ///< smallest eigenvalue
  double rho = 0.0;         ///< max(|lambda2|, |lambda_min|)
  double Lambda = 0.0;      ///< 2 ||(I - W)^+ W||_2
  double gap = 1.0;         ///< 1 - lambda2
};

/// Symmetric, stochastic, connected gossip matrix. Validated at construction
/// and immutable afterwards, so it can be shared between simulation workers.
class CommMatrix {
 public:
  /// Throws NotSymmetric, InvalidParam (rows do not sum to one), InvalidStep
  /// (negative entries) or Disconnected (lambda2 >= 1 - 1e-12).
  explicit CommMatrix(Matrix entries);

  int clients() const { return int(entries_.rows()); }
  const Matrix& matrix() const { return entries_; }
  const SpectralProfile& spectral() const { return profile_; }
  /// Full spectrum of W, descending.
  const Vector& eigenvalues() const { return eigenvalues_; }

 private:
  Matrix entries_;
  Vector eigenvalues_;
  SpectralProfile profile_;
};

struct Edge {
  int i = 0;
  int j = 0;
  double weight = 1.0;
};

CommMatrix build_fully_connected(int m);
CommMatrix build_ring(int m, double t = 1.0 / 3.0);
/// k complete clusters of size m/k (unit intra-cluster weights) joined by one
/// bridge edge of weight `bridge_weight` between consecutive clusters on a
/// cycle (a single bridge when k = 2); W = I - t_intra L.
CommMatrix build_clusters(int m, int k, double t_intra, double bridge_weight);
/// W = I - t L for a weighted graph Laplacian L.
CommMatrix from_laplacian(const Matrix& laplacian, double t);

Matrix ring_laplacian(int m);
Matrix laplacian_from_edges(int m, const std::vector<Edge>& edges);

/// Parses `i j weight` lines (0-indexed, `#` starts a comment). The weight
/// column is optional and defaults to 1.
std::vector<Edge> parse_edge_list(std::istream& in);
std::vector<Edge> read_edge_list(const std::string& path);
int node_count(const std::vector<Edge>& edges);

/// Validates an arbitrary matrix as a gossip matrix and returns its profile.
SpectralProfile spectral_profile(const Matrix& w);
inline const SpectralProfile& spectral_profile(const CommMatrix& w) { return w.spectral(); }

/// G = (I - W)^+ W as an m x m matrix; lift to R^{md} with apply_blockwise.
Matrix gossip_operator(const CommMatrix& w);

/// One gossip round, (W (x) I_d) X.
inline Stacked mix(const CommMatrix& w, const Stacked& x) { return apply_blockwise(w.matrix(), x); }

}  // namespace dsgd
