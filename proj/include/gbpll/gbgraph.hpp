#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "gbpll/common.hpp"
#include "gbpll/data.hpp"
#include "gbpll/disambig.hpp"
#include "gbpll/gbspace.hpp"

namespace gbpll {

/// Result of the radius gate between two balls.
struct InterBallEdge {
  std::optional<double> weight;  // 1 / center distance when the gate passes
  bool degenerate = false;       // gate passed with coincident centers
};

/// Gate: ||c_i - c_j|| < 2 max(r_i, r_j).
InterBallEdge inter_ball_weight(const GranularBall& a, const GranularBall& b);

/// All other members of the sample's ball, ascending.
std::vector<std::size_t> intra_neighbors(const GbSpace& space, std::size_t sample);

struct NnlsResult {
  Vector weights;
  int iterations = 0;
};

/// min ||x - A w||^2 s.t. w >= 0, given the Gram matrix G = A A^T and b = A x
/// (rows of A are the regressors). Lawson-Hanson active set.
NnlsResult nnls_gram(const Matrix& gram, const Vector& rhs, int max_iterations);

/// Nonnegative weights reconstructing features.row(sample) from the rows listed
/// in `neighbors`. Empty neighbor list gives an empty vector.
Vector reconstruction_weights(const Matrix& features, std::size_t sample,
                              std::span<const std::size_t> neighbors);

/// Intra-ball complete graph with NNLS weights, plus radius-gated ball edges.
struct GbGraph {
  std::vector<std::vector<std::size_t>> neighbors;
  std::vector<Vector> weights;  // aligned with neighbors
  std::vector<double> support;  // sqrt(sum of weights); 1 where that is 0 or undefined
  std::map<std::pair<std::size_t, std::size_t>, double> ball_edges;  // key first < second
  std::size_t degenerate_ball_pairs = 0;

  std::size_t sample_count() const { return neighbors.size(); }
  std::optional<double> ball_edge(std::size_t a, std::size_t b) const;
};

/// `threads` > 1 solves the per-sample problems concurrently; the result does
/// not depend on the thread count.
GbGraph build_graph(const GbSpace& space, const Matrix& features, std::size_t threads = 1);

/// Graph with no edges and unit supports (used when the graph is disabled).
GbGraph empty_graph(std::size_t sample_count);

/// Mixes each row with the weight-averaged (row-normalized) confidence of its
/// positive-weight neighbors, re-masks to the candidates and rescales to the
/// row's original mass.
ConfidenceMatrix propagate_confidence(const GbGraph& graph, const ConfidenceMatrix& p,
                                      const CandidateMask& candidates, double alpha);

}  // namespace gbpll
