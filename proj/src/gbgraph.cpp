#include "gbpll/gbgraph.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

namespace gbpll {

InterBallEdge inter_ball_weight(const GranularBall& a, const GranularBall& b) {
  const double dist = (a.center - b.center).norm();
  const double gate = 2.0 * std::max(a.radius, b.radius);
  if (!(dist < gate)) return {};
  if (dist == 0.0) return {std::nullopt, true};
  return {1.0 / dist, false};
}

std::vector<std::size_t> intra_neighbors(const GbSpace& space, std::size_t sample) {
  const auto& members = space.balls()[space.ball_of(sample)].members;
  std::vector<std::size_t> out;
  out.reserve(members.size() - 1);
  for (auto m : members)
    if (m != sample) out.push_back(m);
  return out;
}

NnlsResult nnls_gram(const Matrix& gram, const Vector& rhs, int max_iterations) {
  const Eigen::Index k = rhs.size();
  NnlsResult out{Vector::Zero(k), 0};
  if (k == 0) return out;

  const double tol = 1e-12 * (1.0 + gram.diagonal().maxCoeff());
  std::vector<bool> passive(static_cast<std::size_t>(k), false);
  std::vector<bool> blocked(static_cast<std::size_t>(k), false);
  Vector& w = out.weights;

  auto solve_passive = [&](const std::vector<Eigen::Index>& idx) {
    const auto m = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd sub(m, m);
    Eigen::VectorXd r(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      r[a] = rhs[idx[a]];
      for (Eigen::Index c = 0; c < m; ++c) sub(a, c) = gram(idx[a], idx[c]);
    }
    return Eigen::VectorXd(sub.completeOrthogonalDecomposition().solve(r));
  };

  while (out.iterations < max_iterations) {
    const Vector grad = rhs - gram * w;  // negative half-gradient
    Eigen::Index entering = -1;
    double best = tol;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (passive[j] || blocked[j]) continue;
      if (grad[j] > best) {
        best = grad[j];
        entering = j;
      }
    }
    if (entering < 0) break;
    passive[entering] = true;

    bool first = true;
    while (out.iterations < max_iterations) {
      ++out.iterations;
      std::vector<Eigen::Index> idx;
      for (Eigen::Index j = 0; j < k; ++j)
        if (passive[j]) idx.push_back(j);
      if (idx.empty()) break;
      const Eigen::VectorXd z = solve_passive(idx);

      if (first) {
        first = false;
        const auto pos = std::find(idx.begin(), idx.end(), entering) - idx.begin();
        if (!(z[pos] > 0.0)) {
          // The entering variable cannot grow; park it until the active set changes.
          passive[entering] = false;
          blocked[entering] = true;
          break;
        }
      }

      double alpha = 1.0;
      Eigen::Index leaving = -1;
      for (std::size_t a = 0; a < idx.size(); ++a) {
        if (z[static_cast<Eigen::Index>(a)] <= 0.0) {
          const double wa = w[idx[a]];
          const double step = wa / (wa - z[static_cast<Eigen::Index>(a)]);
          if (leaving < 0 || step < alpha) {
            alpha = step;
            leaving = idx[a];
          }
        }
      }
      const bool feasible = leaving < 0;
      if (feasible) {
        for (std::size_t a = 0; a < idx.size(); ++a) w[idx[a]] = z[static_cast<Eigen::Index>(a)];
        std::fill(blocked.begin(), blocked.end(), false);
        break;
      }
      for (std::size_t a = 0; a < idx.size(); ++a)
        w[idx[a]] += alpha * (z[static_cast<Eigen::Index>(a)] - w[idx[a]]);
      w[leaving] = 0.0;
      for (auto j : idx) {
        if (w[j] <= 1e-15 * (1.0 + w.maxCoeff())) {
          w[j] = 0.0;
          passive[j] = false;
        }
      }
      std::fill(blocked.begin(), blocked.end(), false);
    }
  }
  return out;
}

Vector reconstruction_weights(const Matrix& features, std::size_t sample,
                              std::span<const std::size_t> neighbors) {
  const auto k = static_cast<Eigen::Index>(neighbors.size());
  if (k == 0) return Vector();
  if (sample >= static_cast<std::size_t>(features.rows()))
    throw InvalidArgument("reconstruction_weights: sample index out of range");
  Matrix a(k, features.cols());
  for (Eigen::Index j = 0; j < k; ++j) {
    if (neighbors[static_cast<std::size_t>(j)] == sample)
      throw InvalidArgument("reconstruction_weights: sample listed as its own neighbor");
    a.row(j) = features.row(static_cast<Eigen::Index>(neighbors[static_cast<std::size_t>(j)]));
  }
  const Matrix gram = a * a.transpose();
  const Vector rhs = a * features.row(static_cast<Eigen::Index>(sample)).transpose();
  return nnls_gram(gram, rhs, static_cast<int>(10 * std::max<Eigen::Index>(k, 1))).weights;
}

std::optional<double> GbGraph::ball_edge(std::size_t a, std::size_t b) const {
  if (a > b) std::swap(a, b);
  auto it = ball_edges.find({a, b});
  if (it == ball_edges.end()) return std::nullopt;
  return it->second;
}

GbGraph build_graph(const GbSpace& space, const Matrix& features, std::size_t threads) {
  const auto n = space.total_count();
  if (static_cast<std::size_t>(features.rows()) != n)
    throw InvalidArgument("build_graph: space and feature table disagree on sample count");
  GbGraph g;
  g.neighbors.resize(n);
  g.weights.resize(n);
  g.support.assign(n, 1.0);

  auto solve_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      g.neighbors[i] = intra_neighbors(space, i);
      g.weights[i] = reconstruction_weights(features, i, g.neighbors[i]);
      const double total = g.weights[i].sum();
      if (total > 0.0) g.support[i] = std::sqrt(total);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    solve_range(0, n);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin < end) pool.emplace_back(solve_range, begin, end);
    }
  }

  const auto& balls = space.balls();
  for (std::size_t a = 0; a < balls.size(); ++a) {
    for (std::size_t b = a + 1; b < balls.size(); ++b) {
      const auto edge = inter_ball_weight(balls[a], balls[b]);
      if (edge.degenerate) ++g.degenerate_ball_pairs;
      if (edge.weight) g.ball_edges.emplace(std::pair{a, b}, *edge.weight);
    }
  }
  return g;
}

GbGraph empty_graph(std::size_t sample_count) {
  GbGraph g;
  g.neighbors.resize(sample_count);
  g.weights.resize(sample_count);
  g.support.assign(sample_count, 1.0);
  return g;
}

ConfidenceMatrix propagate_confidence(const GbGraph& graph, const ConfidenceMatrix& p,
                                      const CandidateMask& candidates, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw InvalidArgument("propagate_confidence: alpha must lie in [0, 1]");
  if (p.rows() != graph.sample_count() || p.rows() != candidates.rows() ||
      p.labels() != candidates.labels())
    throw InvalidArgument("propagate_confidence: shape mismatch");
  ConfidenceMatrix out = p;
  if (alpha == 0.0) return out;

  const auto l = static_cast<Eigen::Index>(p.labels());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const auto& nbrs = graph.neighbors[i];
    const auto& w = graph.weights[i];
    RowVector avg = RowVector::Zero(l);
    double wsum = 0.0;
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      const double wk = w[static_cast<Eigen::Index>(k)];
      if (!(wk > 0.0)) continue;
      const auto row = p.values.row(static_cast<Eigen::Index>(nbrs[k]));
      const double mass = row.sum();
      if (!(mass > 0.0)) continue;
      avg += (wk / mass) * row;
      wsum += wk;
    }
    if (!(wsum > 0.0)) continue;
    avg /= wsum;

    const auto r = static_cast<Eigen::Index>(i);
    const double mass = p.values.row(r).sum();
    RowVector mixed = (1.0 - alpha) * p.values.row(r) + (alpha * mass) * avg;
    for (Eigen::Index j = 0; j < l; ++j)
      if (!candidates.test(i, static_cast<std::size_t>(j))) mixed[j] = 0.0;
    const double kept = mixed.sum();
    if (!(kept > 0.0)) continue;
    out.values.row(r) = mixed * (mass / kept);
  }
  return out;
}

}  // namespace gbpll
