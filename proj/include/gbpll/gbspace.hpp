#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gbpll/common.hpp"

namespace gbpll {

/// A cluster of samples summarized by the mean of its rows and the largest
/// member-to-center distance.
struct GranularBall {
  std::vector<std::size_t> members;  // ascending
  Vector center;
  double radius = 0.0;
  /// 2-means could not separate this ball; it is exempt from the size bound.
  bool degenerate = false;
};

/// Mean/max-distance summary of `members` over `features`.
GranularBall make_ball(const Matrix& features, std::vector<std::size_t> members);

/// Partition of [0, N) into granular balls. Ball id = index in balls().
class GbSpace {
 public:
  GbSpace() = default;
  GbSpace(std::vector<GranularBall> balls, std::size_t total_count, std::size_t split_threshold,
          std::size_t inspections = 0);

  /// Space over an explicit partition; throws InvalidArgument if `groups` do not
  /// partition [0, features.rows()).
  static GbSpace from_partition(const Matrix& features,
                                std::vector<std::vector<std::size_t>> groups);

  const std::vector<GranularBall>& balls() const { return balls_; }
  std::size_t ball_count() const { return balls_.size(); }
  std::size_t total_count() const { return total_count_; }
  std::size_t split_threshold() const { return split_threshold_; }
  /// Number of queue pops performed while building (0 for from_partition).
  std::size_t inspections() const { return inspections_; }

  std::size_t ball_of(std::size_t sample) const;
  const Vector& center_of(std::size_t sample) const { return balls_[ball_of(sample)].center; }

 private:
  std::vector<GranularBall> balls_;
  std::vector<std::size_t> ball_of_;
  std::size_t total_count_ = 0;
  std::size_t split_threshold_ = 0;
  std::size_t inspections_ = 0;
};

/// ceil(sqrt(total_count)).
std::size_t split_threshold(std::size_t total_count);

struct TwoMeansResult {
  std::vector<std::size_t> first;   // holds the smallest member index
  std::vector<std::size_t> second;
  bool degenerate = false;          // no valid split; first/second empty
};

/// k-means with k = 2 over `members`, seeded at the mutually farthest pair.
/// The seed only breaks exact ties in the farthest-pair search.
TwoMeansResult two_means(const Matrix& features, std::span<const std::size_t> members,
                         std::uint64_t seed);

/// Queue-driven recursive bisection: balls larger than ceil(sqrt(N)) are split
/// and re-queued at the tail, others are finalized.
GbSpace build_gb_space(const Matrix& features, std::uint64_t seed);

}  // namespace gbpll
