#include "gbpll/gbspace.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>
#include <string>

namespace gbpll {

namespace {

constexpr int kMaxLloydIterations = 100;

double squared_distance(const Matrix& features, std::size_t a, const Eigen::Ref<const RowVector>& c) {
  return (features.row(static_cast<Eigen::Index>(a)) - c).squaredNorm();
}

}  // namespace

GranularBall make_ball(const Matrix& features, std::vector<std::size_t> members) {
  if (members.empty()) throw InvalidArgument("make_ball: empty member list");
  std::sort(members.begin(), members.end());
  GranularBall ball;
  RowVector sum = RowVector::Zero(features.cols());
  for (auto m : members) sum += features.row(static_cast<Eigen::Index>(m));
  const RowVector center = sum / static_cast<double>(members.size());
  double r2 = 0.0;
  for (auto m : members) r2 = std::max(r2, squared_distance(features, m, center));
  ball.center = center.transpose();
  ball.radius = std::sqrt(r2);
  ball.members = std::move(members);
  return ball;
}

GbSpace::GbSpace(std::vector<GranularBall> balls, std::size_t total_count,
                 std::size_t split_threshold, std::size_t inspections)
    : balls_(std::move(balls)),
      ball_of_(total_count, total_count),
      total_count_(total_count),
      split_threshold_(split_threshold),
      inspections_(inspections) {
  for (std::size_t b = 0; b < balls_.size(); ++b) {
    for (auto m : balls_[b].members) {
      if (m >= total_count) throw InvalidArgument("GbSpace: member index out of range");
      if (ball_of_[m] != total_count)
        throw InvalidArgument("GbSpace: sample " + std::to_string(m) + " in two balls");
      ball_of_[m] = b;
    }
  }
  for (std::size_t i = 0; i < total_count; ++i)
    if (ball_of_[i] == total_count)
      throw InvalidArgument("GbSpace: sample " + std::to_string(i) + " not covered");
}

GbSpace GbSpace::from_partition(const Matrix& features,
                                std::vector<std::vector<std::size_t>> groups) {
  std::vector<GranularBall> balls;
  balls.reserve(groups.size());
  for (auto& g : groups) balls.push_back(make_ball(features, std::move(g)));
  std::sort(balls.begin(), balls.end(),
            [](const GranularBall& a, const GranularBall& b) { return a.members[0] < b.members[0]; });
  const auto n = static_cast<std::size_t>(features.rows());
  return GbSpace(std::move(balls), n, gbpll::split_threshold(std::max<std::size_t>(n, 1)));
}

std::size_t GbSpace::ball_of(std::size_t sample) const {
  if (sample >= total_count_)
    throw InvalidArgument("sample " + std::to_string(sample) + " has no ball assignment");
  return ball_of_[sample];
}

std::size_t split_threshold(std::size_t total_count) {
  auto r = static_cast<std::size_t>(std::sqrt(static_cast<double>(total_count)));
  while (r * r > total_count) --r;
  while ((r + 1) * (r + 1) <= total_count) ++r;
  return r * r == total_count ? r : r + 1;
}

TwoMeansResult two_means(const Matrix& features, std::span<const std::size_t> members,
                         std::uint64_t seed) {
  const std::size_t q = members.size();
  if (q < 2) throw InvalidArgument("two_means: need at least 2 members");

  // Farthest pair; exact ties resolved by reservoir sampling over the seed.
  std::mt19937_64 rng(seed);
  double best = -1.0;
  std::size_t best_a = 0, best_b = 1, ties = 0;
  for (std::size_t a = 0; a < q; ++a) {
    const auto xa = features.row(static_cast<Eigen::Index>(members[a]));
    for (std::size_t b = a + 1; b < q; ++b) {
      const double d2 = (features.row(static_cast<Eigen::Index>(members[b])) - xa).squaredNorm();
      if (d2 > best) {
        best = d2;
        best_a = a;
        best_b = b;
        ties = 1;
      } else if (d2 == best) {
        ++ties;
        if (std::uniform_int_distribution<std::size_t>(0, ties - 1)(rng) == 0) {
          best_a = a;
          best_b = b;
        }
      }
    }
  }
  if (best <= 0.0) return {{}, {}, true};

  RowVector c0 = features.row(static_cast<Eigen::Index>(members[best_a]));
  RowVector c1 = features.row(static_cast<Eigen::Index>(members[best_b]));
  std::vector<std::uint8_t> side(q, 2);
  for (int iter = 0; iter < kMaxLloydIterations; ++iter) {
    bool changed = false;
    std::size_t n1 = 0;
    for (std::size_t k = 0; k < q; ++k) {
      const auto s = static_cast<std::uint8_t>(
          squared_distance(features, members[k], c0) <= squared_distance(features, members[k], c1) ? 0 : 1);
      if (s != side[k]) changed = true;
      side[k] = s;
      n1 += s;
    }
    if (n1 == 0 || n1 == q) return {{}, {}, true};
    if (!changed) break;
    RowVector s0 = RowVector::Zero(features.cols());
    RowVector s1 = RowVector::Zero(features.cols());
    for (std::size_t k = 0; k < q; ++k)
      (side[k] ? s1 : s0) += features.row(static_cast<Eigen::Index>(members[k]));
    c0 = s0 / static_cast<double>(q - n1);
    c1 = s1 / static_cast<double>(n1);
  }

  TwoMeansResult out;
  for (std::size_t k = 0; k < q; ++k) (side[k] ? out.second : out.first).push_back(members[k]);
  std::sort(out.first.begin(), out.first.end());
  std::sort(out.second.begin(), out.second.end());
  if (out.second.front() < out.first.front()) std::swap(out.first, out.second);
  return out;
}

GbSpace build_gb_space(const Matrix& features, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (n == 0) throw InvalidArgument("build_gb_space: empty feature table");
  const std::size_t threshold = split_threshold(n);

  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  std::deque<std::vector<std::size_t>> queue;
  queue.push_back(std::move(all));

  std::vector<GranularBall> finished;
  std::size_t inspections = 0;
  while (!queue.empty()) {
    auto members = std::move(queue.front());
    queue.pop_front();
    const std::uint64_t split_seed = mix_seed(seed, inspections);
    ++inspections;
    if (members.size() <= threshold) {
      finished.push_back(make_ball(features, std::move(members)));
      continue;
    }
    auto split = two_means(features, members, split_seed);
    if (split.degenerate) {
      auto ball = make_ball(features, std::move(members));
      ball.degenerate = true;
      finished.push_back(std::move(ball));
      continue;
    }
    queue.push_back(std::move(split.first));
    queue.push_back(std::move(split.second));
  }

  std::sort(finished.begin(), finished.end(),
            [](const GranularBall& a, const GranularBall& b) { return a.members[0] < b.members[0]; });
  return GbSpace(std::move(finished), n, threshold, inspections);
}

}  // namespace gbpll
