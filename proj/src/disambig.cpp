#include "gbpll/disambig.hpp"

#include <cmath>
#include <string>

namespace gbpll {

namespace {

void check_shapes(const CandidateMask& candidates, const Matrix& probs,
                  std::span<const double> supports) {
  if (static_cast<std::size_t>(probs.rows()) != candidates.rows() ||
      static_cast<std::size_t>(probs.cols()) != candidates.labels())
    throw InvalidArgument("confidence: model output shape does not match candidate mask");
  if (supports.size() != candidates.rows())
    throw InvalidArgument("confidence: need one support value per row");
}

// Shared by init and update so that a unit tempering factor reproduces init bit for bit.
ConfidenceMatrix normalize_scores(const CandidateMask& candidates, const Matrix& probs,
                                  std::span<const double> supports, const Vector& tempering) {
  const auto n = candidates.rows();
  const auto l = candidates.labels();
  ConfidenceMatrix out{Matrix::Zero(probs.rows(), probs.cols())};
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const double w = supports[i];
    if (!(w > 0.0)) throw InvalidArgument("confidence: support must be positive at row " + std::to_string(i));
    double total = 0.0;
    for (std::size_t j = 0; j < l; ++j)
      if (candidates.test(i, j))
        total += probs(r, static_cast<Eigen::Index>(j)) * tempering[static_cast<Eigen::Index>(j)];
    if (total > 0.0) {
      const double denom = w * total;
      for (std::size_t j = 0; j < l; ++j)
        if (candidates.test(i, j)) {
          const auto c = static_cast<Eigen::Index>(j);
          out.values(r, c) = probs(r, c) * tempering[c] / denom;
        }
    } else {
      const double share = 1.0 / (w * static_cast<double>(candidates.count(i)));
      for (std::size_t j = 0; j < l; ++j)
        if (candidates.test(i, j)) out.values(r, static_cast<Eigen::Index>(j)) = share;
    }
  }
  return out;
}

}  // namespace

ConfidenceMatrix init_confidence(const CandidateMask& candidates, const Matrix& probs,
                                 std::span<const double> supports) {
  check_shapes(candidates, probs, supports);
  return normalize_scores(candidates, probs, supports,
                          Vector::Ones(static_cast<Eigen::Index>(candidates.labels())));
}

ConfidenceMatrix update_confidence(const CandidateMask& candidates, const Matrix& probs,
                                   std::span<const double> supports, const ClassPrior& prior,
                                   double lambda3) {
  check_shapes(candidates, probs, supports);
  if (!(lambda3 >= 0.0)) throw InvalidArgument("update_confidence: lambda3 must be >= 0");
  if (static_cast<std::size_t>(prior.values.size()) != candidates.labels())
    throw InvalidArgument("update_confidence: prior length does not match label count");
  Vector tempering(prior.values.size());
  for (Eigen::Index j = 0; j < prior.values.size(); ++j) {
    if (!(prior.values[j] > 0.0))
      throw InvalidArgument("update_confidence: nonpositive prior entry at class " + std::to_string(j));
    tempering[j] = std::pow(prior.values[j], -lambda3);
  }
  return normalize_scores(candidates, probs, supports, tempering);
}

ConfidenceMatrix uniform_confidence(const CandidateMask& candidates,
                                    std::span<const double> supports) {
  if (supports.size() != candidates.rows())
    throw InvalidArgument("confidence: need one support value per row");
  const auto zeros = Matrix::Zero(static_cast<Eigen::Index>(candidates.rows()),
                                  static_cast<Eigen::Index>(candidates.labels()));
  return normalize_scores(candidates, zeros, supports,
                          Vector::Ones(static_cast<Eigen::Index>(candidates.labels())));
}

ClassPrior init_uniform_prior(std::size_t class_count, double momentum) {
  if (class_count < 1) throw InvalidArgument("init_uniform_prior: need at least one class");
  return {Vector::Constant(static_cast<Eigen::Index>(class_count), 1.0 / static_cast<double>(class_count)),
          momentum};
}

std::vector<std::size_t> candidate_argmax(const CandidateMask& candidates, const Matrix& probs) {
  std::vector<std::size_t> out(candidates.rows());
  for (std::size_t i = 0; i < candidates.rows(); ++i) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < candidates.labels(); ++j) {
      if (!candidates.test(i, j)) continue;
      const double v = probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    out[i] = arg;
  }
  return out;
}

ClassPrior update_prior(const ClassPrior& prior, const CandidateMask& candidates,
                        const Matrix& probs) {
  if (static_cast<std::size_t>(prior.values.size()) != candidates.labels())
    throw InvalidArgument("update_prior: prior length does not match label count");
  if (!(prior.momentum >= 0.0 && prior.momentum <= 1.0))
    throw InvalidArgument("update_prior: momentum must lie in [0, 1]");
  const auto n = candidates.rows();
  Vector empirical = Vector::Zero(prior.values.size());
  for (auto j : candidate_argmax(candidates, probs)) empirical[static_cast<Eigen::Index>(j)] += 1.0;
  if (n > 0) empirical /= static_cast<double>(n);
  ClassPrior out{prior.momentum * prior.values + (1.0 - prior.momentum) * empirical, prior.momentum};
  // Keep the simplex exact against drift from repeated mixing.
  const double sum = out.values.sum();
  if (sum > 0.0) out.values /= sum;
  return out;
}

void check_confidence(const ConfidenceMatrix& p, const CandidateMask& candidates) {
  if (p.rows() != candidates.rows() || p.labels() != candidates.labels())
    throw DataError("confidence matrix shape does not match candidate mask");
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < p.labels(); ++j) {
      const double v = p.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (!(v >= 0.0) || !std::isfinite(v))
        throw DataError("invalid confidence at row " + std::to_string(i));
      if (v > 0.0 && !candidates.test(i, j))
        throw DataError("confidence outside candidate set at row " + std::to_string(i));
      sum += v;
    }
    if (!(sum > 0.0)) throw DataError("empty confidence row " + std::to_string(i));
  }
}

}  // namespace gbpll
