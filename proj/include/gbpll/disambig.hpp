#pragma once

#include <cstddef>
#include <span>

#include "gbpll/common.hpp"
#include "gbpll/data.hpp"

namespace gbpll {

/// N x L label confidence, zero outside each row's candidate set. Row i sums
/// to 1/W_i right after init_confidence/update_confidence.
struct ConfidenceMatrix {
  Matrix values;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t labels() const { return static_cast<std::size_t>(values.cols()); }
};

/// Moving-average estimate of the class marginal.
struct ClassPrior {
  Vector values;
  double momentum = 0.0;
};

/// Eq. (8)-style initialization: candidate-masked model scores normalized per
/// row and scaled by 1/support. Rows whose candidate scores are all zero fall
/// back to uniform over candidates.
ConfidenceMatrix init_confidence(const CandidateMask& candidates, const Matrix& probs,
                                 std::span<const double> supports);

/// Closed-form tempered update: scores f_ij * u_j^(-lambda3) normalized over the
/// candidate set and scaled by 1/support. With lambda3 = 0 this is bit-identical
/// to init_confidence.
ConfidenceMatrix update_confidence(const CandidateMask& candidates, const Matrix& probs,
                                   std::span<const double> supports, const ClassPrior& prior,
                                   double lambda3);

/// Uniform mass over each candidate set, scaled by 1/support.
ConfidenceMatrix uniform_confidence(const CandidateMask& candidates,
                                    std::span<const double> supports);

ClassPrior init_uniform_prior(std::size_t class_count, double momentum = 0.0);

/// Candidate-restricted argmax (ties to the lowest label) for each row.
std::vector<std::size_t> candidate_argmax(const CandidateMask& candidates, const Matrix& probs);

/// u <- momentum * u + (1 - momentum) * histogram(candidate argmax) / N.
ClassPrior update_prior(const ClassPrior& prior, const CandidateMask& candidates,
                        const Matrix& probs);

/// Throws DataError if P has mass outside the candidates, negative entries, or
/// an empty row.
void check_confidence(const ConfidenceMatrix& p, const CandidateMask& candidates);

}  // namespace gbpll
