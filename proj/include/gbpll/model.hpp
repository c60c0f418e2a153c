#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "gbpll/common.hpp"
#include "gbpll/data.hpp"
#include "gbpll/disambig.hpp"
#include "gbpll/gbspace.hpp"

namespace gbpll {

/// One-hidden-layer MLP: hidden = tanh(W1 x + b1), probs = softmax(W2 hidden + b2).
/// The hidden layer is the feature space the granular balls are built in.
struct ClassifierParams {
  Matrix w1;  // hidden x input
  Vector b1;
  Matrix w2;  // classes x hidden
  Vector b2;

  std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t class_count() const { return static_cast<std::size_t>(w2.rows()); }

  static ClassifierParams zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t classes);
  /// Gaussian init with standard deviation 1/sqrt(fan_in), zero biases.
  static ClassifierParams random(std::size_t input_dim, std::size_t hidden_dim, std::size_t classes,
                                 std::uint64_t seed);

  std::size_t parameter_count() const;
  /// Flat views in the order w1, b1, w2, b2; used by the finite-difference tests
  /// and by the checkpoint writer.
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
};

struct LossWeights {
  double lambda1 = 0.5;
  double lambda2 = 0.5;
  double lambda3 = 0.1;
};

struct ForwardPass {
  Matrix hidden;  // n x hidden
  Matrix probs;   // n x classes
};

ForwardPass forward(const ClassifierParams& params, const Matrix& inputs);

/// Mean over rows of sum_j -p_ij log f_ij (f clamped at 1e-12).
double loss_ce(const Matrix& probs, const Matrix& targets);
/// Mean over rows of ||hidden_i - center_i||.
double loss_mc(const Matrix& hidden, const Matrix& centers);
/// loss_mc with each sample's center looked up in `space`.
double loss_mc(const Matrix& hidden, const GbSpace& space, std::span<const std::size_t> samples);
/// Mean over rows of sum_j p_ij log u_j.
double loss_pr(const Matrix& targets, const ClassPrior& prior);
double loss_total(const Matrix& probs, const Matrix& hidden, const Matrix& targets,
                  const ClassPrior& prior, const Matrix& centers, const LossWeights& weights);

/// Centers of the balls holding `samples`, one row per sample.
Matrix gather_centers(const GbSpace& space, std::span<const std::size_t> samples);

/// One term of the training objective. Empty `targets` drops the CE and prior
/// terms; empty `centers` drops the multi-center term. `ce_mask`, when
/// non-empty, restricts the CE mean to the flagged rows.
struct Batch {
  Matrix inputs;
  Matrix targets;
  Matrix centers;
  std::vector<bool> ce_mask;
};

struct LossBreakdown {
  double ce = 0.0;
  double mc = 0.0;
  double pr = 0.0;
  double total = 0.0;
};

/// Objective value of one batch term.
LossBreakdown batch_loss(const ClassifierParams& params, const Batch& batch,
                         const ClassPrior& prior, const LossWeights& weights);

/// Objective value and its gradient w.r.t. the parameters. Targets, prior and
/// centers are constants.
LossBreakdown batch_gradient(const ClassifierParams& params, const Batch& batch,
                             const ClassPrior& prior, const LossWeights& weights,
                             ClassifierParams& grad);

/// SGD with heavy-ball momentum: v <- mu v + g, theta <- theta - lr v.
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9) : momentum_(momentum) {}

  double momentum() const { return momentum_; }
  const ClassifierParams& velocity() const { return velocity_; }
  void set_velocity(ClassifierParams v) { velocity_ = std::move(v); }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

  /// Throws NumericalError naming the layer when the gradient is not finite.
  void apply(ClassifierParams& params, const ClassifierParams& grad, double learning_rate);

 private:
  double momentum_;
  ClassifierParams velocity_;
  std::uint64_t steps_ = 0;
};

/// Sums the gradients of all batch terms and applies one optimizer step.
/// Returns the combined loss at the pre-step parameters.
LossBreakdown backward_step(ClassifierParams& params, std::span<const Batch> terms,
                            const ClassPrior& prior, const LossWeights& weights,
                            double learning_rate, SgdMomentum& optimizer);

struct MixedBatch {
  Matrix inputs;
  Matrix targets;
  double coefficient = 1.0;
};

/// m * a + (1 - m) * b for inputs and targets.
MixedBatch mixup_batch(const Matrix& inputs_a, const Matrix& inputs_b, const Matrix& targets_a,
                       const Matrix& targets_b, double coefficient);
/// As above with m ~ Beta(beta_a, beta_b) drawn from `rng`.
MixedBatch mixup_batch(const Matrix& inputs_a, const Matrix& inputs_b, const Matrix& targets_a,
                       const Matrix& targets_b, double beta_a, double beta_b, std::mt19937_64& rng);

double sample_beta(double a, double b, std::mt19937_64& rng);

/// Per predicted class (candidate argmax), keep the max(1, ceil(rho * count))
/// rows with the highest candidate score. Row k of `probs` pairs with
/// candidate row rows[k].
std::vector<bool> select_reliable(const Matrix& probs, const CandidateMask& candidates,
                                  std::span<const std::size_t> rows, double rho);

}  // namespace gbpll
