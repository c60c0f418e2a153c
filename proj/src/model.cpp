#include "gbpll/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace gbpll {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kNormFloor = 1e-8;

bool all_finite(const auto& m) { return m.allFinite(); }

std::size_t kept_rows(const Batch& batch) {
  if (batch.ce_mask.empty()) return static_cast<std::size_t>(batch.inputs.rows());
  return static_cast<std::size_t>(std::count(batch.ce_mask.begin(), batch.ce_mask.end(), true));
}

bool row_kept(const Batch& batch, Eigen::Index i) {
  return batch.ce_mask.empty() || batch.ce_mask[static_cast<std::size_t>(i)];
}

void check_batch(const ClassifierParams& params, const Batch& batch) {
  if (batch.inputs.rows() == 0) throw InvalidArgument("batch is empty");
  if (static_cast<std::size_t>(batch.inputs.cols()) != params.input_dim())
    throw InvalidArgument("batch feature width " + std::to_string(batch.inputs.cols()) +
                          " does not match model input " + std::to_string(params.input_dim()));
  if (batch.targets.size() > 0 &&
      (batch.targets.rows() != batch.inputs.rows() ||
       static_cast<std::size_t>(batch.targets.cols()) != params.class_count()))
    throw InvalidArgument("batch targets shape mismatch");
  if (batch.centers.size() > 0 &&
      (batch.centers.rows() != batch.inputs.rows() ||
       static_cast<std::size_t>(batch.centers.cols()) != params.hidden_dim()))
    throw InvalidArgument("batch centers shape mismatch");
  if (!batch.ce_mask.empty() && batch.ce_mask.size() != static_cast<std::size_t>(batch.inputs.rows()))
    throw InvalidArgument("batch mask length mismatch");
}

// Row subset of a matrix.
Matrix take_rows(const Matrix& m, const std::vector<bool>& mask) {
  if (mask.empty()) return m;
  Matrix out(static_cast<Eigen::Index>(std::count(mask.begin(), mask.end(), true)), m.cols());
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if (mask[static_cast<std::size_t>(i)]) out.row(r++) = m.row(i);
  return out;
}

}  // namespace

ClassifierParams ClassifierParams::zeros(std::size_t input_dim, std::size_t hidden_dim,
                                         std::size_t classes) {
  const auto in = static_cast<Eigen::Index>(input_dim);
  const auto h = static_cast<Eigen::Index>(hidden_dim);
  const auto l = static_cast<Eigen::Index>(classes);
  return {Matrix::Zero(h, in), Vector::Zero(h), Matrix::Zero(l, h), Vector::Zero(l)};
}

ClassifierParams ClassifierParams::random(std::size_t input_dim, std::size_t hidden_dim,
                                          std::size_t classes, std::uint64_t seed) {
  auto p = zeros(input_dim, hidden_dim, classes);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(input_dim, 1)));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(hidden_dim, 1)));
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = s1 * gauss(rng);
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = s2 * gauss(rng);
  return p;
}

std::size_t ClassifierParams::parameter_count() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
}

std::vector<std::span<double>> ClassifierParams::blocks() {
  return {{w1.data(), static_cast<std::size_t>(w1.size())},
          {b1.data(), static_cast<std::size_t>(b1.size())},
          {w2.data(), static_cast<std::size_t>(w2.size())},
          {b2.data(), static_cast<std::size_t>(b2.size())}};
}

std::vector<std::span<const double>> ClassifierParams::blocks() const {
  return {{w1.data(), static_cast<std::size_t>(w1.size())},
          {b1.data(), static_cast<std::size_t>(b1.size())},
          {w2.data(), static_cast<std::size_t>(w2.size())},
          {b2.data(), static_cast<std::size_t>(b2.size())}};
}

ForwardPass forward(const ClassifierParams& params, const Matrix& inputs) {
  if (inputs.rows() == 0) throw InvalidArgument("forward: empty batch");
  if (static_cast<std::size_t>(inputs.cols()) != params.input_dim())
    throw InvalidArgument("forward: feature width " + std::to_string(inputs.cols()) +
                          " does not match model input " + std::to_string(params.input_dim()));
  ForwardPass out;
  Matrix pre = inputs * params.w1.transpose();
  pre.rowwise() += params.b1.transpose();
  out.hidden = pre.array().tanh().matrix();
  Matrix logits = out.hidden * params.w2.transpose();
  logits.rowwise() += params.b2.transpose();
  out.probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    const RowVector e = (logits.row(i).array() - top).exp().matrix();
    out.probs.row(i) = e / e.sum();
  }
  return out;
}

double loss_ce(const Matrix& probs, const Matrix& targets) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
    throw InvalidArgument("loss_ce: shape mismatch");
  if (probs.rows() == 0) return 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index j = 0; j < probs.cols(); ++j)
      if (targets(i, j) != 0.0) sum -= targets(i, j) * std::log(std::max(probs(i, j), kProbFloor));
  return sum / static_cast<double>(probs.rows());
}

double loss_mc(const Matrix& hidden, const Matrix& centers) {
  if (hidden.rows() != centers.rows() || hidden.cols() != centers.cols())
    throw InvalidArgument("loss_mc: shape mismatch");
  if (hidden.rows() == 0) return 0.0;
  return (hidden - centers).rowwise().norm().sum() / static_cast<double>(hidden.rows());
}

Matrix gather_centers(const GbSpace& space, std::span<const std::size_t> samples) {
  if (space.ball_count() == 0) throw InvalidArgument("gather_centers: empty space");
  const auto dim = space.balls().front().center.size();
  Matrix out(static_cast<Eigen::Index>(samples.size()), dim);
  for (std::size_t k = 0; k < samples.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = space.center_of(samples[k]).transpose();
  return out;
}

double loss_mc(const Matrix& hidden, const GbSpace& space, std::span<const std::size_t> samples) {
  if (static_cast<std::size_t>(hidden.rows()) != samples.size())
    throw InvalidArgument("loss_mc: one sample index per hidden row required");
  return loss_mc(hidden, gather_centers(space, samples));
}

double loss_pr(const Matrix& targets, const ClassPrior& prior) {
  if (targets.cols() != prior.values.size()) throw InvalidArgument("loss_pr: prior length mismatch");
  for (Eigen::Index j = 0; j < prior.values.size(); ++j)
    if (!(prior.values[j] > 0.0))
      throw InvalidArgument("loss_pr: nonpositive prior entry at class " + std::to_string(j));
  if (targets.rows() == 0) return 0.0;
  const Vector logu = prior.values.array().log().matrix();
  return (targets * logu).sum() / static_cast<double>(targets.rows());
}

double loss_total(const Matrix& probs, const Matrix& hidden, const Matrix& targets,
                  const ClassPrior& prior, const Matrix& centers, const LossWeights& weights) {
  return weights.lambda1 * loss_ce(probs, targets) + weights.lambda2 * loss_mc(hidden, centers) +
         weights.lambda3 * loss_pr(targets, prior);
}

LossBreakdown batch_loss(const ClassifierParams& params, const Batch& batch,
                         const ClassPrior& prior, const LossWeights& weights) {
  check_batch(params, batch);
  const auto pass = forward(params, batch.inputs);
  LossBreakdown out;
  if (batch.targets.size() > 0 && kept_rows(batch) > 0) {
    const Matrix p = take_rows(batch.targets, batch.ce_mask);
    out.ce = loss_ce(take_rows(pass.probs, batch.ce_mask), p);
    out.pr = loss_pr(p, prior);
  }
  if (batch.centers.size() > 0) out.mc = loss_mc(pass.hidden, batch.centers);
  out.total = weights.lambda1 * out.ce + weights.lambda2 * out.mc + weights.lambda3 * out.pr;
  return out;
}

LossBreakdown batch_gradient(const ClassifierParams& params, const Batch& batch,
                             const ClassPrior& prior, const LossWeights& weights,
                             ClassifierParams& grad) {
  const LossBreakdown loss = batch_loss(params, batch, prior, weights);
  const auto pass = forward(params, batch.inputs);
  const Eigen::Index n = batch.inputs.rows();

  // d loss / d logits
  Matrix dlogits = Matrix::Zero(n, pass.probs.cols());
  const auto kept = kept_rows(batch);
  if (batch.targets.size() > 0 && kept > 0 && weights.lambda1 != 0.0) {
    const double scale = weights.lambda1 / static_cast<double>(kept);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!row_kept(batch, i)) continue;
      const double mass = batch.targets.row(i).sum();
      dlogits.row(i) = scale * (mass * pass.probs.row(i) - batch.targets.row(i));
    }
  }
  // d loss / d hidden
  Matrix dhidden = dlogits * params.w2;
  if (batch.centers.size() > 0 && weights.lambda2 != 0.0) {
    const double scale = weights.lambda2 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const RowVector diff = pass.hidden.row(i) - batch.centers.row(i);
      dhidden.row(i) += scale * diff / std::max(diff.norm(), kNormFloor);
    }
  }
  const Matrix dpre = (dhidden.array() * (1.0 - pass.hidden.array().square())).matrix();

  grad.w2 = dlogits.transpose() * pass.hidden;
  grad.b2 = dlogits.colwise().sum().transpose();
  grad.w1 = dpre.transpose() * batch.inputs;
  grad.b1 = dpre.colwise().sum().transpose();
  return loss;
}

void SgdMomentum::apply(ClassifierParams& params, const ClassifierParams& grad,
                        double learning_rate) {
  if (!all_finite(grad.w1)) throw NumericalError("non-finite gradient in layer w1");
  if (!all_finite(grad.b1)) throw NumericalError("non-finite gradient in layer b1");
  if (!all_finite(grad.w2)) throw NumericalError("non-finite gradient in layer w2");
  if (!all_finite(grad.b2)) throw NumericalError("non-finite gradient in layer b2");
  if (velocity_.w1.rows() != params.w1.rows() || velocity_.w1.cols() != params.w1.cols() ||
      velocity_.w2.rows() != params.w2.rows())
    velocity_ = ClassifierParams::zeros(params.input_dim(), params.hidden_dim(), params.class_count());
  velocity_.w1 = momentum_ * velocity_.w1 + grad.w1;
  velocity_.b1 = momentum_ * velocity_.b1 + grad.b1;
  velocity_.w2 = momentum_ * velocity_.w2 + grad.w2;
  velocity_.b2 = momentum_ * velocity_.b2 + grad.b2;
  params.w1 -= learning_rate * velocity_.w1;
  params.b1 -= learning_rate * velocity_.b1;
  params.w2 -= learning_rate * velocity_.w2;
  params.b2 -= learning_rate * velocity_.b2;
  ++steps_;
}

LossBreakdown backward_step(ClassifierParams& params, std::span<const Batch> terms,
                            const ClassPrior& prior, const LossWeights& weights,
                            double learning_rate, SgdMomentum& optimizer) {
  auto total = ClassifierParams::zeros(params.input_dim(), params.hidden_dim(), params.class_count());
  LossBreakdown sum;
  for (const auto& term : terms) {
    ClassifierParams g;
    const auto loss = batch_gradient(params, term, prior, weights, g);
    total.w1 += g.w1;
    total.b1 += g.b1;
    total.w2 += g.w2;
    total.b2 += g.b2;
    sum.ce += loss.ce;
    sum.mc += loss.mc;
    sum.pr += loss.pr;
    sum.total += loss.total;
  }
  optimizer.apply(params, total, learning_rate);
  return sum;
}

MixedBatch mixup_batch(const Matrix& inputs_a, const Matrix& inputs_b, const Matrix& targets_a,
                       const Matrix& targets_b, double coefficient) {
  if (inputs_a.rows() != inputs_b.rows() || inputs_a.cols() != inputs_b.cols() ||
      targets_a.rows() != targets_b.rows() || targets_a.cols() != targets_b.cols() ||
      targets_a.rows() != inputs_a.rows())
    throw InvalidArgument("mixup_batch: batch size mismatch");
  if (coefficient == 1.0) return {inputs_a, targets_a, 1.0};
  if (coefficient == 0.0) return {inputs_b, targets_b, 0.0};
  return {coefficient * inputs_a + (1.0 - coefficient) * inputs_b,
          coefficient * targets_a + (1.0 - coefficient) * targets_b, coefficient};
}

double sample_beta(double a, double b, std::mt19937_64& rng) {
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  return x / (x + y);
}

MixedBatch mixup_batch(const Matrix& inputs_a, const Matrix& inputs_b, const Matrix& targets_a,
                       const Matrix& targets_b, double beta_a, double beta_b, std::mt19937_64& rng) {
  return mixup_batch(inputs_a, inputs_b, targets_a, targets_b, sample_beta(beta_a, beta_b, rng));
}

std::vector<bool> select_reliable(const Matrix& probs, const CandidateMask& candidates,
                                  std::span<const std::size_t> rows, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidArgument("select_reliable: rho must lie in [0, 1]");
  if (static_cast<std::size_t>(probs.rows()) != rows.size())
    throw InvalidArgument("select_reliable: one candidate row per probability row required");
  const std::size_t n = rows.size();
  const std::size_t l = candidates.labels();
  std::vector<std::vector<std::size_t>> by_class(l);
  std::vector<double> score(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < l; ++j) {
      if (!candidates.test(rows[k], j)) continue;
      const double v = probs(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    score[k] = best;
    by_class[arg].push_back(k);
  }
  std::vector<bool> keep(n, false);
  for (auto& members : by_class) {
    if (members.empty()) continue;
    std::stable_sort(members.begin(), members.end(),
                     [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    const auto quota = static_cast<std::size_t>(std::ceil(rho * static_cast<double>(members.size()) - 1e-9));
    const std::size_t take = std::min(members.size(), std::max<std::size_t>(1, quota));
    for (std::size_t t = 0; t < take; ++t) keep[members[t]] = true;
  }
  return keep;
}

}  // namespace gbpll
