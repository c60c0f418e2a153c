#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gbpll/common.hpp"
#include "gbpll/data.hpp"
#include "gbpll/disambig.hpp"
#include "gbpll/gbgraph.hpp"
#include "gbpll/gbspace.hpp"
#include "gbpll/model.hpp"

namespace gbpll {

enum class ConfidenceMode { kGbrip, kUniform };

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t pre_epochs = 20;
  std::size_t batch_size = 64;
  double learning_rate = 0.005;
  bool cosine = true;
  double sgd_momentum = 0.9;
  std::size_t hidden = 64;
  LossWeights weights{0.5, 0.5, 0.1};
  double prior_momentum_phase1 = 0.1;
  double prior_momentum_phase2 = 0.01;
  double rho_start = 0.2;
  double rho_end = 0.5;
  std::size_t rho_ramp_epochs = 50;
  bool selection = true;
  std::size_t rebuild_every = 5;
  bool use_graph = true;
  bool propagate = true;
  double propagate_alpha = 0.5;
  bool mixup = true;
  double mixup_beta = 4.0;
  ConfidenceMode confidence = ConfidenceMode::kGbrip;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument naming the offending key.
  void validate() const;

  /// Sets one key from its text form; throws InvalidArgument on unknown key or bad value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  /// All keys in canonical order.
  static const std::vector<std::string>& keys();
  static std::string describe(const std::string& key);

  /// key=value lines; '#' starts a comment.
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

/// Linear ramp from rho_start (epoch 0) to rho_end (epoch rho_ramp_epochs), flat after.
double rho_at(std::size_t epoch, const TrainConfig& config);
/// lr0 * 0.5 * (1 + cos(pi * epoch / epochs)) when cosine decay is on, else lr0.
double lr_at(std::size_t epoch, std::size_t epochs, const TrainConfig& config);

struct EpochRecord {
  int phase = 2;  // 1 = prior pre-estimation, 2 = main
  std::size_t epoch = 0;
  LossBreakdown loss;  // means over the epoch's batches
  std::optional<double> train_accuracy;
  Vector prior;
  std::size_t ball_count = 0;
  double learning_rate = 0.0;
  double rho = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> records;
  /// Prior at the end of phase 1, and the prior the main phase started from.
  Vector phase1_prior;
  Vector main_initial_prior;
};

/// Receives the full-training-set softmax after each epoch; may return a train
/// accuracy. This is how callers holding the true labels observe training.
using TrainMonitor = std::function<std::optional<double>(const Matrix& probs)>;

struct TrainResult {
  ClassifierParams params;
  SgdMomentum optimizer;
  ConfidenceMatrix confidence;
  ClassPrior prior;
  TrainReport report;
};

/// Two-phase training: a prior pre-estimation phase, then a re-initialized
/// main phase starting from the estimated prior.
TrainResult train(const TrainingView& data, const TrainConfig& config,
                  const TrainMonitor& monitor = {}, std::size_t threads = 1);

/// Line-delimited JSON: one record per epoch followed by a summary record.
std::string report_to_jsonl(const TrainReport& report);

}  // namespace gbpll
