#pragma once

#include <cstdint>
#include <filesystem>

#include "gbpll/disambig.hpp"
#include "gbpll/model.hpp"
#include "gbpll/trainer.hpp"

namespace gbpll {

/// Everything needed to evaluate or inspect a trained model.
///
/// File layout: "GBCKPT1\n", key=value header lines (layer shapes, step count,
/// RNG seed, and every training config key prefixed "config."), a blank line,
/// then little-endian float64 blocks: w1, b1, w2, b2, the momentum buffers in
/// the same order, the prior (classes values) and the confidence matrix
/// (samples x classes, row-major).
struct Checkpoint {
  ClassifierParams params;
  ClassifierParams velocity;
  std::uint64_t steps = 0;
  TrainConfig config;
  ClassPrior prior;
  ConfidenceMatrix confidence;

  bool operator==(const Checkpoint& other) const;
};

Checkpoint make_checkpoint(const TrainResult& result, const TrainConfig& config);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gbpll
