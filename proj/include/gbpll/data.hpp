#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gbpll/common.hpp"

namespace gbpll {

/// N x L binary candidate mask stored as packed bit rows (bit j of a row is
/// byte j/8, bit j%8, least significant first).
class CandidateMask {
 public:
  CandidateMask() = default;
  CandidateMask(std::size_t rows, std::size_t labels);

  std::size_t rows() const { return rows_; }
  std::size_t labels() const { return labels_; }
  std::size_t bytes_per_row() const { return stride_; }

  bool test(std::size_t row, std::size_t label) const {
    return (bits_[row * stride_ + label / 8] >> (label % 8)) & 1U;
  }
  void set(std::size_t row, std::size_t label, bool value = true);

  std::size_t count(std::size_t row) const;
  std::span<const std::uint8_t> row_bytes(std::size_t row) const {
    return {bits_.data() + row * stride_, stride_};
  }
  std::span<std::uint8_t> row_bytes(std::size_t row) {
    return {bits_.data() + row * stride_, stride_};
  }

  /// Dense 0/1 matrix view, convenient for the numerical modules.
  Matrix dense() const;

  bool operator==(const CandidateMask&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t labels_ = 0;
  std::size_t stride_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Generation metadata carried in the dataset file header.
struct DatasetMeta {
  std::uint64_t seed = 0;
  double gamma = 1.0;
  double psi = 0.0;

  bool operator==(const DatasetMeta&) const = default;
};

/// What training code is allowed to see: features and candidate sets only.
class TrainingView {
 public:
  TrainingView(const Matrix& features, const CandidateMask& candidates)
      : features_(&features), candidates_(&candidates) {}

  const Matrix& features() const { return *features_; }
  const CandidateMask& candidates() const { return *candidates_; }
  std::size_t sample_count() const { return static_cast<std::size_t>(features_->rows()); }
  std::size_t class_count() const { return candidates_->labels(); }
  std::size_t dim() const { return static_cast<std::size_t>(features_->cols()); }

 private:
  const Matrix* features_;
  const CandidateMask* candidates_;
};

/// Partially labeled dataset. The true labels are evaluation-only and are
/// not reachable through training_view().
class PllDataset {
 public:
  PllDataset() = default;
  /// Validates the invariants; throws DataError naming the offending row.
  PllDataset(Matrix features, CandidateMask candidates, std::vector<std::uint32_t> true_labels,
             DatasetMeta meta = {});

  TrainingView training_view() const { return {features_, candidates_}; }

  const Matrix& features() const { return features_; }
  const CandidateMask& candidates() const { return candidates_; }
  const std::vector<std::uint32_t>& true_labels() const { return true_labels_; }
  const DatasetMeta& meta() const { return meta_; }

  std::size_t sample_count() const { return true_labels_.size(); }
  std::size_t class_count() const { return candidates_.labels(); }
  std::size_t dim() const { return static_cast<std::size_t>(features_.cols()); }

  /// Per-class sample counts from the true labels.
  std::vector<std::size_t> class_counts() const;

  bool operator==(const PllDataset& other) const;

 private:
  Matrix features_;
  CandidateMask candidates_;
  std::vector<std::uint32_t> true_labels_;
  DatasetMeta meta_;
};

struct LongTailSpec {
  std::size_t class_count = 10;
  std::size_t max_count = 5000;
  double imbalance_ratio = 100.0;
  double flip_prob = 0.0;
  std::uint64_t seed = 0;
};

/// Geometric class-size profile n_j = round(n_1 * gamma^(-j/(L-1))), floored at 1.
std::vector<std::size_t> longtail_counts(const LongTailSpec& spec);

/// Builds candidate sets: the true label plus each negative label independently
/// with probability flip_prob.
CandidateMask corrupt_labels(std::span<const std::uint32_t> true_labels, std::size_t class_count,
                             double flip_prob, std::uint64_t seed);

struct BlobSample {
  Matrix features;
  std::vector<std::uint32_t> labels;
};

/// Class centers used by synth_blobs. They depend only on (class_count, dim,
/// separation), so train and test files drawn with different seeds share them.
Matrix blob_centers(std::size_t class_count, std::size_t dim, double separation);

/// Isotropic Gaussian blobs, class k contributing class_counts[k] rows in class order.
BlobSample synth_blobs(std::span<const std::size_t> class_counts, std::size_t class_count,
                       std::size_t dim, double separation, double noise_scale,
                       std::uint64_t seed);

/// longtail_counts + synth_blobs + corrupt_labels with sub-seeds derived from spec.seed.
PllDataset make_longtail_dataset(const LongTailSpec& spec, std::size_t dim, double separation,
                                 double noise_scale);

void save_dataset(const PllDataset& ds, const std::filesystem::path& path);
PllDataset load_dataset(const std::filesystem::path& path);

}  // namespace gbpll
