#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gbpll/data.hpp"
#include "gbpll/disambig.hpp"
#include "gbpll/model.hpp"

namespace gbpll {

enum class ShotGroup { kMany = 0, kMedium = 1, kFew = 2 };

inline constexpr std::array<const char*, 3> kShotGroupNames = {"many", "medium", "few"};

/// Rule used to split classes into shot groups; recorded in every report.
inline constexpr const char* kShotSplitRule =
    "classes sorted by training count (descending, ties by index); first floor(L/3) = many, "
    "last floor(L/3) = few, rest = medium";

struct EvalReport {
  double overall_accuracy = 0.0;
  std::size_t test_count = 0;
  std::array<std::optional<double>, 3> group_accuracy;
  std::array<std::vector<std::size_t>, 3> group_classes;
  std::vector<std::optional<double>> per_class_accuracy;  // nullopt: no test samples
  std::vector<std::size_t> per_class_count;               // test samples per class
  std::vector<std::size_t> train_class_count;
  std::optional<double> disambiguation_rate;
  std::optional<double> prior_error;
};

/// Unrestricted argmax of the softmax, ties to the lowest label.
std::vector<std::size_t> predict(const ClassifierParams& params, const Matrix& features);

/// Many/Medium/Few class lists from training-set class counts.
std::array<std::vector<std::size_t>, 3> shot_groups(std::span<const std::size_t> train_counts);

/// Accuracy overall, per class and per shot group on a labeled test set.
EvalReport evaluate(const ClassifierParams& params, const PllDataset& test,
                    std::span<const std::size_t> train_counts);

/// Fraction of rows whose confidence argmax (ties to lowest label) equals the true label.
double disambiguation_rate(const ConfidenceMatrix& p, std::span<const std::uint32_t> true_labels);

/// l1 distance between the estimated prior and empirical class frequencies.
double prior_error(const ClassPrior& prior, std::span<const std::size_t> class_counts);

/// Fills disambiguation_rate and prior_error from the training state.
void attach_training_diagnostics(EvalReport& report, const ConfidenceMatrix& p,
                                 const ClassPrior& prior, const PllDataset& train);

std::string eval_report_to_jsonl(const EvalReport& report);
EvalReport eval_report_from_jsonl(const std::string& text);
std::string eval_report_to_text(const EvalReport& report);

struct NamedReport {
  std::string name;
  EvalReport report;
};
/// Fixed-width comparison table, one row per run.
std::string render_comparison(std::span<const NamedReport> runs);

}  // namespace gbpll
