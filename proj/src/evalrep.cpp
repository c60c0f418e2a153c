#include "gbpll/evalrep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace gbpll {

std::vector<std::size_t> predict(const ClassifierParams& params, const Matrix& features) {
  const auto probs = forward(params, features).probs;
  std::vector<std::size_t> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < probs.cols(); ++j)
      if (probs(i, j) > probs(i, arg)) arg = j;
    out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arg);
  }
  return out;
}

std::array<std::vector<std::size_t>, 3> shot_groups(std::span<const std::size_t> train_counts) {
  const std::size_t l = train_counts.size();
  std::vector<std::size_t> order(l);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return train_counts[a] > train_counts[b]; });
  const std::size_t third = l / 3;
  std::array<std::vector<std::size_t>, 3> groups;
  for (std::size_t r = 0; r < l; ++r) {
    const auto g = r < third ? 0 : (r >= l - third ? 2 : 1);
    groups[static_cast<std::size_t>(g)].push_back(order[r]);
  }
  return groups;
}

EvalReport evaluate(const ClassifierParams& params, const PllDataset& test,
                    std::span<const std::size_t> train_counts) {
  if (test.sample_count() == 0) throw InvalidArgument("evaluate: empty test set");
  if (test.dim() != params.input_dim())
    throw InvalidArgument("evaluate: test feature width " + std::to_string(test.dim()) +
                          " does not match model input " + std::to_string(params.input_dim()));
  const std::size_t l = params.class_count();
  if (train_counts.size() != l || test.class_count() != l)
    throw InvalidArgument("evaluate: class count mismatch");

  const auto pred = predict(params, test.features());
  EvalReport rep;
  rep.test_count = test.sample_count();
  rep.per_class_count.assign(l, 0);
  rep.train_class_count.assign(train_counts.begin(), train_counts.end());
  std::vector<std::size_t> correct(l, 0);
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto y = test.true_labels()[i];
    ++rep.per_class_count[y];
    if (pred[i] == y) {
      ++correct[y];
      ++total_correct;
    }
  }
  rep.overall_accuracy = static_cast<double>(total_correct) / static_cast<double>(pred.size());
  rep.per_class_accuracy.resize(l);
  for (std::size_t j = 0; j < l; ++j)
    if (rep.per_class_count[j] > 0)
      rep.per_class_accuracy[j] =
          static_cast<double>(correct[j]) / static_cast<double>(rep.per_class_count[j]);

  rep.group_classes = shot_groups(train_counts);
  for (std::size_t g = 0; g < 3; ++g) {
    std::size_t n = 0, c = 0;
    for (auto j : rep.group_classes[g]) {
      n += rep.per_class_count[j];
      c += correct[j];
    }
    if (n > 0) rep.group_accuracy[g] = static_cast<double>(c) / static_cast<double>(n);
  }
  return rep;
}

double disambiguation_rate(const ConfidenceMatrix& p, std::span<const std::uint32_t> true_labels) {
  if (p.rows() != true_labels.size()) throw InvalidArgument("disambiguation_rate: shape mismatch");
  if (p.rows() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    Eigen::Index arg = 0;
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 1; j < p.values.cols(); ++j)
      if (p.values(r, j) > p.values(r, arg)) arg = j;
    if (static_cast<std::uint32_t>(arg) == true_labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(p.rows());
}

double prior_error(const ClassPrior& prior, std::span<const std::size_t> class_counts) {
  if (static_cast<std::size_t>(prior.values.size()) != class_counts.size())
    throw InvalidArgument("prior_error: length mismatch");
  const double total = static_cast<double>(std::accumulate(class_counts.begin(), class_counts.end(), std::size_t{0}));
  double err = 0.0;
  for (std::size_t j = 0; j < class_counts.size(); ++j)
    err += std::abs(prior.values[static_cast<Eigen::Index>(j)] - static_cast<double>(class_counts[j]) / total);
  return err;
}

void attach_training_diagnostics(EvalReport& report, const ConfidenceMatrix& p,
                                 const ClassPrior& prior, const PllDataset& train) {
  report.disambiguation_rate = disambiguation_rate(p, train.true_labels());
  const auto counts = train.class_counts();
  report.prior_error = prior_error(prior, counts);
}

namespace {

using nlohmann::json;

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string pct(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
  return buf;
}

}  // namespace

std::string eval_report_to_jsonl(const EvalReport& r) {
  std::string out;
  json header{{"type", "header"}, {"split_rule", kShotSplitRule}};
  for (std::size_t g = 0; g < 3; ++g) header["classes_" + std::string(kShotGroupNames[g])] = r.group_classes[g];
  header["train_class_count"] = r.train_class_count;
  out += header.dump() + "\n";

  json summary{{"type", "summary"},
               {"overall_accuracy", r.overall_accuracy},
               {"test_count", r.test_count},
               {"disambiguation_rate", opt(r.disambiguation_rate)},
               {"prior_error", opt(r.prior_error)}};
  for (std::size_t g = 0; g < 3; ++g) summary[kShotGroupNames[g]] = opt(r.group_accuracy[g]);
  out += summary.dump() + "\n";

  for (std::size_t j = 0; j < r.per_class_accuracy.size(); ++j) {
    json c{{"type", "class"},
           {"class", j},
           {"accuracy", opt(r.per_class_accuracy[j])},
           {"test_count", r.per_class_count[j]}};
    out += c.dump() + "\n";
  }
  return out;
}

EvalReport eval_report_from_jsonl(const std::string& text) {
  EvalReport r;
  std::istringstream in(text);
  std::string line;
  bool saw_summary = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "header") {
        for (std::size_t g = 0; g < 3; ++g)
          r.group_classes[g] = j.at("classes_" + std::string(kShotGroupNames[g])).get<std::vector<std::size_t>>();
        r.train_class_count = j.at("train_class_count").get<std::vector<std::size_t>>();
      } else if (type == "summary") {
        saw_summary = true;
        r.overall_accuracy = j.at("overall_accuracy").get<double>();
        r.test_count = j.at("test_count").get<std::size_t>();
        r.disambiguation_rate = opt_from(j.at("disambiguation_rate"));
        r.prior_error = opt_from(j.at("prior_error"));
        for (std::size_t g = 0; g < 3; ++g) r.group_accuracy[g] = opt_from(j.at(kShotGroupNames[g]));
      } else if (type == "class") {
        const auto c = j.at("class").get<std::size_t>();
        if (r.per_class_accuracy.size() <= c) {
          r.per_class_accuracy.resize(c + 1);
          r.per_class_count.resize(c + 1, 0);
        }
        r.per_class_accuracy[c] = opt_from(j.at("accuracy"));
        r.per_class_count[c] = j.at("test_count").get<std::size_t>();
      }
    } catch (const json::exception& e) {
      throw DataError("eval report line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!saw_summary) throw DataError("eval report has no summary record");
  return r;
}

std::string eval_report_to_text(const EvalReport& r) {
  std::ostringstream os;
  os << "# shot groups: " << kShotSplitRule << "\n";
  os << "overall  " << pct(r.overall_accuracy) << "  (n=" << r.test_count << ")\n";
  for (std::size_t g = 0; g < 3; ++g) {
    os << kShotGroupNames[g] << std::string(9 - std::string(kShotGroupNames[g]).size(), ' ')
       << pct(r.group_accuracy[g]) << "  classes=[";
    for (std::size_t k = 0; k < r.group_classes[g].size(); ++k)
      os << (k ? "," : "") << r.group_classes[g][k];
    os << "]\n";
  }
  for (std::size_t j = 0; j < r.per_class_accuracy.size(); ++j)
    os << "class " << j << "  " << pct(r.per_class_accuracy[j]) << "  (n=" << r.per_class_count[j] << ")\n";
  if (r.disambiguation_rate) os << "disambiguation  " << pct(r.disambiguation_rate) << "\n";
  if (r.prior_error) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *r.prior_error);
    os << "prior_error  " << buf << "\n";
  }
  return os.str();
}

std::string render_comparison(std::span<const NamedReport> runs) {
  std::size_t width = 3;
  for (const auto& r : runs) width = std::max(width, r.name.size());
  std::ostringstream os;
  auto cell = [&](const std::string& s) { os << std::string(9 - std::min<std::size_t>(9, s.size()), ' ') << s; };
  os << "run" << std::string(width - 3, ' ');
  for (const char* h : {"all", "many", "medium", "few", "disamb", "prior_l1"}) cell(h);
  os << "\n";
  for (const auto& run : runs) {
    const auto& r = run.report;
    os << run.name << std::string(width - run.name.size(), ' ');
    cell(pct(r.overall_accuracy));
    for (std::size_t g = 0; g < 3; ++g) cell(pct(r.group_accuracy[g]));
    cell(pct(r.disambiguation_rate));
    if (r.prior_error) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", *r.prior_error);
      cell(buf);
    } else {
      cell("-");
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace gbpll
