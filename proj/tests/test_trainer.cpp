#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "gbpll/checkpoint.hpp"
#include "gbpll/data.hpp"
#include "gbpll/trainer.hpp"

using namespace gbpll;

namespace {

TrainConfig quick(std::size_t pre, std::size_t main) {
  TrainConfig c;
  c.pre_epochs = pre;
  c.epochs = main;
  c.seed = 3;
  return c;
}

TrainMonitor accuracy_of(const PllDataset& ds) {
  return [&ds](const Matrix& probs) -> std::optional<double> {
    std::size_t hit = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      Eigen::Index arg;
      probs.row(i).maxCoeff(&arg);
      hit += static_cast<std::uint32_t>(arg) == ds.true_labels()[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(hit) / static_cast<double>(probs.rows());
  };
}

}  // namespace

TEST_CASE("rho ramp") {
  const TrainConfig c;
  CHECK(rho_at(0, c) == doctest::Approx(0.2));
  CHECK(rho_at(50, c) == doctest::Approx(0.5));
  CHECK(rho_at(500, c) == doctest::Approx(0.5));
  CHECK(rho_at(25, c) == doctest::Approx(0.35));
}

TEST_CASE("cosine learning rate") {
  TrainConfig c;
  c.learning_rate = 0.2;
  CHECK(lr_at(0, 1000, c) == doctest::Approx(0.2));
  CHECK(lr_at(500, 1000, c) == doctest::Approx(0.1));
  CHECK(lr_at(999, 1000, c) < 1e-5);
  c.cosine = false;
  CHECK(lr_at(999, 1000, c) == 0.2);
}

TEST_CASE("phase one only") {
  const auto ds = make_longtail_dataset({3, 30, 3.0, 0.3, 1}, 2, 4.0, 1.0);
  const auto r = train(ds.training_view(), quick(1, 0));
  REQUIRE(r.report.records.size() == 1);
  CHECK(r.report.records[0].phase == 1);
  check_confidence(r.confidence, ds.candidates());
}

TEST_CASE("records cover both phases in order") {
  const auto ds = make_longtail_dataset({3, 30, 3.0, 0.3, 1}, 2, 4.0, 1.0);
  auto cfg = quick(2, 3);
  cfg.rebuild_every = 2;
  const auto r = train(ds.training_view(), cfg, accuracy_of(ds));
  REQUIRE(r.report.records.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) {
    const auto& rec = r.report.records[k];
    CHECK(rec.phase == (k < 2 ? 1 : 2));
    CHECK(rec.epoch == (k < 2 ? k : k - 2));
    CHECK(rec.train_accuracy.has_value());
    CHECK(rec.ball_count > 0);
    CHECK(rec.prior.sum() == doctest::Approx(1.0));
  }
  CHECK(r.report.main_initial_prior == r.report.phase1_prior);
  CHECK(r.report.records[1].prior == r.report.phase1_prior);
  CHECK(r.prior.momentum == cfg.prior_momentum_phase2);
  check_confidence(r.confidence, ds.candidates());

  const auto text = report_to_jsonl(r.report);
  CHECK(std::count(text.begin(), text.end(), '\n') == 6);
  CHECK(text.find("\"type\":\"summary\"") != std::string::npos);
}

TEST_CASE("supervised reduction fits separable blobs") {
  const auto ds = make_longtail_dataset({2, 60, 1.0, 0.0, 4}, 2, 8.0, 1.0);
  auto cfg = quick(0, 200);
  cfg.weights.lambda2 = 0.0;
  cfg.weights.lambda3 = 0.0;
  double last = 0.0;
  auto acc = accuracy_of(ds);
  train(ds.training_view(), cfg, [&](const Matrix& p) {
    last = *acc(p);
    return std::optional<double>(last);
  });
  CHECK(last == 1.0);
}

TEST_CASE("training is deterministic") {
  const auto ds = make_longtail_dataset({3, 40, 4.0, 0.4, 2}, 2, 3.0, 1.0);
  const auto cfg = quick(2, 4);
  const auto a = train(ds.training_view(), cfg);
  const auto b = train(ds.training_view(), cfg);
  const auto c = train(ds.training_view(), cfg, {}, 3);
  CHECK(report_to_jsonl(a.report) == report_to_jsonl(b.report));
  CHECK(report_to_jsonl(a.report) == report_to_jsonl(c.report));
  CHECK(a.params.w1 == b.params.w1);
  CHECK(a.confidence.values == c.confidence.values);

  auto other = cfg;
  other.seed = 4;
  CHECK(report_to_jsonl(train(ds.training_view(), other).report) != report_to_jsonl(a.report));
}

TEST_CASE("ablation mode keeps uniform confidence") {
  const auto ds = make_longtail_dataset({3, 30, 3.0, 0.5, 6}, 2, 4.0, 1.0);
  auto cfg = quick(1, 3);
  cfg.confidence = ConfidenceMode::kUniform;
  cfg.use_graph = false;
  cfg.weights.lambda2 = 0.0;
  cfg.weights.lambda3 = 0.0;
  const auto r = train(ds.training_view(), cfg);
  for (std::size_t i = 0; i < ds.sample_count(); ++i) {
    const double share = 1.0 / static_cast<double>(ds.candidates().count(i));
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(r.confidence.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) ==
            (ds.candidates().test(i, j) ? doctest::Approx(share) : doctest::Approx(0.0)));
  }
  for (const auto& rec : r.report.records) CHECK(rec.ball_count == 0);
}

TEST_CASE("config text round trip and errors") {
  TrainConfig c;
  c.epochs = 7;
  c.weights.lambda2 = 0.25;
  c.confidence = ConfidenceMode::kUniform;
  c.use_graph = false;
  const auto back = TrainConfig::parse(c.to_text());
  CHECK(back.to_text() == c.to_text());

  const auto parsed = TrainConfig::parse("# comment\nepochs = 12  # trailing\n\nlambda3=0.3\nmixup=false\n");
  CHECK(parsed.epochs == 12);
  CHECK(parsed.weights.lambda3 == doctest::Approx(0.3));
  CHECK_FALSE(parsed.mixup);

  CHECK_THROWS_AS(TrainConfig::parse("nonsense=1"), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig::parse("epochs=-3"), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig::parse("epochs"), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig::parse("use_graph=maybe"), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig::parse("confidence=magic"), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig::parse("rho_end=1.5").validate(), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig::parse("epochs=0\npre_epochs=0").validate(), InvalidArgument);
  for (const auto& k : TrainConfig::keys()) CHECK_FALSE(TrainConfig::describe(k).empty());
}

TEST_CASE("config file loading") {
  const auto p = std::filesystem::temp_directory_path() / "gbpll_test_trainer.cfg";
  {
    std::ofstream f(p);
    f << "hidden=8\nbatch_size=16\n";
  }
  const auto c = TrainConfig::load(p);
  CHECK(c.hidden == 8);
  CHECK(c.batch_size == 16);
  std::filesystem::remove(p);
  CHECK_THROWS_AS(TrainConfig::load(p), DataError);
}

TEST_CASE("checkpoint round trip") {
  const auto ds = make_longtail_dataset({3, 30, 3.0, 0.3, 8}, 2, 4.0, 1.0);
  const auto cfg = quick(1, 2);
  const auto r = train(ds.training_view(), cfg);
  const auto ck = make_checkpoint(r, cfg);
  const auto p = std::filesystem::temp_directory_path() / "gbpll_test_trainer.ckpt";
  save_checkpoint(ck, p);
  const auto back = load_checkpoint(p);
  CHECK(back == ck);
  CHECK(back.steps == r.optimizer.steps());
  CHECK(back.config.to_text() == cfg.to_text());

  // Truncated body.
  std::string bytes;
  {
    std::ifstream f(p, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(f), {});
  }
  {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << bytes.substr(0, bytes.size() - 8);
  }
  CHECK_THROWS_AS(load_checkpoint(p), DataError);
  std::filesystem::remove(p);
}
