// Acceptance gate: one PASS/FAIL line per criterion. Exit status is nonzero if
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "gbpll/cli.hpp"
#include "gbpll/data.hpp"
#include "gbpll/disambig.hpp"
#include "gbpll/evalrep.hpp"
#include "gbpll/gbgraph.hpp"
#include "gbpll/gbspace.hpp"
#include "gbpll/model.hpp"
#include "gbpll/trainer.hpp"

using namespace gbpll;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

CandidateMask random_mask(std::size_t n, std::size_t l, std::mt19937_64& rng) {
  CandidateMask m(n, l);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<std::size_t> pick(0, l - 1);
  for (std::size_t i = 0; i < n; ++i) {
    m.set(i, pick(rng));
    for (std::size_t j = 0; j < l; ++j)
      if (coin(rng)) m.set(i, j);
  }
  return m;
}

Matrix random_probs(std::size_t n, std::size_t l, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Matrix p(n, l);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < l; ++j) s += p(i, j) = u(rng);
    p.row(i) /= s;
  }
  return p;
}

// ---- 1 -------------------------------------------------------------------

Outcome gb_partition_suite() {
  const auto t0 = Clock::now();
  const std::size_t sizes[] = {50, 500, 2000};
  const std::size_t dims[] = {2, 16};
  std::size_t failures = 0, balls = 0;
  std::string first;
  for (int k = 0; k < 50; ++k) {
    std::mt19937_64 rng(mix_seed(101, k));
    const std::size_t n = sizes[k % 3], d = dims[(k / 3) % 2];
    Matrix x = random_matrix(n, d, rng);
    if (k % 5 == 0) x.topRows(n / 4).setConstant(0.5);  // duplicated points
    const auto space = build_gb_space(x, k);
    const auto bound = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n)) - 1e-12));
    std::vector<int> seen(n, 0);
    auto fail = [&](const std::string& why) {
      if (failures++ == 0) first = "dataset " + std::to_string(k) + ": " + why;
    };
    for (const auto& b : space.balls()) {
      ++balls;
      for (auto m : b.members) ++seen[m];
      if (!b.degenerate && b.members.size() > bound) fail("ball above size bound");
      Vector c = Vector::Zero(static_cast<Eigen::Index>(d));
      for (auto m : b.members) c += x.row(static_cast<Eigen::Index>(m)).transpose();
      c /= static_cast<double>(b.members.size());
      double r = 0.0;
      for (auto m : b.members) r = std::max(r, (x.row(static_cast<Eigen::Index>(m)).transpose() - c).norm());
      if ((c - b.center).cwiseAbs().maxCoeff() > 1e-9) fail("center mismatch");
      if (std::abs(r - b.radius) > 1e-9) fail("radius mismatch");
    }
    if (std::any_of(seen.begin(), seen.end(), [](int s) { return s != 1; })) fail("not a partition");
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failures == 0 && secs < 10.0;
  o.detail = "50 datasets, " + std::to_string(balls) + " balls, " + std::to_string(failures) +
             " violations, " + fmt("%.2f s", secs) + (first.empty() ? "" : " (" + first + ")");
  return o;
}

// ---- 2 -------------------------------------------------------------------

double nnls_objective(const Matrix& a, const Vector& x, const Vector& w) {
  return (x - a.transpose() * w).squaredNorm();
}

// Exact minimum by enumerating passive sets: the optimum is the unconstrained
// least-squares solution on its support.
double enumerate_nnls(const Matrix& a, const Vector& x) {
  const auto k = static_cast<int>(a.rows());
  double best = x.squaredNorm();
  for (int mask = 1; mask < (1 << k); ++mask) {
    std::vector<int> idx;
    for (int j = 0; j < k; ++j)
      if (mask >> j & 1) idx.push_back(j);
    Matrix sub(idx.size(), a.cols());
    for (std::size_t t = 0; t < idx.size(); ++t) sub.row(static_cast<Eigen::Index>(t)) = a.row(idx[t]);
    const Vector ws = sub.transpose().completeOrthogonalDecomposition().solve(x);
    if (ws.minCoeff() < 0.0) continue;
    Vector w = Vector::Zero(k);
    for (std::size_t t = 0; t < idx.size(); ++t) w[idx[t]] = ws[static_cast<Eigen::Index>(t)];
    best = std::min(best, nnls_objective(a, x, w));
  }
  return best;
}

// Projected gradient with step 1/L, stopped at a small projected-gradient norm.
double projected_gradient_nnls(const Matrix& a, const Vector& x) {
  const Matrix g = a * a.transpose();
  const Vector b = a * x;
  const double lip = std::max(g.operatorNorm(), 1e-12);
  Vector w = Vector::Zero(a.rows());
  for (int it = 0; it < 2000000; ++it) {
    const Vector grad = g * w - b;
    const Vector next = (w - grad / lip).cwiseMax(0.0);
    if ((next - w).norm() < 1e-15) {
      w = next;
      break;
    }
    w = next;
  }
  return nnls_objective(a, x, w);
}

Outcome nnls_oracle_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> kdist(1, 8), ddist(1, 8);
  double worst_gap = 0.0, worst_kkt = 0.0;
  int pg_checked = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const int k = kdist(rng), d = ddist(rng);
    Matrix x = random_matrix(static_cast<std::size_t>(k) + 1, static_cast<std::size_t>(d), rng);
    std::vector<std::size_t> nb(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) nb[static_cast<std::size_t>(j)] = static_cast<std::size_t>(j) + 1;
    const Vector w = reconstruction_weights(x, 0, nb);
    const Matrix a = x.bottomRows(k);
    const Vector target = x.row(0).transpose();

    const double obj = nnls_objective(a, target, w);
    double oracle = enumerate_nnls(a, target);
    if (inst % 4 == 0) {
      oracle = std::min(oracle, projected_gradient_nnls(a, target));
      ++pg_checked;
    }
    worst_gap = std::max(worst_gap, obj - oracle);

    const Vector grad = a * (a.transpose() * w - target);
    for (int j = 0; j < k; ++j) {
      worst_kkt = std::max(worst_kkt, -w[j]);
      worst_kkt = std::max(worst_kkt, w[j] > 0.0 ? std::abs(grad[j]) : -grad[j]);
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_gap <= 1e-6 && worst_kkt <= 1e-6 && secs < 5.0;
  o.detail = "200 instances (" + std::to_string(pg_checked) + " also vs projected gradient), max objective gap " +
             fmt("%.2e", worst_gap) + ", max KKT residual " + fmt("%.2e", worst_kkt) + ", " +
             fmt("%.2f s", secs);
  return o;
}

// ---- 3 -------------------------------------------------------------------

bool outside_candidates_zero(const Matrix& p, const CandidateMask& c) {
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double in = 0.0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
      if (!c.test(ui, uj) && p(i, j) != 0.0) return false;
      if (p(i, j) < 0.0) return false;
      if (c.test(ui, uj)) in += p(i, j);
    }
    if (!(in > 0.0)) return false;
  }
  return true;
}

Outcome disambiguation_algebra() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> ndist(5, 40), ldist(2, 10);
  std::uniform_real_distribution<double> sdist(0.5, 3.0), cdist(0.01, 100.0);
  int identical = 0, support_ok = 0;
  double worst_scale = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = ndist(rng), l = ldist(rng);
    const auto mask = random_mask(n, l, rng);
    const auto probs = random_probs(n, l, rng);
    std::vector<double> w(n);
    for (auto& s : w) s = sdist(rng);
    ClassPrior prior = init_uniform_prior(l);
    prior.values = random_probs(1, l, rng).row(0).transpose();

    const auto p8 = init_confidence(mask, probs, w);
    const auto p12 = update_confidence(mask, probs, w, prior, 0.0);
    if (p8.values.size() == p12.values.size() &&
        std::memcmp(p8.values.data(), p12.values.data(), sizeof(double) * static_cast<std::size_t>(p8.values.size())) == 0)
      ++identical;

    const auto pa = update_confidence(mask, probs, w, prior, 0.1);
    ClassPrior scaled = prior;
    scaled.values *= cdist(rng);
    const auto pb = update_confidence(mask, probs, w, scaled, 0.1);
    worst_scale = std::max(worst_scale, (pa.values - pb.values).cwiseAbs().maxCoeff());

    // Propagation over a graph built on random features.
    const Matrix x = random_matrix(n, 3, rng);
    const auto graph = build_graph(build_gb_space(x, inst), x);
    const auto pp = propagate_confidence(graph, pa, mask, 0.5);
    if (outside_candidates_zero(p8.values, mask) && outside_candidates_zero(pa.values, mask) &&
        outside_candidates_zero(pp.values, mask))
      ++support_ok;
  }
  Outcome o;
  o.pass = identical == 100 && support_ok == 100 && worst_scale <= 1e-12;
  o.detail = std::to_string(identical) + "/100 bit-identical at lambda3=0, " + std::to_string(support_ok) +
             "/100 support preserved, max prior-rescale diff " + fmt("%.2e", worst_scale);
  return o;
}

// ---- 4 -------------------------------------------------------------------

Outcome prior_contraction() {
  const std::size_t n = 100;
  std::mt19937_64 rng(404);
  CandidateMask mask(n, 2);
  Matrix probs = Matrix::Zero(n, 2);
  std::bernoulli_distribution extra(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i < 80 ? 0 : 1;
    mask.set(i, y);
    if (extra(rng)) mask.set(i, 1 - y);
    probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(y)) = 1.0;
  }
  const Vector e = (Vector(2) << 0.8, 0.2).finished();
  ClassPrior u = init_uniform_prior(2, 0.5);
  double worst_ratio = 0.0;
  bool ok = true;
  for (int k = 0; k <= 10; ++k) {
    const double err = (u.values - e).cwiseAbs().maxCoeff();
    const double bound = 0.3 * std::pow(0.5, k);
    worst_ratio = std::max(worst_ratio, err / bound);
    if (err > bound * (1.0 + 1e-12)) ok = false;
    u = update_prior(u, mask, probs);
  }
  Outcome o;
  o.pass = ok;
  o.detail = "max error/bound over k=0..10: " + fmt("%.6f", worst_ratio);
  return o;
}

// ---- 5 -------------------------------------------------------------------

Outcome gradient_check() {
  std::mt19937_64 rng(505);
  const LossWeights lw{0.5, 0.5, 0.1};
  double worst = 0.0;
  std::size_t params_n = 0;
  for (int b = 0; b < 20; ++b) {
    const std::size_t in = 4, hid = 8, l = 3, m = 6;
    auto params = ClassifierParams::random(in, hid, l, mix_seed(505, b));
    params_n = params.parameter_count();
    std::normal_distribution<double> nd(0.0, 0.3);
    for (auto blk : params.blocks())
      for (auto& v : blk) v += nd(rng);
    Batch batch;
    batch.inputs = random_matrix(m, in, rng);
    const auto mask = random_mask(m, l, rng);
    batch.targets = init_confidence(mask, random_probs(m, l, rng), std::vector<double>(m, 1.3)).values;
    batch.centers = random_matrix(m, hid, rng, 0.5);
    batch.ce_mask.assign(m, true);
    batch.ce_mask[static_cast<std::size_t>(b) % m] = false;
    ClassPrior prior = init_uniform_prior(l);
    prior.values = random_probs(1, l, rng).row(0).transpose();

    ClassifierParams grad = ClassifierParams::zeros(in, hid, l);
    batch_gradient(params, batch, prior, lw, grad);
    auto pb = params.blocks();
    auto gb = std::as_const(grad).blocks();
    const double h = 1e-5;
    for (std::size_t k = 0; k < pb.size(); ++k) {
      for (std::size_t t = 0; t < pb[k].size(); ++t) {
        const double saved = pb[k][t];
        pb[k][t] = saved + h;
        const double up = batch_loss(params, batch, prior, lw).total;
        pb[k][t] = saved - h;
        const double down = batch_loss(params, batch, prior, lw).total;
        pb[k][t] = saved;
        const double num = (up - down) / (2 * h);
        const double ana = gb[k][t];
        const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6});
        worst = std::max(worst, rel);
      }
    }
  }
  Outcome o;
  o.pass = worst <= 1e-4 && params_n <= 500;
  o.detail = "20 batches, " + std::to_string(params_n) + " parameters, max relative error " + fmt("%.2e", worst);
  return o;
}

// ---- 6 -------------------------------------------------------------------

Outcome supervised_reduction() {
  const auto t0 = Clock::now();
  const auto ds = make_longtail_dataset({2, 100, 1.0, 0.0, 606}, 2, 8.0, 1.0);
  TrainConfig cfg;
  cfg.weights.lambda2 = 0.0;
  cfg.weights.lambda3 = 0.0;
  cfg.epochs = 200;
  cfg.seed = 606;
  const auto& labels = ds.true_labels();
  double last = 0.0, best = 0.0;
  TrainMonitor monitor = [&](const Matrix& probs) -> std::optional<double> {
    std::size_t hit = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      Eigen::Index arg;
      probs.row(i).maxCoeff(&arg);
      if (static_cast<std::uint32_t>(arg) == labels[static_cast<std::size_t>(i)]) ++hit;
    }
    last = static_cast<double>(hit) / static_cast<double>(probs.rows());
    best = std::max(best, last);
    return last;
  };
  train(ds.training_view(), cfg, monitor);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = last >= 0.99 && secs < 30.0;
  o.detail = "final train accuracy " + fmt("%.4f", last) + " (best " + fmt("%.4f", best) + "), " +
             fmt("%.2f s", secs);
  return o;
}

// ---- 7 and 8 -------------------------------------------------------------

constexpr double kSeparation = 2.75;
constexpr double kNoise = 1.0;

PllDataset balanced_test_set(std::size_t classes) {
  return make_longtail_dataset({classes, 300, 1.0, 0.0, 999}, 2, kSeparation, kNoise);
}

EvalReport train_and_eval(const PllDataset& train_set, const PllDataset& test, TrainConfig cfg) {
  const auto result = train(train_set.training_view(), cfg);
  return evaluate(result.params, test, train_set.class_counts());
}

TrainConfig ablation_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.weights.lambda2 = 0.0;
  cfg.weights.lambda3 = 0.0;
  cfg.use_graph = false;
  cfg.confidence = ConfidenceMode::kUniform;
  cfg.seed = seed;
  return cfg;
}

Outcome imbalanced_trend() {
  const auto t0 = Clock::now();
  const auto test = balanced_test_set(3);
  std::vector<double> full_all, full_few, abl_all, abl_few;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto tr = make_longtail_dataset({3, 300, 25.0, 0.4, seed}, 2, kSeparation, kNoise);
    TrainConfig full;
    full.seed = seed;
    const auto rf = train_and_eval(tr, test, full);
    const auto ra = train_and_eval(tr, test, ablation_config(seed));
    full_all.push_back(100 * rf.overall_accuracy);
    full_few.push_back(100 * rf.group_accuracy[2].value_or(0.0));
    abl_all.push_back(100 * ra.overall_accuracy);
    abl_few.push_back(100 * ra.group_accuracy[2].value_or(0.0));
  }
  const double secs = seconds_since(t0);
  const double d_all = median(full_all) - median(abl_all);
  const double d_few = median(full_few) - median(abl_few);
  Outcome o;
  o.pass = d_all >= 5.0 && d_few >= 10.0 && secs < 300.0;
  o.detail = "median overall " + fmt("%.2f", median(full_all)) + " vs " + fmt("%.2f", median(abl_all)) +
             " (+" + fmt("%.2f", d_all) + "), few " + fmt("%.2f", median(full_few)) + " vs " +
             fmt("%.2f", median(abl_few)) + " (+" + fmt("%.2f", d_few) + "), " + fmt("%.1f s", secs);
  return o;
}

Outcome difficulty_trends() {
  const auto t0 = Clock::now();
  const auto test = balanced_test_set(3);
  auto median_acc = [&](double gamma, double psi) {
    std::vector<double> acc;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto tr = make_longtail_dataset({3, 300, gamma, psi, seed}, 2, kSeparation, kNoise);
      TrainConfig cfg;
      cfg.seed = seed;
      acc.push_back(100 * train_and_eval(tr, test, cfg).overall_accuracy);
    }
    return median(acc);
  };
  std::vector<double> by_gamma, by_psi;
  for (double g : {5.0, 20.0, 50.0}) by_gamma.push_back(median_acc(g, 0.4));
  for (double p : {0.2, 0.4, 0.6}) by_psi.push_back(median_acc(20.0, p));
  const double secs = seconds_since(t0);
  const bool g_ok = by_gamma[0] >= by_gamma[1] && by_gamma[1] >= by_gamma[2];
  const bool p_ok = by_psi[0] >= by_psi[1] && by_psi[1] >= by_psi[2];
  Outcome o;
  o.pass = g_ok && p_ok && secs < 900.0;
  auto list = [](const std::vector<double>& v) {
    return fmt("%.2f", v[0]) + " / " + fmt("%.2f", v[1]) + " / " + fmt("%.2f", v[2]);
  };
  o.detail = "gamma 5/20/50 at psi=0.4: " + list(by_gamma) + "; psi 0.2/0.4/0.6 at gamma=20: " + list(by_psi) +
             ", " + fmt("%.1f s", secs);
  return o;
}

// ---- 9 -------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  return cli::run(args, out, err);
}

Outcome determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("gbpll_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto p = [&](const std::string& name) { return (dir / name).string(); };
  std::vector<std::string> runs;
  bool ok = true;
  for (const std::string threads : {"1", "1", "4"}) {
    const std::string tag = std::to_string(runs.size());
    ok &= run_cli({"synth", "--classes", "3", "--max-count", "120", "--gamma", "10", "--psi", "0.3", "--seed",
                   "9", "--out", p("tr" + tag)}) == 0;
    ok &= run_cli({"synth", "--classes", "3", "--max-count", "100", "--gamma", "1", "--seed", "99", "--out",
                   p("te" + tag)}) == 0;
    ok &= run_cli({"train", "--data", p("tr" + tag), "--out", p("ck" + tag), "--epochs", "15", "--pre-epochs",
                   "3", "--seed", "5", "--threads", threads}) == 0;
    ok &= run_cli({"eval", "--checkpoint", p("ck" + tag), "--data", p("te" + tag), "--train-data",
                   p("tr" + tag), "--out", p("ev" + tag)}) == 0;
    runs.push_back(slurp(p("tr" + tag)) + slurp(p("ck" + tag)) + slurp(p("ck" + tag + ".report.jsonl")) +
                   slurp(p("ev" + tag)));
  }
  fs::remove_all(dir);
  const bool same_run = runs[0] == runs[1];
  const bool same_threads = runs[0] == runs[2];
  Outcome o;
  o.pass = ok && same_run && same_threads && !runs[0].empty();
  o.detail = std::string("pipeline exit codes ") + (ok ? "ok" : "NOT ok") + ", repeat run " +
             (same_run ? "identical" : "differs") + ", threads=4 " + (same_threads ? "identical" : "differs");
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gb partition suite", gb_partition_suite},
      {"nnls oracle equivalence", nnls_oracle_suite},
      {"disambiguation algebra", disambiguation_algebra},
      {"prior convergence", prior_contraction},
      {"gradient check", gradient_check},
      {"supervised reduction", supervised_reduction},
      {"imbalanced pll trend vs ablation", imbalanced_trend},
      {"monotone difficulty trends", difficulty_trends},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
