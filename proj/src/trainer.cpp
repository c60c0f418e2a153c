#include "gbpll/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace gbpll {

namespace {

// Sub-seed streams.
constexpr std::uint64_t kInitStream = 0x100;
constexpr std::uint64_t kSpaceStream = 0x200;
constexpr std::uint64_t kEpochStream = 0x300;

// Floor applied to the prior before tempering and in the prior term; a class
// that is never predicted would otherwise drive u_j to 0.
constexpr double kPriorFloor = 1e-6;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const auto x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw InvalidArgument("config key '" + key + "': expected a nonnegative integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw InvalidArgument("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw InvalidArgument("config key '" + key + "': expected true/false, got '" + v + "'");
}

struct KeyInfo {
  std::string name;
  std::string help;
};

const std::vector<KeyInfo>& key_table() {
  static const std::vector<KeyInfo> table = {
      {"epochs", "main-phase epochs"},
      {"pre_epochs", "prior pre-estimation epochs (0 skips the phase)"},
      {"batch_size", "mini-batch size"},
      {"learning_rate", "initial SGD learning rate"},
      {"cosine", "cosine learning-rate decay"},
      {"sgd_momentum", "SGD momentum"},
      {"hidden", "hidden-layer width (feature space of the granular balls)"},
      {"lambda1", "weight of the cross-entropy term"},
      {"lambda2", "weight of the multi-center term"},
      {"lambda3", "weight of the prior term / tempering exponent"},
      {"prior_momentum_phase1", "prior moving-average momentum in phase 1"},
      {"prior_momentum_phase2", "prior moving-average momentum in the main phase"},
      {"rho_start", "reliable-sample fraction at epoch 0"},
      {"rho_end", "reliable-sample fraction after the ramp"},
      {"rho_ramp_epochs", "epochs of the linear rho ramp"},
      {"selection", "reliable-sample selection"},
      {"rebuild_every", "epochs between granular-ball rebuilds"},
      {"use_graph", "use granular-ball graph supports (off: every support is 1)"},
      {"propagate", "propagate confidence over the graph after each update"},
      {"propagate_alpha", "propagation mixing weight"},
      {"mixup", "mixup augmentation"},
      {"mixup_beta", "Beta(a, a) parameter for the mixup coefficient"},
      {"confidence", "confidence mode: gbrip | uniform"},
      {"seed", "master RNG seed"},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& k : key_table()) out.push_back(k.name);
    return out;
  }();
  return names;
}

std::string TrainConfig::describe(const std::string& key) {
  for (const auto& k : key_table())
    if (k.name == key) return k.help;
  throw InvalidArgument("unknown config key '" + key + "'");
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "epochs") epochs = parse_size(key, v);
  else if (key == "pre_epochs") pre_epochs = parse_size(key, v);
  else if (key == "batch_size") batch_size = parse_size(key, v);
  else if (key == "learning_rate") learning_rate = parse_real(key, v);
  else if (key == "cosine") cosine = parse_bool(key, v);
  else if (key == "sgd_momentum") sgd_momentum = parse_real(key, v);
  else if (key == "hidden") hidden = parse_size(key, v);
  else if (key == "lambda1") weights.lambda1 = parse_real(key, v);
  else if (key == "lambda2") weights.lambda2 = parse_real(key, v);
  else if (key == "lambda3") weights.lambda3 = parse_real(key, v);
  else if (key == "prior_momentum_phase1") prior_momentum_phase1 = parse_real(key, v);
  else if (key == "prior_momentum_phase2") prior_momentum_phase2 = parse_real(key, v);
  else if (key == "rho_start") rho_start = parse_real(key, v);
  else if (key == "rho_end") rho_end = parse_real(key, v);
  else if (key == "rho_ramp_epochs") rho_ramp_epochs = parse_size(key, v);
  else if (key == "selection") selection = parse_bool(key, v);
  else if (key == "rebuild_every") rebuild_every = parse_size(key, v);
  else if (key == "use_graph") use_graph = parse_bool(key, v);
  else if (key == "propagate") propagate = parse_bool(key, v);
  else if (key == "propagate_alpha") propagate_alpha = parse_real(key, v);
  else if (key == "mixup") mixup = parse_bool(key, v);
  else if (key == "mixup_beta") mixup_beta = parse_real(key, v);
  else if (key == "confidence") {
    if (v == "gbrip") confidence = ConfidenceMode::kGbrip;
    else if (v == "uniform") confidence = ConfidenceMode::kUniform;
    else throw InvalidArgument("config key 'confidence': expected gbrip or uniform, got '" + v + "'");
  } else if (key == "seed") seed = parse_size(key, v);
  else throw InvalidArgument("unknown config key '" + key + "'");
}

std::string TrainConfig::get(const std::string& key) const {
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  if (key == "epochs") return std::to_string(epochs);
  if (key == "pre_epochs") return std::to_string(pre_epochs);
  if (key == "batch_size") return std::to_string(batch_size);
  if (key == "learning_rate") return fmt(learning_rate);
  if (key == "cosine") return b(cosine);
  if (key == "sgd_momentum") return fmt(sgd_momentum);
  if (key == "hidden") return std::to_string(hidden);
  if (key == "lambda1") return fmt(weights.lambda1);
  if (key == "lambda2") return fmt(weights.lambda2);
  if (key == "lambda3") return fmt(weights.lambda3);
  if (key == "prior_momentum_phase1") return fmt(prior_momentum_phase1);
  if (key == "prior_momentum_phase2") return fmt(prior_momentum_phase2);
  if (key == "rho_start") return fmt(rho_start);
  if (key == "rho_end") return fmt(rho_end);
  if (key == "rho_ramp_epochs") return std::to_string(rho_ramp_epochs);
  if (key == "selection") return b(selection);
  if (key == "rebuild_every") return std::to_string(rebuild_every);
  if (key == "use_graph") return b(use_graph);
  if (key == "propagate") return b(propagate);
  if (key == "propagate_alpha") return fmt(propagate_alpha);
  if (key == "mixup") return b(mixup);
  if (key == "mixup_beta") return fmt(mixup_beta);
  if (key == "confidence") return confidence == ConfidenceMode::kGbrip ? "gbrip" : "uniform";
  if (key == "seed") return std::to_string(seed);
  throw InvalidArgument("unknown config key '" + key + "'");
}

void TrainConfig::validate() const {
  auto unit = [](const char* key, double v) {
    if (!(v >= 0.0 && v <= 1.0))
      throw InvalidArgument(std::string("config key '") + key + "' must lie in [0, 1]");
  };
  if (epochs + pre_epochs == 0) throw InvalidArgument("config: epochs + pre_epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("config key 'batch_size' must be >= 1");
  if (hidden < 1) throw InvalidArgument("config key 'hidden' must be >= 1");
  if (rebuild_every < 1) throw InvalidArgument("config key 'rebuild_every' must be >= 1");
  if (!(learning_rate >= 0.0)) throw InvalidArgument("config key 'learning_rate' must be >= 0");
  if (!(weights.lambda1 >= 0.0)) throw InvalidArgument("config key 'lambda1' must be >= 0");
  if (!(weights.lambda2 >= 0.0)) throw InvalidArgument("config key 'lambda2' must be >= 0");
  if (!(weights.lambda3 >= 0.0)) throw InvalidArgument("config key 'lambda3' must be >= 0");
  if (!(mixup_beta > 0.0)) throw InvalidArgument("config key 'mixup_beta' must be > 0");
  unit("sgd_momentum", sgd_momentum);
  unit("prior_momentum_phase1", prior_momentum_phase1);
  unit("prior_momentum_phase2", prior_momentum_phase2);
  unit("rho_start", rho_start);
  unit("rho_end", rho_end);
  unit("propagate_alpha", propagate_alpha);
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key=value");
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse(ss.str());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += k + "=" + get(k) + "\n";
  return out;
}

double rho_at(std::size_t epoch, const TrainConfig& config) {
  if (config.rho_ramp_epochs == 0 || epoch >= config.rho_ramp_epochs) return config.rho_end;
  const double t = static_cast<double>(epoch) / static_cast<double>(config.rho_ramp_epochs);
  return config.rho_start + t * (config.rho_end - config.rho_start);
}

double lr_at(std::size_t epoch, std::size_t epochs, const TrainConfig& config) {
  if (!config.cosine || epochs == 0) return config.learning_rate;
  const double t = static_cast<double>(epoch) / static_cast<double>(epochs);
  return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

namespace {

Matrix rows_of(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

ClassPrior floored(const ClassPrior& prior) {
  ClassPrior out = prior;
  out.values = out.values.cwiseMax(kPriorFloor);
  out.values /= out.values.sum();
  return out;
}

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.ce) && std::isfinite(l.mc) && std::isfinite(l.pr) && std::isfinite(l.total);
}

struct PhaseState {
  ClassifierParams params;
  SgdMomentum optimizer;
  ConfidenceMatrix confidence;
};

PhaseState run_phase(const TrainingView& data, const TrainConfig& config, int phase,
                     std::size_t epochs, ClassPrior& prior, const TrainMonitor& monitor,
                     std::size_t threads, TrainReport& report) {
  const auto n = data.sample_count();
  const auto& x = data.features();
  const auto& s = data.candidates();
  const bool need_space = config.use_graph || config.weights.lambda2 > 0.0;

  PhaseState st{ClassifierParams::random(data.dim(), config.hidden, data.class_count(),
                                         mix_seed(config.seed, kInitStream + static_cast<std::uint64_t>(phase))),
                SgdMomentum(config.sgd_momentum), {}};
  GbSpace space;
  GbGraph graph = empty_graph(n);

  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const std::uint64_t epoch_key = (static_cast<std::uint64_t>(phase) << 32) | epoch;
    ForwardPass full = forward(st.params, x);

    if (epoch % config.rebuild_every == 0 && need_space) {
      space = build_gb_space(full.hidden, mix_seed(config.seed, kSpaceStream + epoch_key));
      graph = config.use_graph ? build_graph(space, full.hidden, threads) : empty_graph(n);
    }
    if (epoch == 0) {
      st.confidence = config.confidence == ConfidenceMode::kUniform
                          ? uniform_confidence(s, graph.support)
                          : init_confidence(s, full.probs, graph.support);
    }

    const double lr = lr_at(epoch, epochs, config);
    const double rho = rho_at(epoch, config);
    const ClassPrior loss_prior = floored(prior);

    std::mt19937_64 rng(mix_seed(config.seed, kEpochStream + epoch_key));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    LossBreakdown epoch_loss;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::span<const std::size_t> rows(order.data() + start,
                                              std::min(config.batch_size, n - start));
      Batch main;
      main.inputs = rows_of(x, rows);
      main.targets = rows_of(st.confidence.values, rows);
      if (config.weights.lambda2 > 0.0) main.centers = gather_centers(space, rows);
      if (config.selection)
        main.ce_mask = select_reliable(forward(st.params, main.inputs).probs, s, rows, rho);

      std::vector<Batch> terms;
      terms.push_back(main);
      if (config.mixup) {
        std::vector<std::size_t> kept;
        for (std::size_t k = 0; k < rows.size(); ++k)
          if (main.ce_mask.empty() || main.ce_mask[k]) kept.push_back(k);
        std::vector<std::size_t> partner = kept;
        std::shuffle(partner.begin(), partner.end(), rng);
        const Matrix xa = rows_of(main.inputs, kept);
        const Matrix pa = rows_of(main.targets, kept);
        auto mixed = mixup_batch(xa, rows_of(main.inputs, partner), pa, rows_of(main.targets, partner),
                                 config.mixup_beta, config.mixup_beta, rng);
        Batch extra;
        extra.inputs = std::move(mixed.inputs);
        extra.targets = std::move(mixed.targets);
        terms.push_back(std::move(extra));
      }

      const auto loss = backward_step(st.params, terms, loss_prior, config.weights, lr, st.optimizer);
      if (!finite(loss))
        throw NumericalError("non-finite loss at phase " + std::to_string(phase) + " epoch " +
                             std::to_string(epoch) + " batch " + std::to_string(batches));
      epoch_loss.ce += loss.ce;
      epoch_loss.mc += loss.mc;
      epoch_loss.pr += loss.pr;
      epoch_loss.total += loss.total;
      ++batches;
    }
    if (batches > 0) {
      const auto b = static_cast<double>(batches);
      epoch_loss.ce /= b;
      epoch_loss.mc /= b;
      epoch_loss.pr /= b;
      epoch_loss.total /= b;
    }

    full = forward(st.params, x);
    if (!full.probs.allFinite())
      throw NumericalError("non-finite model output at phase " + std::to_string(phase) + " epoch " +
                           std::to_string(epoch));
    if (config.confidence == ConfidenceMode::kGbrip) {
      st.confidence = update_confidence(s, full.probs, graph.support, floored(prior),
                                        config.weights.lambda3);
      if (config.use_graph && config.propagate)
        st.confidence = propagate_confidence(graph, st.confidence, s, config.propagate_alpha);
    }
    prior = update_prior(prior, s, full.probs);

    EpochRecord rec;
    rec.phase = phase;
    rec.epoch = epoch;
    rec.loss = epoch_loss;
    if (monitor) rec.train_accuracy = monitor(full.probs);
    rec.prior = prior.values;
    rec.ball_count = need_space ? space.ball_count() : 0;
    rec.learning_rate = lr;
    rec.rho = rho;
    report.records.push_back(std::move(rec));
  }
  return st;
}

}  // namespace

TrainResult train(const TrainingView& data, const TrainConfig& config, const TrainMonitor& monitor,
                  std::size_t threads) {
  config.validate();
  if (data.sample_count() == 0) throw InvalidArgument("train: empty dataset");

  TrainResult result;
  ClassPrior prior = init_uniform_prior(data.class_count(), config.prior_momentum_phase1);
  std::optional<PhaseState> state;
  if (config.pre_epochs > 0)
    state = run_phase(data, config, 1, config.pre_epochs, prior, monitor, threads, result.report);
  result.report.phase1_prior = prior.values;

  prior.momentum = config.prior_momentum_phase2;
  result.report.main_initial_prior = prior.values;
  if (config.epochs > 0)
    state = run_phase(data, config, 2, config.epochs, prior, monitor, threads, result.report);

  result.params = std::move(state->params);
  result.optimizer = std::move(state->optimizer);
  result.confidence = std::move(state->confidence);
  result.prior = prior;
  return result;
}

std::string report_to_jsonl(const TrainReport& report) {
  using nlohmann::json;
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  std::string out;
  for (const auto& r : report.records) {
    json j;
    j["type"] = "epoch";
    j["phase"] = r.phase;
    j["epoch"] = r.epoch;
    j["loss_total"] = r.loss.total;
    j["loss_ce"] = r.loss.ce;
    j["loss_mc"] = r.loss.mc;
    j["loss_pr"] = r.loss.pr;
    j["train_accuracy"] = r.train_accuracy ? json(*r.train_accuracy) : json(nullptr);
    j["prior"] = vec(r.prior);
    j["ball_count"] = r.ball_count;
    j["learning_rate"] = r.learning_rate;
    j["rho"] = r.rho;
    out += j.dump() + "\n";
  }
  json summary;
  summary["type"] = "summary";
  summary["epochs_recorded"] = report.records.size();
  summary["phase1_prior"] = vec(report.phase1_prior);
  summary["main_initial_prior"] = vec(report.main_initial_prior);
  if (!report.records.empty()) {
    const auto& last = report.records.back();
    summary["final_loss_total"] = last.loss.total;
    summary["final_prior"] = vec(last.prior);
    summary["final_train_accuracy"] =
        last.train_accuracy ? json(*last.train_accuracy) : json(nullptr);
  }
  out += summary.dump() + "\n";
  return out;
}

}  // namespace gbpll
