#include "gbpll/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <vector>

#include <CLI11.hpp>

#include "gbpll/checkpoint.hpp"
#include "gbpll/data.hpp"
#include "gbpll/evalrep.hpp"
#include "gbpll/gbgraph.hpp"
#include "gbpll/gbspace.hpp"
#include "gbpll/trainer.hpp"

namespace gbpll::cli {

namespace {

namespace fs = std::filesystem;

std::string flag_name(const std::string& key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f << text;
  if (!f) throw DataError("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open file: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string sig6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::size_t default_threads() {
  if (const char* env = std::getenv("GBPLL_THREADS")) {
    try {
      const auto t = std::stoul(env);
      if (t >= 1) return t;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

struct SynthArgs {
  std::size_t classes = 3;
  std::size_t max_count = 300;
  double gamma = 1.0;
  double psi = 0.0;
  std::size_t dim = 2;
  double separation = 4.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
  std::string out;
};

int do_synth(const SynthArgs& a, std::ostream& out) {
  LongTailSpec spec{a.classes, a.max_count, a.gamma, a.psi, a.seed};
  const auto ds = make_longtail_dataset(spec, a.dim, a.separation, a.noise);
  save_dataset(ds, a.out);
  const auto counts = ds.class_counts();
  out << "wrote " << a.out << " n=" << ds.sample_count() << " counts=[";
  for (std::size_t j = 0; j < counts.size(); ++j) out << (j ? "," : "") << counts[j];
  out << "]\n";
  return kOk;
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  std::string report;
  std::size_t threads = 1;
  std::map<std::string, std::string> overrides;
};

int do_train(const TrainArgs& a, const std::map<std::string, CLI::Option*>& key_opts, std::ostream& out) {
  const auto ds = load_dataset(a.data);
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : TrainConfig::load(a.config);
  for (const auto& [key, opt] : key_opts)
    if (opt->count() > 0) cfg.set(key, a.overrides.at(key));
  cfg.validate();

  // The monitor is the only place the true labels are read during training.
  const auto& labels = ds.true_labels();
  TrainMonitor monitor = [&labels](const Matrix& probs) -> std::optional<double> {
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      Eigen::Index arg = 0;
      for (Eigen::Index j = 1; j < probs.cols(); ++j)
        if (probs(i, j) > probs(i, arg)) arg = j;
      if (static_cast<std::uint32_t>(arg) == labels[static_cast<std::size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(probs.rows());
  };
  const auto result = train(ds.training_view(), cfg, monitor, a.threads);
  save_checkpoint(make_checkpoint(result, cfg), a.out);
  const std::string report_path = a.report.empty() ? a.out + ".report.jsonl" : a.report;
  write_file(report_path, report_to_jsonl(result.report));
  out << "wrote " << a.out << " and " << report_path << " (" << result.report.records.size()
      << " epochs)\n";
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string train_data;
  std::string out;
};

int do_eval(const EvalArgs& a, std::ostream& out) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  const auto test = load_dataset(a.data);
  EvalReport rep;
  if (!a.train_data.empty()) {
    const auto train_ds = load_dataset(a.train_data);
    const auto counts = train_ds.class_counts();
    rep = evaluate(ckpt.params, test, counts);
    if (ckpt.confidence.rows() != train_ds.sample_count())
      throw DataError(a.train_data + ": " + std::to_string(train_ds.sample_count()) +
                      " rows but checkpoint confidence has " + std::to_string(ckpt.confidence.rows()));
    attach_training_diagnostics(rep, ckpt.confidence, ckpt.prior, train_ds);
  } else {
    const auto counts = test.class_counts();
    rep = evaluate(ckpt.params, test, counts);
  }
  write_file(a.out, eval_report_to_jsonl(rep));
  out << eval_report_to_text(rep);
  return kOk;
}

struct InspectArgs {
  std::string checkpoint;
  std::string data;
  bool graph = false;
  bool confidence = false;
  std::string out;
  std::size_t threads = 1;
};

int do_inspect(const InspectArgs& a, std::ostream& out) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  const auto ds = load_dataset(a.data);
  const auto hidden = forward(ckpt.params, ds.features()).hidden;
  const auto space = build_gb_space(hidden, ckpt.config.seed);

  std::ostringstream os;
  std::map<std::size_t, std::size_t> histogram;
  for (std::size_t b = 0; b < space.ball_count(); ++b) {
    const auto& ball = space.balls()[b];
    os << "ball " << b << " size=" << ball.members.size() << " radius=" << sig6(ball.radius)
       << " center_norm=" << sig6(ball.center.norm()) << (ball.degenerate ? " degenerate" : "")
       << "\n";
    ++histogram[ball.members.size()];
  }
  os << "summary balls=" << space.ball_count() << " samples=" << space.total_count()
     << " threshold=" << space.split_threshold() << " sizes={";
  bool first = true;
  for (const auto& [size, count] : histogram) {
    os << (first ? "" : ",") << size << ":" << count;
    first = false;
  }
  os << "}\n";

  if (a.graph) {
    const auto g = build_graph(space, hidden, a.threads);
    for (std::size_t i = 0; i < g.sample_count(); ++i)
      for (std::size_t k = 0; k < g.neighbors[i].size(); ++k)
        os << "edge " << i << " " << g.neighbors[i][k] << " " << sig6(g.weights[i][static_cast<Eigen::Index>(k)]) << "\n";
    for (const auto& [key, w] : g.ball_edges)
      os << "balledge " << key.first << " " << key.second << " " << sig6(w) << "\n";
  }
  if (a.confidence) {
    if (ckpt.confidence.rows() != ds.sample_count())
      throw DataError(a.data + ": " + std::to_string(ds.sample_count()) +
                      " rows but checkpoint confidence has " + std::to_string(ckpt.confidence.rows()));
    for (std::size_t i = 0; i < ckpt.confidence.rows(); ++i) {
      os << i << ":";
      bool first_label = true;
      for (std::size_t j = 0; j < ckpt.confidence.labels(); ++j) {
        if (!ds.candidates().test(i, j)) continue;
        os << (first_label ? " " : ", ") << j << "="
           << sig6(ckpt.confidence.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        first_label = false;
      }
      os << "\n";
    }
  }
  if (!a.out.empty()) write_file(a.out, os.str());
  out << os.str();
  return kOk;
}

int do_report(const std::vector<std::string>& runs, const std::string& out_path, std::ostream& out) {
  std::vector<NamedReport> reports;
  for (const auto& path : runs) {
    try {
      reports.push_back({fs::path(path).filename().string(), eval_report_from_jsonl(read_file(path))});
    } catch (const DataError& e) {
      throw DataError(path + ": " + e.what());
    }
  }
  const auto table = render_comparison(reports);
  if (!out_path.empty()) write_file(out_path, table);
  out << table;
  return kOk;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Granular-ball imbalanced partial-label learning", "gbpll"};
  app.require_subcommand(1);
  app.fallthrough(false);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a long-tailed partially labeled dataset");
  synth_cmd->add_option("--classes", synth.classes, "number of classes")->capture_default_str();
  synth_cmd->add_option("--max-count", synth.max_count, "samples in the largest class")->capture_default_str();
  synth_cmd->add_option("--gamma", synth.gamma, "imbalance ratio n_1/n_L")->capture_default_str();
  synth_cmd->add_option("--psi", synth.psi, "flip probability of each negative label")->capture_default_str();
  synth_cmd->add_option("--dim", synth.dim, "feature dimension")->capture_default_str();
  synth_cmd->add_option("--separation", synth.separation, "minimum distance between class centers")->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise, "isotropic noise scale")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "RNG seed")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "output dataset file")->required();

  TrainArgs tr;
  tr.threads = default_threads();
  auto* train_cmd = app.add_subcommand("train", "Train a classifier and write a checkpoint and report");
  train_cmd->add_option("--data", tr.data, "training dataset file")->required();
  train_cmd->add_option("--config", tr.config, "key=value config file (flags override it)");
  train_cmd->add_option("--out", tr.out, "checkpoint file")->required();
  train_cmd->add_option("--report", tr.report, "report file (default: <out>.report.jsonl)");
  train_cmd->add_option("--threads", tr.threads, "worker threads (env GBPLL_THREADS)")->capture_default_str();
  const TrainConfig defaults;
  std::map<std::string, CLI::Option*> key_opts;
  for (const auto& key : TrainConfig::keys()) {
    tr.overrides[key] = defaults.get(key);
    key_opts[key] = train_cmd->add_option(flag_name(key), tr.overrides[key], TrainConfig::describe(key))
                        ->capture_default_str();
  }

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled test set");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "test dataset file")->required();
  eval_cmd->add_option("--train-data", ev.train_data,
                       "training dataset (shot groups by training counts, disambiguation, prior error)");
  eval_cmd->add_option("--out", ev.out, "report file (line-delimited JSON)")->required();

  InspectArgs ins;
  ins.threads = default_threads();
  auto* inspect_cmd = app.add_subcommand("inspect-balls", "Dump the granular-ball space of a checkpoint");
  inspect_cmd->add_option("--checkpoint", ins.checkpoint, "checkpoint file")->required();
  inspect_cmd->add_option("--data", ins.data, "dataset file")->required();
  inspect_cmd->add_flag("--graph", ins.graph, "also dump graph edges");
  inspect_cmd->add_flag("--confidence", ins.confidence, "also dump the confidence matrix");
  inspect_cmd->add_option("--out", ins.out, "also write the dump to this file");
  inspect_cmd->add_option("--threads", ins.threads, "worker threads (env GBPLL_THREADS)")->capture_default_str();

  std::vector<std::string> runs;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "Compare evaluation reports");
  report_cmd->add_option("--runs", runs, "evaluation report files")->required();
  report_cmd->add_option("--out", report_out, "also write the table to this file");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth_cmd) return do_synth(synth, out);
    if (*train_cmd) return do_train(tr, key_opts, out);
    if (*eval_cmd) return do_eval(ev, out);
    if (*inspect_cmd) return do_inspect(ins, out);
    if (*report_cmd) return do_report(runs, report_out, out);
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kNumericalAbort;
  }
  return kUsage;
}

}  // namespace gbpll::cli
