// attn-memcap: dataset generation, assumption checking, constructive weight
// synthesis, verification, capacity bounds, gradient training, sweeps, and
// saturation reports for single-layer multi-head attention.

#include <attnmemcap/assumptions.hpp>
#include <attnmemcap/bounds.hpp>
#include <attnmemcap/experiments.hpp>
#include <attnmemcap/io.hpp>
#include <attnmemcap/synthesis.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace attnmemcap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("ATTN_MEMCAP_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return 0;
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

struct GenArgs {
  std::string kind = "shared";
  int T = 0, n = 0, d = 0;
  std::string task = "reg";
  std::uint64_t seed = default_seed();
  std::string out;
};

int run_gen(const GenArgs& a) {
  const Task task = Task::parse(a.task);
  const Dataset data = a.kind == "genpos"
                           ? gen_general_position_dataset(a.T, a.n, a.d, task, a.seed)
                           : gen_shared_context_dataset(a.T, a.n, a.d, task, a.seed);
  save_dataset(a.out, data);
  json cfg{{"kind", a.kind}, {"T", a.T}, {"n", a.n}, {"d", a.d}, {"task", a.task}};
  write_run_manifest(a.out, "gen", cfg.dump(), a.seed, {}, {a.out});
  std::cerr << "wrote dataset (" << a.T << " examples) to " << a.out << "\n";
  return kExitOk;
}

struct CheckArgs {
  std::string dataset;
  long trials = 5000;
  double pass_fraction = 0.99;
  std::uint64_t seed = default_seed();
  int scan_max = 0;
  std::string out;
};

int run_check(const CheckArgs& a) {
  const Dataset data = load_dataset(a.dataset);
  CheckOptions opts;
  opts.trials = a.trials;
  opts.pass_fraction = a.pass_fraction;
  opts.seed = a.seed;
  const AssumptionReport report = check_all(data, opts, a.scan_max);
  const std::string payload = to_json(report);
  if (a.out.empty()) {
    std::cout << payload;
  } else {
    write_text_file(a.out, payload);
    json cfg{{"trials", a.trials}, {"pass_frac", a.pass_fraction}, {"scan_max", a.scan_max}};
    write_run_manifest(fs::path(a.out).parent_path(), "check", cfg.dump(), a.seed,
                       {a.dataset}, {a.out});
  }
  const bool ok = report.assumption1.passed && report.assumption2.passed;
  std::cerr << "assumption1 " << (report.assumption1.passed ? "pass" : "FAIL")
            << ", assumption2 " << (report.assumption2.passed ? "pass" : "FAIL")
            << ", assumption3 " << (report.assumption3.passed ? "pass" : "FAIL")
            << ", general position " << (report.general_position.passed ? "pass" : "FAIL")
            << "\n";
  return ok ? kExitOk : kExitCheckFailed;
}

struct SynthArgs {
  std::string dataset;
  int heads = 1, d_h = 0, d_v = 0, d_out = 0;
  bool skip = false;
  std::uint64_t seed = default_seed();
  std::string out;
};

int run_synthesize(const SynthArgs& a) {
  const Dataset data = load_dataset(a.dataset);
  const DatasetDims dm = data.dims();
  SynthesisConfig cfg;
  cfg.model.heads = a.heads;
  cfg.model.d = dm.d;
  cfg.model.d_h = a.d_h > 0 ? a.d_h : dm.d;
  cfg.model.d_out = a.d_out > 0 ? a.d_out : dm.d_out;
  cfg.model.d_v = a.d_v > 0 ? a.d_v : cfg.model.d_out;
  cfg.model.skip_connection = a.skip;
  cfg.seed = a.seed;

  const auto [weights, report] = a.skip ? synthesize_skip(data, cfg) : synthesize(data, cfg);
  AttentionConfig stored = cfg.model;
  stored.skip_connection = a.skip;
  save_weights(a.out, weights, stored, a.seed);
  write_text_file(fs::path(a.out) / "synthesis_report.json", to_json(report));
  json jc{{"heads", a.heads}, {"d_h", cfg.model.d_h}, {"d_v", cfg.model.d_v},
          {"d_out", cfg.model.d_out}, {"skip", a.skip}};
  write_run_manifest(a.out, "synthesize", jc.dump(), a.seed, {a.dataset}, {a.out});
  std::cerr << "synthesized " << dm.T << " examples, rank(Z) = " << report.rank_Z
            << ", max relative error " << report.max_rel_error << "\n";
  return kExitOk;
}

struct VerifyArgs {
  std::string dataset;
  std::string weights;
  double tol = 1e-6;
};

int run_verify(const VerifyArgs& a) {
  const Dataset data = load_dataset(a.dataset);
  const StoredWeights stored = load_weights(a.weights);
  const VerifyResult result =
      verify_memorization(stored.weights, stored.config, data, a.tol);
  std::cout << to_json(result);
  return result.passed ? kExitOk : kExitCheckFailed;
}

struct BoundsArgs {
  int heads = 0, n = 0, d = 0, d_h = 0, m = 0, d_out = 1, kruskal_q = 0;
};

int run_bounds(const BoundsArgs& a) {
  std::cout << bounds_json(a.heads, a.n, a.d, a.d_h, a.m, a.d_out, a.kruskal_q);
  return kExitOk;
}

struct TrainArgs {
  std::string dataset;
  int heads = 1, d_h = 0, d_v = 0;
  long steps = 50000;
  double lr = 1e-3;
  int batch = 256;
  long warmup = 500;
  std::uint64_t seed = default_seed();
  std::string out;
};

int run_train(const TrainArgs& a) {
  const Dataset data = load_dataset(a.dataset);
  const DatasetDims dm = data.dims();
  AttentionConfig cfg;
  cfg.heads = a.heads;
  cfg.d = dm.d;
  cfg.d_h = a.d_h > 0 ? a.d_h : dm.d;
  cfg.d_v = a.d_v > 0 ? a.d_v : dm.d;
  cfg.d_out =
      data.task.kind == Task::Kind::classification ? data.task.num_classes : dm.d_out;
  TrainConfig tcfg;
  tcfg.steps = a.steps;
  tcfg.learning_rate = a.lr;
  tcfg.batch_size = a.batch;
  tcfg.warmup_steps = a.warmup;
  tcfg.seed = a.seed;

  const auto [weights, report] = train_memorize(data, cfg, tcfg);
  save_weights(a.out, weights, cfg, a.seed);

  json jr;
  jr["steps_run"] = report.steps_run;
  jr["final_loss"] = report.final_loss;
  jr["diverged"] = report.diverged;
  jr["wall_seconds"] = report.wall_seconds;
  if (data.task.kind == Task::Kind::classification) {
    jr["final_accuracy"] = report.final_accuracy;
  } else {
    jr["final_mse"] = report.final_mse;
  }
  json log = json::array();
  for (const auto& [step, loss] : report.loss_log) log.push_back({{"step", step}, {"loss", loss}});
  jr["loss_log"] = std::move(log);
  write_text_file(fs::path(a.out) / "train_report.json", jr.dump(2) + "\n");
  json jc{{"heads", a.heads}, {"d_h", cfg.d_h}, {"steps", a.steps}, {"lr", a.lr},
          {"batch", a.batch}};
  write_run_manifest(a.out, "train", jc.dump(), a.seed, {a.dataset}, {a.out});
  std::cerr << "trained " << report.steps_run << " steps";
  if (data.task.kind == Task::Kind::classification) {
    std::cerr << ", accuracy " << report.final_accuracy;
  } else {
    std::cerr << ", mse " << report.final_mse;
  }
  std::cerr << (report.diverged ? " (diverged)" : "") << "\n";
  return report.diverged ? kExitCheckFailed : kExitOk;
}

struct SweepArgs {
  std::string grid;
  int seeds = 3;
  int threads = 0;
  std::uint64_t seed = default_seed();
  std::string out;
};

int run_sweep(const SweepArgs& a) {
  std::ifstream in(a.grid);
  if (!in) throw std::runtime_error("cannot open grid file " + a.grid);
  const json jg = json::parse(in);

  SweepConfig cfg;
  cfg.d = jg.value("d", 64);
  cfg.d_v = jg.value("d_v", 0);
  cfg.task = Task::parse(jg.value("task", std::string("cls:100")));
  cfg.kind = jg.value("kind", std::string("shared"));
  cfg.seeds = a.seeds;
  cfg.base_seed = a.seed;
  cfg.threads = resolve_threads(a.threads);
  cfg.train.steps = jg.value("steps", 50000L);
  cfg.train.learning_rate = jg.value("lr", 1e-3);
  cfg.train.batch_size = jg.value("batch", 256);
  cfg.train.warmup_steps = jg.value("warmup", 500L);
  if (jg.contains("early_stop_accuracy")) {
    cfg.train.early_stop_accuracy = jg["early_stop_accuracy"].get<double>();
  }
  for (const json& cell : jg.at("cells")) {
    cfg.cells.push_back({cell.at("H").get<int>(), cell.at("n").get<int>(),
                         cell.at("dh").get<int>(), cell.at("T").get<int>()});
  }

  const std::vector<SweepRow> rows = sweep(cfg);
  write_sweep_csv(a.out, rows);
  write_run_manifest(fs::path(a.out).parent_path(), "sweep",
                     json{{"grid", a.grid}, {"seeds", a.seeds}}.dump(), a.seed, {a.grid},
                     {a.out});
  for (const SweepCell& cell : cfg.cells) {
    const std::string metric =
        cfg.task.kind == Task::Kind::classification ? "accuracy" : "mse";
    std::cerr << "H=" << cell.heads << " n=" << cell.n << " dh=" << cell.d_h
              << " T=" << cell.T << " median " << metric << " "
              << sweep_cell_median(rows, cell, metric) << "\n";
  }
  return kExitOk;
}

struct SaturationArgs {
  std::string dataset;
  std::string weights;
  double threshold = 0.99;
  std::string out;
};

int run_saturation(const SaturationArgs& a) {
  const Dataset data = load_dataset(a.dataset);
  const StoredWeights stored = load_weights(a.weights);
  const SaturationReport report =
      saturation_report(stored.weights, stored.config, data, a.threshold);
  const std::string payload = to_json(report);
  if (a.out.empty()) {
    std::cout << payload;
  } else {
    write_text_file(a.out, payload);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memorization-capacity toolkit for single-layer multi-head attention"};
  app.require_subcommand(1);

  GenArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--kind", gen_args.kind, "shared|genpos")
      ->check(CLI::IsMember({"shared", "genpos"}));
  gen->add_option("--T", gen_args.T, "number of examples")->required();
  gen->add_option("--n", gen_args.n, "context size")->required();
  gen->add_option("--d", gen_args.d, "embedding dimension (even)")->required();
  gen->add_option("--task", gen_args.task, "cls:<k> or reg");
  gen->add_option("--seed", gen_args.seed, "rng seed");
  gen->add_option("--out", gen_args.out, "output directory")->required();

  CheckArgs check_args;
  CLI::App* check = app.add_subcommand("check", "test the data assumptions");
  check->add_option("--dataset", check_args.dataset)->required();
  check->add_option("--trials", check_args.trials);
  check->add_option("--pass-frac", check_args.pass_fraction);
  check->add_option("--seed", check_args.seed);
  check->add_option("--scan-max", check_args.scan_max,
                    "also scan the Kruskal lower bound up to this k");
  check->add_option("--out", check_args.out, "report path (stdout when omitted)");

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synthesize", "construct memorizing weights");
  synth->add_option("--dataset", synth_args.dataset)->required();
  synth->add_option("--heads", synth_args.heads)->required();
  synth->add_option("--dh", synth_args.d_h)->required();
  synth->add_option("--dv", synth_args.d_v);
  synth->add_option("--dout", synth_args.d_out);
  synth->add_flag("--skip", synth_args.skip, "skip-connection model");
  synth->add_option("--seed", synth_args.seed);
  synth->add_option("--out", synth_args.out, "weights directory")->required();

  VerifyArgs verify_args;
  CLI::App* verify = app.add_subcommand("verify", "check weights against a dataset");
  verify->add_option("--dataset", verify_args.dataset)->required();
  verify->add_option("--weights", verify_args.weights)->required();
  verify->add_option("--tol", verify_args.tol);

  BoundsArgs bounds_args;
  CLI::App* bounds = app.add_subcommand("bounds", "closed-form capacity bounds");
  bounds->add_option("--H", bounds_args.heads)->required();
  bounds->add_option("--n", bounds_args.n)->required();
  bounds->add_option("--d", bounds_args.d)->required();
  bounds->add_option("--dh", bounds_args.d_h)->required();
  bounds->add_option("--m", bounds_args.m, "ReLU hidden width");
  bounds->add_option("--dout", bounds_args.d_out);
  bounds->add_option("--Q", bounds_args.kruskal_q, "measured Kruskal rank");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "gradient-descent memorization");
  train->add_option("--dataset", train_args.dataset)->required();
  train->add_option("--heads", train_args.heads)->required();
  train->add_option("--dh", train_args.d_h);
  train->add_option("--dv", train_args.d_v);
  train->add_option("--steps", train_args.steps);
  train->add_option("--lr", train_args.lr);
  train->add_option("--batch", train_args.batch);
  train->add_option("--warmup", train_args.warmup);
  train->add_option("--seed", train_args.seed);
  train->add_option("--out", train_args.out)->required();

  SweepArgs sweep_args;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "train over a grid, emit CSV");
  sweep_cmd->add_option("--grid", sweep_args.grid, "grid JSON file")->required();
  sweep_cmd->add_option("--seeds", sweep_args.seeds);
  sweep_cmd->add_option("--threads", sweep_args.threads, "parallel cells (0 = all cores)");
  sweep_cmd->add_option("--seed", sweep_args.seed);
  sweep_cmd->add_option("--out", sweep_args.out, "results CSV")->required();

  SaturationArgs sat_args;
  CLI::App* sat = app.add_subcommand("saturation", "per-(example, head) saturation flags");
  sat->add_option("--dataset", sat_args.dataset)->required();
  sat->add_option("--weights", sat_args.weights)->required();
  sat->add_option("--threshold", sat_args.threshold);
  sat->add_option("--out", sat_args.out, "report path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints usage/hint
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen(gen_args);
    if (check->parsed()) return run_check(check_args);
    if (synth->parsed()) return run_synthesize(synth_args);
    if (verify->parsed()) return run_verify(verify_args);
    if (bounds->parsed()) return run_bounds(bounds_args);
    if (train->parsed()) return run_train(train_args);
    if (sweep_cmd->parsed()) return run_sweep(sweep_args);
    if (sat->parsed()) return run_saturation(sat_args);
  } catch (const CapacityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const AssumptionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitUsage;
}
