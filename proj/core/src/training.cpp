#include "attnmemcap/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

namespace attnmemcap {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

struct AdamState {
  AttentionWeights m;
  AttentionWeights v;
  long step = 0;

  explicit AdamState(const AttentionConfig& cfg)
      : m(AttentionWeights::zeros(cfg)), v(AttentionWeights::zeros(cfg)) {}

  void update_matrix(Matrix& w, Matrix& m1, Matrix& m2, const Matrix& g, double lr) {
    m1 = kBeta1 * m1 + (1.0 - kBeta1) * g;
    m2 = kBeta2 * m2 + (1.0 - kBeta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
    w -= (lr / c1) * m1.cwiseQuotient(((m2 / c2).cwiseSqrt().array() + kAdamEps).matrix());
  }

  void apply(AttentionWeights& w, const AttentionWeights& g, double lr, int heads) {
    ++step;
    for (int h = 0; h < heads; ++h) {
      update_matrix(w.key[h], m.key[h], v.key[h], g.key[h], lr);
      update_matrix(w.query[h], m.query[h], v.query[h], g.query[h], lr);
      update_matrix(w.value[h], m.value[h], v.value[h], g.value[h], lr);
    }
    update_matrix(w.output, m.output, v.output, g.output, lr);
    update_matrix(w.readout, m.readout, v.readout, g.readout, lr);
  }
};

double scheduled_lr(const TrainConfig& tcfg, long step) {
  const long warmup = std::max<long>(0, std::min(tcfg.warmup_steps, tcfg.steps - 1));
  if (warmup > 0 && step <= warmup) {
    return tcfg.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (!tcfg.cosine_decay) return tcfg.learning_rate;
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(std::max<long>(1, tcfg.steps - warmup));
  return tcfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
}

double classification_accuracy(const AttentionWeights& w, const AttentionConfig& cfg,
                               const Dataset& data) {
  long hits = 0;
  for (const Example& ex : data.examples) {
    const ForwardTrace tr = forward(w, cfg, ex.context, ex.query);
    Eigen::Index arg = 0;
    tr.prediction.maxCoeff(&arg);
    if (arg == static_cast<Eigen::Index>(ex.label(0))) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.examples.size());
}

double regression_mse(const AttentionWeights& w, const AttentionConfig& cfg,
                      const Dataset& data) {
  double total = 0.0;
  for (const Example& ex : data.examples) {
    const ForwardTrace tr = forward(w, cfg, ex.context, ex.query);
    total += (tr.prediction - ex.label).squaredNorm() / ex.label.size();
  }
  return total / static_cast<double>(data.examples.size());
}

}  // namespace

std::pair<AttentionWeights, TrainReport> train_memorize(const Dataset& data,
                                                        const AttentionConfig& cfg,
                                                        const TrainConfig& tcfg) {
  data.validate();
  cfg.validate();
  const DatasetDims dm = data.dims();
  const Task& task = data.task;
  if (task.kind == Task::Kind::classification && cfg.d_out != task.num_classes) {
    throw DimensionError("train_memorize: classification needs d_out == num_classes");
  }
  if (task.kind == Task::Kind::regression && cfg.d_out != dm.d_out) {
    throw DimensionError("train_memorize: regression needs d_out == label dimension");
  }
  if (tcfg.steps < 1 || tcfg.learning_rate < 0.0) {
    throw std::invalid_argument("train_memorize: bad steps or learning rate");
  }

  const auto start = std::chrono::steady_clock::now();
  Rng rng(derive_seed(tcfg.seed, 0x7237));
  AttentionWeights w = AttentionWeights::random(cfg, rng, 1.0 / std::sqrt(cfg.d));
  AdamState adam(cfg);
  TrainReport report;

  const int batch = std::max(1, std::min<int>(tcfg.batch_size, dm.T));
  std::vector<int> order(dm.T);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // force a shuffle on first use

  const long check_every = std::max<long>(1, tcfg.log_every);
  for (long step = 1; step <= tcfg.steps; ++step) {
    std::vector<int> batch_idx;
    batch_idx.reserve(batch);
    if (batch >= dm.T) {
      batch_idx = order;
    } else {
      for (int i = 0; i < batch; ++i) {
        if (cursor >= order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        batch_idx.push_back(order[cursor++]);
      }
    }

    const LossAndGradients lg = gradient(w, cfg, data, batch_idx, task);
    if (!std::isfinite(lg.loss)) {
      report.diverged = true;
      report.steps_run = step;
      report.loss_log.emplace_back(step, lg.loss);
      break;
    }
    adam.apply(w, lg.grad, scheduled_lr(tcfg, step), cfg.heads);
    report.steps_run = step;

    if (step % check_every == 0 || step == tcfg.steps) {
      report.loss_log.emplace_back(step, lg.loss);
      if (tcfg.early_stop_accuracy && task.kind == Task::Kind::classification) {
        if (classification_accuracy(w, cfg, data) >= *tcfg.early_stop_accuracy) break;
      }
    }
  }

  if (task.kind == Task::Kind::classification) {
    report.final_accuracy = classification_accuracy(w, cfg, data);
  } else {
    report.final_mse = regression_mse(w, cfg, data);
  }
  report.final_loss = report.loss_log.empty() ? 0.0 : report.loss_log.back().second;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(w), std::move(report)};
}

SaturationReport saturation_report(const AttentionWeights& w, const AttentionConfig& cfg,
                                   const Dataset& data, double threshold) {
  data.validate();
  const DatasetDims dm = data.dims();
  if (!(threshold > 1.0 / dm.n && threshold < 1.0)) {
    throw std::invalid_argument("saturation threshold must lie in (1/n, 1)");
  }
  SaturationReport rep;
  rep.threshold = threshold;
  rep.saturated.assign(dm.T, std::vector<bool>(cfg.heads, false));
  rep.heads_per_example_hist.assign(cfg.heads + 1, 0);
  rep.max_coeff_hist.assign(20, 0);

  for (int t = 0; t < dm.T; ++t) {
    const Example& ex = data.examples[t];
    const ForwardTrace tr = forward(w, cfg, ex.context, ex.query);
    int count = 0;
    for (int h = 0; h < cfg.heads; ++h) {
      const double peak = tr.coeffs[h].maxCoeff();
      const int bin = std::min(19, static_cast<int>(peak * 20.0));
      ++rep.max_coeff_hist[bin];
      if (peak > threshold) {
        rep.saturated[t][h] = true;
        ++count;
      }
    }
    ++rep.heads_per_example_hist[count];
  }
  return rep;
}

std::vector<SweepRow> sweep(const SweepConfig& cfg) {
  if (cfg.cells.empty()) throw std::invalid_argument("sweep: empty grid");
  if (cfg.seeds < 1) throw std::invalid_argument("sweep: seeds must be >= 1");

  struct Job {
    SweepCell cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cfg.cells.size(); ++c) {
    for (int s = 0; s < cfg.seeds; ++s) {
      jobs.push_back({cfg.cells[c], derive_seed(cfg.base_seed, c * 1000 + s)});
    }
  }

  std::vector<SweepRow> rows(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      SweepRow row;
      row.cell = job.cell;
      row.seed = job.seed;
      try {
        const Dataset data =
            cfg.kind == "genpos"
                ? gen_general_position_dataset(job.cell.T, job.cell.n, cfg.d, cfg.task, job.seed)
                : gen_shared_context_dataset(job.cell.T, job.cell.n, cfg.d, cfg.task, job.seed);
        AttentionConfig model;
        model.heads = job.cell.heads;
        model.d = cfg.d;
        model.d_h = job.cell.d_h;
        model.d_v = cfg.d_v > 0 ? cfg.d_v : cfg.d;
        model.d_out = cfg.task.kind == Task::Kind::classification ? cfg.task.num_classes
                                                                  : data.dims().d_out;
        TrainConfig tcfg = cfg.train;
        tcfg.seed = job.seed;
        const auto [w, rep] = train_memorize(data, model, tcfg);
        if (rep.diverged) {
          row.metric = "error";
          row.value = std::nan("");
        } else if (cfg.task.kind == Task::Kind::classification) {
          row.metric = "accuracy";
          row.value = rep.final_accuracy;
        } else {
          row.metric = "mse";
          row.value = rep.final_mse;
        }
      } catch (const std::exception&) {
        row.metric = "error";
        row.value = std::nan("");
      }
      rows[i] = std::move(row);
    }
  };

  const int threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(jobs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  return rows;
}

double sweep_cell_median(const std::vector<SweepRow>& rows, const SweepCell& cell,
                         const std::string& metric) {
  std::vector<double> values;
  for (const SweepRow& row : rows) {
    if (row.metric == metric && row.cell.heads == cell.heads && row.cell.n == cell.n &&
        row.cell.d_h == cell.d_h && row.cell.T == cell.T) {
      values.push_back(row.value);
    }
  }
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

}  // namespace attnmemcap
