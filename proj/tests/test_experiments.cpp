#include <attnmemcap/assumptions.hpp>
#include <attnmemcap/bounds.hpp>
#include <attnmemcap/experiments.hpp>

#include <doctest.h>

#include <cmath>

#include "builders.hpp"

using namespace attnmemcap;

TEST_SUITE_BEGIN("experiments");

namespace {

CheckOptions fast_opts() {
  CheckOptions opts;
  opts.trials = 200;
  return opts;
}

AttentionConfig model_for(const Dataset& data, int heads, int d_h) {
  AttentionConfig cfg;
  cfg.heads = heads;
  cfg.d = data.dims().d;
  cfg.d_h = d_h;
  cfg.d_v = data.dims().d;
  cfg.d_out = data.task.kind == Task::Kind::classification ? data.task.num_classes
                                                           : data.dims().d_out;
  return cfg;
}

}  // namespace

TEST_CASE("shared-context generator") {
  const Dataset data = gen_shared_context_dataset(10, 4, 16, Task::regression(), 99);
  data.validate();
  for (int t = 1; t < 10; ++t) {
    CHECK(data.examples[t].context == data.examples[0].context);  // bitwise shared
  }
  CHECK(check_assumption1(data, fast_opts()).passed);
  CHECK(check_assumption2(data).passed);

  const Dataset again = gen_shared_context_dataset(10, 4, 16, Task::regression(), 99);
  CHECK(again.examples[7].query == data.examples[7].query);
  CHECK(again.examples[3].label == data.examples[3].label);

  CHECK_THROWS_AS(gen_shared_context_dataset(10, 16, 16, Task::regression(), 1),
                  std::invalid_argument);
}

TEST_CASE("general-position generator") {
  const Dataset data = gen_general_position_dataset(20, 4, 16, Task::classification(10), 7);
  data.validate();
  CHECK(data.examples[0].context != data.examples[1].context);
  CHECK(check_assumption1(data, fast_opts()).passed);
  CHECK(check_assumption2(data).passed);
  for (const Example& ex : data.examples) {
    const int label = static_cast<int>(ex.label(0));
    CHECK(label >= 0);
    CHECK(label < 10);
  }

  // stack every token; with T(n+1) >= d the sampled general-position test passes
  Matrix tokens(20 * 5, 16);
  int row = 0;
  for (const Example& ex : data.examples) {
    for (int i = 0; i < 4; ++i) tokens.row(row++) = ex.context.row(i);
    tokens.row(row++) = ex.query.transpose();
  }
  CHECK(check_general_position(tokens, fast_opts()).passed);
}

TEST_CASE("zero readout with zero labels gives zero loss and zero gradients") {
  Rng rng(501);
  Dataset data = builders::random_dataset(4, 3, 8, 2, rng);
  for (Example& ex : data.examples) ex.label.setZero();
  AttentionConfig cfg = model_for(data, 2, 4);
  AttentionWeights w = AttentionWeights::random(cfg, rng, 0.5);
  w.readout.setZero();

  const LossAndGradients lg = gradient(w, cfg, data, {0, 1, 2, 3}, data.task);
  CHECK(lg.loss == doctest::Approx(0.0));
  for (int h = 0; h < cfg.heads; ++h) {
    CHECK(lg.grad.key[h].norm() == doctest::Approx(0.0));
    CHECK(lg.grad.query[h].norm() == doctest::Approx(0.0));
    CHECK(lg.grad.value[h].norm() == doctest::Approx(0.0));
  }
  CHECK(lg.grad.output.norm() == doctest::Approx(0.0));
}

TEST_CASE("duplicating a batch element only reweights the mean") {
  Rng rng(503);
  const Dataset data = builders::random_dataset(3, 3, 8, 1, rng);
  const AttentionConfig cfg = model_for(data, 2, 4);
  const AttentionWeights w = AttentionWeights::random(cfg, rng, 0.5);

  const LossAndGradients single = gradient(w, cfg, data, {1}, data.task);
  const LossAndGradients doubled = gradient(w, cfg, data, {1, 1}, data.task);
  CHECK((single.grad.key[0] - doubled.grad.key[0]).norm() < 1e-12);
  CHECK(single.loss == doctest::Approx(doubled.loss));
}

namespace {

double loss_at(AttentionWeights w, const AttentionConfig& cfg, const Dataset& data,
               const std::vector<int>& batch) {
  return gradient(w, cfg, data, batch, data.task).loss;
}

// worst relative disagreement between analytic gradients and central
// differences across every weight entry
double max_fd_error(const Dataset& data, const AttentionConfig& cfg,
                    const AttentionWeights& w, const std::vector<int>& batch) {
  const double h = 1e-5;
  const LossAndGradients lg = gradient(w, cfg, data, batch, data.task);
  double worst = 0.0;

  auto check_matrix = [&](const Matrix& analytic, auto&& mutate) {
    for (Eigen::Index i = 0; i < analytic.rows(); ++i) {
      for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
        AttentionWeights plus = w;
        mutate(plus, i, j, h);
        AttentionWeights minus = w;
        mutate(minus, i, j, -h);
        const double fd =
            (loss_at(plus, cfg, data, batch) - loss_at(minus, cfg, data, batch)) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic(i, j)), 1e-6});
        worst = std::max(worst, std::abs(fd - analytic(i, j)) / denom);
      }
    }
  };

  for (int head = 0; head < cfg.heads; ++head) {
    check_matrix(lg.grad.key[head],
                 [head](AttentionWeights& v, auto i, auto j, double d) { v.key[head](i, j) += d; });
    check_matrix(lg.grad.query[head], [head](AttentionWeights& v, auto i, auto j, double d) {
      v.query[head](i, j) += d;
    });
    check_matrix(lg.grad.value[head], [head](AttentionWeights& v, auto i, auto j, double d) {
      v.value[head](i, j) += d;
    });
  }
  check_matrix(lg.grad.output,
               [](AttentionWeights& v, auto i, auto j, double d) { v.output(i, j) += d; });
  check_matrix(lg.grad.readout,
               [](AttentionWeights& v, auto i, auto j, double d) { v.readout(i, j) += d; });
  return worst;
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences") {
  Rng rng(509);
  SUBCASE("regression") {
    Dataset data = builders::random_dataset(3, 3, 6, 2, rng);
    const AttentionConfig cfg = model_for(data, 2, 3);
    const AttentionWeights w = AttentionWeights::random(cfg, rng, 0.6);
    CHECK(max_fd_error(data, cfg, w, {0, 2}) < 1e-4);
  }
  SUBCASE("classification") {
    Dataset data = builders::random_dataset(4, 3, 6, 1, rng);
    data.task = Task::classification(3);
    for (Example& ex : data.examples) ex.label(0) = static_cast<double>(ex.label.size() % 3);
    const AttentionConfig cfg = model_for(data, 2, 3);
    const AttentionWeights w = AttentionWeights::random(cfg, rng, 0.6);
    CHECK(max_fd_error(data, cfg, w, {0, 1, 3}) < 1e-4);
  }
  SUBCASE("skip connection") {
    Dataset data = builders::random_dataset(2, 3, 6, 2, rng);
    AttentionConfig cfg = model_for(data, 2, 3);
    cfg.skip_connection = true;
    const AttentionWeights w = AttentionWeights::random(cfg, rng, 0.6);
    CHECK(max_fd_error(data, cfg, w, {0, 1}) < 1e-4);
  }
}

TEST_CASE("a small plain gradient step cannot increase the loss") {
  Rng rng(521);
  const Dataset data = builders::random_dataset(5, 3, 8, 1, rng);
  const AttentionConfig cfg = model_for(data, 2, 4);
  const AttentionWeights w = AttentionWeights::random(cfg, rng, 0.5);
  const std::vector<int> batch{0, 1, 2, 3, 4};
  const LossAndGradients lg = gradient(w, cfg, data, batch, data.task);

  AttentionWeights stepped = w;
  const double lr = 1e-4;
  for (int h = 0; h < cfg.heads; ++h) {
    stepped.key[h] -= lr * lg.grad.key[h];
    stepped.query[h] -= lr * lg.grad.query[h];
    stepped.value[h] -= lr * lg.grad.value[h];
  }
  stepped.output -= lr * lg.grad.output;
  stepped.readout -= lr * lg.grad.readout;
  CHECK(loss_at(stepped, cfg, data, batch) <= lg.loss);
}

TEST_CASE("training memorizes a tiny classification set") {
  const Dataset data = gen_general_position_dataset(4, 4, 16, Task::classification(4), 3);
  const AttentionConfig cfg = model_for(data, 2, 16);
  TrainConfig tcfg;
  tcfg.steps = 5000;
  tcfg.learning_rate = 1e-3;
  tcfg.warmup_steps = 100;
  tcfg.log_every = 100;
  tcfg.early_stop_accuracy = 1.0;

  std::vector<double> finals;
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainConfig run = tcfg;
    run.seed = seed;
    const auto [w, report] = train_memorize(data, cfg, run);
    finals.push_back(report.final_accuracy);
    CHECK_FALSE(report.diverged);
  }
  std::sort(finals.begin(), finals.end());
  CHECK(finals[1] == doctest::Approx(1.0));  // 3-seed median
}

TEST_CASE("zero learning rate leaves the weights at their initialization") {
  const Dataset data = gen_shared_context_dataset(6, 3, 8, Task::regression(), 11);
  const AttentionConfig cfg = model_for(data, 1, 4);
  TrainConfig tcfg;
  tcfg.steps = 50;
  tcfg.learning_rate = 0.0;
  tcfg.seed = 5;

  Rng init_rng(derive_seed(5, 0x7237));
  const AttentionWeights expected =
      AttentionWeights::random(cfg, init_rng, 1.0 / std::sqrt(cfg.d));
  const auto [w, report] = train_memorize(data, cfg, tcfg);
  CHECK((w.key[0] - expected.key[0]).norm() == doctest::Approx(0.0));
  CHECK((w.readout - expected.readout).norm() == doctest::Approx(0.0));
}

TEST_CASE("training is deterministic in the seed") {
  const Dataset data = gen_shared_context_dataset(8, 3, 8, Task::classification(4), 13);
  AttentionConfig cfg = model_for(data, 2, 8);
  TrainConfig tcfg;
  tcfg.steps = 300;
  tcfg.seed = 21;
  tcfg.log_every = 50;

  const auto [w1, r1] = train_memorize(data, cfg, tcfg);
  const auto [w2, r2] = train_memorize(data, cfg, tcfg);
  CHECK(r1.loss_log == r2.loss_log);
  CHECK(r1.final_accuracy == r2.final_accuracy);
  CHECK((w1.output - w2.output).norm() == 0.0);
}

TEST_CASE("trained shared-context models stay under the rank ceiling") {
  const Dataset data = gen_shared_context_dataset(12, 3, 8, Task::classification(4), 17);
  const AttentionConfig cfg = model_for(data, 2, 8);
  TrainConfig tcfg;
  tcfg.steps = 400;
  tcfg.seed = 23;
  const auto [w, report] = train_memorize(data, cfg, tcfg);
  CHECK(empirical_rank_Z(w, cfg, data) <= prop2_upper_bound(2, 3));
}

TEST_CASE("saturation report flags and histograms") {
  Rng rng(523);
  const Dataset data = builders::random_dataset(6, 4, 8, 1, rng);
  const AttentionConfig cfg = model_for(data, 3, 8);

  SUBCASE("uniform coefficients are never saturated") {
    const AttentionWeights zero = AttentionWeights::zeros(cfg);
    const SaturationReport rep = saturation_report(zero, cfg, data, 0.99);
    for (const auto& row : rep.saturated)
      for (bool s : row) CHECK_FALSE(s);
    long hist_total = 0;
    for (long c : rep.max_coeff_hist) hist_total += c;
    CHECK(hist_total == 6 * 3);
    CHECK(rep.heads_per_example_hist[0] == 6);
  }

  SUBCASE("thresholds are monotone") {
    const AttentionWeights w = AttentionWeights::random(cfg, rng, 2.0);
    const SaturationReport low = saturation_report(w, cfg, data, 0.5);
    const SaturationReport high = saturation_report(w, cfg, data, 0.95);
    for (int t = 0; t < 6; ++t) {
      for (int h = 0; h < cfg.heads; ++h) {
        if (high.saturated[t][h]) CHECK(low.saturated[t][h]);
      }
    }
  }

  SUBCASE("threshold must exceed the uniform level") {
    const AttentionWeights w = AttentionWeights::zeros(cfg);
    CHECK_THROWS_AS(saturation_report(w, cfg, data, 0.2), std::invalid_argument);
  }
}

TEST_CASE("sweep emits one row per cell and seed and survives bad cells") {
  SweepConfig cfg;
  cfg.cells = {{1, 3, 4, 6}, {1, 9, 4, 6}};  // second cell violates n < d
  cfg.d = 8;
  cfg.task = Task::classification(4);
  cfg.kind = "shared";
  cfg.train.steps = 60;
  cfg.train.log_every = 30;
  cfg.seeds = 2;
  cfg.base_seed = 3;

  const std::vector<SweepRow> rows = sweep(cfg);
  REQUIRE(rows.size() == 4);
  int good = 0, bad = 0;
  for (const SweepRow& row : rows) {
    if (row.metric == "accuracy") ++good;
    if (row.metric == "error") ++bad;
  }
  CHECK(good == 2);
  CHECK(bad == 2);
  CHECK(std::isfinite(sweep_cell_median(rows, cfg.cells[0], "accuracy")));
}

TEST_SUITE_END();
