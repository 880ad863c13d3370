#include <attnmemcap/attention.hpp>
#include <attnmemcap/numerics.hpp>

#include <doctest.h>

#include <cmath>

#include "builders.hpp"
#include "oracles.hpp"

using namespace attnmemcap;

TEST_SUITE_BEGIN("attention");

TEST_CASE("softmax hand values") {
  Vector two(2);
  two << 0, 0;
  CHECK(softmax(two)(0) == doctest::Approx(0.5));

  Vector skew(2);
  skew << 0.0, std::log(3.0);
  const Vector s = softmax(skew);
  CHECK(s(0) == doctest::Approx(0.25));
  CHECK(s(1) == doctest::Approx(0.75));

  const Vector big = softmax(Vector::Constant(3, 1000.0));
  CHECK(big.allFinite());
  CHECK(big(0) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("softmax shift invariance") {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector v = builders::uniform_vector(6, rng, -5.0, 5.0);
    const Vector shifted = v.array() + 123.456;
    CHECK((softmax(v) - softmax(shifted)).lpNorm<1>() < 1e-12);
    CHECK(softmax(v).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(softmax(v).minCoeff() > 0.0);
  }
}

namespace {

AttentionConfig small_config() {
  AttentionConfig cfg;
  cfg.heads = 3;
  cfg.d = 8;
  cfg.d_h = 4;
  cfg.d_v = 5;
  cfg.d_out = 2;
  return cfg;
}

}  // namespace

TEST_CASE("forward with zero key/query weights averages the context") {
  Rng rng(103);
  const AttentionConfig cfg = small_config();
  AttentionWeights w = AttentionWeights::random(cfg, rng, 0.5);
  for (int h = 0; h < cfg.heads; ++h) {
    w.key[h].setZero();
    w.query[h].setZero();
  }
  const Matrix context = builders::uniform_matrix(6, cfg.d, rng);
  const Vector query = builders::uniform_vector(cfg.d, rng);
  const ForwardTrace tr = forward(w, cfg, context, query);
  for (int h = 0; h < cfg.heads; ++h) {
    CHECK((tr.coeffs[h] - Vector::Constant(6, 1.0 / 6.0)).lpNorm<1>() < 1e-12);
    CHECK((tr.attended[h] - context.colwise().mean().transpose()).norm() < 1e-12);
  }
}

TEST_CASE("single-token context copies the token regardless of weights") {
  Rng rng(107);
  const AttentionConfig cfg = small_config();
  const AttentionWeights w = AttentionWeights::random(cfg, rng, 1.0);
  const Matrix context = builders::uniform_matrix(1, cfg.d, rng);
  const ForwardTrace tr = forward(w, cfg, context, builders::uniform_vector(cfg.d, rng));
  for (int h = 0; h < cfg.heads; ++h) {
    CHECK(tr.coeffs[h](0) == doctest::Approx(1.0));
    CHECK((tr.attended[h] - context.row(0).transpose()).norm() < 1e-14);
  }
}

TEST_CASE("shared single-token context makes every example's output identical") {
  Rng rng(109);
  const AttentionConfig cfg = small_config();
  const AttentionWeights w = AttentionWeights::random(cfg, rng, 1.0);
  const Matrix context = builders::uniform_matrix(1, cfg.d, rng);
  const ForwardTrace a = forward(w, cfg, context, builders::uniform_vector(cfg.d, rng));
  const ForwardTrace b = forward(w, cfg, context, builders::uniform_vector(cfg.d, rng));
  CHECK((a.prediction - b.prediction).norm() < 1e-14);
}

TEST_CASE("forward matches the scalar reference path") {
  Rng rng(113);
  for (bool skip : {false, true}) {
    AttentionConfig cfg = small_config();
    cfg.skip_connection = skip;
    const AttentionWeights w = AttentionWeights::random(cfg, rng, 0.7);
    const Matrix context = builders::uniform_matrix(5, cfg.d, rng);
    const Vector query = builders::uniform_vector(cfg.d, rng);
    const ForwardTrace tr = forward(w, cfg, context, query);
    const Vector ref = oracle::reference_forward(w, cfg, context, query);
    CHECK((tr.prediction - ref).cwiseAbs().maxCoeff() < 1e-12);
    for (int h = 0; h < cfg.heads; ++h) {
      CHECK(tr.coeffs[h].sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(tr.coeffs[h].minCoeff() > 0.0);
    }
  }
}

TEST_CASE("forward rejects mismatched dimensions") {
  Rng rng(127);
  const AttentionConfig cfg = small_config();
  const AttentionWeights w = AttentionWeights::random(cfg, rng, 1.0);
  CHECK_THROWS_AS(forward(w, cfg, builders::uniform_matrix(4, cfg.d + 1, rng),
                          builders::uniform_vector(cfg.d, rng)),
                  DimensionError);
}

TEST_CASE("skip connection adds the readout of the query") {
  Rng rng(131);
  AttentionConfig cfg = small_config();
  AttentionWeights w = AttentionWeights::random(cfg, rng, 0.8);
  w.readout.setZero();
  for (int i = 0; i < cfg.d_out; ++i) w.readout(i, i) = 1.0;  // W_D = I_{d x d_out}

  const Matrix context = builders::uniform_matrix(6, cfg.d, rng);
  const Vector query = builders::uniform_vector(cfg.d, rng);

  cfg.skip_connection = false;
  const Vector plain = forward(w, cfg, context, query).prediction;
  cfg.skip_connection = true;
  const Vector skip = forward(w, cfg, context, query).prediction;
  CHECK((skip - plain - query.head(cfg.d_out)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("feature matrix shape and the prediction identity") {
  Rng rng(137);
  const AttentionConfig cfg = small_config();
  const AttentionWeights w = AttentionWeights::random(cfg, rng, 0.6);
  const Dataset data = builders::random_dataset(7, 5, cfg.d, cfg.d_out, rng);
  const Matrix z = feature_matrix_Z(w, cfg, data);
  REQUIRE(z.rows() == 7);
  REQUIRE(z.cols() == cfg.heads * cfg.d);

  // y_hat = row_t(Z) diag(W_V1..W_VH) W_O W_D
  Matrix blockdiag = Matrix::Zero(cfg.heads * cfg.d, cfg.heads * cfg.d_v);
  for (int h = 0; h < cfg.heads; ++h) {
    blockdiag.block(h * cfg.d, h * cfg.d_v, cfg.d, cfg.d_v) = w.value[h];
  }
  const Matrix predicted = z * blockdiag * w.output * w.readout;
  for (int t = 0; t < 7; ++t) {
    const ForwardTrace tr = forward(w, cfg, data.examples[t].context, data.examples[t].query);
    CHECK((predicted.row(t).transpose() - tr.prediction).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("feature matrix with zero key/query blocks repeats the context mean") {
  Rng rng(139);
  const AttentionConfig cfg = small_config();
  AttentionWeights w = AttentionWeights::zeros(cfg);
  const Dataset data = builders::random_dataset(4, 6, cfg.d, cfg.d_out, rng);
  const Matrix z = feature_matrix_Z(w, cfg, data);
  for (int t = 0; t < 4; ++t) {
    const Vector mean = data.examples[t].context.colwise().mean().transpose();
    for (int h = 0; h < cfg.heads; ++h) {
      CHECK((z.row(t).segment(h * cfg.d, cfg.d).transpose() - mean).norm() < 1e-12);
    }
  }
}

TEST_CASE("shared-context feature matrix obeys the H(n-1)+1 rank ceiling") {
  const int heads = 3, n = 4, d = 16, T = 20;
  AttentionConfig cfg;
  cfg.heads = heads;
  cfg.d = d;
  cfg.d_h = d;
  cfg.d_v = d;
  cfg.d_out = 1;
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    const Dataset data = builders::shared_context_dataset(T, n, d, 1, rng);
    const AttentionWeights w = AttentionWeights::random(cfg, rng, 1.0);
    CHECK(numerical_rank(feature_matrix_Z(w, cfg, data)) <= heads * (n - 1) + 1);
  }
}

TEST_CASE("shared-context feature matrix factors through the Kronecker form") {
  Rng rng(149);
  const AttentionConfig cfg = small_config();
  const AttentionWeights w = AttentionWeights::random(cfg, rng, 0.9);
  const int n = 5, T = 6;
  const Dataset data = builders::shared_context_dataset(T, n, cfg.d, cfg.d_out, rng);
  const Matrix& context = data.examples[0].context;

  Matrix theta(T, cfg.heads * n);
  for (int t = 0; t < T; ++t) {
    const ForwardTrace tr = forward(w, cfg, context, data.examples[t].query);
    for (int h = 0; h < cfg.heads; ++h) {
      theta.row(t).segment(h * n, n) = tr.coeffs[h].transpose();
    }
  }
  Matrix kron = Matrix::Zero(cfg.heads * cfg.d, cfg.heads * n);  // I_H (x) E^T
  for (int h = 0; h < cfg.heads; ++h) {
    kron.block(h * cfg.d, h * n, cfg.d, n) = context.transpose();
  }
  const Matrix z = feature_matrix_Z(w, cfg, data);
  CHECK((z.transpose() - kron * theta.transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("mixing layer arithmetic on a forced example") {
  Dataset data;
  Example ex;
  ex.context = Matrix(2, 2);
  ex.context << 1, 0, 0, 1;
  ex.query = Vector(2);
  ex.query << 1, 0;
  ex.label = Vector::Ones(1);
  data.examples.push_back(ex);

  const Dataset mixed = mixing_layer_A0(data);
  const Example& out = mixed.examples[0];
  CHECK(out.query(0) == doctest::Approx(1.5));
  CHECK(out.query(1) == doctest::Approx(0.5));
  CHECK(out.context(0, 0) == doctest::Approx(1.5));
  CHECK(out.context(0, 1) == doctest::Approx(0.5));
  CHECK(out.context(1, 0) == doctest::Approx(0.5));
  CHECK(out.context(1, 1) == doctest::Approx(1.5));
  CHECK(out.label(0) == doctest::Approx(1.0));
}

TEST_CASE("mixing layer preserves context rank") {
  Rng rng(151);
  for (int trial = 0; trial < 20; ++trial) {
    const Dataset data = builders::random_dataset(3, 4, 9, 1, rng);
    const Dataset mixed = mixing_layer_A0(data);
    for (int t = 0; t < 3; ++t) {
      CHECK(numerical_rank(mixed.examples[t].context) ==
            numerical_rank(data.examples[t].context));
    }
  }
}

TEST_CASE("mixing layer equals the explicit trivial-attention layer") {
  // W_K = W_Q = 0, W_V = W_O = I, skip connection, applied to every token
  Rng rng(157);
  const int n = 4, d = 6;
  AttentionConfig cfg;
  cfg.heads = 1;
  cfg.d = d;
  cfg.d_h = d;
  cfg.d_v = d;
  cfg.d_out = d;
  cfg.skip_connection = true;
  AttentionWeights w = AttentionWeights::zeros(cfg);
  w.value[0] = Matrix::Identity(d, d);
  w.output = Matrix::Identity(d, d);
  w.readout = Matrix::Identity(d, d);

  const Dataset data = builders::random_dataset(3, n, d, 1, rng);
  const Dataset mixed = mixing_layer_A0(data);
  for (int t = 0; t < 3; ++t) {
    const Example& ex = data.examples[t];
    const Vector q_out = forward(w, cfg, ex.context, ex.query).prediction;
    CHECK((q_out - mixed.examples[t].query).norm() < 1e-12);
    for (int i = 0; i < n; ++i) {
      const Vector row_out =
          forward(w, cfg, ex.context, ex.context.row(i).transpose()).prediction;
      CHECK((row_out - mixed.examples[t].context.row(i).transpose()).norm() < 1e-12);
    }
  }
}

TEST_CASE("sinusoidal positional encoding") {
  const Matrix pe = sinusoidal_positional_encoding(4, 6);
  for (int k = 0; k < 3; ++k) {
    CHECK(pe(0, 2 * k) == doctest::Approx(0.0));
    CHECK(pe(0, 2 * k + 1) == doctest::Approx(1.0));
  }
  CHECK(pe.maxCoeff() <= 1.0);
  CHECK(pe.minCoeff() >= -1.0);
  // distinct frequencies keep short tables numerically full-rank; the tail
  // singular values collapse once positions pile up (sin(i w) ~ i w for the
  // slow frequencies), so a 33x64 table is far from rank 33 in doubles
  CHECK(numerical_rank(sinusoidal_positional_encoding(8, 64)) == 8);
  CHECK(numerical_rank(sinusoidal_positional_encoding(12, 64)) == 12);
  const int wide_rank = numerical_rank(sinusoidal_positional_encoding(33, 64));
  CHECK(wide_rank >= 12);
  CHECK(wide_rank < 33);
  CHECK_THROWS_AS(sinusoidal_positional_encoding(4, 7), std::invalid_argument);
}

TEST_CASE("dataset and config validation") {
  Dataset empty;
  CHECK_THROWS_AS(empty.validate(), DimensionError);

  AttentionConfig bad;
  bad.d = 4;
  bad.d_v = 5;  // d_v > d
  bad.d_out = 1;
  CHECK_THROWS_AS(bad.validate(), DimensionError);

  CHECK(Task::parse("cls:10").num_classes == 10);
  CHECK(Task::parse("reg").kind == Task::Kind::regression);
  CHECK_THROWS_AS(Task::parse("nope"), std::invalid_argument);
}

TEST_SUITE_END();
