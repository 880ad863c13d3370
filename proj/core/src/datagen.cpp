#include "attnmemcap/experiments.hpp"

#include <string>

namespace attnmemcap {

namespace {

Vector draw_label(const Task& task, Rng& rng) {
  if (task.kind == Task::Kind::classification) {
    std::uniform_int_distribution<int> cls(0, task.num_classes - 1);
    Vector y(1);
    y(0) = static_cast<double>(cls(rng));
    return y;
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector y(1);
  y(0) = unif(rng);
  return y;
}

Matrix draw_uniform(int rows, int cols, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = unif(rng);
  return m;
}

void check_shape(int T, int n, int d) {
  if (T < 1) throw std::invalid_argument("dataset generation needs T >= 1");
  if (!(n >= 1 && n < d)) {
    throw std::invalid_argument("dataset generation needs 1 <= n < d, got n=" +
                                std::to_string(n) + " d=" + std::to_string(d));
  }
}

Dataset generate(int T, int n, int d, const Task& task, std::uint64_t seed, bool shared) {
  check_shape(T, n, d);
  Rng rng(derive_seed(seed, 0xD47A));
  const Matrix pos = sinusoidal_positional_encoding(n + 1, d);

  Dataset data;
  data.task = task;
  data.examples.reserve(T);
  const Matrix shared_tokens = shared ? draw_uniform(n, d, rng) : Matrix();

  for (int t = 0; t < T; ++t) {
    Example ex;
    Matrix tokens = shared ? shared_tokens : draw_uniform(n, d, rng);
    ex.context = tokens + pos.bottomRows(n);  // row i carries position i+1
    Vector raw_query(d);
    {
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      for (int j = 0; j < d; ++j) raw_query(j) = unif(rng);
    }
    ex.query = raw_query + pos.row(0).transpose();
    ex.label = draw_label(task, rng);
    data.examples.push_back(std::move(ex));
  }
  return data;
}

}  // namespace

Dataset gen_shared_context_dataset(int T, int n, int d, const Task& task, std::uint64_t seed) {
  return generate(T, n, d, task, seed, true);
}

Dataset gen_general_position_dataset(int T, int n, int d, const Task& task,
                                     std::uint64_t seed) {
  return generate(T, n, d, task, seed, false);
}

}  // namespace attnmemcap
