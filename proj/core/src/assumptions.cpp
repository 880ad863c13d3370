#include "attnmemcap/assumptions.hpp"

#include <algorithm>

namespace attnmemcap {

namespace {

Matrix stack_queries(const Dataset& data) {
  const DatasetDims dm = data.dims();
  Matrix q(dm.T, dm.d);
  for (int t = 0; t < dm.T; ++t) q.row(t) = data.examples[t].query.transpose();
  return q;
}

Matrix stack_mixed_queries(const Dataset& data) {
  const DatasetDims dm = data.dims();
  Matrix q(dm.T, dm.d);
  for (int t = 0; t < dm.T; ++t) {
    const Example& ex = data.examples[t];
    q.row(t) = (ex.query + ex.context.colwise().mean().transpose()).transpose();
  }
  return q;
}

Assumption1Result subset_test(const Matrix& vectors, int k, const CheckOptions& opts) {
  KruskalOptions ko;
  ko.trials = opts.trials;
  ko.pass_fraction = opts.pass_fraction;
  ko.seed = opts.seed;
  ko.tol = opts.tol;
  const KruskalCheck check = kruskal_rank_sampled(vectors, k, ko);
  return {check.passed, check.pass_rate, check.trials_run};
}

}  // namespace

Assumption1Result check_assumption1(const Dataset& data, const CheckOptions& opts) {
  data.validate();
  const DatasetDims dm = data.dims();
  if (dm.T < dm.n) {
    throw std::invalid_argument("check_assumption1: needs T >= n (" + std::to_string(dm.T) +
                                " < " + std::to_string(dm.n) + ")");
  }
  return subset_test(stack_queries(data), dm.n, opts);
}

Assumption2Result check_assumption2(const Dataset& data, RankTolerance tol) {
  data.validate();
  const DatasetDims dm = data.dims();
  Assumption2Result res;
  if (dm.n > dm.d) {
    // rank n is impossible in d < n dimensions
    res.passed = false;
    res.first_failing_example = 0;
    return res;
  }
  for (int t = 0; t < dm.T; ++t) {
    if (numerical_rank(data.examples[t].context, tol) != dm.n) {
      res.passed = false;
      res.first_failing_example = t;
      return res;
    }
  }
  res.passed = true;
  return res;
}

Assumption1Result check_assumption3(const Dataset& data, const CheckOptions& opts) {
  data.validate();
  const DatasetDims dm = data.dims();
  if (dm.T < dm.n) {
    throw std::invalid_argument("check_assumption3: needs T >= n (" + std::to_string(dm.T) +
                                " < " + std::to_string(dm.n) + ")");
  }
  return subset_test(stack_mixed_queries(data), dm.n, opts);
}

Assumption1Result check_general_position(const Matrix& vectors, const CheckOptions& opts) {
  const int d = static_cast<int>(vectors.cols());
  if (vectors.rows() < d) {
    throw std::invalid_argument("check_general_position: fewer than d vectors supplied");
  }
  return subset_test(vectors, d, opts);
}

int kruskal_lower_bound_scan(const Matrix& vectors, int k_max, const CheckOptions& opts) {
  k_max = std::min<int>(k_max, static_cast<int>(std::min(vectors.rows(), vectors.cols())));
  int best = 0;
  for (int k = 1; k <= k_max; ++k) {
    if (!subset_test(vectors, k, opts).passed) break;
    best = k;
  }
  return best;
}

AssumptionReport check_all(const Dataset& data, const CheckOptions& opts,
                           int kruskal_scan_max) {
  data.validate();
  const DatasetDims dm = data.dims();
  AssumptionReport report;
  report.assumption2 = check_assumption2(data, opts.tol);
  if (dm.T >= dm.n) {
    report.assumption1 = check_assumption1(data, opts);
    report.assumption3 = check_assumption3(data, opts);
  }
  const Matrix queries = stack_queries(data);
  if (dm.T >= dm.d) report.general_position = check_general_position(queries, opts);
  if (kruskal_scan_max > 0) {
    report.measured_kruskal_lower_bound =
        kruskal_lower_bound_scan(queries, kruskal_scan_max, opts);
  }
  return report;
}

}  // namespace attnmemcap
