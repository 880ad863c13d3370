#pragma once

#include "attnmemcap/attention.hpp"
#include "attnmemcap/numerics.hpp"

#include <optional>

namespace attnmemcap {

struct CheckOptions {
  long trials = 5000;           // sampled-subset protocol default
  double pass_fraction = 0.99;  // share of trials that must succeed
  std::uint64_t seed = 0;
  RankTolerance tol{};
};

struct Assumption1Result {
  bool passed = false;
  double pass_rate = 0.0;
  long trials = 0;
};

struct Assumption2Result {
  bool passed = false;
  std::optional<int> first_failing_example;
};

struct AssumptionReport {
  Assumption1Result assumption1;
  Assumption2Result assumption2;
  Assumption1Result assumption3;
  Assumption1Result general_position;
  int measured_kruskal_lower_bound = 0;
};

/// Query vectors have Kruskal rank at least n, tested by the sampled
/// protocol (draw n queries, check rank n, repeat).
Assumption1Result check_assumption1(const Dataset& data, const CheckOptions& opts = {});

/// Every context matrix has full row rank n. Exact, reports the first
/// offender. n > d fails outright.
Assumption2Result check_assumption2(const Dataset& data, RankTolerance tol = {});

/// The mixed vectors e + mean(context rows) have Kruskal rank at least n.
Assumption1Result check_assumption3(const Dataset& data, const CheckOptions& opts = {});

/// Kruskal rank equals the ambient dimension d (sampled, k = d).
Assumption1Result check_general_position(const Matrix& vectors, const CheckOptions& opts = {});

/// Largest k <= k_max whose sampled subset test still passes. Starts at 1;
/// returns 0 when even single vectors fail (a zero vector present).
int kruskal_lower_bound_scan(const Matrix& vectors, int k_max, const CheckOptions& opts = {});

/// All checks at once, plus the lower-bound scan up to min(dims, scan cap);
/// this is what the `check` subcommand serializes.
AssumptionReport check_all(const Dataset& data, const CheckOptions& opts = {},
                           int kruskal_scan_max = 0);

}  // namespace attnmemcap
