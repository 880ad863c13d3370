#pragma once

#include "attnmemcap/types.hpp"

#include <utility>
#include <vector>

namespace attnmemcap {

/// Number of singular values above tol.relative * sigma_max. Zero matrices
/// (and empty ones) have rank 0. Throws on non-finite entries.
int numerical_rank(const Matrix& m, RankTolerance tol = {});

/// Moore-Penrose pseudo-inverse with singular values below the relative
/// cutoff treated as zero.
Matrix pseudo_inverse(const Matrix& m, RankTolerance tol = {});

/// Minimum-norm X with ||A X - B||_F minimal, computed from the singular
/// decomposition of A (never via normal equations; the synthesizer feeds
/// this rank-deficient systems).
Matrix least_squares_solve(const Matrix& a, const Matrix& b, RankTolerance tol = {});

/// Orthonormal basis, as rows, of the orthogonal complement of the row
/// space of `v` (an m x d matrix, m <= d). Result is (d - rank(v)) x d.
Matrix orthogonal_complement_basis(const Matrix& v, RankTolerance tol = {});

/// Factor W = K * Q^T with K, Q of width `max_rank` via the truncated
/// singular decomposition (K = U sqrt(S), Q = V sqrt(S)). Refuses, reporting
/// the measured rank, when numerical_rank(W) > max_rank.
std::pair<Matrix, Matrix> factor_bounded_rank(const Matrix& w, int max_rank,
                                              RankTolerance tol = {});

struct KruskalOptions {
  long trials = 5000;           // sampled subsets per test
  double pass_fraction = 0.99;  // pass iff pass_rate >= this
  std::uint64_t seed = 0;
  long exhaustive_limit = 20000;  // enumerate all subsets when C(N, k) fits
  RankTolerance tol{};
};

struct KruskalCheck {
  bool passed = false;
  double pass_rate = 0.0;
  long trials_run = 0;
  bool exhaustive = false;
};

/// Sampled test that every size-k subset of the given vectors (rows of
/// `vectors`) is linearly independent. Falls back to exhaustive subset
/// enumeration when C(N, k) <= exhaustive_limit. Trials use seeds derived
/// per trial, so results do not depend on evaluation order.
KruskalCheck kruskal_rank_sampled(const Matrix& vectors, int k,
                                  const KruskalOptions& opts = {});

/// Number of size-k subsets of N elements, saturating at `cap`.
long subset_count(int n, int k, long cap);

}  // namespace attnmemcap
