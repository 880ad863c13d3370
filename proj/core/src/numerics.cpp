#include "attnmemcap/numerics.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace attnmemcap {

namespace {

void require_finite(const Matrix& m, const char* who) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(who) + ": matrix has non-finite entries");
  }
}

int rank_from_singular_values(const Vector& sv, double rel_tol) {
  if (sv.size() == 0) return 0;
  const double cutoff = rel_tol * sv(0);  // Eigen returns them sorted descending
  if (!(sv(0) > 0.0)) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff) ++r;
  }
  return r;
}

}  // namespace

int numerical_rank(const Matrix& m, RankTolerance tol) {
  require_finite(m, "numerical_rank");
  if (m.rows() == 0 || m.cols() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return rank_from_singular_values(svd.singularValues(), tol.relative);
}

Matrix pseudo_inverse(const Matrix& m, RankTolerance tol) {
  require_finite(m, "pseudo_inverse");
  if (m.rows() == 0 || m.cols() == 0) return Matrix::Zero(m.cols(), m.rows());
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double cutoff = sv.size() > 0 ? tol.relative * sv(0) : 0.0;
  Vector inv = Vector::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff && sv(i) > 0.0) inv(i) = 1.0 / sv(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Matrix least_squares_solve(const Matrix& a, const Matrix& b, RankTolerance tol) {
  require_finite(a, "least_squares_solve");
  require_finite(b, "least_squares_solve");
  if (a.rows() != b.rows()) {
    throw DimensionError("least_squares_solve: A has " + std::to_string(a.rows()) +
                         " rows but B has " + std::to_string(b.rows()));
  }
  return pseudo_inverse(a, tol) * b;
}

Matrix orthogonal_complement_basis(const Matrix& v, RankTolerance tol) {
  require_finite(v, "orthogonal_complement_basis");
  const Eigen::Index d = v.cols();
  if (v.rows() > d) {
    throw DimensionError("orthogonal_complement_basis: expected m <= d, got " +
                         std::to_string(v.rows()) + " x " + std::to_string(d));
  }
  if (v.rows() == 0) return Matrix::Identity(d, d);
  Eigen::JacobiSVD<Matrix> svd(v, Eigen::ComputeFullV);
  const int r = rank_from_singular_values(svd.singularValues(), tol.relative);
  return svd.matrixV().rightCols(d - r).transpose();
}

std::pair<Matrix, Matrix> factor_bounded_rank(const Matrix& w, int max_rank,
                                              RankTolerance tol) {
  require_finite(w, "factor_bounded_rank");
  if (max_rank < 0) throw std::invalid_argument("factor_bounded_rank: negative rank bound");
  const int measured = numerical_rank(w, tol);
  if (measured > max_rank) {
    throw std::invalid_argument("factor_bounded_rank: matrix has numerical rank " +
                                std::to_string(measured) + " > bound " +
                                std::to_string(max_rank));
  }
  Matrix k = Matrix::Zero(w.rows(), max_rank);
  Matrix q = Matrix::Zero(w.cols(), max_rank);
  if (w.rows() == 0 || w.cols() == 0 || max_rank == 0) return {k, q};
  Eigen::JacobiSVD<Matrix> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const Eigen::Index keep = std::min<Eigen::Index>(max_rank, sv.size());
  for (Eigen::Index i = 0; i < keep; ++i) {
    const double root = std::sqrt(std::max(sv(i), 0.0));
    k.col(i) = svd.matrixU().col(i) * root;
    q.col(i) = svd.matrixV().col(i) * root;
  }
  return {k, q};
}

long subset_count(int n, int k, long cap) {
  if (k < 0 || k > n) return 0;
  long c = 1;
  for (int i = 1; i <= k; ++i) {
    // c = c * (n - k + i) / i, guarding overflow against the cap
    if (c > cap / (n - k + i) + 1) return cap + 1;
    c = c * (n - k + i) / i;
    if (c > cap) return cap + 1;
  }
  return c;
}

namespace {

bool subset_full_rank(const Matrix& vectors, const std::vector<int>& idx,
                      RankTolerance tol) {
  Matrix sub(static_cast<Eigen::Index>(idx.size()), vectors.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = vectors.row(idx[i]);
  return numerical_rank(sub, tol) == static_cast<int>(idx.size());
}

}  // namespace

KruskalCheck kruskal_rank_sampled(const Matrix& vectors, int k,
                                  const KruskalOptions& opts) {
  const int n = static_cast<int>(vectors.rows());
  if (k < 1) throw std::invalid_argument("kruskal_rank_sampled: k must be >= 1");
  if (n < k) {
    throw std::invalid_argument("kruskal_rank_sampled: only " + std::to_string(n) +
                                " vectors supplied for subsets of size " + std::to_string(k));
  }
  if (k > vectors.cols()) {
    throw std::invalid_argument("kruskal_rank_sampled: k exceeds the ambient dimension");
  }
  if (opts.trials < 1) throw std::invalid_argument("kruskal_rank_sampled: trials must be >= 1");

  KruskalCheck result;
  const long total = subset_count(n, k, opts.exhaustive_limit);
  long successes = 0;

  if (total <= opts.exhaustive_limit) {
    // every subset, in lexicographic order
    std::vector<int> idx(k);
    std::iota(idx.begin(), idx.end(), 0);
    long tried = 0;
    while (true) {
      ++tried;
      if (subset_full_rank(vectors, idx, opts.tol)) ++successes;
      int pos = k - 1;
      while (pos >= 0 && idx[pos] == n - k + pos) --pos;
      if (pos < 0) break;
      ++idx[pos];
      for (int j = pos + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
    result.trials_run = tried;
    result.exhaustive = true;
  } else {
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    for (long t = 0; t < opts.trials; ++t) {
      Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(t)));
      std::vector<int> idx;
      idx.reserve(k);
      std::sample(all.begin(), all.end(), std::back_inserter(idx), k, rng);
      if (subset_full_rank(vectors, idx, opts.tol)) ++successes;
    }
    result.trials_run = opts.trials;
    result.exhaustive = false;
  }

  result.pass_rate = static_cast<double>(successes) / static_cast<double>(result.trials_run);
  result.passed = result.pass_rate >= opts.pass_fraction;
  return result;
}

}  // namespace attnmemcap
