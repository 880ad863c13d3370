#include "attnmemcap/bounds.hpp"

#include "attnmemcap/numerics.hpp"

#include <algorithm>

namespace attnmemcap {

namespace {
void require_positive(long v, const char* name) {
  if (v < 1) throw std::invalid_argument(std::string(name) + " must be positive");
}
}  // namespace

long theorem1_lower_bound(int heads, int n, int d_h) {
  require_positive(heads, "heads");
  require_positive(n, "n");
  require_positive(d_h, "d_h");
  return static_cast<long>(heads) * (std::min(n, d_h) - 1) + 1;
}

long remark1_lower_bound(int heads, int kruskal_rank, int d_h) {
  require_positive(heads, "heads");
  require_positive(kruskal_rank, "Q");
  require_positive(d_h, "d_h");
  return static_cast<long>(heads) * (std::min(kruskal_rank, d_h) - 1) + 1;
}

long prop2_upper_bound(int heads, int n) {
  require_positive(heads, "heads");
  require_positive(n, "n");
  return static_cast<long>(heads) * (n - 1) + 1;
}

long prop5_upper_bound(int heads, int d) {
  require_positive(heads, "heads");
  require_positive(d, "d");
  return static_cast<long>(heads) * (d - 1) + 1;
}

long relu_upper_bound(int n, int m, int d_out) {
  require_positive(n, "n");
  require_positive(m, "m");
  require_positive(d_out, "d_out");
  return (static_cast<long>(n) + 1) * m / d_out + m + 1;
}

int empirical_rank_Z(const AttentionWeights& w, const AttentionConfig& cfg,
                     const Dataset& data, RankTolerance tol) {
  return numerical_rank(feature_matrix_Z(w, cfg, data), tol);
}

}  // namespace attnmemcap
