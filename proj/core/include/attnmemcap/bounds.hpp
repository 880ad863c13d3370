#pragma once

#include "attnmemcap/attention.hpp"

namespace attnmemcap {

/// Constructive memorization lower bound H * (min(n, d_h) - 1) + 1.
long theorem1_lower_bound(int heads, int n, int d_h);

/// Lower bound when queries only reach Kruskal rank Q < n:
/// H * (min(Q, d_h) - 1) + 1.
long remark1_lower_bound(int heads, int kruskal_rank, int d_h);

/// Rank ceiling for shared contexts: H * (n - 1) + 1.
long prop2_upper_bound(int heads, int n);

/// Rank ceiling when every context row sums to one constant: H * (d - 1) + 1.
long prop5_upper_bound(int heads, int d);

/// Memorization ceiling of a two-layer ReLU net with hidden width m on the
/// flattened inputs: floor((n + 1) * m / d_out) + m + 1.
long relu_upper_bound(int n, int m, int d_out);

/// numerical_rank of the feature matrix at the given weights.
int empirical_rank_Z(const AttentionWeights& w, const AttentionConfig& cfg,
                     const Dataset& data, RankTolerance tol = {});

}  // namespace attnmemcap
