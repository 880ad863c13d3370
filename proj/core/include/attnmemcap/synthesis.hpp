#pragma once

#include "attnmemcap/attention.hpp"
#include "attnmemcap/numerics.hpp"

#include <limits>
#include <utility>
#include <vector>

namespace attnmemcap {

struct SynthesisConfig {
  AttentionConfig model;
  RankTolerance tol{};
  /// L1 distance to the one-hot limit that counts as saturated.
  double saturation_delta = 1e-9;
  /// Hard cap on the doubling search for the saturation scale.
  double scale_cap = 1099511627776.0;  // 2^40
  /// Resampling budget per greedy row / per rank-one saturation matrix.
  int retry_budget = 64;
  std::uint64_t seed = 0;
};

/// Rank-one matrix gamma * w^T whose logits vanish on a protected example
/// set and are pairwise distinct (with margin) everywhere else. The cached
/// per-example logits are the evaluation path for the scale search; for
/// protected examples they are exact zero vectors, so scaled copies leave
/// the softmax inputs bit-identical.
struct SaturationMatrix {
  Vector gamma;
  Vector w;
  std::vector<int> protected_examples;  // ascending
  std::vector<Vector> logits;           // one per dataset example
  double min_margin = 0.0;  // min over unprotected of (pairwise gap / logit scale)

  Matrix as_matrix() const { return gamma * w.transpose(); }
};

struct ScaleDiagnostics {
  double max_l1_to_limit = 0.0;
  double delta_closed_form = std::numeric_limits<double>::infinity();
  int achieved_rank = 0;
  bool protected_logits_exact = false;
};

struct HeadReport {
  std::vector<int> assigned;
  bool saturating = false;
  double scale_c = 0.0;
  int achieved_rank = 0;       // rank of the designed block (incl. offset) for this head
  int rank_after = 0;          // accumulated feature-matrix rank once the head is in place
  double max_l1_to_limit = 0.0;
  double min_logit_margin = 0.0;
  double delta_closed_form = std::numeric_limits<double>::infinity();
  bool protected_logits_exact = true;
};

struct SynthesisReport {
  std::vector<HeadReport> heads;
  int rank_Z = 0;
  long capacity = 0;
  int per_head_budget = 0;  // r = min(n, d_h)
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
};

struct VerifyResult {
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Logits alpha with softmax(alpha) = theta, normalized to sum to zero.
/// Only interior targets invert; one-hot limits are reached by saturation.
Vector invert_softmax_targets(const Vector& theta);

/// One head's key-query product W (d x d, rank <= m) realizing the given
/// softmax targets on the m selected examples: beta = pinv(E) * alpha per
/// example, then the minimum-norm solve of W [e_1 ... e_m] = [beta_1 ... beta_m].
Matrix solve_head_for_targets(const Dataset& data, const std::vector<int>& indices,
                              const std::vector<Vector>& target_thetas, int d_h,
                              RankTolerance tol = {});

/// The rank-one suppressor: draws w in the orthogonal complement of the
/// protected queries and gamma Gaussian, resampling until every unprotected
/// example has pairwise-distinct logits with margin >= 1e-6 of their scale.
SaturationMatrix construct_w_plus(const Dataset& data, const std::vector<int>& protected_idx,
                                  RankTolerance tol, int retry_budget, Rng& rng);

/// Smallest c in 1, 2, 4, ... <= scale_cap such that (a) every unprotected
/// example is within saturation_delta (L1) of its one-hot limit and (b) the
/// designed block keeps rank >= required_rank with the elimination offset
/// recomputed at scale c. elim_coeffs may be empty (no offset).
double select_saturation_scale(const Matrix& w_star, const SaturationMatrix& plus,
                               const Dataset& data, const Matrix& target_block,
                               const Matrix& elim_coeffs, int required_rank,
                               const SynthesisConfig& cfg,
                               ScaleDiagnostics* diag = nullptr);

/// Strictly positive convex-combination targets whose realized rows
/// E^T theta (+ the matching offset row) are linearly independent of all
/// previously accepted rows. offset may be empty.
std::vector<Vector> greedy_row_targets(const Dataset& data, const std::vector<int>& indices,
                                       const Matrix& offset, const SynthesisConfig& cfg,
                                       Rng& rng);

/// The full construction: explicit weights that memorize the dataset
/// exactly, plus the per-head trace. Requires n < d and
/// T <= H * (min(n, d_h) - 1) + 1.
std::pair<AttentionWeights, SynthesisReport> synthesize(const Dataset& data,
                                                        const SynthesisConfig& cfg);

/// Same construction for the skip-connection layer: shifts the labels by
/// the first d_out query entries, synthesizes, and verifies under the
/// skip-connection forward pass against the original labels.
std::pair<AttentionWeights, SynthesisReport> synthesize_skip(const Dataset& data,
                                                             SynthesisConfig cfg);

/// Worst-case prediction error over the dataset. The relative error of one
/// example is ||y_hat - y||_inf / max(1, ||y||_inf).
VerifyResult verify_memorization(const AttentionWeights& w, const AttentionConfig& cfg,
                                 const Dataset& data, double tol);

}  // namespace attnmemcap
