#include "attnmemcap/synthesis.hpp"

#include "attnmemcap/assumptions.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace attnmemcap {

namespace {

// logits of one head with matrix weights, same association order as forward()
Vector head_logits(const Matrix& w, const Example& ex) {
  return ex.context * (w * ex.query);
}

Vector attended_row(const Example& ex, const Vector& theta) {
  return ex.context.transpose() * theta;
}

Vector one_hot_limit(const Vector& plus_logits) {
  Eigen::Index arg = 0;
  plus_logits.maxCoeff(&arg);
  Vector v = Vector::Zero(plus_logits.size());
  v(arg) = 1.0;
  return v;
}

std::vector<int> complement_of(const std::vector<int>& subset, int total) {
  std::vector<char> in(total, 0);
  for (int t : subset) in[t] = 1;
  std::vector<int> out;
  out.reserve(total - static_cast<int>(subset.size()));
  for (int t = 0; t < total; ++t)
    if (!in[t]) out.push_back(t);
  return out;
}

// strictly interior point of the simplex, entries kept away from 0
Vector sample_interior_target(int n, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector raw(n);
  for (int i = 0; i < n; ++i) raw(i) = unif(rng);
  const double sum = raw.sum();
  Vector theta = sum > 0.0 ? Vector(raw / sum) : Vector(Vector::Constant(n, 1.0 / n));
  const double eps = std::min(1e-3, 0.1 / n);
  return theta * (1.0 - n * eps) + Vector::Constant(n, eps);
}

double smallest_kept_singular_value(const Matrix& m, RankTolerance tol) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0 || !(sv(0) > 0.0)) return 0.0;
  const double cutoff = tol.relative * sv(0);
  double smallest = 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff) smallest = sv(i);
  }
  return smallest;
}

double spectral_norm(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
}

}  // namespace

Vector invert_softmax_targets(const Vector& theta) {
  if (theta.size() == 0) throw DimensionError("invert_softmax_targets: empty target");
  if (theta.minCoeff() <= 0.0) {
    throw std::invalid_argument(
        "invert_softmax_targets: target has a non-positive entry; one-hot targets "
        "are reached by saturation, not inversion");
  }
  if (std::abs(theta.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("invert_softmax_targets: target does not sum to 1");
  }
  Vector alpha = theta.array().log();
  return alpha.array() - alpha.mean();
}

Matrix solve_head_for_targets(const Dataset& data, const std::vector<int>& indices,
                              const std::vector<Vector>& target_thetas, int d_h,
                              RankTolerance tol) {
  data.validate();
  const DatasetDims dm = data.dims();
  const int m = static_cast<int>(indices.size());
  if (m == 0) return Matrix::Zero(dm.d, dm.d);
  if (static_cast<int>(target_thetas.size()) != m) {
    throw DimensionError("solve_head_for_targets: one target per example required");
  }
  if (m > std::min(dm.n, d_h)) {
    throw std::invalid_argument("solve_head_for_targets: " + std::to_string(m) +
                                " examples exceed min(n, d_h) = " +
                                std::to_string(std::min(dm.n, d_h)));
  }

  Matrix queries(dm.d, m);
  Matrix betas(dm.d, m);
  for (int i = 0; i < m; ++i) {
    const Example& ex = data.examples[indices[i]];
    if (numerical_rank(ex.context, tol) != dm.n) {
      throw AssumptionError("solve_head_for_targets: context of example " +
                            std::to_string(indices[i]) + " is rank-deficient");
    }
    const Vector alpha = invert_softmax_targets(target_thetas[i]);
    betas.col(i) = pseudo_inverse(ex.context, tol) * alpha;
    queries.col(i) = ex.query;
  }
  if (numerical_rank(queries, tol) != m) {
    throw AssumptionError("solve_head_for_targets: selected queries are linearly dependent");
  }
  // min-norm W with W * queries = betas; full column rank makes it exact
  return least_squares_solve(queries.transpose(), betas.transpose(), tol).transpose();
}

SaturationMatrix construct_w_plus(const Dataset& data, const std::vector<int>& protected_idx,
                                  RankTolerance tol, int retry_budget, Rng& rng) {
  data.validate();
  const DatasetDims dm = data.dims();
  const int m = static_cast<int>(protected_idx.size());
  if (m >= dm.d) {
    throw std::invalid_argument("construct_w_plus: cannot protect " + std::to_string(m) +
                                " queries in dimension " + std::to_string(dm.d));
  }

  Matrix protected_queries(m, dm.d);
  for (int i = 0; i < m; ++i) {
    protected_queries.row(i) = data.examples[protected_idx[i]].query.transpose();
  }
  const Matrix complement = orthogonal_complement_basis(protected_queries, tol);
  if (complement.rows() == 0) {
    throw AssumptionError("construct_w_plus: protected queries span the whole space");
  }

  const std::vector<int> others = complement_of(protected_idx, dm.T);
  constexpr double kMarginFloor = 1e-6;
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (int attempt = 0; attempt < retry_budget; ++attempt) {
    // random direction inside the complement, random Gaussian left factor
    Vector mix(complement.rows());
    for (Eigen::Index i = 0; i < mix.size(); ++i) mix(i) = gauss(rng);
    Vector w = complement.transpose() * mix;
    const double wn = w.norm();
    if (wn == 0.0) continue;
    w /= wn;
    Vector gamma(dm.d);
    for (int i = 0; i < dm.d; ++i) gamma(i) = gauss(rng);

    SaturationMatrix result;
    result.gamma = gamma;
    result.w = w;
    result.protected_examples = protected_idx;
    std::sort(result.protected_examples.begin(), result.protected_examples.end());
    result.logits.assign(dm.T, Vector());
    result.min_margin = std::numeric_limits<double>::infinity();

    bool ok = true;
    for (int t : result.protected_examples) {
      // designed zero; the numerical residue is rounding noise, drop it so
      // scaled copies leave the softmax input untouched
      const double residue = std::abs(w.dot(data.examples[t].query));
      if (residue > 1e-9 * std::max(1.0, data.examples[t].query.norm())) {
        throw SynthesisError(-1, "construct_w_plus",
                             "orthogonal complement failed to annihilate a protected query");
      }
      result.logits[t] = Vector::Zero(dm.n);
    }
    for (int t : others) {
      const Example& ex = data.examples[t];
      Vector logit = (ex.context * gamma) * w.dot(ex.query);
      const double scale = logit.cwiseAbs().maxCoeff();
      if (!(scale > 0.0)) {
        ok = false;
        break;
      }
      double gap = std::numeric_limits<double>::infinity();
      for (int i = 0; i < dm.n && ok; ++i) {
        for (int j = i + 1; j < dm.n; ++j) {
          gap = std::min(gap, std::abs(logit(i) - logit(j)));
        }
      }
      if (dm.n > 1) {
        if (!(gap >= kMarginFloor * scale)) {
          ok = false;
          break;
        }
        result.min_margin = std::min(result.min_margin, gap / scale);
      }
      result.logits[t] = std::move(logit);
    }
    if (ok) {
      if (!std::isfinite(result.min_margin)) result.min_margin = 0.0;  // no pairs to separate
      return result;
    }
  }
  throw SynthesisError(-1, "construct_w_plus",
                       "retry budget exhausted without distinct-logit margins; "
                       "data may be degenerate");
}

double select_saturation_scale(const Matrix& w_star, const SaturationMatrix& plus,
                               const Dataset& data, const Matrix& target_block,
                               const Matrix& elim_coeffs, int required_rank,
                               const SynthesisConfig& cfg, ScaleDiagnostics* diag) {
  const DatasetDims dm = data.dims();
  const std::vector<int> others = complement_of(plus.protected_examples, dm.T);
  const bool has_offset = elim_coeffs.size() > 0;
  if (has_offset &&
      (elim_coeffs.rows() != target_block.rows() ||
       elim_coeffs.cols() != static_cast<Eigen::Index>(others.size()))) {
    throw DimensionError("select_saturation_scale: elimination coefficients shape mismatch");
  }

  // c-independent pieces of the evaluation path
  std::vector<Vector> star_logits(dm.T);
  for (int t = 0; t < dm.T; ++t) star_logits[t] = head_logits(w_star, data.examples[t]);
  std::vector<Vector> limits(dm.T);
  for (int t : others) limits[t] = one_hot_limit(plus.logits[t]);

  // closed-form delta bound from the perturbation argument, for the log
  if (diag) {
    diag->delta_closed_form = std::numeric_limits<double>::infinity();
    if (has_offset && others.size() > 0) {
      Matrix z_a_limit(static_cast<Eigen::Index>(others.size()), dm.d);
      for (std::size_t j = 0; j < others.size(); ++j) {
        z_a_limit.row(static_cast<Eigen::Index>(j)) =
            attended_row(data.examples[others[j]], limits[others[j]]).transpose();
      }
      const Matrix offset_limit = -elim_coeffs * z_a_limit;
      const double sigma_min =
          smallest_kept_singular_value(target_block + offset_limit, cfg.tol);
      double e_max = 0.0;
      for (const Example& ex : data.examples) {
        e_max = std::max(e_max, ex.context.rowwise().norm().maxCoeff());
      }
      const double c_norm = spectral_norm(elim_coeffs);
      if (sigma_min > 0.0 && e_max > 0.0 && c_norm > 0.0) {
        diag->delta_closed_form =
            sigma_min / (std::sqrt(static_cast<double>(others.size())) * e_max * c_norm);
      }
    }
  }

  for (double c = 1.0; c <= cfg.scale_cap; c *= 2.0) {
    double max_l1 = 0.0;
    bool saturated = true;
    Matrix z_a_c(static_cast<Eigen::Index>(others.size()), dm.d);
    for (std::size_t j = 0; j < others.size(); ++j) {
      const int t = others[j];
      const Vector theta = softmax(star_logits[t] + c * plus.logits[t]);
      const double l1 = (theta - limits[t]).lpNorm<1>();
      max_l1 = std::max(max_l1, l1);
      if (l1 > cfg.saturation_delta) {
        saturated = false;
        break;
      }
      if (has_offset) {
        z_a_c.row(static_cast<Eigen::Index>(j)) =
            attended_row(data.examples[t], theta).transpose();
      }
    }
    if (!saturated) continue;

    int rank_now = required_rank;
    if (target_block.rows() > 0) {
      Matrix designed = target_block;
      if (has_offset) designed -= elim_coeffs * z_a_c;
      rank_now = numerical_rank(designed, cfg.tol);
      if (rank_now < required_rank) continue;
    }

    if (diag) {
      diag->max_l1_to_limit = max_l1;
      diag->achieved_rank = rank_now;
      // protected logits are untouched by construction: their saturation
      // logit vector is exactly zero, so alpha* + c*0 is the same array
      diag->protected_logits_exact = true;
      for (int t : plus.protected_examples) {
        const Vector at_c = star_logits[t] + c * plus.logits[t];
        if ((at_c.array() != star_logits[t].array()).any()) {
          diag->protected_logits_exact = false;
        }
      }
    }
    return c;
  }
  throw SynthesisError(-1, "select_saturation_scale",
                       "scale cap " + std::to_string(cfg.scale_cap) +
                           " reached before saturation and the rank condition held");
}

std::vector<Vector> greedy_row_targets(const Dataset& data, const std::vector<int>& indices,
                                       const Matrix& offset, const SynthesisConfig& cfg,
                                       Rng& rng) {
  const DatasetDims dm = data.dims();
  const int count = static_cast<int>(indices.size());
  const bool has_offset = offset.size() > 0;
  if (has_offset && (offset.rows() != count || offset.cols() != dm.d)) {
    throw DimensionError("greedy_row_targets: offset must be one row per example");
  }
  const int limit = has_offset ? dm.n - 1 : dm.n;
  if (count > limit) {
    throw std::invalid_argument("greedy_row_targets: cannot place " + std::to_string(count) +
                                " independent rows (limit " + std::to_string(limit) + ")");
  }

  std::vector<Vector> targets;
  targets.reserve(count);
  Matrix basis(dm.d, count);  // orthonormal columns spanning accepted rows
  int accepted = 0;

  for (int i = 0; i < count; ++i) {
    const Example& ex = data.examples[indices[i]];
    bool placed = false;
    for (int attempt = 0; attempt < cfg.retry_budget; ++attempt) {
      const Vector theta = sample_interior_target(dm.n, rng);
      Vector row = attended_row(ex, theta);
      if (has_offset) row += offset.row(i).transpose();
      const double norm = row.norm();
      if (!(norm > 0.0)) continue;
      // project out the accepted span (twice, for orthogonality at scale)
      Vector resid = row;
      for (int pass = 0; pass < 2 && accepted > 0; ++pass) {
        resid -= basis.leftCols(accepted) * (basis.leftCols(accepted).transpose() * resid);
      }
      if (resid.norm() > cfg.tol.relative * norm) {
        basis.col(accepted) = resid / resid.norm();
        ++accepted;
        targets.push_back(theta);
        placed = true;
        break;
      }
    }
    if (!placed) {
      throw SynthesisError(-1, "greedy_row_targets",
                           "retry budget exhausted at example " + std::to_string(indices[i]) +
                               "; realized rows keep falling in the accumulated span");
    }
  }
  return targets;
}

namespace {

struct RowSplit {
  std::vector<int> independent;
  std::vector<int> dependent;  // ascending residual (most dependent first)
};

// maximal independent row set, seeded with the already-assigned examples
// (their rows are independent by construction), extended greedily
RowSplit split_rows(const Matrix& z, const std::vector<int>& assigned, RankTolerance tol) {
  const int total = static_cast<int>(z.rows());
  RowSplit split;
  Matrix basis(z.cols(), total);
  int accepted = 0;
  std::vector<char> taken(total, 0);

  auto try_accept = [&](int t) {
    Vector row = z.row(t).transpose();
    const double norm = row.norm();
    Vector resid = row;
    for (int pass = 0; pass < 2 && accepted > 0; ++pass) {
      resid -= basis.leftCols(accepted) * (basis.leftCols(accepted).transpose() * resid);
    }
    if (norm > 0.0 && resid.norm() > tol.relative * norm) {
      basis.col(accepted) = resid / resid.norm();
      ++accepted;
      return std::make_pair(true, 0.0);
    }
    return std::make_pair(false, norm > 0.0 ? resid.norm() / norm : 0.0);
  };

  for (int t : assigned) {
    if (!try_accept(t).first) {
      throw SynthesisError(-1, "row_split",
                           "previously assigned example " + std::to_string(t) +
                               " lost its independent row");
    }
    split.independent.push_back(t);
    taken[t] = 1;
  }
  std::vector<std::pair<double, int>> rejected;
  for (int t = 0; t < total; ++t) {
    if (taken[t]) continue;
    auto [ok, resid] = try_accept(t);
    if (ok) {
      split.independent.push_back(t);
    } else {
      rejected.emplace_back(resid, t);
    }
  }
  std::sort(rejected.begin(), rejected.end());
  for (const auto& [resid, t] : rejected) split.dependent.push_back(t);
  return split;
}

Matrix rows_of(const Matrix& z, const std::vector<int>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), z.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = z.row(idx[i]);
  return out;
}

Matrix realized_head_block(const AttentionWeights& w, int h, const Dataset& data) {
  const DatasetDims dm = data.dims();
  Matrix block(dm.T, dm.d);
  for (int t = 0; t < dm.T; ++t) {
    const Example& ex = data.examples[t];
    const Vector logits = ex.context * (w.key[h] * (w.query[h].transpose() * ex.query));
    block.row(t) = attended_row(ex, softmax(logits)).transpose();
  }
  return block;
}

Matrix designed_block_rows(const Matrix& w, const Dataset& data, const std::vector<int>& idx) {
  Matrix block(static_cast<Eigen::Index>(idx.size()), data.dims().d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Example& ex = data.examples[idx[i]];
    block.row(static_cast<Eigen::Index>(i)) =
        attended_row(ex, softmax(head_logits(w, ex))).transpose();
  }
  return block;
}

void gate_on_assumptions(const Dataset& data, const SynthesisConfig& cfg) {
  const DatasetDims dm = data.dims();
  const Assumption2Result a2 = check_assumption2(data, cfg.tol);
  if (!a2.passed) {
    throw AssumptionError("contexts are not full-rank (first failure at example " +
                          std::to_string(a2.first_failing_example.value_or(-1)) + ")");
  }
  // sampled query-independence gate at the subset size the construction
  // actually uses (r = min(n, d_h), so reduced-Kruskal-rank data run at a
  // matching d_h still passes); per-step solves re-check their exact subsets
  const int k_eff = std::min({dm.n, cfg.model.d_h, dm.T});
  Matrix queries(dm.T, dm.d);
  for (int t = 0; t < dm.T; ++t) queries.row(t) = data.examples[t].query.transpose();
  KruskalOptions ko;
  ko.trials = 200;
  ko.pass_fraction = 0.99;
  ko.seed = derive_seed(cfg.seed, 0x517);
  ko.tol = cfg.tol;
  const KruskalCheck check = kruskal_rank_sampled(queries, k_eff, ko);
  if (!check.passed) {
    throw AssumptionError("query vectors fail the sampled Kruskal-rank test at k = " +
                          std::to_string(k_eff) +
                          " (pass rate " + std::to_string(check.pass_rate) + ")");
  }
}

}  // namespace

std::pair<AttentionWeights, SynthesisReport> synthesize(const Dataset& data,
                                                        const SynthesisConfig& cfg) {
  data.validate();
  cfg.model.validate();
  if (cfg.model.skip_connection) {
    throw std::invalid_argument("synthesize targets the plain layer; use synthesize_skip");
  }
  const DatasetDims dm = data.dims();
  if (dm.d != cfg.model.d || dm.d_out != cfg.model.d_out) {
    throw DimensionError("synthesize: dataset dimensions do not match the model config");
  }
  if (!(dm.n < dm.d)) {
    throw AssumptionError("synthesize requires context size n < dimension d");
  }

  const int heads = cfg.model.heads;
  const int d_h = cfg.model.d_h;
  const int r = std::min(dm.n, d_h);
  const long capacity = static_cast<long>(heads) * (r - 1) + 1;
  if (dm.T > capacity) throw CapacityError(dm.T, capacity);
  gate_on_assumptions(data, cfg);

  Rng rng(derive_seed(cfg.seed, 1));
  AttentionWeights weights = AttentionWeights::zeros(cfg.model);
  SynthesisReport report;
  report.capacity = capacity;
  report.per_head_budget = r;

  Matrix z_accum(dm.T, 0);
  std::vector<int> assigned;  // grows head by head, stays independent

  for (int h = 0; h < heads; ++h) {
    HeadReport hr;
    Matrix head_w;  // W* + c W+ for this head

    if (h == 0) {
      // base case: designed coefficients for the first r examples
      const int base = std::min(r, dm.T);
      std::vector<int> block(base);
      std::iota(block.begin(), block.end(), 0);
      const std::vector<Vector> thetas = greedy_row_targets(data, block, Matrix(), cfg, rng);
      const Matrix w_star = solve_head_for_targets(data, block, thetas, d_h, cfg.tol);
      head_w = w_star;
      hr.assigned = block;
      const Matrix target_block = designed_block_rows(w_star, data, block);
      hr.achieved_rank = numerical_rank(target_block, cfg.tol);
      if (hr.achieved_rank < base) {
        throw SynthesisError(h, "base_case", "designed base block lost rank (" +
                                                 std::to_string(hr.achieved_rank) + " < " +
                                                 std::to_string(base) + ")");
      }
      // saturate the remaining examples when the factorization has room
      // for the extra rank-one term
      if (dm.T > base && base + 1 <= d_h) {
        try {
          const SaturationMatrix plus =
              construct_w_plus(data, block, cfg.tol, cfg.retry_budget, rng);
          ScaleDiagnostics diag;
          const double c = select_saturation_scale(w_star, plus, data, target_block, Matrix(),
                                                   base, cfg, &diag);
          head_w = w_star + c * plus.as_matrix();
          hr.saturating = true;
          hr.scale_c = c;
          hr.max_l1_to_limit = diag.max_l1_to_limit;
          hr.min_logit_margin = plus.min_margin;
          hr.delta_closed_form = diag.delta_closed_form;
          hr.protected_logits_exact = diag.protected_logits_exact;
          hr.achieved_rank = diag.achieved_rank;
        } catch (const SynthesisError&) {
          // a plain Claim-1 head keeps the capacity result intact; only the
          // saturation structure of this head is lost
          head_w = w_star;
          hr.saturating = false;
        }
      }
      assigned = block;
    } else {
      const RowSplit split = split_rows(z_accum, assigned, cfg.tol);
      const int dependent = static_cast<int>(split.dependent.size());
      const int m = std::min(r - 1, dependent);

      if (m == 0) {
        // every row is already independent; keep the head purely saturating
        // so its coefficients match the structure of the others
        const SaturationMatrix plus = construct_w_plus(data, {}, cfg.tol, cfg.retry_budget, rng);
        ScaleDiagnostics diag;
        const double c = select_saturation_scale(Matrix::Zero(dm.d, dm.d), plus, data,
                                                 Matrix(0, dm.d), Matrix(), 0, cfg, &diag);
        head_w = c * plus.as_matrix();
        hr.saturating = true;
        hr.scale_c = c;
        hr.max_l1_to_limit = diag.max_l1_to_limit;
        hr.min_logit_margin = plus.min_margin;
        hr.protected_logits_exact = diag.protected_logits_exact;
      } else {
        std::vector<int> block(split.dependent.begin(), split.dependent.begin() + m);
        std::sort(block.begin(), block.end());
        const std::vector<int> rest = complement_of(block, dm.T);

        // elimination coefficients: rows of Z_b as combinations of Z_a rows
        const Matrix z_a = rows_of(z_accum, rest);
        const Matrix z_b = rows_of(z_accum, block);
        const Matrix elim =
            least_squares_solve(z_a.transpose(), z_b.transpose(), cfg.tol).transpose();

        const SaturationMatrix plus =
            construct_w_plus(data, block, cfg.tol, cfg.retry_budget, rng);

        // offset at the saturated limit: A+ = -C * Z''_a(theta_plus)
        Matrix z_a_limit(static_cast<Eigen::Index>(rest.size()), dm.d);
        for (std::size_t j = 0; j < rest.size(); ++j) {
          const int t = rest[j];
          z_a_limit.row(static_cast<Eigen::Index>(j)) =
              attended_row(data.examples[t], one_hot_limit(plus.logits[t])).transpose();
        }
        const Matrix offset_limit = -elim * z_a_limit;

        const std::vector<Vector> thetas =
            greedy_row_targets(data, block, offset_limit, cfg, rng);
        const Matrix w_star = solve_head_for_targets(data, block, thetas, d_h, cfg.tol);
        const Matrix target_block = designed_block_rows(w_star, data, block);
        if (numerical_rank(target_block + offset_limit, cfg.tol) < m) {
          throw SynthesisError(h, "induction",
                               "designed block plus offset lost rank before scaling");
        }

        ScaleDiagnostics diag;
        const double c =
            select_saturation_scale(w_star, plus, data, target_block, elim, m, cfg, &diag);
        head_w = w_star + c * plus.as_matrix();
        hr.assigned = block;
        hr.saturating = true;
        hr.scale_c = c;
        hr.achieved_rank = diag.achieved_rank;
        hr.max_l1_to_limit = diag.max_l1_to_limit;
        hr.min_logit_margin = plus.min_margin;
        hr.delta_closed_form = diag.delta_closed_form;
        hr.protected_logits_exact = diag.protected_logits_exact;
        assigned.insert(assigned.end(), block.begin(), block.end());
      }
    }

    const auto [wk, wq] = factor_bounded_rank(head_w, d_h, cfg.tol);
    weights.key[h] = wk;
    weights.query[h] = wq;

    const int rank_before = h == 0 ? 0 : numerical_rank(z_accum, cfg.tol);
    z_accum.conservativeResize(Eigen::NoChange, z_accum.cols() + dm.d);
    z_accum.rightCols(dm.d) = realized_head_block(weights, h, data);
    hr.rank_after = numerical_rank(z_accum, cfg.tol);
    const long expected =
        std::min<long>(rank_before + static_cast<long>(hr.assigned.size()), dm.T);
    if (hr.rank_after < expected) {
      throw SynthesisError(h, "rank_accounting",
                           "feature matrix rank " + std::to_string(hr.rank_after) +
                               " fell short of " + std::to_string(expected) +
                               " after adding the head");
    }
    report.heads.push_back(std::move(hr));
  }

  report.rank_Z = numerical_rank(z_accum, cfg.tol);
  if (report.rank_Z < dm.T) {
    throw SynthesisError(heads - 1, "step2",
                         "feature matrix rank " + std::to_string(report.rank_Z) +
                             " < T = " + std::to_string(dm.T));
  }

  // the linear solve: Z W_V = [Y | 0], identity-block output and readout
  Matrix rhs = Matrix::Zero(dm.T, cfg.model.d_v);
  for (int t = 0; t < dm.T; ++t) {
    rhs.row(t).head(dm.d_out) = data.examples[t].label.transpose();
  }
  const Matrix w_v = least_squares_solve(z_accum, rhs, cfg.tol);
  for (int h = 0; h < heads; ++h) {
    weights.value[h] = w_v.middleRows(static_cast<Eigen::Index>(h) * dm.d, dm.d);
  }
  weights.output.setZero();
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < cfg.model.d_v; ++i) {
      weights.output(static_cast<Eigen::Index>(h) * cfg.model.d_v + i, i) = 1.0;
    }
  }
  weights.readout.setZero();
  for (int i = 0; i < cfg.model.d_out; ++i) weights.readout(i, i) = 1.0;

  const VerifyResult check = verify_memorization(weights, cfg.model, data, 1e-6);
  report.max_abs_error = check.max_abs_error;
  report.max_rel_error = check.max_rel_error;
  if (!check.passed) {
    throw SynthesisError(heads - 1, "verification",
                         "constructed weights miss the labels (max relative error " +
                             std::to_string(check.max_rel_error) + ")");
  }
  return {std::move(weights), std::move(report)};
}

std::pair<AttentionWeights, SynthesisReport> synthesize_skip(const Dataset& data,
                                                             SynthesisConfig cfg) {
  data.validate();
  const DatasetDims dm = data.dims();
  Dataset shifted = data;
  for (Example& ex : shifted.examples) {
    ex.label -= ex.query.head(dm.d_out);
  }
  cfg.model.skip_connection = false;
  auto [weights, report] = synthesize(shifted, cfg);

  AttentionConfig skip_cfg = cfg.model;
  skip_cfg.skip_connection = true;
  const VerifyResult check = verify_memorization(weights, skip_cfg, data, 1e-6);
  report.max_abs_error = check.max_abs_error;
  report.max_rel_error = check.max_rel_error;
  if (!check.passed) {
    throw SynthesisError(cfg.model.heads - 1, "skip_verification",
                         "skip-connection forward misses the original labels (max relative "
                         "error " + std::to_string(check.max_rel_error) + ")");
  }
  return {std::move(weights), std::move(report)};
}

VerifyResult verify_memorization(const AttentionWeights& w, const AttentionConfig& cfg,
                                 const Dataset& data, double tol) {
  data.validate();
  VerifyResult out;
  for (const Example& ex : data.examples) {
    const ForwardTrace tr = forward(w, cfg, ex.context, ex.query);
    const double abs_err = (tr.prediction - ex.label).cwiseAbs().maxCoeff();
    const double rel_err = abs_err / std::max(1.0, ex.label.cwiseAbs().maxCoeff());
    out.max_abs_error = std::max(out.max_abs_error, abs_err);
    out.max_rel_error = std::max(out.max_rel_error, rel_err);
  }
  out.passed = out.max_rel_error <= tol;
  return out;
}

}  // namespace attnmemcap
