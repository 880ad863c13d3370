#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace attnmemcap {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Relative singular-value cutoff shared by every rank decision in the
/// library. A singular value counts towards the rank iff it exceeds
/// `relative * sigma_max`.
struct RankTolerance {
  double relative = 1e-8;

  RankTolerance() = default;
  explicit RankTolerance(double rel) : relative(rel) {
    if (!(rel > 0.0 && rel < 1.0)) {
      throw std::invalid_argument("RankTolerance must lie in (0, 1), got " +
                                  std::to_string(rel));
    }
  }
};

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// T exceeds the number of examples the construction can memorize.
struct CapacityError : std::runtime_error {
  int requested = 0;
  int capacity = 0;
  CapacityError(int requested_, int capacity_)
      : std::runtime_error("capacity exceeded: requested T=" +
                           std::to_string(requested_) + " but the construction memorizes at most " +
                           std::to_string(capacity_) + " examples"),
        requested(requested_),
        capacity(capacity_) {}
};

/// Input data violates one of the linear-independence preconditions.
struct AssumptionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A randomized construction step ran out of budget or a scale cap was hit.
/// Carries enough context to tell data degeneracy from bad luck.
struct SynthesisError : std::runtime_error {
  int head = -1;
  std::string stage;
  SynthesisError(int head_, std::string stage_, const std::string& detail)
      : std::runtime_error("synthesis failed at head " + std::to_string(head_ + 1) +
                           ", stage '" + stage_ + "': " + detail),
        head(head_),
        stage(std::move(stage_)) {}
};

/// splitmix64 step, used to derive independent per-trial / per-cell seeds
/// from one base seed so parallel schedules cannot change results.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace attnmemcap
