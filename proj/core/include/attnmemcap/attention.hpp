#pragma once

#include "attnmemcap/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace attnmemcap {

/// Label semantics of a dataset. Regression labels are the target vectors
/// themselves; classification labels store the class index in a length-1
/// vector and the model output width is num_classes.
struct Task {
  enum class Kind { regression, classification };
  Kind kind = Kind::regression;
  int num_classes = 0;

  static Task regression() { return {}; }
  static Task classification(int classes);
  static Task parse(const std::string& text);  // "reg" or "cls:<k>"
  std::string str() const;
};

/// One training triple: context matrix (n x d), query (d), label (d_out).
struct Example {
  Matrix context;
  Vector query;
  Vector label;
};

struct DatasetDims {
  int T = 0;
  int n = 0;
  int d = 0;
  int d_out = 0;
};

struct Dataset {
  std::vector<Example> examples;
  Task task;

  DatasetDims dims() const;
  /// Throws DimensionError unless every example shares n, d, d_out and T >= 1.
  void validate() const;
};

struct AttentionConfig {
  int heads = 1;
  int d = 1;
  int d_h = 1;
  int d_v = 1;
  int d_out = 1;
  bool skip_connection = false;

  /// H >= 1, d_h >= 1, 1 <= d_out <= d_v <= d. The d_v <= d constraint is
  /// what makes the identity-block output weights of the constructive
  /// solve well-defined.
  void validate() const;
};

/// Full parameter set: per-head key/query (d x d_h) and value (d x d_v)
/// matrices, the combining matrix (H*d_v x d) and the readout (d x d_out).
struct AttentionWeights {
  std::vector<Matrix> key;
  std::vector<Matrix> query;
  std::vector<Matrix> value;
  Matrix output;
  Matrix readout;

  static AttentionWeights zeros(const AttentionConfig& cfg);
  static AttentionWeights random(const AttentionConfig& cfg, Rng& rng, double scale);
  bool matches(const AttentionConfig& cfg) const;
};

/// Every intermediate of the layer for one example.
struct ForwardTrace {
  std::vector<Vector> logits;    // alpha_h, length n
  std::vector<Vector> coeffs;    // theta_h, positive, sums to 1
  std::vector<Vector> attended;  // z_h, length d
  std::vector<Vector> head_out;  // p_h, length d_v
  Vector layer_out;              // o, length d
  Vector prediction;             // y_hat, length d_out
};

/// Max-subtracted softmax; safe for the huge logits the synthesizer
/// deliberately produces.
Vector softmax(const Vector& v);

/// The layer itself: alpha_h = E K_h Q_h^T e, theta_h = softmax(alpha_h),
/// z_h = E^T theta_h, p_h = V_h^T z_h, o = O^T [p_1; ...; p_H] (+ e with a
/// skip connection), y_hat = D^T o.
ForwardTrace forward(const AttentionWeights& w, const AttentionConfig& cfg,
                     const Matrix& context, const Vector& query);

/// T x (H*d) matrix whose row t concatenates the attended vectors z_h of
/// example t across heads.
Matrix feature_matrix_Z(const AttentionWeights& w, const AttentionConfig& cfg,
                        const Dataset& data);

/// Single-head skip-connection layer with zero key/query and identity
/// value/output weights: every token becomes token + mean of its context
/// rows. Labels are untouched.
Dataset mixing_layer_A0(const Dataset& data);

/// Standard sinusoidal table: entry (i, 2k) = sin(i / 10000^(2k/d)),
/// entry (i, 2k+1) = cos(i / 10000^(2k/d)). Requires even d.
Matrix sinusoidal_positional_encoding(int n_positions, int d);

}  // namespace attnmemcap
