#include "attnmemcap/attention.hpp"

#include <cmath>
#include <string>

namespace attnmemcap {

Task Task::classification(int classes) {
  if (classes < 2) throw std::invalid_argument("classification needs >= 2 classes");
  Task t;
  t.kind = Kind::classification;
  t.num_classes = classes;
  return t;
}

Task Task::parse(const std::string& text) {
  if (text == "reg" || text == "regression") return regression();
  if (text.rfind("cls:", 0) == 0) return classification(std::stoi(text.substr(4)));
  throw std::invalid_argument("unknown task '" + text + "', expected 'reg' or 'cls:<k>'");
}

std::string Task::str() const {
  return kind == Kind::regression ? "reg" : "cls:" + std::to_string(num_classes);
}

DatasetDims Dataset::dims() const {
  DatasetDims d;
  d.T = static_cast<int>(examples.size());
  if (d.T > 0) {
    d.n = static_cast<int>(examples[0].context.rows());
    d.d = static_cast<int>(examples[0].context.cols());
    d.d_out = static_cast<int>(examples[0].label.size());
  }
  return d;
}

void Dataset::validate() const {
  if (examples.empty()) throw DimensionError("dataset has no examples");
  const DatasetDims dm = dims();
  for (std::size_t t = 0; t < examples.size(); ++t) {
    const Example& ex = examples[t];
    if (ex.context.rows() != dm.n || ex.context.cols() != dm.d ||
        ex.query.size() != dm.d || ex.label.size() != dm.d_out) {
      throw DimensionError("example " + std::to_string(t) +
                           " does not share the dataset dimensions");
    }
    if (!ex.context.allFinite() || !ex.query.allFinite() || !ex.label.allFinite()) {
      throw std::invalid_argument("example " + std::to_string(t) + " has non-finite entries");
    }
  }
}

void AttentionConfig::validate() const {
  if (heads < 1) throw DimensionError("AttentionConfig: heads must be >= 1");
  if (d_h < 1) throw DimensionError("AttentionConfig: d_h must be >= 1");
  if (!(1 <= d_out && d_out <= d_v && d_v <= d)) {
    throw DimensionError("AttentionConfig: need 1 <= d_out <= d_v <= d, got d_out=" +
                         std::to_string(d_out) + " d_v=" + std::to_string(d_v) +
                         " d=" + std::to_string(d));
  }
}

AttentionWeights AttentionWeights::zeros(const AttentionConfig& cfg) {
  cfg.validate();
  AttentionWeights w;
  w.key.assign(cfg.heads, Matrix::Zero(cfg.d, cfg.d_h));
  w.query.assign(cfg.heads, Matrix::Zero(cfg.d, cfg.d_h));
  w.value.assign(cfg.heads, Matrix::Zero(cfg.d, cfg.d_v));
  w.output = Matrix::Zero(static_cast<Eigen::Index>(cfg.heads) * cfg.d_v, cfg.d);
  w.readout = Matrix::Zero(cfg.d, cfg.d_out);
  return w;
}

AttentionWeights AttentionWeights::random(const AttentionConfig& cfg, Rng& rng,
                                          double scale) {
  AttentionWeights w = zeros(cfg);
  std::normal_distribution<double> gauss(0.0, scale);
  auto fill = [&](Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = gauss(rng);
  };
  for (int h = 0; h < cfg.heads; ++h) {
    fill(w.key[h]);
    fill(w.query[h]);
    fill(w.value[h]);
  }
  fill(w.output);
  fill(w.readout);
  return w;
}

bool AttentionWeights::matches(const AttentionConfig& cfg) const {
  if (static_cast<int>(key.size()) != cfg.heads || query.size() != key.size() ||
      value.size() != key.size())
    return false;
  for (int h = 0; h < cfg.heads; ++h) {
    if (key[h].rows() != cfg.d || key[h].cols() != cfg.d_h) return false;
    if (query[h].rows() != cfg.d || query[h].cols() != cfg.d_h) return false;
    if (value[h].rows() != cfg.d || value[h].cols() != cfg.d_v) return false;
  }
  return output.rows() == static_cast<Eigen::Index>(cfg.heads) * cfg.d_v &&
         output.cols() == cfg.d && readout.rows() == cfg.d && readout.cols() == cfg.d_out;
}

Vector softmax(const Vector& v) {
  if (v.size() == 0) throw DimensionError("softmax of empty vector");
  if (!v.allFinite()) throw std::invalid_argument("softmax: non-finite logits");
  Vector shifted = v.array() - v.maxCoeff();
  Vector ex = shifted.array().exp();
  return ex / ex.sum();
}

ForwardTrace forward(const AttentionWeights& w, const AttentionConfig& cfg,
                     const Matrix& context, const Vector& query) {
  cfg.validate();
  if (!w.matches(cfg)) throw DimensionError("forward: weights do not match the config");
  if (context.cols() != cfg.d || query.size() != cfg.d) {
    throw DimensionError("forward: example dimensions do not match the config");
  }

  ForwardTrace tr;
  tr.logits.resize(cfg.heads);
  tr.coeffs.resize(cfg.heads);
  tr.attended.resize(cfg.heads);
  tr.head_out.resize(cfg.heads);

  Vector stacked(static_cast<Eigen::Index>(cfg.heads) * cfg.d_v);
  for (int h = 0; h < cfg.heads; ++h) {
    tr.logits[h] = context * (w.key[h] * (w.query[h].transpose() * query));
    tr.coeffs[h] = softmax(tr.logits[h]);
    tr.attended[h] = context.transpose() * tr.coeffs[h];
    tr.head_out[h] = w.value[h].transpose() * tr.attended[h];
    stacked.segment(static_cast<Eigen::Index>(h) * cfg.d_v, cfg.d_v) = tr.head_out[h];
  }
  tr.layer_out = w.output.transpose() * stacked;
  if (cfg.skip_connection) tr.layer_out += query;
  tr.prediction = w.readout.transpose() * tr.layer_out;
  return tr;
}

Matrix feature_matrix_Z(const AttentionWeights& w, const AttentionConfig& cfg,
                        const Dataset& data) {
  data.validate();
  const DatasetDims dm = data.dims();
  if (dm.d != cfg.d) throw DimensionError("feature_matrix_Z: dataset d does not match config");
  Matrix z(dm.T, static_cast<Eigen::Index>(cfg.heads) * cfg.d);
  for (int t = 0; t < dm.T; ++t) {
    const Example& ex = data.examples[t];
    for (int h = 0; h < cfg.heads; ++h) {
      Vector logits = ex.context * (w.key[h] * (w.query[h].transpose() * ex.query));
      z.row(t).segment(static_cast<Eigen::Index>(h) * cfg.d, cfg.d) =
          (ex.context.transpose() * softmax(logits)).transpose();
    }
  }
  return z;
}

Dataset mixing_layer_A0(const Dataset& data) {
  data.validate();
  Dataset out;
  out.task = data.task;
  out.examples.reserve(data.examples.size());
  for (const Example& ex : data.examples) {
    Vector mean = ex.context.colwise().mean().transpose();
    Example mixed;
    mixed.context = ex.context.rowwise() + mean.transpose();
    mixed.query = ex.query + mean;
    mixed.label = ex.label;
    out.examples.push_back(std::move(mixed));
  }
  return out;
}

Matrix sinusoidal_positional_encoding(int n_positions, int d) {
  if (d % 2 != 0) throw std::invalid_argument("sinusoidal positional encoding needs even d");
  if (n_positions < 0 || d < 2) throw DimensionError("bad positional encoding shape");
  Matrix pe(n_positions, d);
  for (int i = 0; i < n_positions; ++i) {
    for (int k = 0; 2 * k < d; ++k) {
      const double angle = i / std::pow(10000.0, (2.0 * k) / d);
      pe(i, 2 * k) = std::sin(angle);
      pe(i, 2 * k + 1) = std::cos(angle);
    }
  }
  return pe;
}

}  // namespace attnmemcap
