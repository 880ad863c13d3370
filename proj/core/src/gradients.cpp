#include "attnmemcap/experiments.hpp"

#include <cmath>
#include <string>

namespace attnmemcap {

namespace {

// loss of one example and the gradient of the loss in the model output
std::pair<double, Vector> loss_and_output_grad(const Vector& prediction, const Vector& label,
                                               const Task& task) {
  if (task.kind == Task::Kind::classification) {
    const int k = static_cast<int>(label(0));
    if (k < 0 || k >= prediction.size()) {
      throw std::invalid_argument("class label " + std::to_string(k) +
                                  " outside the model output range");
    }
    const Vector probs = softmax(prediction);
    const double loss = -std::log(std::max(probs(k), 1e-300));
    Vector g = probs;
    g(k) -= 1.0;
    return {loss, g};
  }
  const Vector diff = prediction - label;
  const double inv = 1.0 / static_cast<double>(prediction.size());
  return {diff.squaredNorm() * inv, 2.0 * inv * diff};
}

}  // namespace

LossAndGradients gradient(const AttentionWeights& w, const AttentionConfig& cfg,
                          const Dataset& data, const std::vector<int>& batch,
                          const Task& task) {
  if (batch.empty()) throw std::invalid_argument("gradient: empty batch");
  if (task.kind == Task::Kind::classification && cfg.d_out != task.num_classes) {
    throw DimensionError("gradient: classification needs d_out == num_classes");
  }

  LossAndGradients out;
  out.grad = AttentionWeights::zeros(cfg);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  for (int t : batch) {
    const Example& ex = data.examples.at(t);
    const ForwardTrace tr = forward(w, cfg, ex.context, ex.query);
    auto [loss, g_yhat] = loss_and_output_grad(tr.prediction, ex.label, task);
    out.loss += loss * inv_batch;
    g_yhat *= inv_batch;

    // y_hat = D^T o
    out.grad.readout += tr.layer_out * g_yhat.transpose();
    const Vector g_o = w.readout * g_yhat;

    // o = O^T [p_1; ...; p_H] (+ e, which carries no weight gradient)
    Vector stacked(static_cast<Eigen::Index>(cfg.heads) * cfg.d_v);
    for (int h = 0; h < cfg.heads; ++h) {
      stacked.segment(static_cast<Eigen::Index>(h) * cfg.d_v, cfg.d_v) = tr.head_out[h];
    }
    out.grad.output += stacked * g_o.transpose();
    const Vector g_p = w.output * g_o;

    for (int h = 0; h < cfg.heads; ++h) {
      const Vector g_ph = g_p.segment(static_cast<Eigen::Index>(h) * cfg.d_v, cfg.d_v);
      // p_h = V_h^T z_h
      out.grad.value[h] += tr.attended[h] * g_ph.transpose();
      const Vector g_z = w.value[h] * g_ph;
      // z_h = E^T theta_h
      const Vector g_theta = ex.context * g_z;
      // softmax Jacobian: diag(theta) - theta theta^T
      const Vector& theta = tr.coeffs[h];
      const Vector g_alpha = theta.cwiseProduct(g_theta) - theta.dot(g_theta) * theta;
      // alpha_h = E K_h (Q_h^T e)
      const Vector q_h = w.query[h].transpose() * ex.query;
      out.grad.key[h] += (ex.context.transpose() * g_alpha) * q_h.transpose();
      out.grad.query[h] += ex.query * (g_alpha.transpose() * ex.context * w.key[h]);
    }
  }
  return out;
}

}  // namespace attnmemcap
