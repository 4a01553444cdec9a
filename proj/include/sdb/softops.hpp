#pragma once

#include <span>

#include "sdb/tensor.hpp"

namespace sdb::softops {

// Strictly positive distillation temperature. The infinite-temperature
// augmentation mode is a separate enum in the loss layer, not a float here.
struct Temperature {
  double value;
  explicit Temperature(double v) : value(v) {
    require(std::isfinite(v) && v > 0.0, ErrorCategory::parameter,
            "temperature must be finite and > 0, got " + std::to_string(v));
  }
};

// Batch-mean loss value plus gradient w.r.t. the live logits argument.
// Frozen arguments never get a gradient; callers treat them as constants.
struct ValueGrad {
  double value = 0.0;
  Tensor grad;
};

// Row-wise softmax of z/T with max subtraction.
Tensor tempered_softmax(const Tensor& z, Temperature t);

// Row-wise log-softmax of z/T (shared by the KL and CE paths).
Tensor log_tempered_softmax(const Tensor& z, Temperature t);

// -log probs[y], batch-averaged; probs rows must lie on the simplex.
double cross_entropy(const Tensor& probs, std::span<const int> y);

// CE(softmax(z), y) with gradient (softmax(z) - onehot)/B.
ValueGrad cross_entropy_logits(const Tensor& z, std::span<const int> y);

// KL(softmax(z_target/T) || softmax(z_a/T)), batch-averaged, times T^2 when
// scale_t2 is set. Gradient flows through z_a only.
double kd_divergence(const Tensor& z_a, const Tensor& z_target, Temperature t,
                     bool scale_t2 = true);
ValueGrad kd_divergence_vg(const Tensor& z_a, const Tensor& z_target, Temperature t,
                           bool scale_t2 = true);

// ||softmax(z_a/T) - softmax(z_b/T)||^2 per row, batch-averaged; gradient
// through z_a only.
double soft_mse(const Tensor& z_a, const Tensor& z_b, Temperature t);
ValueGrad soft_mse_vg(const Tensor& z_a, const Tensor& z_b, Temperature t);

// 0.5*||z_a - z_b||^2 per row, batch-averaged; gradient through z_a only.
double logit_mse(const Tensor& z_a, const Tensor& z_b);
ValueGrad logit_mse_vg(const Tensor& z_a, const Tensor& z_b);

}  // namespace sdb::softops
