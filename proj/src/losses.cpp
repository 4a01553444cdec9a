#include "sdb/losses.hpp"

#include "sdb/kernels.hpp"

namespace sdb::losses {

using softops::Temperature;
using softops::ValueGrad;

ClassificationGrad classification_loss(const Tensor& z_x, const Tensor& z_xt,
                                       std::span<const int> y) {
  require_same_shape(z_x, z_xt, "classification_loss");
  auto a = softops::cross_entropy_logits(z_x, y);
  auto b = softops::cross_entropy_logits(z_xt, y);
  ClassificationGrad out;
  out.value = a.value + b.value;
  out.d_zx = std::move(a.grad);
  out.d_zxt = std::move(b.grad);
  return out;
}

ValueGrad disturbance_loss(const Tensor& z_x, const Tensor& z_xt_frozen,
                           const Tensor& z_pre_frozen, const SdbLossWeights& w) {
  require(w.omega >= 0.0, ErrorCategory::parameter,
          "disturbance weight omega must be >= 0, got " + std::to_string(w.omega));
  require_same_shape(z_x, z_xt_frozen, "disturbance_loss");
  require_same_shape(z_x, z_pre_frozen, "disturbance_loss");

  auto away = softops::kd_divergence_vg(z_x, z_pre_frozen, w.t_dis, /*scale_t2=*/true);
  auto anchor = softops::kd_divergence_vg(z_x, z_xt_frozen, Temperature(1.0),
                                          /*scale_t2=*/false);
  ValueGrad out;
  out.value = w.omega * (anchor.value - away.value);
  out.grad = Tensor(z_x.shape);
  const auto n = static_cast<std::size_t>(z_x.size());
  kern::ops().sub(anchor.grad.ptr(), away.grad.ptr(), out.grad.ptr(), n);
  kern::ops().scale(w.omega, out.grad.ptr(), n);
  return out;
}

ValueGrad maintain_loss(const Tensor& z_xt, const Tensor& z_pre_frozen,
                        Temperature t_dis) {
  return softops::soft_mse_vg(z_xt, z_pre_frozen, t_dis);
}

ValueGrad augmentation_loss(const Tensor& z_xt, const Tensor& z_pre_frozen,
                            const Tensor& z_rand_frozen, const SdbLossWeights& w) {
  require_same_shape(z_xt, z_pre_frozen, "augmentation_loss");
  require_same_shape(z_xt, z_rand_frozen, "augmentation_loss");
  ValueGrad out;
  out.grad = Tensor(z_xt.shape);
  const auto n = static_cast<std::size_t>(z_xt.size());
  if (w.aug_mode == AugMode::finite_t) {
    require(w.t_aug.has_value(), ErrorCategory::config,
            "augmentation_loss: finite-temperature mode requires t_aug");
    auto away = softops::kd_divergence_vg(z_xt, z_pre_frozen, *w.t_aug, true);
    auto bound = softops::kd_divergence_vg(z_xt, z_rand_frozen, *w.t_aug, true);
    out.value = bound.value - away.value;
    kern::ops().sub(bound.grad.ptr(), away.grad.ptr(), out.grad.ptr(), n);
  } else {
    auto away = softops::logit_mse_vg(z_xt, z_pre_frozen);
    auto bound = softops::logit_mse_vg(z_xt, z_rand_frozen);
    out.value = bound.value - away.value;
    kern::ops().sub(bound.grad.ptr(), away.grad.ptr(), out.grad.ptr(), n);
  }
  return out;
}

TotalSdbLoss total_sdb_loss(const Tensor& z_x, const Tensor& z_xt,
                            const FrozenRefs& refs, std::span<const int> y,
                            const SdbLossWeights& w, const SdbAblation& ablation) {
  TotalSdbLoss out;
  out.d_zx = Tensor(z_x.shape);
  out.d_zxt = Tensor(z_xt.shape);
  const auto n = static_cast<std::size_t>(z_x.size());
  const auto& k = kern::ops();

  if (ablation.disable_ke) {
    auto ce = softops::cross_entropy_logits(z_x, y);
    out.breakdown.cls = ce.value;
    out.d_zx = std::move(ce.grad);
  } else {
    auto cls = classification_loss(z_x, z_xt, y);
    out.breakdown.cls = cls.value;
    out.d_zx = std::move(cls.d_zx);
    out.d_zxt = std::move(cls.d_zxt);
  }

  if (!ablation.disable_kdis) {
    auto dis = disturbance_loss(z_x, z_xt, refs.z_pre_x, w);
    out.breakdown.dis = dis.value;
    k.axpy(1.0, dis.grad.ptr(), out.d_zx.ptr(), n);
  }

  if (!ablation.disable_kp) {
    const Tensor& pre_aug = refs.z_pre_aug.has_value() ? *refs.z_pre_aug : refs.z_pre_x;
    auto main = maintain_loss(z_xt, refs.z_pre_x, w.t_dis);
    auto aug = augmentation_loss(z_xt, pre_aug, refs.z_rand_aug, w);
    out.breakdown.main = main.value;
    out.breakdown.aug = aug.value;
    out.breakdown.kp = main.value + w.eta * aug.value;
    k.axpy(1.0, main.grad.ptr(), out.d_zxt.ptr(), n);
    k.axpy(w.eta, aug.grad.ptr(), out.d_zxt.ptr(), n);
  }

  out.breakdown.total = out.breakdown.cls + out.breakdown.dis + out.breakdown.kp;
  return out;
}

}  // namespace sdb::losses

namespace sdb::kd {

using softops::ValueGrad;

namespace {

ValueGrad kd_loss(const Tensor& z_student, const Tensor& z_teacher,
                  std::span<const int> y, const DistillConfig& cfg,
                  const char* where) {
  require(cfg.alpha >= 0.0 && cfg.alpha <= 1.0, ErrorCategory::parameter,
          std::string(where) + ": alpha must lie in [0,1], got " +
              std::to_string(cfg.alpha));
  require_same_shape(z_student, z_teacher, where);

  auto ce = softops::cross_entropy_logits(z_student, y);
  auto kl = softops::kd_divergence_vg(z_student, z_teacher, cfg.temperature,
                                      cfg.scale_t2);
  ValueGrad out;
  out.value = (1.0 - cfg.alpha) * ce.value + cfg.alpha * kl.value;
  out.grad = Tensor(z_student.shape);
  const auto n = static_cast<std::size_t>(z_student.size());
  kern::ops().axpy(1.0 - cfg.alpha, ce.grad.ptr(), out.grad.ptr(), n);
  kern::ops().axpy(cfg.alpha, kl.grad.ptr(), out.grad.ptr(), n);
  return out;
}

}  // namespace

ValueGrad kd_loss_unauthorized(const Tensor& z_student, const Tensor& z_teacher_frozen,
                               std::span<const int> y, const DistillConfig& cfg) {
  return kd_loss(z_student, z_teacher_frozen, y, cfg, "kd_loss_unauthorized");
}

ValueGrad kd_loss_authorized(const Tensor& z_student,
                             const Tensor& z_teacher_proxy_frozen,
                             std::span<const int> y, const DistillConfig& cfg) {
  require(cfg.key_fingerprint.has_value(), ErrorCategory::config,
          "kd_loss_authorized: missing key (no fingerprint in config)");
  return kd_loss(z_student, z_teacher_proxy_frozen, y, cfg, "kd_loss_authorized");
}

}  // namespace sdb::kd
