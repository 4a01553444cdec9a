#pragma once

#include <optional>
#include <span>
#include <string>

#include "sdb/softops.hpp"

namespace sdb::losses {

enum class AugMode { finite_t, infinite_t };

// Weights and temperatures of the wrapped-teacher objective. t_aug is only
// consulted in finite_t mode; infinite_t matches raw logits instead.
struct SdbLossWeights {
  double omega = 0.1;
  double eta = 1.0;
  softops::Temperature t_dis{4.0};
  AugMode aug_mode = AugMode::infinite_t;
  std::optional<softops::Temperature> t_aug{};
  // Frozen reference logits for the augmentation term are produced from the
  // clean input by default; trainers may evaluate them on the proxy input.
  bool aug_refs_on_proxy = false;
};

// One dual-stream training batch: clean images, key-embedded images, labels.
struct StreamBatch {
  Tensor x;
  Tensor x_tilde;  // empty when no key is in play
  std::vector<int> y;
  std::vector<std::int64_t> indices;  // positions in the source dataset split
};

// Per-term record of one wrapped-teacher step. kp = main + eta*aug and
// total = cls + dis + kp, each reproducible from the parts to 1e-9.
struct LossBreakdown {
  double cls = 0.0, dis = 0.0, main = 0.0, aug = 0.0, kp = 0.0, total = 0.0;
};

// Table-1-style switches: drop the proxy stream from the classification
// term, zero the disturbance term, zero the preservation term.
struct SdbAblation {
  bool disable_ke = false;
  bool disable_kdis = false;
  bool disable_kp = false;
  bool any() const { return disable_ke || disable_kdis || disable_kp; }
};

struct ClassificationGrad {
  double value = 0.0;
  Tensor d_zx, d_zxt;
};

// CE on both streams; gradient flows through both.
ClassificationGrad classification_loss(const Tensor& z_x, const Tensor& z_xt,
                                       std::span<const int> y);

// -omega*KL_from(pretrained, T_dis, T^2-scaled) + omega*KL_from(frozen proxy
// stream, T=1, unscaled); gradient through the clean-stream logits only.
softops::ValueGrad disturbance_loss(const Tensor& z_x, const Tensor& z_xt_frozen,
                                    const Tensor& z_pre_frozen,
                                    const SdbLossWeights& w);

// Soft-label MSE against the frozen pretrained teacher at T_dis; gradient
// through the proxy-stream logits only.
softops::ValueGrad maintain_loss(const Tensor& z_xt, const Tensor& z_pre_frozen,
                                 softops::Temperature t_dis);

// Push the proxy stream away from the pretrained reference and toward the
// frozen random-init reference; finite mode uses T^2-scaled KL at t_aug,
// infinite mode matches raw logits. Gradient through z_xt only.
softops::ValueGrad augmentation_loss(const Tensor& z_xt, const Tensor& z_pre_frozen,
                                     const Tensor& z_rand_frozen,
                                     const SdbLossWeights& w);

struct TotalSdbLoss {
  LossBreakdown breakdown;
  Tensor d_zx, d_zxt;
};

// Frozen logits entering the objective. z_pre_x feeds the disturbance and
// maintain terms (always clean-input). The augmentation term uses z_pre_aug
// when present (proxy-fed references), else z_pre_x, against z_rand_aug.
struct FrozenRefs {
  Tensor z_pre_x;
  Tensor z_rand_aug;
  std::optional<Tensor> z_pre_aug{};
};

TotalSdbLoss total_sdb_loss(const Tensor& z_x, const Tensor& z_xt,
                            const FrozenRefs& refs, std::span<const int> y,
                            const SdbLossWeights& w, const SdbAblation& ablation = {});

}  // namespace sdb::losses

namespace sdb::kd {

enum class Mode { scratch, kd_plain, kd_with_key };

struct DistillConfig {
  double alpha = 0.9;
  softops::Temperature temperature{4.0};
  Mode mode = Mode::kd_plain;
  std::optional<std::string> key_fingerprint{};
  bool scale_t2 = true;
};

// (1-alpha)*CE(student, y) + alpha*KL toward the frozen teacher's clean-input
// soft labels; gradient through the student logits only.
softops::ValueGrad kd_loss_unauthorized(const Tensor& z_student,
                                        const Tensor& z_teacher_frozen,
                                        std::span<const int> y,
                                        const DistillConfig& cfg);

// Same form with the teacher evaluated on the key-embedded proxy input; the
// student always consumes the clean input.
softops::ValueGrad kd_loss_authorized(const Tensor& z_student,
                                      const Tensor& z_teacher_proxy_frozen,
                                      std::span<const int> y,
                                      const DistillConfig& cfg);

}  // namespace sdb::kd
