#include "sdb/train.hpp"

#include <cmath>
#include <cstring>

#include "sdb/kernels.hpp"

namespace sdb::train {
namespace {

constexpr double kPi = 3.14159265358979323846;

void check_finite_loss(double v, const char* stage, std::int64_t step) {
  require(std::isfinite(v), ErrorCategory::numeric,
          std::string(stage) + ": loss diverged (NaN/Inf) at step " + std::to_string(step));
}

Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& idx) {
  const std::int64_t c = table.cols();
  Tensor out({static_cast<std::int64_t>(idx.size()), c});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::memcpy(out.row(static_cast<std::int64_t>(i)), table.row(idx[i]),
                static_cast<std::size_t>(c) * sizeof(double));
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  std::vector<std::int64_t> shape = a.shape;
  shape[0] += b.shape[0];
  Tensor out(shape);
  std::memcpy(out.ptr(), a.ptr(), a.data.size() * sizeof(double));
  std::memcpy(out.ptr() + a.size(), b.ptr(), b.data.size() * sizeof(double));
  return out;
}

}  // namespace

double cosine_lr(double base_lr, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 1) return base_lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(kPi * t));
}

models::Model pretrain_teacher(const TrainingConfig& cfg, const data::DatasetHandle& ds,
                               const models::ModelSpec& spec, const StepSink& sink) {
  models::Model model = models::build_model(spec);
  models::SgdMomentum opt(cfg.optimizer.momentum, cfg.optimizer.weight_decay);
  data::DualStreamBatcher batcher(ds, data::Split::train, nullptr, cfg.batch_size,
                                  cfg.data_seed, cfg.deterministic);
  const std::int64_t total = cfg.epochs * batcher.batches_per_epoch();
  std::int64_t step = 0;
  losses::StreamBatch batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    batcher.start_epoch(epoch);
    while (batcher.next(batch)) {
      const Tensor xn = data::normalize(batch.x, ds.stats);
      const Tensor z = model.forward(xn, true);
      auto ce = softops::cross_entropy_logits(z, batch.y);
      check_finite_loss(ce.value, "pretrain", step);
      const double lr = cosine_lr(cfg.optimizer.lr, step, total);
      model.zero_grad();
      model.backward(ce.grad);
      opt.step(model, lr);
      if (sink) {
        StepLog log;
        log.step = step;
        log.lr = lr;
        log.terms.cls = ce.value;
        log.terms.total = ce.value;
        sink(log);
      }
      ++step;
    }
  }
  return model;
}

Tensor frozen_logits_table(const models::Model& frozen, const data::DatasetHandle& ds,
                           data::Split split, const keying::Key* key) {
  auto& m = const_cast<models::Model&>(frozen);
  data::DualStreamBatcher batcher(ds, split, key, 256, 0, true);
  batcher.start_epoch(0, /*shuffle=*/false);
  const std::int64_t n = split == data::Split::train ? ds.train_count() : ds.test_count();
  Tensor table({n, ds.num_classes});
  losses::StreamBatch batch;
  while (batcher.next(batch)) {
    const Tensor input =
        key != nullptr ? data::normalize(batch.x_tilde, ds.stats) : data::normalize(batch.x, ds.stats);
    const Tensor z = m.forward(input, false);
    for (std::size_t i = 0; i < batch.indices.size(); ++i)
      std::memcpy(table.row(batch.indices[i]), z.row(static_cast<std::int64_t>(i)),
                  static_cast<std::size_t>(ds.num_classes) * sizeof(double));
  }
  return table;
}

SdbTrainResult train_sdb(const TrainingConfig& cfg, const models::Model& teacher,
                         const keying::Key& key, const data::DatasetHandle& ds,
                         const StepSink& sink) {
  require(key.pattern.size() > 0, ErrorCategory::config, "train_sdb: missing key");
  require(key.lambda > 0.0 && key.lambda < 1.0, ErrorCategory::parameter,
          "train_sdb: key lambda must lie strictly in (0,1)");
  require(key.height == ds.height && key.width == ds.width && key.channels == ds.channels,
          ErrorCategory::shape, "train_sdb: key shape does not match dataset");
  require(teacher.spec().height == ds.height && teacher.spec().num_classes == ds.num_classes,
          ErrorCategory::shape, "train_sdb: teacher does not match dataset");

  const models::Model frozen_pre = models::snapshot_frozen(teacher);
  models::ModelSpec rand_spec = teacher.spec();
  rand_spec.init_seed = rng::derive_seed(cfg.model_seed, "frozen-random-ref");
  const models::Model frozen_rand = models::snapshot_frozen(models::build_model(rand_spec));
  const std::uint64_t pre_sum = frozen_pre.param_checksum();
  const std::uint64_t rand_sum = frozen_rand.param_checksum();

  SdbTrainResult res;
  if (cfg.sdb_init_from_teacher) {
    res.model = models::clone_model(teacher);
  } else {
    models::ModelSpec spec = teacher.spec();
    spec.init_seed = rng::derive_seed(cfg.model_seed, "sdb-from-scratch");
    res.model = models::build_model(spec);
  }

  // Frozen references are fixed per sample; compute them once.
  const Tensor pre_x = frozen_logits_table(frozen_pre, ds, data::Split::train, nullptr);
  Tensor rand_ref, pre_aug;
  const bool proxy_refs = cfg.sdb.aug_refs_on_proxy;
  if (proxy_refs) {
    rand_ref = frozen_logits_table(frozen_rand, ds, data::Split::train, &key);
    pre_aug = frozen_logits_table(frozen_pre, ds, data::Split::train, &key);
  } else {
    rand_ref = frozen_logits_table(frozen_rand, ds, data::Split::train, nullptr);
  }

  models::SgdMomentum opt(cfg.optimizer.momentum, cfg.optimizer.weight_decay);
  data::DualStreamBatcher batcher(ds, data::Split::train, &key, cfg.batch_size,
                                  cfg.data_seed, cfg.deterministic);
  const std::int64_t total = cfg.epochs * batcher.batches_per_epoch();
  std::int64_t step = 0;
  losses::StreamBatch batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    batcher.start_epoch(epoch);
    while (batcher.next(batch)) {
      const Tensor xn = data::normalize(batch.x, ds.stats);
      const Tensor xtn = data::normalize(batch.x_tilde, ds.stats);
      const std::int64_t b = xn.shape[0];

      const Tensor both = concat_rows(xn, xtn);
      const Tensor z_both = res.model.forward(both, true);
      Tensor z_x({b, ds.num_classes}), z_xt({b, ds.num_classes});
      std::memcpy(z_x.ptr(), z_both.ptr(), z_x.data.size() * sizeof(double));
      std::memcpy(z_xt.ptr(), z_both.ptr() + z_x.size(), z_xt.data.size() * sizeof(double));

      losses::FrozenRefs refs;
      refs.z_pre_x = gather_rows(pre_x, batch.indices);
      refs.z_rand_aug = gather_rows(rand_ref, batch.indices);
      if (proxy_refs) refs.z_pre_aug = gather_rows(pre_aug, batch.indices);

      auto tl = losses::total_sdb_loss(z_x, z_xt, refs, batch.y, cfg.sdb, cfg.ablation);
      check_finite_loss(tl.breakdown.total, "train_sdb", step);

      const Tensor d_both = concat_rows(tl.d_zx, tl.d_zxt);
      const double lr = cosine_lr(cfg.optimizer.lr, step, total);
      res.model.zero_grad();
      res.model.backward(d_both);
      opt.step(res.model, lr);

      StepLog log;
      log.step = step;
      log.lr = lr;
      log.terms = tl.breakdown;
      res.log.push_back(log);
      if (sink) sink(log);
      ++step;
    }
  }

  require(frozen_pre.param_checksum() == pre_sum, ErrorCategory::contract,
          "train_sdb: frozen pretrained reference was mutated");
  require(frozen_rand.param_checksum() == rand_sum, ErrorCategory::contract,
          "train_sdb: frozen random reference was mutated");
  return res;
}

models::Model train_aug_teacher(const TrainingConfig& cfg, const models::Model& teacher,
                                const data::DatasetHandle& ds, const StepSink& sink) {
  const models::Model frozen_pre = models::snapshot_frozen(teacher);
  models::ModelSpec rand_spec = teacher.spec();
  rand_spec.init_seed = rng::derive_seed(cfg.model_seed, "frozen-random-ref");
  const models::Model frozen_rand = models::snapshot_frozen(models::build_model(rand_spec));

  models::Model model = models::clone_model(teacher);
  const Tensor pre_x = frozen_logits_table(frozen_pre, ds, data::Split::train, nullptr);
  const Tensor rand_x = frozen_logits_table(frozen_rand, ds, data::Split::train, nullptr);

  models::SgdMomentum opt(cfg.optimizer.momentum, cfg.optimizer.weight_decay);
  data::DualStreamBatcher batcher(ds, data::Split::train, nullptr, cfg.batch_size,
                                  cfg.data_seed, cfg.deterministic);
  const std::int64_t total = cfg.epochs * batcher.batches_per_epoch();
  std::int64_t step = 0;
  losses::StreamBatch batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    batcher.start_epoch(epoch);
    while (batcher.next(batch)) {
      const Tensor xn = data::normalize(batch.x, ds.stats);
      const Tensor z = model.forward(xn, true);
      const Tensor z_pre = gather_rows(pre_x, batch.indices);
      const Tensor z_rand = gather_rows(rand_x, batch.indices);

      auto ce = softops::cross_entropy_logits(z, batch.y);
      auto main = losses::maintain_loss(z, z_pre, cfg.sdb.t_dis);
      auto aug = losses::augmentation_loss(z, z_pre, z_rand, cfg.sdb);

      StepLog log;
      log.step = step;
      log.terms.cls = ce.value;
      log.terms.main = main.value;
      log.terms.aug = aug.value;
      log.terms.kp = main.value + cfg.sdb.eta * aug.value;
      log.terms.total = ce.value + log.terms.kp;
      check_finite_loss(log.terms.total, "train_aug_teacher", step);

      Tensor dz = ce.grad;
      kern::ops().axpy(1.0, main.grad.ptr(), dz.ptr(), static_cast<std::size_t>(dz.size()));
      kern::ops().axpy(cfg.sdb.eta, aug.grad.ptr(), dz.ptr(), static_cast<std::size_t>(dz.size()));

      const double lr = cosine_lr(cfg.optimizer.lr, step, total);
      log.lr = lr;
      model.zero_grad();
      model.backward(dz);
      opt.step(model, lr);
      if (sink) sink(log);
      ++step;
    }
  }
  return model;
}

EvalResult evaluate(const models::Model& model, const data::DatasetHandle& ds,
                    const keying::Key* key) {
  auto& m = const_cast<models::Model&>(model);
  require(model.spec().num_classes == ds.num_classes, ErrorCategory::shape,
          "evaluate: class count mismatch");

  auto accuracy = [&](const keying::Key* k) {
    data::DualStreamBatcher batcher(ds, data::Split::test, k, 256, 0, true);
    batcher.start_epoch(0, /*shuffle=*/false);
    losses::StreamBatch batch;
    std::int64_t hits = 0, total = 0;
    while (batcher.next(batch)) {
      const Tensor input = k != nullptr ? data::normalize(batch.x_tilde, ds.stats)
                                        : data::normalize(batch.x, ds.stats);
      const Tensor z = m.forward(input, false);
      for (std::int64_t r = 0; r < z.rows(); ++r) {
        const double* zr = z.row(r);
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < z.cols(); ++c)
          if (zr[c] > zr[best]) best = c;
        hits += best == batch.y[static_cast<std::size_t>(r)] ? 1 : 0;
        ++total;
      }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
  };

  EvalResult res;
  res.acc_plain = accuracy(nullptr);
  if (key != nullptr) res.acc_with_key = accuracy(key);
  return res;
}

models::Model train_student(const TrainingConfig& cfg, const data::DatasetHandle& ds,
                            const models::ModelSpec& student_spec,
                            const models::Model* teacher, const keying::Key* key,
                            const StepSink& sink) {
  using kd::Mode;
  const Mode mode = cfg.distill.mode;
  if (mode != Mode::scratch) {
    require(teacher != nullptr, ErrorCategory::config,
            "train_student: distillation mode needs a teacher");
    require(teacher->spec().num_classes == ds.num_classes, ErrorCategory::shape,
            "train_student: teacher class count mismatch");
  }
  if (mode == Mode::kd_with_key)
    require(key != nullptr, ErrorCategory::config, "train_student: missing key");

  models::Model student = models::build_model(student_spec);
  kd::DistillConfig dcfg = cfg.distill;
  if (mode == Mode::kd_with_key) dcfg.key_fingerprint = keying::key_fingerprint(*key);

  // Teacher logits are constant per sample; precompute them for the split.
  Tensor teacher_table;
  if (mode == Mode::kd_plain) {
    teacher_table = frozen_logits_table(*teacher, ds, data::Split::train, nullptr);
  } else if (mode == Mode::kd_with_key) {
    teacher_table = frozen_logits_table(*teacher, ds, data::Split::train, key);
  }

  models::SgdMomentum opt(cfg.optimizer.momentum, cfg.optimizer.weight_decay);
  const bool proxy_scratch = mode == Mode::scratch && cfg.scratch_on_proxy;
  const keying::Key* batch_key =
      (mode == Mode::kd_with_key || proxy_scratch) ? key : nullptr;
  data::DualStreamBatcher batcher(ds, data::Split::train, batch_key, cfg.batch_size,
                                  cfg.data_seed, cfg.deterministic);
  const std::int64_t total = cfg.epochs * batcher.batches_per_epoch();
  std::int64_t step = 0;
  losses::StreamBatch batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    batcher.start_epoch(epoch);
    while (batcher.next(batch)) {
      const double lr = cosine_lr(cfg.optimizer.lr, step, total);
      double loss = 0.0;
      if (mode == Mode::scratch) {
        const Tensor xn = proxy_scratch ? data::normalize(batch.x_tilde, ds.stats)
                                        : data::normalize(batch.x, ds.stats);
        const Tensor z = student.forward(xn, true);
        auto ce = softops::cross_entropy_logits(z, batch.y);
        loss = ce.value;
        student.zero_grad();
        student.backward(ce.grad);
        opt.step(student, lr);
      } else {
        const Tensor zt = gather_rows(teacher_table, batch.indices);
        loss = kd::student_step(batch, student, teacher, key, dcfg, opt, lr, ds.stats, &zt);
      }
      check_finite_loss(loss, "train_student", step);
      if (sink) {
        StepLog log;
        log.step = step;
        log.lr = lr;
        log.terms.total = loss;
        sink(log);
      }
      ++step;
    }
  }
  return student;
}

}  // namespace sdb::train

namespace sdb::kd {

double student_step(const losses::StreamBatch& batch, models::Model& student,
                    const models::Model* teacher, const keying::Key* key,
                    const DistillConfig& cfg, models::SgdMomentum& opt, double lr,
                    const data::NormStats& stats, const Tensor* teacher_logits) {
  require(!student.frozen(), ErrorCategory::contract, "student_step: student is frozen");
  const Tensor xn = data::normalize(batch.x, stats);
  const Tensor z_s = student.forward(xn, true);

  softops::ValueGrad vg;
  switch (cfg.mode) {
    case Mode::scratch: {
      // teacher, if supplied, is ignored by contract
      vg = softops::cross_entropy_logits(z_s, batch.y);
      break;
    }
    case Mode::kd_plain: {
      Tensor zt;
      if (teacher_logits != nullptr) {
        zt = *teacher_logits;
      } else {
        require(teacher != nullptr, ErrorCategory::config, "student_step: missing teacher");
        zt = const_cast<models::Model*>(teacher)->forward(xn, false);
      }
      vg = kd_loss_unauthorized(z_s, zt, batch.y, cfg);
      break;
    }
    case Mode::kd_with_key: {
      require(key != nullptr, ErrorCategory::config, "student_step: missing key");
      DistillConfig c2 = cfg;
      if (!c2.key_fingerprint) c2.key_fingerprint = keying::key_fingerprint(*key);
      Tensor zt;
      if (teacher_logits != nullptr) {
        zt = *teacher_logits;
      } else {
        require(teacher != nullptr, ErrorCategory::config, "student_step: missing teacher");
        const Tensor xt = batch.x_tilde.empty() ? keying::embed_key(batch.x, *key) : batch.x_tilde;
        const Tensor xtn = data::normalize(xt, stats);
        zt = const_cast<models::Model*>(teacher)->forward(xtn, false);
      }
      vg = kd_loss_authorized(z_s, zt, batch.y, c2);
      break;
    }
  }

  student.zero_grad();
  student.backward(vg.grad);
  opt.step(student, lr);
  return vg.value;
}

}  // namespace sdb::kd
