#include "sdb/attacks.hpp"

#include <nlohmann/json.hpp>

#include "sdb/checksum.hpp"

namespace sdb::attacks {
namespace {

using json = nlohmann::json;

double distill_student(const train::TrainingConfig& base, const data::DatasetHandle& ds,
                       const models::ModelSpec& student_spec, const models::Model* teacher,
                       const keying::Key* key, kd::Mode mode, double temperature) {
  train::TrainingConfig cfg = base;
  cfg.distill.mode = mode;
  cfg.distill.temperature = softops::Temperature(temperature);
  models::Model s = train::train_student(cfg, ds, student_spec, teacher, key);
  return train::evaluate(s, ds).acc_plain;
}

std::string attack_config_hash(const json& j) {
  Fnv64 f;
  f.update_string(j.dump());
  return hex16(f.digest());
}

}  // namespace

AttackReport temperature_attack(const models::Model& sdb_teacher,
                                const std::vector<double>& temps,
                                const models::ModelSpec& student_spec,
                                const train::TrainingConfig& cfg,
                                const data::DatasetHandle& ds,
                                const keying::Key& true_key) {
  require(!temps.empty(), ErrorCategory::parameter, "temperature_attack: empty sweep");
  for (double t : temps)
    require(t > 0.0, ErrorCategory::parameter, "temperature_attack: temperatures must be > 0");

  const models::Model frozen = models::snapshot_frozen(sdb_teacher);
  const std::uint64_t before = frozen.param_checksum();

  AttackReport rep;
  rep.kind = "temperature";
  rep.seed = cfg.model_seed;
  rep.sdb_key_fingerprint = keying::key_fingerprint(true_key);
  rep.config_hash = attack_config_hash(
      {{"kind", "temperature"}, {"temps", temps}, {"student", student_spec.name},
       {"seed", cfg.model_seed}, {"data_seed", cfg.data_seed},
       {"alpha", cfg.distill.alpha}, {"epochs", cfg.epochs}});

  rep.scratch_acc = distill_student(cfg, ds, student_spec, nullptr, nullptr,
                                    kd::Mode::scratch, cfg.distill.temperature.value);
  rep.authorized_acc = distill_student(cfg, ds, student_spec, &frozen, &true_key,
                                       kd::Mode::kd_with_key, cfg.distill.temperature.value);
  for (double t : temps) {
    AttackRow row;
    row.label = "T=" + std::to_string(t).substr(0, std::to_string(t).find('.') + 3);
    row.sweep_value = t;
    row.student_acc =
        distill_student(cfg, ds, student_spec, &frozen, nullptr, kd::Mode::kd_plain, t);
    rep.rows.push_back(row);
  }

  require(frozen.param_checksum() == before, ErrorCategory::contract,
          "temperature_attack: wrapped teacher was mutated");
  return rep;
}

AttackReport random_key_attack(const models::Model& sdb_teacher, int n_keys,
                               std::uint64_t attacker_seed,
                               const models::ModelSpec& student_spec,
                               const train::TrainingConfig& cfg,
                               const data::DatasetHandle& ds,
                               const keying::Key& true_key) {
  require(n_keys >= 1, ErrorCategory::parameter, "random_key_attack: n_keys must be >= 1");

  const models::Model frozen = models::snapshot_frozen(sdb_teacher);
  const std::uint64_t before = frozen.param_checksum();
  const std::string true_fp = keying::key_fingerprint(true_key);

  AttackReport rep;
  rep.kind = "random-key";
  rep.seed = attacker_seed;
  rep.sdb_key_fingerprint = true_fp;
  rep.config_hash = attack_config_hash(
      {{"kind", "random-key"}, {"n_keys", n_keys}, {"attacker_seed", attacker_seed},
       {"student", student_spec.name}, {"seed", cfg.model_seed},
       {"data_seed", cfg.data_seed}, {"alpha", cfg.distill.alpha}, {"epochs", cfg.epochs}});

  rep.scratch_acc = distill_student(cfg, ds, student_spec, nullptr, nullptr,
                                    kd::Mode::scratch, cfg.distill.temperature.value);
  rep.authorized_acc = distill_student(cfg, ds, student_spec, &frozen, &true_key,
                                       kd::Mode::kd_with_key, cfg.distill.temperature.value);

  for (int i = 0; i < n_keys; ++i) {
    // Strongest realistic attacker: knows lambda and the pattern shape, not
    // the pattern itself.
    const std::uint64_t seed =
        rng::derive_seed(attacker_seed, "attack-key-" + std::to_string(i + 1));
    keying::Key wrong = keying::generate_key(seed, true_key.height, true_key.width,
                                             true_key.channels, true_key.lambda);
    const std::string fp = keying::key_fingerprint(wrong);
    require(fp != true_fp, ErrorCategory::contract,
            "random_key_attack: attacker key " + std::to_string(i + 1) +
                " equals the true key (fingerprint " + fp + "); refusing to include it");
    AttackRow row;
    row.label = "random-" + std::to_string(i + 1);
    row.key_fingerprint = fp;
    row.student_acc = distill_student(cfg, ds, student_spec, &frozen, &wrong,
                                      kd::Mode::kd_with_key, cfg.distill.temperature.value);
    rep.rows.push_back(row);
  }

  require(frozen.param_checksum() == before, ErrorCategory::contract,
          "random_key_attack: wrapped teacher was mutated");
  return rep;
}

}  // namespace sdb::attacks
