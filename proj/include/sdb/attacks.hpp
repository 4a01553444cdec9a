#pragma once

#include <string>
#include <vector>

#include "sdb/train.hpp"

namespace sdb::attacks {

struct AttackRow {
  std::string label;        // "T=4", "random-1", "true-key", ...
  double sweep_value = 0.0; // temperature, or 0 for key rows
  std::string key_fingerprint;  // empty for temperature rows
  double student_acc = 0.0;     // percent
};

struct AttackReport {
  std::string kind;  // "temperature" | "random-key"
  std::vector<AttackRow> rows;
  double scratch_acc = 0.0;
  double authorized_acc = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string sdb_key_fingerprint;
};

// Distills an unauthorized student at every temperature in the sweep and
// reports each accuracy next to the scratch and authorized (true key, cfg
// temperature) baselines. The wrapped teacher is never modified.
AttackReport temperature_attack(const models::Model& sdb_teacher,
                                const std::vector<double>& temps,
                                const models::ModelSpec& student_spec,
                                const train::TrainingConfig& cfg,
                                const data::DatasetHandle& ds,
                                const keying::Key& true_key);

// Runs authorized-style distillation with n_keys wrong keys sharing the true
// key's lambda and shape but drawn from attacker seeds. Supplying a key that
// fingerprints equal to the true key is rejected, not silently included.
AttackReport random_key_attack(const models::Model& sdb_teacher, int n_keys,
                               std::uint64_t attacker_seed,
                               const models::ModelSpec& student_spec,
                               const train::TrainingConfig& cfg,
                               const data::DatasetHandle& ds,
                               const keying::Key& true_key);

}  // namespace sdb::attacks
