#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdb/attacks.hpp"
#include "sdb/train.hpp"

namespace sdb::experiments {

using json = nlohmann::json;

// Run root (env var SDB_ROOT or --root). Deterministic mode pins record
// timestamps to zero and serializes suite execution.
struct Env {
  std::filesystem::path root = "sdb_runs";
  bool deterministic = true;
  int jobs = 1;

  std::int64_t now() const;
  std::filesystem::path ckpt_dir() const { return root / "ckpt"; }
  std::filesystem::path metrics_dir() const { return root / "metrics"; }
  std::filesystem::path keys_dir() const { return root / "keys"; }
  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path reports_dir() const { return root / "reports"; }
  void ensure_dirs() const;
};

// Canonical config serialization (sorted keys, shortest round-trip floats)
// and its 16-hex-digit hash; run ids are "<role>-<hash prefix>".
std::string canonical_dump(const json& j);
std::string config_hash(const json& j);
std::string run_id_for(const std::string& role, const json& config);

// Immutable result row; the store is append-only JSONL.
struct ExperimentRecord {
  std::string run_id;
  std::string mode;             // pretrain | sdb | aug_teacher | student | attack
  std::string role;             // fine-grained row label, e.g. student_unauth_T4
  std::uint64_t seed = 0;       // experiment seed this row belongs to
  json teacher_spec;            // may be null
  json student_spec;            // may be null
  std::string key_fingerprint;  // empty when keyless
  json acc;                     // {"teacher":{"plain","with_key"},"student":{...}}
  json seeds;                   // all seeds that fed the run
  std::string cfg_hash;
  std::int64_t timestamp = 0;
  json artifacts;               // ckpt/metrics/report paths
  json config;                  // full canonical config

  json to_json() const;
  static ExperimentRecord from_json(const json& j);
};

class Registry {
 public:
  explicit Registry(const Env& env);

  std::optional<ExperimentRecord> find_by_hash(const std::string& cfg_hash) const;
  std::optional<ExperimentRecord> find_by_id(const std::string& run_id) const;
  std::vector<ExperimentRecord> all() const;
  void append(const ExperimentRecord& rec);
  const std::filesystem::path& file() const { return file_; }

 private:
  void reload();
  std::filesystem::path file_;
  mutable std::mutex mu_;
  std::vector<ExperimentRecord> records_;
};

// ------------------------------------------------------------ run params --

struct DatasetRef {
  std::filesystem::path dir;
  std::string hash;
};
// Exports the synthetic set under root/data/<hash> if absent.
DatasetRef ensure_dataset(const Env& env, const data::SyntheticConfig& cfg);
data::DatasetHandle open_dataset(const DatasetRef& ref);

struct KeyRef {
  std::filesystem::path path;
  std::string fingerprint;
};
KeyRef ensure_key(const Env& env, std::uint64_t seed, std::int64_t h, std::int64_t w,
                  std::int64_t c, double lambda);

struct PretrainParams {
  data::SyntheticConfig dataset;
  models::ModelSpec teacher;
  train::TrainingConfig tcfg;
};
ExperimentRecord ensure_pretrain(const Env& env, Registry& reg, const PretrainParams& p);

struct SdbParams {
  std::string teacher_run;  // pretrain run id
  std::uint64_t key_seed = 0;
  double lambda = 0.5;
  train::TrainingConfig tcfg;  // sdb weights + ablation live here
  std::string role = "sdb";    // sdb | sdb_wo_kdis | sdb_wo_kp | sdb_wo_ke | ke | nasty_like
};
ExperimentRecord ensure_sdb(const Env& env, Registry& reg, const SdbParams& p);

struct AugTeacherParams {
  std::string teacher_run;
  train::TrainingConfig tcfg;
};
ExperimentRecord ensure_aug_teacher(const Env& env, Registry& reg, const AugTeacherParams& p);

struct StudentParams {
  kd::Mode mode = kd::Mode::scratch;
  std::string teacher_run;        // empty for scratch
  std::string key_source;         // "", "true", or "seed:<n>" for wrong keys
  models::ModelSpec student;
  train::TrainingConfig tcfg;
  std::string role = "student_scratch";
};
ExperimentRecord ensure_student(const Env& env, Registry& reg, const StudentParams& p);

struct AttackParams {
  std::string kind;  // "temperature" | "random-key"
  std::string sdb_run;
  std::vector<double> temps;
  int n_keys = 3;
  std::uint64_t attacker_seed = 99;
  models::ModelSpec student;
  train::TrainingConfig tcfg;
};
ExperimentRecord ensure_attack(const Env& env, Registry& reg, const AttackParams& p);

// ------------------------------------------------------------------ suite --

struct SuiteConfig {
  std::string name = "desk-core";  // desk-core | table1-desk | table3-desk
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  json overrides;  // desk profile knob overrides
};

struct SuiteFailure {
  std::string node;
  std::string error;
};

struct SuiteResult {
  std::vector<ExperimentRecord> records;
  std::vector<SuiteFailure> failures;
};

// Executes the suite's node graph (pretrain -> wrapped teachers -> students
// -> attacks), reusing any node whose config hash is already recorded.
// Independent nodes may run on env.jobs threads; deterministic mode runs
// them sequentially in a fixed order.
SuiteResult run_suite(const Env& env, Registry& reg, const SuiteConfig& cfg);

// The desk-scale experiment profile: dataset geometry, model pair, training
// schedules, loss weights. Overrides patch individual knobs by name.
struct DeskProfile {
  data::SyntheticConfig dataset;
  models::ModelSpec teacher;
  models::ModelSpec student;
  train::TrainingConfig teacher_cfg;
  train::TrainingConfig sdb_cfg;
  train::TrainingConfig aug_cfg;
  train::TrainingConfig student_cfg;
  double lambda = 0.5;
  std::uint64_t key_seed = 0;
  std::vector<double> attack_temps{1.0, 4.0, 8.0, 16.0};
  int n_wrong_keys = 3;
  std::uint64_t attacker_seed = 0;
};
DeskProfile desk_profile(std::uint64_t seed, const json& overrides = {});

// Convenience lookups for report layouts and the acceptance gate.
std::optional<ExperimentRecord> find_role(const std::vector<ExperimentRecord>& recs,
                                          const std::string& role, std::uint64_t seed);
double median(std::vector<double> v);

}  // namespace sdb::experiments
