#include "sdb/experiments.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <functional>
#include <thread>

#include "sdb/checksum.hpp"

namespace sdb::experiments {
namespace fs = std::filesystem;

std::int64_t Env::now() const {
  if (deterministic) return 0;
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void Env::ensure_dirs() const {
  fs::create_directories(root);
  fs::create_directories(ckpt_dir());
  fs::create_directories(metrics_dir());
  fs::create_directories(keys_dir());
  fs::create_directories(data_dir());
  fs::create_directories(reports_dir());
}

std::string canonical_dump(const json& j) { return j.dump(); }

std::string config_hash(const json& j) {
  Fnv64 f;
  f.update_string(canonical_dump(j));
  return hex16(f.digest());
}

std::string run_id_for(const std::string& role, const json& config) {
  return role + "-" + config_hash(config).substr(0, 12);
}

// ----------------------------------------------------------------- record --

json ExperimentRecord::to_json() const {
  json j;
  j["run_id"] = run_id;
  j["mode"] = mode;
  j["role"] = role;
  j["seed"] = seed;
  j["teacher_spec"] = teacher_spec;
  j["student_spec"] = student_spec;
  j["key_fingerprint"] = key_fingerprint;
  j["acc"] = acc;
  j["seeds"] = seeds;
  j["config_hash"] = cfg_hash;
  j["timestamp"] = timestamp;
  j["artifacts"] = artifacts;
  j["config"] = config;
  return j;
}

ExperimentRecord ExperimentRecord::from_json(const json& j) {
  ExperimentRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.role = j.at("role").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.teacher_spec = j.value("teacher_spec", json());
  r.student_spec = j.value("student_spec", json());
  r.key_fingerprint = j.value("key_fingerprint", std::string());
  r.acc = j.value("acc", json());
  r.seeds = j.value("seeds", json());
  r.cfg_hash = j.at("config_hash").get<std::string>();
  r.timestamp = j.value("timestamp", std::int64_t{0});
  r.artifacts = j.value("artifacts", json());
  r.config = j.value("config", json());
  return r;
}

Registry::Registry(const Env& env) : file_(env.root / "records.jsonl") {
  fs::create_directories(env.root);
  reload();
}

void Registry::reload() {
  records_.clear();
  std::ifstream in(file_);
  if (!in.good()) return;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    require(!j.is_discarded(), ErrorCategory::integrity,
            "corrupt record line in " + file_.string());
    records_.push_back(ExperimentRecord::from_json(j));
  }
}

std::optional<ExperimentRecord> Registry::find_by_hash(const std::string& cfg_hash) const {
  std::lock_guard<std::mutex> lock(mu_);
  for (const auto& r : records_)
    if (r.cfg_hash == cfg_hash) return r;
  return std::nullopt;
}

std::optional<ExperimentRecord> Registry::find_by_id(const std::string& run_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  for (const auto& r : records_)
    if (r.run_id == run_id) return r;
  return std::nullopt;
}

std::vector<ExperimentRecord> Registry::all() const {
  std::lock_guard<std::mutex> lock(mu_);
  return records_;
}

void Registry::append(const ExperimentRecord& rec) {
  std::lock_guard<std::mutex> lock(mu_);
  std::ofstream out(file_, std::ios::app);
  require(out.good(), ErrorCategory::io, "cannot append to " + file_.string());
  out << rec.to_json().dump() << "\n";
  require(out.good(), ErrorCategory::io, "failed appending to " + file_.string());
  records_.push_back(rec);
}

// ---------------------------------------------------------------- helpers --

namespace {

json synth_json(const data::SyntheticConfig& c) {
  return {{"seed", c.seed},
          {"num_classes", c.num_classes},
          {"per_class_train", c.per_class_train},
          {"per_class_test", c.per_class_test},
          {"height", c.height},
          {"width", c.width},
          {"channels", c.channels},
          {"noise_sigma", c.noise_sigma},
          {"max_shift", c.max_shift},
          {"contrast_jitter", c.contrast_jitter},
          {"brightness_jitter", c.brightness_jitter}};
}

data::SyntheticConfig synth_from_json(const json& j) {
  data::SyntheticConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.num_classes = j.at("num_classes").get<std::int64_t>();
  c.per_class_train = j.at("per_class_train").get<std::int64_t>();
  c.per_class_test = j.at("per_class_test").get<std::int64_t>();
  c.height = j.at("height").get<std::int64_t>();
  c.width = j.at("width").get<std::int64_t>();
  c.channels = j.at("channels").get<std::int64_t>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.max_shift = j.at("max_shift").get<int>();
  c.contrast_jitter = j.at("contrast_jitter").get<double>();
  c.brightness_jitter = j.at("brightness_jitter").get<double>();
  return c;
}

json spec_json(const models::ModelSpec& s) {
  return {{"name", s.name},         {"height", s.height},
          {"width", s.width},       {"channels", s.channels},
          {"num_classes", s.num_classes}, {"init_seed", s.init_seed},
          {"widths", s.widths}};
}

json tcfg_json(const train::TrainingConfig& c) {
  json j;
  j["lr"] = c.optimizer.lr;
  j["momentum"] = c.optimizer.momentum;
  j["weight_decay"] = c.optimizer.weight_decay;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["model_seed"] = c.model_seed;
  j["data_seed"] = c.data_seed;
  j["deterministic"] = c.deterministic;
  j["sdb"] = {{"omega", c.sdb.omega},
              {"eta", c.sdb.eta},
              {"t_dis", c.sdb.t_dis.value},
              {"aug_mode", c.sdb.aug_mode == losses::AugMode::infinite_t ? "infinite" : "finite"},
              {"t_aug", c.sdb.t_aug ? json(c.sdb.t_aug->value) : json()},
              {"aug_refs_on_proxy", c.sdb.aug_refs_on_proxy}};
  j["distill"] = {{"alpha", c.distill.alpha},
                  {"temperature", c.distill.temperature.value},
                  {"scale_t2", c.distill.scale_t2}};
  j["ablation"] = {{"disable_ke", c.ablation.disable_ke},
                   {"disable_kdis", c.ablation.disable_kdis},
                   {"disable_kp", c.ablation.disable_kp}};
  j["sdb_init_from_teacher"] = c.sdb_init_from_teacher;
  j["scratch_on_proxy"] = c.scratch_on_proxy;
  return j;
}

void write_metrics(const fs::path& file, const std::vector<train::StepLog>& log) {
  std::ofstream out(file, std::ios::trunc);
  require(out.good(), ErrorCategory::io, "cannot write metrics: " + file.string());
  for (const auto& s : log) {
    json j;
    j["step"] = s.step;
    j["lr"] = s.lr;
    j["cls"] = s.terms.cls;
    j["dis"] = s.terms.dis;
    j["main"] = s.terms.main;
    j["aug"] = s.terms.aug;
    j["kp"] = s.terms.kp;
    j["total"] = s.terms.total;
    out << j.dump() << "\n";
  }
}

models::Model load_run_model(const Env& env, Registry& reg, const std::string& run_id) {
  auto rec = reg.find_by_id(run_id);
  require(rec.has_value(), ErrorCategory::config, "unknown run id: " + run_id);
  const std::string ckpt = rec->artifacts.at("checkpoint").get<std::string>();
  return models::load_checkpoint(env.root / ckpt).model;
}

// Key sources: "true" loads the teacher run's own key; "seed:<n>" derives an
// attacker key sharing the true key's lambda and shape; "keyseed:<n>:<l>"
// generates a standalone key sized to the dataset.
keying::Key resolve_key(const Env& env, Registry& reg, const std::string& teacher_run,
                        const std::string& key_source, const data::DatasetHandle& ds) {
  if (key_source.rfind("keyseed:", 0) == 0) {
    const auto rest = key_source.substr(8);
    const auto colon = rest.find(':');
    require(colon != std::string::npos, ErrorCategory::config,
            "bad key source: " + key_source);
    const std::uint64_t seed = std::stoull(rest.substr(0, colon));
    const double lambda = std::stod(rest.substr(colon + 1));
    KeyRef ref = ensure_key(env, seed, ds.height, ds.width, ds.channels, lambda);
    return keying::load_key(ref.path);
  }
  auto rec = reg.find_by_id(teacher_run);
  require(rec.has_value(), ErrorCategory::config, "unknown run id: " + teacher_run);
  if (key_source == "true") {
    const std::string kp = rec->artifacts.at("key").get<std::string>();
    return keying::load_key(env.root / kp);
  }
  require(key_source.rfind("seed:", 0) == 0, ErrorCategory::config,
          "bad key source: " + key_source);
  const std::uint64_t seed = std::stoull(key_source.substr(5));
  const keying::Key true_key =
      keying::load_key(env.root / rec->artifacts.at("key").get<std::string>());
  keying::Key wrong = keying::generate_key(seed, true_key.height, true_key.width,
                                           true_key.channels, true_key.lambda);
  require(keying::key_fingerprint(wrong) != keying::key_fingerprint(true_key),
          ErrorCategory::contract, "wrong-key source reproduced the true key");
  return wrong;
}

}  // namespace

// ---------------------------------------------------------------- runners --

DatasetRef ensure_dataset(const Env& env, const data::SyntheticConfig& cfg) {
  env.ensure_dirs();
  const std::string hash = config_hash(synth_json(cfg)).substr(0, 12);
  DatasetRef ref{env.data_dir() / hash, hash};
  if (!fs::exists(ref.dir / "index.json")) {
    data::DatasetHandle ds = data::make_synthetic(cfg);
    data::export_dataset(ds, ref.dir);
  }
  return ref;
}

data::DatasetHandle open_dataset(const DatasetRef& ref) {
  return data::load_image_dataset(ref.dir);
}

KeyRef ensure_key(const Env& env, std::uint64_t seed, std::int64_t h, std::int64_t w,
                  std::int64_t c, double lambda) {
  env.ensure_dirs();
  keying::Key key = keying::generate_key(seed, h, w, c, lambda);
  KeyRef ref;
  ref.fingerprint = keying::key_fingerprint(key);
  ref.path = env.keys_dir() / (ref.fingerprint + ".key");
  if (!fs::exists(ref.path)) keying::save_key(key, ref.path);
  return ref;
}

ExperimentRecord ensure_pretrain(const Env& env, Registry& reg, const PretrainParams& p) {
  env.ensure_dirs();
  json cfg;
  cfg["kind"] = "pretrain";
  cfg["dataset"] = synth_json(p.dataset);
  cfg["model"] = spec_json(p.teacher);
  cfg["train"] = tcfg_json(p.tcfg);
  const std::string hash = config_hash(cfg);
  if (auto hit = reg.find_by_hash(hash)) return *hit;

  const std::string run_id = run_id_for("pretrain", cfg);
  DatasetRef dref = ensure_dataset(env, p.dataset);
  data::DatasetHandle ds = open_dataset(dref);

  std::vector<train::StepLog> log;
  models::Model teacher = train::pretrain_teacher(
      p.tcfg, ds, p.teacher, [&](const train::StepLog& s) { log.push_back(s); });
  const auto eval = train::evaluate(teacher, ds);

  const std::string ckpt_rel = "ckpt/" + run_id + ".ckpt";
  const std::string metrics_rel = "metrics/" + run_id + ".jsonl";
  models::save_checkpoint(teacher, env.root / ckpt_rel,
                          static_cast<std::int64_t>(log.size()));
  write_metrics(env.root / metrics_rel, log);

  ExperimentRecord rec;
  rec.run_id = run_id;
  rec.mode = "pretrain";
  rec.role = "pretrain";
  rec.seed = p.tcfg.model_seed;
  rec.teacher_spec = spec_json(p.teacher);
  rec.acc = {{"teacher", {{"plain", eval.acc_plain}}}};
  rec.seeds = {{"model", p.tcfg.model_seed}, {"data", p.tcfg.data_seed}};
  rec.cfg_hash = hash;
  rec.timestamp = env.now();
  rec.artifacts = {{"checkpoint", ckpt_rel}, {"metrics", metrics_rel},
                   {"dataset", dref.dir.string()}};
  rec.config = cfg;
  reg.append(rec);
  return rec;
}

ExperimentRecord ensure_sdb(const Env& env, Registry& reg, const SdbParams& p) {
  env.ensure_dirs();
  auto teacher_rec = reg.find_by_id(p.teacher_run);
  require(teacher_rec.has_value(), ErrorCategory::config,
          "ensure_sdb: unknown teacher run " + p.teacher_run);

  json cfg;
  cfg["kind"] = "sdb";
  cfg["role"] = p.role;
  cfg["teacher"] = teacher_rec->cfg_hash;
  cfg["key_seed"] = p.key_seed;
  cfg["lambda"] = p.lambda;
  cfg["train"] = tcfg_json(p.tcfg);
  const std::string hash = config_hash(cfg);
  if (auto hit = reg.find_by_hash(hash)) return *hit;

  const std::string run_id = run_id_for(p.role, cfg);
  const json ds_json = teacher_rec->config.at("dataset");
  data::DatasetHandle ds = open_dataset(ensure_dataset(env, synth_from_json(ds_json)));
  models::Model teacher = load_run_model(env, reg, p.teacher_run);

  KeyRef kref = ensure_key(env, p.key_seed, ds.height, ds.width, ds.channels, p.lambda);
  keying::Key key = keying::load_key(kref.path);

  auto result = train::train_sdb(p.tcfg, teacher, key, ds);
  const auto eval = train::evaluate(result.model, ds, &key);

  const std::string ckpt_rel = "ckpt/" + run_id + ".ckpt";
  const std::string metrics_rel = "metrics/" + run_id + ".jsonl";
  models::save_checkpoint(result.model, env.root / ckpt_rel,
                          static_cast<std::int64_t>(result.log.size()));
  write_metrics(env.root / metrics_rel, result.log);

  ExperimentRecord rec;
  rec.run_id = run_id;
  rec.mode = "sdb";
  rec.role = p.role;
  rec.seed = p.tcfg.model_seed;
  rec.teacher_spec = teacher_rec->teacher_spec;
  rec.key_fingerprint = kref.fingerprint;
  rec.acc = {{"teacher",
              {{"plain", eval.acc_plain}, {"with_key", eval.acc_with_key.value()}}}};
  rec.seeds = {{"model", p.tcfg.model_seed}, {"data", p.tcfg.data_seed}, {"key", p.key_seed}};
  rec.cfg_hash = hash;
  rec.timestamp = env.now();
  rec.artifacts = {{"checkpoint", ckpt_rel},
                   {"metrics", metrics_rel},
                   {"key", "keys/" + kref.fingerprint + ".key"},
                   {"teacher_run", p.teacher_run},
                   {"dataset", teacher_rec->artifacts.at("dataset")}};
  rec.config = cfg;
  reg.append(rec);
  return rec;
}

ExperimentRecord ensure_aug_teacher(const Env& env, Registry& reg, const AugTeacherParams& p) {
  env.ensure_dirs();
  auto teacher_rec = reg.find_by_id(p.teacher_run);
  require(teacher_rec.has_value(), ErrorCategory::config,
          "ensure_aug_teacher: unknown teacher run " + p.teacher_run);

  json cfg;
  cfg["kind"] = "aug_teacher";
  cfg["teacher"] = teacher_rec->cfg_hash;
  cfg["train"] = tcfg_json(p.tcfg);
  const std::string hash = config_hash(cfg);
  if (auto hit = reg.find_by_hash(hash)) return *hit;

  const std::string run_id = run_id_for("aug_teacher", cfg);
  data::DatasetHandle ds =
      open_dataset(ensure_dataset(env, synth_from_json(teacher_rec->config.at("dataset"))));
  models::Model teacher = load_run_model(env, reg, p.teacher_run);

  std::vector<train::StepLog> log;
  models::Model aug = train::train_aug_teacher(
      p.tcfg, teacher, ds, [&](const train::StepLog& s) { log.push_back(s); });
  const auto eval = train::evaluate(aug, ds);

  const std::string ckpt_rel = "ckpt/" + run_id + ".ckpt";
  const std::string metrics_rel = "metrics/" + run_id + ".jsonl";
  models::save_checkpoint(aug, env.root / ckpt_rel, static_cast<std::int64_t>(log.size()));
  write_metrics(env.root / metrics_rel, log);

  ExperimentRecord rec;
  rec.run_id = run_id;
  rec.mode = "aug_teacher";
  rec.role = "aug_teacher";
  rec.seed = p.tcfg.model_seed;
  rec.teacher_spec = teacher_rec->teacher_spec;
  rec.acc = {{"teacher", {{"plain", eval.acc_plain}}}};
  rec.seeds = {{"model", p.tcfg.model_seed}, {"data", p.tcfg.data_seed}};
  rec.cfg_hash = hash;
  rec.timestamp = env.now();
  rec.artifacts = {{"checkpoint", ckpt_rel},
                   {"metrics", metrics_rel},
                   {"teacher_run", p.teacher_run},
                   {"dataset", teacher_rec->artifacts.at("dataset")}};
  rec.config = cfg;
  reg.append(rec);
  return rec;
}

ExperimentRecord ensure_student(const Env& env, Registry& reg, const StudentParams& p) {
  env.ensure_dirs();
  json cfg;
  cfg["kind"] = "student";
  cfg["role"] = p.role;
  cfg["mode"] = p.mode == kd::Mode::scratch ? "scratch"
               : p.mode == kd::Mode::kd_plain ? "kd_plain" : "kd_with_key";
  cfg["student"] = spec_json(p.student);
  cfg["train"] = tcfg_json(p.tcfg);
  cfg["key_source"] = p.key_source;

  std::optional<ExperimentRecord> teacher_rec;
  if (!p.teacher_run.empty()) {
    teacher_rec = reg.find_by_id(p.teacher_run);
    require(teacher_rec.has_value(), ErrorCategory::config,
            "ensure_student: unknown teacher run " + p.teacher_run);
    cfg["teacher"] = teacher_rec->cfg_hash;
  } else {
    cfg["teacher"] = json();
  }
  const std::string hash = config_hash(cfg);
  if (auto hit = reg.find_by_hash(hash)) return *hit;

  const std::string run_id = run_id_for(p.role, cfg);

  json ds_json;
  if (teacher_rec.has_value()) {
    ds_json = teacher_rec->config.contains("dataset") ? teacher_rec->config.at("dataset")
                                                      : json();
    if (ds_json.is_null()) {
      // wrapped/aug teachers reference their pretrain's dataset
      auto base = reg.find_by_id(teacher_rec->artifacts.at("teacher_run").get<std::string>());
      require(base.has_value(), ErrorCategory::config, "dangling teacher_run chain");
      ds_json = base->config.at("dataset");
    }
  } else {
    require(p.tcfg.distill.mode == kd::Mode::scratch || p.mode == kd::Mode::scratch,
            ErrorCategory::config, "distillation student without a teacher run");
    ds_json = cfg.contains("dataset") ? cfg.at("dataset") : json();
  }
  if (ds_json.is_null()) {
    // scratch students get the dataset from the suite via tcfg.data_seed;
    // callers must have placed the dataset config in cfg beforehand
    fail(ErrorCategory::config, "ensure_student: no dataset in teacher chain");
  }
  data::DatasetHandle ds = open_dataset(ensure_dataset(env, synth_from_json(ds_json)));

  std::optional<models::Model> teacher;
  std::optional<keying::Key> key;
  if (teacher_rec.has_value() && p.mode != kd::Mode::scratch)
    teacher = load_run_model(env, reg, p.teacher_run);
  if (!p.key_source.empty()) key = resolve_key(env, reg, p.teacher_run, p.key_source, ds);

  train::TrainingConfig tcfg = p.tcfg;
  tcfg.distill.mode = p.mode;
  models::Model student =
      train::train_student(tcfg, ds, p.student, teacher ? &*teacher : nullptr,
                           key ? &*key : nullptr);
  const auto eval = train::evaluate(student, ds, key ? &*key : nullptr);

  const std::string ckpt_rel = "ckpt/" + run_id + ".ckpt";
  models::save_checkpoint(student, env.root / ckpt_rel);

  ExperimentRecord rec;
  rec.run_id = run_id;
  rec.mode = "student";
  rec.role = p.role;
  rec.seed = p.tcfg.model_seed;
  if (teacher_rec.has_value()) rec.teacher_spec = teacher_rec->teacher_spec;
  rec.student_spec = spec_json(p.student);
  rec.key_fingerprint = key ? keying::key_fingerprint(*key) : "";
  json student_acc = {{"plain", eval.acc_plain}};
  if (eval.acc_with_key) student_acc["with_key"] = *eval.acc_with_key;
  rec.acc = {{"student", student_acc}};
  rec.seeds = {{"model", p.tcfg.model_seed}, {"data", p.tcfg.data_seed}};
  rec.cfg_hash = hash;
  rec.timestamp = env.now();
  rec.artifacts = {{"checkpoint", ckpt_rel}};
  if (!p.teacher_run.empty()) rec.artifacts["teacher_run"] = p.teacher_run;
  rec.config = cfg;
  reg.append(rec);
  return rec;
}

ExperimentRecord ensure_attack(const Env& env, Registry& reg, const AttackParams& p) {
  env.ensure_dirs();
  auto sdb_rec = reg.find_by_id(p.sdb_run);
  require(sdb_rec.has_value(), ErrorCategory::config,
          "ensure_attack: unknown run " + p.sdb_run);

  json cfg;
  cfg["kind"] = "attack";
  cfg["attack"] = p.kind;
  cfg["sdb"] = sdb_rec->cfg_hash;
  cfg["temps"] = p.temps;
  cfg["n_keys"] = p.n_keys;
  cfg["attacker_seed"] = p.attacker_seed;
  cfg["student"] = spec_json(p.student);
  cfg["train"] = tcfg_json(p.tcfg);
  const std::string hash = config_hash(cfg);
  if (auto hit = reg.find_by_hash(hash)) return *hit;

  const std::string run_id = run_id_for("attack_" + p.kind, cfg);
  data::DatasetHandle ds = open_dataset(ensure_dataset(
      env, synth_from_json(
               reg.find_by_id(sdb_rec->artifacts.at("teacher_run").get<std::string>())
                   ->config.at("dataset"))));
  models::Model sdb_model = load_run_model(env, reg, p.sdb_run);
  keying::Key true_key =
      keying::load_key(env.root / sdb_rec->artifacts.at("key").get<std::string>());

  const fs::path ckpt_abs = env.root / sdb_rec->artifacts.at("checkpoint").get<std::string>();
  const std::uint64_t file_sum_before = models::checkpoint_file_checksum(ckpt_abs);

  attacks::AttackReport rep;
  if (p.kind == "temperature") {
    rep = attacks::temperature_attack(sdb_model, p.temps, p.student, p.tcfg, ds, true_key);
  } else if (p.kind == "random-key") {
    rep = attacks::random_key_attack(sdb_model, p.n_keys, p.attacker_seed, p.student,
                                     p.tcfg, ds, true_key);
  } else {
    fail(ErrorCategory::parameter, "unknown attack kind: " + p.kind);
  }
  require(models::checkpoint_file_checksum(ckpt_abs) == file_sum_before,
          ErrorCategory::contract, "attack mutated the wrapped checkpoint file");

  json rows = json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"label", r.label},
                    {"sweep_value", r.sweep_value},
                    {"key_fingerprint", r.key_fingerprint},
                    {"student_acc", r.student_acc}});
  json report = {{"kind", rep.kind},
                 {"rows", rows},
                 {"scratch_acc", rep.scratch_acc},
                 {"authorized_acc", rep.authorized_acc},
                 {"seed", rep.seed},
                 {"config_hash", rep.config_hash},
                 {"sdb_key_fingerprint", rep.sdb_key_fingerprint}};
  const std::string report_rel = "reports/" + run_id + ".json";
  std::ofstream out(env.root / report_rel, std::ios::trunc);
  out << report.dump(2) << "\n";

  ExperimentRecord rec;
  rec.run_id = run_id;
  rec.mode = "attack";
  rec.role = "attack_" + p.kind;
  rec.seed = p.tcfg.model_seed;
  rec.teacher_spec = sdb_rec->teacher_spec;
  rec.student_spec = spec_json(p.student);
  rec.key_fingerprint = rep.sdb_key_fingerprint;
  rec.acc = {{"attack", report}};
  rec.seeds = {{"model", p.tcfg.model_seed}, {"attacker", p.attacker_seed}};
  rec.cfg_hash = hash;
  rec.timestamp = env.now();
  rec.artifacts = {{"report", report_rel}, {"sdb_run", p.sdb_run}};
  rec.config = cfg;
  reg.append(rec);
  return rec;
}

// ------------------------------------------------------------------ suite --

DeskProfile desk_profile(std::uint64_t seed, const json& overrides) {
  DeskProfile p;
  p.dataset.seed = 1000 + seed;
  p.key_seed = 500 + seed;
  p.attacker_seed = 9000 + seed;

  p.teacher.name = "resnet_tiny";
  p.teacher.init_seed = rng::derive_seed(seed, "teacher-init");
  p.student.name = "mlp_small";
  p.student.init_seed = rng::derive_seed(seed, "student-init");

  auto base = [&](int epochs, double lr) {
    train::TrainingConfig c;
    c.epochs = epochs;
    c.batch_size = 64;
    c.optimizer.lr = lr;
    c.model_seed = seed;
    c.data_seed = rng::derive_seed(seed, "data-order");
    c.key_seed = p.key_seed;
    c.deterministic = true;
    return c;
  };
  p.teacher_cfg = base(12, 0.1);
  p.sdb_cfg = base(12, 0.02);
  p.aug_cfg = base(8, 0.02);
  p.student_cfg = base(20, 0.1);

  p.sdb_cfg.sdb.omega = 0.5;
  p.sdb_cfg.sdb.eta = 0.05;
  p.aug_cfg.sdb.eta = 0.05;

  if (!overrides.is_null()) {
    if (overrides.contains("teacher_epochs")) p.teacher_cfg.epochs = overrides["teacher_epochs"];
    if (overrides.contains("sdb_epochs")) p.sdb_cfg.epochs = overrides["sdb_epochs"];
    if (overrides.contains("aug_epochs")) p.aug_cfg.epochs = overrides["aug_epochs"];
    if (overrides.contains("student_epochs")) p.student_cfg.epochs = overrides["student_epochs"];
    if (overrides.contains("omega")) p.sdb_cfg.sdb.omega = overrides["omega"];
    if (overrides.contains("eta")) {
      p.sdb_cfg.sdb.eta = overrides["eta"];
      p.aug_cfg.sdb.eta = overrides["eta"];
    }
    if (overrides.contains("per_class_train")) p.dataset.per_class_train = overrides["per_class_train"];
    if (overrides.contains("per_class_test")) p.dataset.per_class_test = overrides["per_class_test"];
    if (overrides.contains("noise_sigma")) p.dataset.noise_sigma = overrides["noise_sigma"];
    if (overrides.contains("alpha")) p.student_cfg.distill.alpha = overrides["alpha"];
    if (overrides.contains("teacher_lr")) p.teacher_cfg.optimizer.lr = overrides["teacher_lr"];
    if (overrides.contains("sdb_lr")) p.sdb_cfg.optimizer.lr = overrides["sdb_lr"];
    if (overrides.contains("student_lr")) p.student_cfg.optimizer.lr = overrides["student_lr"];
  }
  return p;
}

namespace {

struct Node {
  std::string name;
  int wave = 0;
  std::function<void()> run;
};

}  // namespace

SuiteResult run_suite(const Env& env, Registry& reg, const SuiteConfig& cfg) {
  SuiteResult result;
  std::mutex result_mu;
  std::vector<Node> nodes;

  // shared per-seed state passed between waves through the registry
  struct SeedRuns {
    std::string pretrain, sdb, sdb_wo_kdis, ke, aug;
  };
  std::map<std::uint64_t, SeedRuns> runs;
  std::mutex runs_mu;

  const bool want_ke = cfg.name == "table3-desk" || cfg.name == "table1-desk";
  const bool want_ablation_rows = cfg.name == "table1-desk";

  for (std::uint64_t seed : cfg.seeds) {
    DeskProfile p = desk_profile(seed, cfg.overrides);

    nodes.push_back({"pretrain/" + std::to_string(seed), 0, [&, p, seed]() {
      PretrainParams pp{p.dataset, p.teacher, p.teacher_cfg};
      auto rec = ensure_pretrain(env, reg, pp);
      std::lock_guard<std::mutex> lock(runs_mu);
      runs[seed].pretrain = rec.run_id;
    }});

    auto pretrain_of = [&](std::uint64_t s) {
      std::lock_guard<std::mutex> lock(runs_mu);
      return runs[s].pretrain;
    };

    nodes.push_back({"sdb/" + std::to_string(seed), 1, [&, p, seed, pretrain_of]() {
      SdbParams sp;
      sp.teacher_run = pretrain_of(seed);
      sp.key_seed = p.key_seed;
      sp.lambda = p.lambda;
      sp.tcfg = p.sdb_cfg;
      sp.role = "sdb";
      auto rec = ensure_sdb(env, reg, sp);
      std::lock_guard<std::mutex> lock(runs_mu);
      runs[seed].sdb = rec.run_id;
    }});

    nodes.push_back({"sdb_wo_kdis/" + std::to_string(seed), 1, [&, p, seed, pretrain_of]() {
      SdbParams sp;
      sp.teacher_run = pretrain_of(seed);
      sp.key_seed = p.key_seed;
      sp.lambda = p.lambda;
      sp.tcfg = p.sdb_cfg;
      sp.tcfg.ablation.disable_kdis = true;
      sp.role = "sdb_wo_kdis";
      auto rec = ensure_sdb(env, reg, sp);
      std::lock_guard<std::mutex> lock(runs_mu);
      runs[seed].sdb_wo_kdis = rec.run_id;
    }});

    nodes.push_back({"aug_teacher/" + std::to_string(seed), 1, [&, p, seed, pretrain_of]() {
      AugTeacherParams ap{pretrain_of(seed), p.aug_cfg};
      auto rec = ensure_aug_teacher(env, reg, ap);
      std::lock_guard<std::mutex> lock(runs_mu);
      runs[seed].aug = rec.run_id;
    }});

    if (want_ke) {
      nodes.push_back({"ke/" + std::to_string(seed), 1, [&, p, seed, pretrain_of]() {
        SdbParams sp;
        sp.teacher_run = pretrain_of(seed);
        sp.key_seed = p.key_seed;
        sp.lambda = p.lambda;
        sp.tcfg = p.sdb_cfg;
        sp.tcfg.ablation.disable_kdis = true;
        sp.tcfg.ablation.disable_kp = true;
        sp.role = "ke";
        auto rec = ensure_sdb(env, reg, sp);
        std::lock_guard<std::mutex> lock(runs_mu);
        runs[seed].ke = rec.run_id;
      }});
    }

    if (want_ablation_rows) {
      nodes.push_back({"sdb_wo_kp/" + std::to_string(seed), 1, [&, p, seed, pretrain_of]() {
        SdbParams sp;
        sp.teacher_run = pretrain_of(seed);
        sp.key_seed = p.key_seed;
        sp.lambda = p.lambda;
        sp.tcfg = p.sdb_cfg;
        sp.tcfg.ablation.disable_kp = true;
        sp.role = "sdb_wo_kp";
        ensure_sdb(env, reg, sp);
      }});
      nodes.push_back({"sdb_wo_ke/" + std::to_string(seed), 1, [&, p, seed, pretrain_of]() {
        SdbParams sp;
        sp.teacher_run = pretrain_of(seed);
        sp.key_seed = p.key_seed;
        sp.lambda = p.lambda;
        sp.tcfg = p.sdb_cfg;
        sp.tcfg.ablation.disable_ke = true;
        sp.role = "sdb_wo_ke";
        ensure_sdb(env, reg, sp);
      }});
    }

    auto student_node = [&, p, seed](const std::string& role, kd::Mode mode,
                                     const std::string& teacher_sel, const std::string& key_src,
                                     double temp, bool scratch_proxy = false) {
      nodes.push_back({role + "/" + std::to_string(seed), 2, [&, p, seed, role, mode,
                                                             teacher_sel, key_src, temp,
                                                             scratch_proxy]() {
        StudentParams sp;
        sp.mode = mode;
        sp.role = role;
        sp.student = p.student;
        sp.tcfg = p.student_cfg;
        sp.tcfg.scratch_on_proxy = scratch_proxy;
        sp.tcfg.distill.temperature = softops::Temperature(temp);
        sp.key_source = key_src;
        {
          std::lock_guard<std::mutex> lock(runs_mu);
          if (teacher_sel == "pretrain") sp.teacher_run = runs[seed].pretrain;
          else if (teacher_sel == "sdb") sp.teacher_run = runs[seed].sdb;
          else if (teacher_sel == "sdb_wo_kdis") sp.teacher_run = runs[seed].sdb_wo_kdis;
          else if (teacher_sel == "ke") sp.teacher_run = runs[seed].ke;
          else if (teacher_sel == "aug") sp.teacher_run = runs[seed].aug;
        }
        // scratch rows still need a dataset reference: reuse the pretrain
        // teacher chain so every student shares the same dataset
        if (sp.teacher_run.empty()) {
          std::lock_guard<std::mutex> lock(runs_mu);
          sp.teacher_run = runs[seed].pretrain;
        }
        ensure_student(env, reg, sp);
      }});
    };

    const double t_default = p.student_cfg.distill.temperature.value;
    student_node("student_scratch", kd::Mode::scratch, "pretrain", "", t_default);
    student_node("student_normal", kd::Mode::kd_plain, "pretrain", "", t_default);
    student_node("student_aug", kd::Mode::kd_plain, "aug", "", t_default);
    for (double t : p.attack_temps) {
      std::string label = std::to_string(static_cast<int>(t));
      student_node("student_unauth_T" + label, kd::Mode::kd_plain, "sdb", "", t);
    }
    student_node("student_auth", kd::Mode::kd_with_key, "sdb", "true", t_default);
    for (int i = 1; i <= p.n_wrong_keys; ++i) {
      const std::uint64_t wseed =
          rng::derive_seed(p.attacker_seed, "attack-key-" + std::to_string(i));
      student_node("student_wrongkey_" + std::to_string(i), kd::Mode::kd_with_key, "sdb",
                   "seed:" + std::to_string(wseed), t_default);
    }
    student_node("student_wo_kdis_unauth", kd::Mode::kd_plain, "sdb_wo_kdis", "", t_default);

    if (cfg.name == "table3-desk") {
      const std::string suite_key =
          "keyseed:" + std::to_string(p.key_seed) + ":" + std::to_string(p.lambda);
      student_node("student_scratch_proxy", kd::Mode::scratch, "pretrain", suite_key, t_default,
                   /*scratch_proxy=*/true);
      student_node("student_normal_auth", kd::Mode::kd_with_key, "pretrain", suite_key, t_default);
      student_node("student_ke_unauth", kd::Mode::kd_plain, "ke", "", t_default);
      student_node("student_ke_auth", kd::Mode::kd_with_key, "ke", "true", t_default);
    }
    if (cfg.name == "table1-desk") {
      student_node("student_wo_kp_unauth", kd::Mode::kd_plain, "sdb_wo_kp", "", t_default);
      student_node("student_wo_kp_auth", kd::Mode::kd_with_key, "sdb_wo_kp", "true", t_default);
      student_node("student_wo_kdis_auth", kd::Mode::kd_with_key, "sdb_wo_kdis", "true",
                   t_default);
      student_node("student_wo_ke_unauth", kd::Mode::kd_plain, "sdb_wo_ke", "", t_default);
    }
  }

  const int max_wave = 2;
  const int jobs = env.deterministic ? 1 : std::max(1, env.jobs);
  for (int wave = 0; wave <= max_wave; ++wave) {
    std::vector<Node*> batch;
    for (auto& n : nodes)
      if (n.wave == wave) batch.push_back(&n);
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= batch.size()) return;
        try {
          batch[i]->run();
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(result_mu);
          result.failures.push_back({batch[i]->name, e.what()});
        }
      }
    };
    if (jobs <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
  }

  result.records = reg.all();
  return result;
}

std::optional<ExperimentRecord> find_role(const std::vector<ExperimentRecord>& recs,
                                          const std::string& role, std::uint64_t seed) {
  for (const auto& r : recs)
    if (r.role == role && r.seed == seed) return r;
  return std::nullopt;
}

double median(std::vector<double> v) {
  require(!v.empty(), ErrorCategory::parameter, "median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace sdb::experiments
