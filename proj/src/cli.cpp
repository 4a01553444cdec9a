#include "sdb/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "sdb/experiments.hpp"
#include "sdb/report.hpp"

namespace sdb::cliapp {
namespace {

namespace fs = std::filesystem;
using experiments::Env;
using experiments::ExperimentRecord;
using experiments::Registry;
using experiments::json;

struct GlobalFlags {
  std::string root;
  bool deterministic = false;
  std::uint64_t seed = 1;
  int jobs = 2;
};

Env make_env(const GlobalFlags& g) {
  Env env;
  if (!g.root.empty()) {
    env.root = g.root;
  } else if (const char* e = std::getenv("SDB_ROOT")) {
    env.root = e;
  }
  env.deterministic = g.deterministic;
  env.jobs = g.jobs;
  return env;
}

void parse_shape(const std::string& s, std::int64_t& h, std::int64_t& w, std::int64_t& c) {
  std::int64_t vals[3];
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    std::size_t next = s.find('x', pos);
    const std::string tok =
        next == std::string::npos ? s.substr(pos) : s.substr(pos, next - pos);
    require(!tok.empty(), ErrorCategory::parameter, "bad shape (want HxWxC): " + s);
    try {
      vals[i] = std::stoll(tok);
    } catch (...) {
      fail(ErrorCategory::parameter, "bad shape (want HxWxC): " + s);
    }
    require((i < 2) == (next != std::string::npos), ErrorCategory::parameter,
            "bad shape (want HxWxC): " + s);
    pos = next == std::string::npos ? s.size() : next + 1;
  }
  h = vals[0];
  w = vals[1];
  c = vals[2];
}

models::Model resolve_teacher(const Env& env, Registry& reg, const std::string& ref) {
  if (auto rec = reg.find_by_id(ref)) {
    return models::load_checkpoint(env.root / rec->artifacts.at("checkpoint").get<std::string>())
        .model;
  }
  require(fs::exists(ref), ErrorCategory::config,
          "teacher '" + ref + "' is neither a run id nor a checkpoint file");
  return models::load_checkpoint(ref).model;
}

std::uint64_t dataset_dir_checksum(const fs::path& dir) {
  return models::checkpoint_file_checksum(dir / "index.json");
}

losses::SdbAblation parse_ablation(const std::string& spec) {
  losses::SdbAblation a;
  std::size_t pos = 0;
  while (pos < spec.size()) {
    std::size_t next = spec.find(',', pos);
    const std::string tok =
        next == std::string::npos ? spec.substr(pos) : spec.substr(pos, next - pos);
    if (tok == "ke") a.disable_ke = true;
    else if (tok == "kdis") a.disable_kdis = true;
    else if (tok == "kp") a.disable_kp = true;
    else if (!tok.empty())
      fail(ErrorCategory::parameter, "unknown ablation switch: " + tok +
                                         " (expected ke, kdis, kp)");
    pos = next == std::string::npos ? spec.size() : next + 1;
  }
  return a;
}

json tcfg_summary(const train::TrainingConfig& c) {
  return {{"lr", c.optimizer.lr},
          {"momentum", c.optimizer.momentum},
          {"weight_decay", c.optimizer.weight_decay},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"model_seed", c.model_seed},
          {"data_seed", c.data_seed},
          {"deterministic", c.deterministic},
          {"omega", c.sdb.omega},
          {"eta", c.sdb.eta},
          {"t_dis", c.sdb.t_dis.value},
          {"aug_mode", c.sdb.aug_mode == losses::AugMode::infinite_t ? "infinite" : "finite"},
          {"t_aug", c.sdb.t_aug ? json(c.sdb.t_aug->value) : json()},
          {"alpha", c.distill.alpha},
          {"temperature", c.distill.temperature.value},
          {"ablation",
           {{"ke", c.ablation.disable_ke},
            {"kdis", c.ablation.disable_kdis},
            {"kp", c.ablation.disable_kp}}},
          {"scratch_on_proxy", c.scratch_on_proxy}};
}

void write_step_metrics(const fs::path& file, const std::vector<train::StepLog>& log) {
  std::ofstream out(file, std::ios::trunc);
  require(out.good(), ErrorCategory::io, "cannot write metrics: " + file.string());
  for (const auto& s : log) {
    json j = {{"step", s.step}, {"lr", s.lr},         {"cls", s.terms.cls},
              {"dis", s.terms.dis}, {"main", s.terms.main}, {"aug", s.terms.aug},
              {"kp", s.terms.kp},   {"total", s.terms.total}};
    out << j.dump() << "\n";
  }
}

// Path-based run used by the direct CLI verbs (suites go through the
// registry-chained runners instead). Idempotent per config hash.
ExperimentRecord cli_run(const Env& env, Registry& reg, const std::string& role,
                         const std::string& mode, json cfg,
                         const std::function<void(ExperimentRecord&, const std::string&)>& body) {
  env.ensure_dirs();
  cfg["kind"] = "cli-" + role;
  const std::string hash = experiments::config_hash(cfg);
  if (auto hit = reg.find_by_hash(hash)) {
    std::cout << "run " << hit->run_id << " already recorded; skipping\n";
    return *hit;
  }
  const std::string run_id = experiments::run_id_for(role, cfg);
  ExperimentRecord rec;
  rec.run_id = run_id;
  rec.mode = mode;
  rec.role = role;
  rec.cfg_hash = hash;
  rec.timestamp = env.now();
  rec.config = cfg;
  body(rec, run_id);
  reg.append(rec);
  return rec;
}

int cmd_gen_key(const GlobalFlags& g, std::uint64_t seed, const std::string& shape,
                double lambda, const std::string& out) {
  (void)g;
  std::int64_t h, w, c;
  parse_shape(shape, h, w, c);
  keying::Key key = keying::generate_key(seed, h, w, c, lambda);
  keying::save_key(key, out);
  std::cout << "key " << keying::key_fingerprint(key) << " -> " << out << "\n";
  return 0;
}

}  // namespace

int run(std::vector<std::string> args) {
  CLI::App app{"safe distillation box: wrapped-teacher training and evaluation"};
  app.require_subcommand(1);

  GlobalFlags g;
  app.add_option("--root", g.root, "run root directory (default $SDB_ROOT or ./sdb_runs)");
  app.add_flag("--deterministic", g.deterministic,
               "pin timestamps, serialize suite nodes, derive all randomness from seeds");
  app.add_option("--seed", g.seed, "global experiment seed");
  app.add_option("--jobs", g.jobs, "max concurrent suite nodes (ignored when deterministic)");

  int rc = 0;
  std::function<void()> action;

  // ---- gen-key
  auto* genkey = app.add_subcommand("gen-key", "generate a key file");
  {
    static std::uint64_t seed = 7;
    static std::string shape = "8x8x3";
    static double lambda = 0.5;
    static std::string out = "key.sdbkey";
    genkey->add_option("--seed", seed, "key generation seed");
    genkey->add_option("--shape", shape, "pattern shape HxWxC");
    genkey->add_option("--lambda", lambda, "embedding weight in (0,1)");
    genkey->add_option("--out", out, "output key file")->required();
    genkey->callback([&rc, &g]() { rc = cmd_gen_key(g, seed, shape, lambda, out); });
  }

  // ---- make-data
  auto* makedata = app.add_subcommand("make-data", "generate and export a synthetic dataset");
  {
    static data::SyntheticConfig cfg;
    static std::string shape = "8x8x3";
    static std::string out = "dataset";
    makedata->add_option("--seed", cfg.seed, "dataset seed");
    makedata->add_option("--classes", cfg.num_classes, "number of classes");
    makedata->add_option("--per-class-train", cfg.per_class_train, "train samples per class");
    makedata->add_option("--per-class-test", cfg.per_class_test, "test samples per class");
    makedata->add_option("--shape", shape, "image shape HxWxC");
    makedata->add_option("--noise", cfg.noise_sigma, "pixel noise sigma");
    makedata->add_option("--max-shift", cfg.max_shift, "max circular shift");
    makedata->add_option("--out", out, "output directory")->required();
    makedata->callback([&]() {
      parse_shape(shape, cfg.height, cfg.width, cfg.channels);
      data::DatasetHandle ds = data::make_synthetic(cfg);
      data::export_dataset(ds, out);
      std::cout << "dataset " << ds.name << " (" << ds.train_count() << " train / "
                << ds.test_count() << " test) -> " << out << "\n";
    });
  }

  // ---- import-data
  auto* importdata = app.add_subcommand("import-data", "validate an exported dataset");
  {
    static std::string dir;
    importdata->add_option("--dir", dir, "dataset directory")->required();
    importdata->callback([&]() {
      data::DatasetHandle ds = data::load_image_dataset(dir);
      std::cout << "dataset " << ds.name << ": " << ds.num_classes << " classes, "
                << ds.train_count() << " train / " << ds.test_count() << " test, shape "
                << ds.height << "x" << ds.width << "x" << ds.channels << ", checksum "
                << hex16(ds.checksum()) << "\n";
    });
  }

  // ---- pretrain
  auto* pretrain = app.add_subcommand("pretrain", "train a reference teacher with CE");
  {
    static std::string data_dir, model = "resnet_tiny";
    static int epochs = 12;
    static double lr = 0.1;
    static int batch = 64;
    pretrain->add_option("--data", data_dir, "dataset directory")->required();
    pretrain->add_option("--model", model, "model zoo name");
    pretrain->add_option("--epochs", epochs, "training epochs");
    pretrain->add_option("--lr", lr, "base learning rate (cosine decayed)");
    pretrain->add_option("--batch-size", batch, "batch size");
    pretrain->callback([&]() {
      Env env = make_env(g);
      Registry reg(env);
      data::DatasetHandle ds = data::load_image_dataset(data_dir);
      models::ModelSpec spec;
      spec.name = model;
      spec.height = ds.height;
      spec.width = ds.width;
      spec.channels = ds.channels;
      spec.num_classes = ds.num_classes;
      spec.init_seed = rng::derive_seed(g.seed, "teacher-init");
      train::TrainingConfig tcfg;
      tcfg.epochs = epochs;
      tcfg.batch_size = batch;
      tcfg.optimizer.lr = lr;
      tcfg.model_seed = g.seed;
      tcfg.data_seed = rng::derive_seed(g.seed, "data-order");
      tcfg.deterministic = g.deterministic;
      json cfg = {{"data_dir", fs::absolute(data_dir).string()},
                  {"data_checksum", hex16(dataset_dir_checksum(data_dir))},
                  {"model", model},
                  {"train", tcfg_summary(tcfg)}};
      auto rec = cli_run(env, reg, "pretrain", "pretrain", cfg,
                         [&](ExperimentRecord& r, const std::string& run_id) {
        std::vector<train::StepLog> log;
        models::Model m = train::pretrain_teacher(
            tcfg, ds, spec, [&](const train::StepLog& s) { log.push_back(s); });
        const auto eval = train::evaluate(m, ds);
        const std::string ckpt = "ckpt/" + run_id + ".ckpt";
        const std::string metrics = "metrics/" + run_id + ".jsonl";
        models::save_checkpoint(m, env.root / ckpt, static_cast<std::int64_t>(log.size()));
        write_step_metrics(env.root / metrics, log);
        r.seed = g.seed;
        r.teacher_spec = {{"name", model}};
        r.acc = {{"teacher", {{"plain", eval.acc_plain}}}};
        r.seeds = {{"model", tcfg.model_seed}, {"data", tcfg.data_seed}};
        r.artifacts = {{"checkpoint", ckpt}, {"metrics", metrics},
                       {"dataset", fs::absolute(data_dir).string()}};
        std::cout << "pretrain " << run_id << ": test acc " << eval.acc_plain << "\n";
      });
      (void)rec;
    });
  }

  // ---- train-sdb
  auto* trainsdb = app.add_subcommand("train-sdb", "wrap a teacher (key-gated knowledge)");
  {
    static std::string data_dir, teacher, key_path, disable, aug_mode = "infinite";
    static int epochs = 12;
    static double lr = 0.02, omega = 0.5, eta = 0.05, t_dis = 4.0, t_aug = 1000.0;
    static int batch = 64;
    static bool from_scratch = false, aug_refs_proxy = false;
    trainsdb->add_option("--data", data_dir, "dataset directory")->required();
    trainsdb->add_option("--teacher", teacher, "pretrained teacher (run id or checkpoint)")->required();
    trainsdb->add_option("--key", key_path, "key file")->required();
    trainsdb->add_option("--epochs", epochs, "training epochs");
    trainsdb->add_option("--lr", lr, "base learning rate");
    trainsdb->add_option("--batch-size", batch, "batch size");
    trainsdb->add_option("--omega", omega, "disturbance weight");
    trainsdb->add_option("--eta", eta, "augmentation weight");
    trainsdb->add_option("--t-dis", t_dis, "disturbance temperature");
    trainsdb->add_option("--aug-mode", aug_mode, "augmentation mode: infinite | finite");
    trainsdb->add_option("--t-aug", t_aug, "augmentation temperature (finite mode)");
    trainsdb->add_flag("--from-scratch", from_scratch, "init from scratch instead of the teacher");
    trainsdb->add_flag("--aug-refs-on-proxy", aug_refs_proxy,
                       "evaluate augmentation references on the proxy stream");
    trainsdb->add_option("--disable", disable, "ablation switches: comma list of ke,kdis,kp");
    trainsdb->callback([&]() {
      Env env = make_env(g);
      Registry reg(env);
      data::DatasetHandle ds = data::load_image_dataset(data_dir);
      models::Model t = resolve_teacher(env, reg, teacher);
      keying::Key key = keying::load_key(key_path);
      train::TrainingConfig tcfg;
      tcfg.epochs = epochs;
      tcfg.batch_size = batch;
      tcfg.optimizer.lr = lr;
      tcfg.model_seed = g.seed;
      tcfg.data_seed = rng::derive_seed(g.seed, "data-order");
      tcfg.deterministic = g.deterministic;
      tcfg.sdb.omega = omega;
      tcfg.sdb.eta = eta;
      tcfg.sdb.t_dis = softops::Temperature(t_dis);
      tcfg.sdb.aug_mode =
          aug_mode == "finite" ? losses::AugMode::finite_t : losses::AugMode::infinite_t;
      if (tcfg.sdb.aug_mode == losses::AugMode::finite_t)
        tcfg.sdb.t_aug = softops::Temperature(t_aug);
      tcfg.sdb.aug_refs_on_proxy = aug_refs_proxy;
      tcfg.ablation = parse_ablation(disable);
      tcfg.sdb_init_from_teacher = !from_scratch;
      json cfg = {{"data_dir", fs::absolute(data_dir).string()},
                  {"data_checksum", hex16(dataset_dir_checksum(data_dir))},
                  {"teacher", teacher},
                  {"key", keying::key_fingerprint(key)},
                  {"train", tcfg_summary(tcfg)}};
      cli_run(env, reg, "train-sdb", "sdb", cfg,
              [&](ExperimentRecord& r, const std::string& run_id) {
        auto res = train::train_sdb(tcfg, t, key, ds);
        const auto eval = train::evaluate(res.model, ds, &key);
        const std::string ckpt = "ckpt/" + run_id + ".ckpt";
        const std::string metrics = "metrics/" + run_id + ".jsonl";
        models::save_checkpoint(res.model, env.root / ckpt,
                                static_cast<std::int64_t>(res.log.size()));
        write_step_metrics(env.root / metrics, res.log);
        const std::string key_rel = "keys/" + keying::key_fingerprint(key) + ".key";
        if (!fs::exists(env.root / key_rel)) keying::save_key(key, env.root / key_rel);
        r.seed = g.seed;
        r.key_fingerprint = keying::key_fingerprint(key);
        r.acc = {{"teacher",
                  {{"plain", eval.acc_plain}, {"with_key", *eval.acc_with_key}}}};
        r.seeds = {{"model", tcfg.model_seed}, {"data", tcfg.data_seed}, {"key", key.seed}};
        r.artifacts = {{"checkpoint", ckpt}, {"metrics", metrics}, {"key", key_rel},
                       {"dataset", fs::absolute(data_dir).string()}};
        std::cout << "train-sdb " << run_id << ": acc plain " << eval.acc_plain
                  << ", with key " << *eval.acc_with_key << "\n";
      });
    });
  }

  // ---- train-aug
  auto* trainaug = app.add_subcommand("train-aug", "knowledge-augmentation-only teacher");
  {
    static std::string data_dir, teacher;
    static int epochs = 8, batch = 64;
    static double lr = 0.02, eta = 0.05, t_dis = 4.0;
    trainaug->add_option("--data", data_dir, "dataset directory")->required();
    trainaug->add_option("--teacher", teacher, "pretrained teacher (run id or checkpoint)")->required();
    trainaug->add_option("--epochs", epochs, "training epochs");
    trainaug->add_option("--lr", lr, "base learning rate");
    trainaug->add_option("--batch-size", batch, "batch size");
    trainaug->add_option("--eta", eta, "augmentation weight");
    trainaug->add_option("--t-dis", t_dis, "maintain temperature");
    trainaug->callback([&]() {
      Env env = make_env(g);
      Registry reg(env);
      data::DatasetHandle ds = data::load_image_dataset(data_dir);
      models::Model t = resolve_teacher(env, reg, teacher);
      train::TrainingConfig tcfg;
      tcfg.epochs = epochs;
      tcfg.batch_size = batch;
      tcfg.optimizer.lr = lr;
      tcfg.model_seed = g.seed;
      tcfg.data_seed = rng::derive_seed(g.seed, "data-order");
      tcfg.deterministic = g.deterministic;
      tcfg.sdb.eta = eta;
      tcfg.sdb.t_dis = softops::Temperature(t_dis);
      json cfg = {{"data_dir", fs::absolute(data_dir).string()},
                  {"data_checksum", hex16(dataset_dir_checksum(data_dir))},
                  {"teacher", teacher},
                  {"train", tcfg_summary(tcfg)}};
      cli_run(env, reg, "train-aug", "aug_teacher", cfg,
              [&](ExperimentRecord& r, const std::string& run_id) {
        std::vector<train::StepLog> log;
        models::Model m = train::train_aug_teacher(
            tcfg, t, ds, [&](const train::StepLog& s) { log.push_back(s); });
        const auto eval = train::evaluate(m, ds);
        const std::string ckpt = "ckpt/" + run_id + ".ckpt";
        const std::string metrics = "metrics/" + run_id + ".jsonl";
        models::save_checkpoint(m, env.root / ckpt, static_cast<std::int64_t>(log.size()));
        write_step_metrics(env.root / metrics, log);
        r.seed = g.seed;
        r.acc = {{"teacher", {{"plain", eval.acc_plain}}}};
        r.seeds = {{"model", tcfg.model_seed}, {"data", tcfg.data_seed}};
        r.artifacts = {{"checkpoint", ckpt}, {"metrics", metrics},
                       {"dataset", fs::absolute(data_dir).string()}};
        std::cout << "train-aug " << run_id << ": test acc " << eval.acc_plain << "\n";
      });
    });
  }

  // ---- distill
  auto* distill = app.add_subcommand("distill", "train a student (scratch or distillation)");
  {
    static std::string data_dir, teacher, key_path, mode = "kd", student = "mlp_small";
    static bool no_key = false;
    static double alpha = 0.9, temp = 4.0, lr = 0.1;
    static int epochs = 20, batch = 64;
    distill->add_option("--data", data_dir, "dataset directory")->required();
    distill->add_option("--mode", mode, "scratch | kd");
    distill->add_option("--teacher", teacher, "teacher (run id or checkpoint)");
    distill->add_option("--key", key_path, "key file (authorized distillation)");
    distill->add_flag("--no-key", no_key, "unauthorized distillation (clean teacher inputs)");
    distill->add_option("--student", student, "student model zoo name");
    distill->add_option("--alpha", alpha, "distillation mixing weight");
    distill->add_option("--temp", temp, "distillation temperature");
    distill->add_option("--epochs", epochs, "training epochs");
    distill->add_option("--lr", lr, "base learning rate");
    distill->add_option("--batch-size", batch, "batch size");
    distill->callback([&]() {
      Env env = make_env(g);
      Registry reg(env);
      data::DatasetHandle ds = data::load_image_dataset(data_dir);
      kd::Mode m;
      std::string role;
      if (mode == "scratch") {
        m = kd::Mode::scratch;
        role = "student_scratch";
      } else if (mode == "kd" && (no_key || key_path.empty())) {
        require(no_key, ErrorCategory::config,
                "distill --mode kd needs --key <file> or an explicit --no-key");
        m = kd::Mode::kd_plain;
        role = "student_unauth";
      } else if (mode == "kd") {
        m = kd::Mode::kd_with_key;
        role = "student_auth";
      } else {
        fail(ErrorCategory::parameter, "unknown distill mode: " + mode);
      }
      std::optional<models::Model> t;
      if (m != kd::Mode::scratch) {
        require(!teacher.empty(), ErrorCategory::config, "distill: --teacher required");
        t = resolve_teacher(env, reg, teacher);
      }
      std::optional<keying::Key> key;
      if (m == kd::Mode::kd_with_key) key = keying::load_key(key_path);

      train::TrainingConfig tcfg;
      tcfg.epochs = epochs;
      tcfg.batch_size = batch;
      tcfg.optimizer.lr = lr;
      tcfg.model_seed = g.seed;
      tcfg.data_seed = rng::derive_seed(g.seed, "data-order");
      tcfg.deterministic = g.deterministic;
      tcfg.distill.alpha = alpha;
      tcfg.distill.temperature = softops::Temperature(temp);
      tcfg.distill.mode = m;

      models::ModelSpec sspec;
      sspec.name = student;
      sspec.height = ds.height;
      sspec.width = ds.width;
      sspec.channels = ds.channels;
      sspec.num_classes = ds.num_classes;
      sspec.init_seed = rng::derive_seed(g.seed, "student-init");

      json cfg = {{"data_dir", fs::absolute(data_dir).string()},
                  {"data_checksum", hex16(dataset_dir_checksum(data_dir))},
                  {"mode", mode},
                  {"no_key", no_key},
                  {"teacher", teacher},
                  {"key", key ? keying::key_fingerprint(*key) : ""},
                  {"student", student},
                  {"train", tcfg_summary(tcfg)}};
      cli_run(env, reg, role, "student", cfg,
              [&](ExperimentRecord& r, const std::string& run_id) {
        models::Model s = train::train_student(tcfg, ds, sspec, t ? &*t : nullptr,
                                               key ? &*key : nullptr);
        const auto eval = train::evaluate(s, ds, key ? &*key : nullptr);
        const std::string ckpt = "ckpt/" + run_id + ".ckpt";
        models::save_checkpoint(s, env.root / ckpt);
        r.seed = g.seed;
        r.student_spec = {{"name", student}};
        r.key_fingerprint = key ? keying::key_fingerprint(*key) : "";
        json sacc = {{"plain", eval.acc_plain}};
        if (eval.acc_with_key) sacc["with_key"] = *eval.acc_with_key;
        r.acc = {{"student", sacc}};
        r.seeds = {{"model", tcfg.model_seed}, {"data", tcfg.data_seed}};
        r.artifacts = {{"checkpoint", ckpt},
                       {"dataset", fs::absolute(data_dir).string()}};
        std::cout << role << " " << run_id << ": test acc " << eval.acc_plain << "\n";
      });
    });
  }

  // ---- attack
  auto* attack = app.add_subcommand("attack", "attack a wrapped teacher");
  attack->require_subcommand(1);
  {
    static std::string data_dir, sdb_ref, key_path, student = "mlp_small", temps_s = "1,4,8,16";
    static int n_keys = 3, epochs = 20, batch = 64;
    static std::uint64_t attacker_seed = 99;
    static double alpha = 0.9, temp = 4.0, lr = 0.1;

    auto add_common = [&](CLI::App* sub) {
      sub->add_option("--data", data_dir, "dataset directory")->required();
      sub->add_option("--sdb", sdb_ref, "wrapped teacher (run id or checkpoint)")->required();
      sub->add_option("--key", key_path, "true key file")->required();
      sub->add_option("--student", student, "attack student model");
      sub->add_option("--epochs", epochs, "student epochs");
      sub->add_option("--lr", lr, "student learning rate");
      sub->add_option("--batch-size", batch, "batch size");
      sub->add_option("--alpha", alpha, "distillation mixing weight");
      sub->add_option("--temp", temp, "authorized/base temperature");
    };

    auto run_attack = [&](const std::string& kind) {
      Env env = make_env(g);
      Registry reg(env);
      data::DatasetHandle ds = data::load_image_dataset(data_dir);
      models::Model sdb_model = resolve_teacher(env, reg, sdb_ref);
      keying::Key key = keying::load_key(key_path);

      train::TrainingConfig tcfg;
      tcfg.epochs = epochs;
      tcfg.batch_size = batch;
      tcfg.optimizer.lr = lr;
      tcfg.model_seed = g.seed;
      tcfg.data_seed = rng::derive_seed(g.seed, "data-order");
      tcfg.deterministic = g.deterministic;
      tcfg.distill.alpha = alpha;
      tcfg.distill.temperature = softops::Temperature(temp);

      models::ModelSpec sspec;
      sspec.name = student;
      sspec.height = ds.height;
      sspec.width = ds.width;
      sspec.channels = ds.channels;
      sspec.num_classes = ds.num_classes;
      sspec.init_seed = rng::derive_seed(g.seed, "student-init");

      std::vector<double> temps;
      if (kind == "temperature") {
        std::size_t pos = 0;
        while (pos < temps_s.size()) {
          std::size_t next = temps_s.find(',', pos);
          temps.push_back(std::stod(temps_s.substr(pos, next - pos)));
          pos = next == std::string::npos ? temps_s.size() : next + 1;
        }
      }

      json cfg = {{"data_dir", fs::absolute(data_dir).string()},
                  {"data_checksum", hex16(dataset_dir_checksum(data_dir))},
                  {"attack", kind},
                  {"sdb", sdb_ref},
                  {"temps", temps},
                  {"n_keys", n_keys},
                  {"attacker_seed", attacker_seed},
                  {"student", student},
                  {"train", tcfg_summary(tcfg)}};
      cli_run(env, reg, "attack_" + kind, "attack", cfg,
              [&](ExperimentRecord& r, const std::string& run_id) {
        attacks::AttackReport rep;
        if (kind == "temperature") {
          rep = attacks::temperature_attack(sdb_model, temps, sspec, tcfg, ds, key);
        } else {
          rep = attacks::random_key_attack(sdb_model, n_keys, attacker_seed, sspec, tcfg,
                                           ds, key);
        }
        json rows = json::array();
        std::cout << "attack " << kind << " (scratch " << rep.scratch_acc << ", authorized "
                  << rep.authorized_acc << ")\n";
        for (const auto& row : rep.rows) {
          rows.push_back({{"label", row.label},
                          {"sweep_value", row.sweep_value},
                          {"key_fingerprint", row.key_fingerprint},
                          {"student_acc", row.student_acc}});
          std::cout << "  " << row.label << ": " << row.student_acc << "\n";
        }
        json report = {{"kind", rep.kind},         {"rows", rows},
                       {"scratch_acc", rep.scratch_acc},
                       {"authorized_acc", rep.authorized_acc},
                       {"seed", rep.seed},         {"config_hash", rep.config_hash},
                       {"sdb_key_fingerprint", rep.sdb_key_fingerprint}};
        const std::string report_rel = "reports/" + run_id + ".json";
        std::ofstream(env.root / report_rel, std::ios::trunc) << report.dump(2) << "\n";
        r.seed = g.seed;
        r.key_fingerprint = rep.sdb_key_fingerprint;
        r.acc = {{"attack", report}};
        r.seeds = {{"model", tcfg.model_seed}, {"attacker", attacker_seed}};
        r.artifacts = {{"report", report_rel}};
      });
    };

    auto* temp_cmd = attack->add_subcommand("temperature", "sweep distillation temperatures");
    add_common(temp_cmd);
    temp_cmd->add_option("--temps", temps_s, "comma-separated temperature sweep");
    temp_cmd->callback([&]() { run_attack("temperature"); });

    auto* key_cmd = attack->add_subcommand("random-key", "try random wrong keys");
    add_common(key_cmd);
    key_cmd->add_option("--n-keys", n_keys, "number of wrong keys");
    key_cmd->add_option("--attacker-seed", attacker_seed, "attacker key seed");
    key_cmd->callback([&]() { run_attack("random-key"); });
  }

  // ---- ablate
  auto* ablate = app.add_subcommand("ablate", "run an ablation row (wrapped teacher + students)");
  {
    static std::string data_dir, teacher, key_path, disable;
    static int sdb_epochs = 12, student_epochs = 20;
    static double lr = 0.02, omega = 0.5, eta = 0.05;
    ablate->add_option("--data", data_dir, "dataset directory")->required();
    ablate->add_option("--teacher", teacher, "pretrained teacher (run id or checkpoint)")->required();
    ablate->add_option("--key", key_path, "key file")->required();
    ablate->add_option("--disable", disable, "switches: comma list of ke,kdis,kp")->required();
    ablate->add_option("--sdb-epochs", sdb_epochs, "wrapped-teacher epochs");
    ablate->add_option("--student-epochs", student_epochs, "student epochs");
    ablate->add_option("--lr", lr, "wrapped-teacher learning rate");
    ablate->add_option("--omega", omega, "disturbance weight");
    ablate->add_option("--eta", eta, "augmentation weight");
    ablate->callback([&]() {
      // the row protocol = ablated wrapped teacher, then unauthorized and
      // authorized students from it
      std::vector<std::string> base{"--root", g.root.empty() ? "sdb_runs" : g.root};
      if (g.deterministic) base.push_back("--deterministic");
      base.push_back("--seed");
      base.push_back(std::to_string(g.seed));

      auto call = [&](std::vector<std::string> extra) {
        std::vector<std::string> argv = base;
        argv.insert(argv.end(), extra.begin(), extra.end());
        const int code = cliapp::run(argv);
        require(code == 0, ErrorCategory::config,
                "ablate: nested step failed with exit " + std::to_string(code));
      };
      call({"train-sdb", "--data", data_dir, "--teacher", teacher, "--key", key_path,
            "--disable", disable, "--epochs", std::to_string(sdb_epochs), "--lr",
            std::to_string(lr), "--omega", std::to_string(omega), "--eta",
            std::to_string(eta)});
      // find the run id we just ensured
      Env env = make_env(g);
      Registry reg(env);
      std::string sdb_run;
      for (const auto& r : reg.all())
        if (r.mode == "sdb" && r.seed == g.seed) sdb_run = r.run_id;
      require(!sdb_run.empty(), ErrorCategory::config, "ablate: wrapped run not found");
      call({"distill", "--data", data_dir, "--mode", "kd", "--no-key", "--teacher", sdb_run,
            "--epochs", std::to_string(student_epochs)});
      call({"distill", "--data", data_dir, "--mode", "kd", "--teacher", sdb_run, "--key",
            key_path, "--epochs", std::to_string(student_epochs)});
      std::cout << "ablation row (" << disable << ") complete; see report --layout table1\n";
    });
  }

  // ---- report
  auto* report_cmd = app.add_subcommand("report", "render recorded runs as tables/plots");
  {
    static std::string runs, layout = "table3", out_prefix = "report";
    report_cmd->add_option("--runs", runs, "comma-separated run ids (default: all)");
    report_cmd->add_option("--layout", layout,
                           "table1|table2|table3|table5|table6|softlabels|losscurve");
    report_cmd->add_option("--out", out_prefix, "output file prefix under <root>/reports");
    report_cmd->callback([&]() {
      Env env = make_env(g);
      Registry reg(env);
      std::vector<ExperimentRecord> recs;
      if (runs.empty()) {
        recs = reg.all();
      } else {
        std::size_t pos = 0;
        while (pos < runs.size()) {
          std::size_t next = runs.find(',', pos);
          const std::string id = runs.substr(pos, next - pos);
          auto r = reg.find_by_id(id);
          require(r.has_value(), ErrorCategory::config, "unknown run id: " + id);
          recs.push_back(*r);
          pos = next == std::string::npos ? runs.size() : next + 1;
        }
      }
      auto rendered = report::render_report(recs, layout, env, out_prefix);
      std::cout << rendered.text;
      for (const auto& f : rendered.files) std::cout << "wrote " << f.string() << "\n";
    });
  }

  // ---- suite
  auto* suite = app.add_subcommand("suite", "run a full experiment suite");
  {
    static std::string config_file, name = "desk-core", seeds_s = "1,2,3";
    suite->add_option("--config", config_file, "suite config JSON file");
    suite->add_option("--name", name, "desk-core | table1-desk | table3-desk");
    suite->add_option("--seeds", seeds_s, "comma-separated experiment seeds");
    suite->callback([&]() {
      Env env = make_env(g);
      Registry reg(env);
      experiments::SuiteConfig scfg;
      if (!config_file.empty()) {
        std::ifstream in(config_file);
        require(in.good(), ErrorCategory::io, "cannot open suite config: " + config_file);
        json j = json::parse(in, nullptr, false);
        require(!j.is_discarded(), ErrorCategory::config, "suite config is not valid JSON");
        scfg.name = j.value("suite", scfg.name);
        if (j.contains("seeds")) scfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        scfg.overrides = j.value("overrides", json());
      } else {
        scfg.name = name;
        scfg.seeds.clear();
        std::size_t pos = 0;
        while (pos < seeds_s.size()) {
          std::size_t next = seeds_s.find(',', pos);
          scfg.seeds.push_back(std::stoull(seeds_s.substr(pos, next - pos)));
          pos = next == std::string::npos ? seeds_s.size() : next + 1;
        }
      }
      auto result = experiments::run_suite(env, reg, scfg);
      std::cout << "suite " << scfg.name << ": " << result.records.size() << " records, "
                << result.failures.size() << " failures\n";
      for (const auto& f : result.failures)
        std::cerr << "  failed node " << f.node << ": " << f.error << "\n";
      require(result.failures.empty(), ErrorCategory::config, "suite had failing nodes");
    });
  }

  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error [" << category_name(e.category()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}

}  // namespace sdb::cliapp
