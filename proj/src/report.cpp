#include "sdb/report.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace sdb::report {
namespace {

using experiments::find_role;
using experiments::median;

constexpr const char* kGap = "[missing]";

std::string fmt2(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

// "(+x.xx)" / "(-x.xx)" annotation against a baseline value.
std::string delta(double value, double baseline) {
  const double d = value - baseline;
  std::ostringstream os;
  os << "(" << (d >= 0 ? "+" : "-") << std::fixed << std::setprecision(2) << std::fabs(d)
     << ")";
  return os.str();
}

struct CellVal {
  bool present = false;
  double value = 0.0;
  std::string run_id;
};

// Median across seeds with the contributing run ids.
CellVal cell(const std::vector<ExperimentRecord>& recs, const std::string& role,
             const std::vector<std::uint64_t>& seeds, const char* group, const char* field) {
  CellVal out;
  std::vector<double> vals;
  std::vector<std::string> ids;
  for (auto s : seeds) {
    auto r = find_role(recs, role, s);
    if (!r) continue;
    if (!r->acc.contains(group)) continue;
    const auto& g = r->acc.at(group);
    if (!g.contains(field)) continue;
    vals.push_back(g.at(field).get<double>());
    ids.push_back(r->run_id);
  }
  if (vals.empty()) return out;
  out.present = true;
  out.value = median(vals);
  for (std::size_t i = 0; i < ids.size(); ++i)
    out.run_id += (i ? "," : "") + ids[i];
  return out;
}

std::vector<std::uint64_t> seeds_present(const std::vector<ExperimentRecord>& recs) {
  std::set<std::uint64_t> s;
  for (const auto& r : recs) s.insert(r.seed);
  return {s.begin(), s.end()};
}

struct TableBuilder {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  json cells = json::array();

  void add_cell(const std::string& row, const std::string& col, const CellVal& v,
                const CellVal* baseline = nullptr) {
    json c = {{"row", row}, {"col", col}};
    if (v.present) {
      c["value"] = v.value;
      c["run_id"] = v.run_id;
      if (baseline != nullptr && baseline->present) c["delta"] = v.value - baseline->value;
    } else {
      c["value"] = nullptr;
    }
    cells.push_back(c);
  }

  std::string render_text(const std::string& title) const {
    std::vector<std::size_t> widths(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) widths[i] = header[i].size();
    for (const auto& r : rows)
      for (std::size_t i = 0; i < r.size(); ++i)
        widths[i] = std::max(widths[i], r[i].size());
    std::ostringstream os;
    os << title << "\n";
    auto line = [&](const std::vector<std::string>& cols) {
      for (std::size_t i = 0; i < cols.size(); ++i)
        os << (i ? "  " : "") << std::left << std::setw(static_cast<int>(widths[i])) << cols[i];
      os << "\n";
    };
    line(header);
    std::size_t total = 0;
    for (auto w : widths) total += w + 2;
    os << std::string(total, '-') << "\n";
    for (const auto& r : rows) line(r);
    return os.str();
  }
};

std::string cell_text(const CellVal& v, const CellVal* baseline = nullptr) {
  if (!v.present) return kGap;
  std::string s = fmt2(v.value);
  if (baseline != nullptr && baseline->present) s += " " + delta(v.value, baseline->value);
  return s;
}

Rendered finish(TableBuilder& tb, const std::string& layout, const std::string& title,
                const Env& env, const std::string& out_prefix) {
  Rendered out;
  out.text = tb.render_text(title);
  out.structured = {{"layout", layout}, {"cells", tb.cells}};
  const auto dir = env.reports_dir();
  std::filesystem::create_directories(dir);
  const auto txt_path = dir / (out_prefix + ".txt");
  const auto json_path = dir / (out_prefix + ".json");
  std::ofstream(txt_path, std::ios::trunc) << out.text;
  std::ofstream(json_path, std::ios::trunc) << out.structured.dump(2) << "\n";
  out.files = {txt_path, json_path};
  return out;
}

Rendered render_table1(const std::vector<ExperimentRecord>& recs, const Env& env,
                       const std::string& out_prefix) {
  const auto seeds = seeds_present(recs);
  TableBuilder tb;
  tb.header = {"method", "teacher w/o key", "teacher w key", "student w/o key",
               "student w key"};
  struct Row {
    const char* label;
    const char* teacher_role;
    const char* unauth;
    const char* auth;
  };
  const Row defs[] = {
      {"scratch", "", "student_scratch", ""},
      {"w/o KE", "sdb_wo_ke", "student_wo_ke_unauth", ""},
      {"w/o KDis", "sdb_wo_kdis", "student_wo_kdis_unauth", "student_wo_kdis_auth"},
      {"w/o KP", "sdb_wo_kp", "student_wo_kp_unauth", "student_wo_kp_auth"},
      {"SDB", "sdb", "student_unauth_T4", "student_auth"},
  };
  for (const auto& d : defs) {
    std::vector<std::string> row{d.label};
    CellVal tplain, tkey, splain, skey;
    if (*d.teacher_role) {
      tplain = cell(recs, d.teacher_role, seeds, "teacher", "plain");
      tkey = cell(recs, d.teacher_role, seeds, "teacher", "with_key");
    }
    if (*d.unauth) splain = cell(recs, d.unauth, seeds, "student", "plain");
    if (*d.auth) skey = cell(recs, d.auth, seeds, "student", "plain");
    row.push_back(*d.teacher_role ? cell_text(tplain) : "-");
    row.push_back(*d.teacher_role ? cell_text(tkey) : "-");
    row.push_back(*d.unauth ? cell_text(splain) : "-");
    row.push_back(*d.auth ? cell_text(skey) : "-");
    tb.rows.push_back(row);
    tb.add_cell(d.label, "teacher_plain", tplain);
    tb.add_cell(d.label, "teacher_with_key", tkey);
    tb.add_cell(d.label, "student_plain", splain);
    tb.add_cell(d.label, "student_with_key", skey);
  }
  return finish(tb, "table1", "Ablation study (desk scale, medians over seeds)", env,
                out_prefix);
}

Rendered render_table2(const std::vector<ExperimentRecord>& recs, const Env& env,
                       const std::string& out_prefix) {
  const auto seeds = seeds_present(recs);
  TableBuilder tb;
  tb.header = {"teacher", "aug", "teacher acc", "student acc"};
  const CellVal t_plain = cell(recs, "pretrain", seeds, "teacher", "plain");
  const CellVal s_plain = cell(recs, "student_normal", seeds, "student", "plain");
  const CellVal t_aug = cell(recs, "aug_teacher", seeds, "teacher", "plain");
  const CellVal s_aug = cell(recs, "student_aug", seeds, "student", "plain");
  tb.rows.push_back({"resnet_tiny (mlp_small)", "x", cell_text(t_plain), cell_text(s_plain)});
  tb.rows.push_back({"resnet_tiny (mlp_small)", "ok",
                     cell_text(t_aug, &t_plain), cell_text(s_aug, &s_plain)});
  tb.add_cell("plain", "teacher", t_plain);
  tb.add_cell("plain", "student", s_plain);
  tb.add_cell("aug", "teacher", t_aug, &t_plain);
  tb.add_cell("aug", "student", s_aug, &s_plain);
  return finish(tb, "table2", "Knowledge augmentation (desk scale)", env, out_prefix);
}

Rendered render_table3(const std::vector<ExperimentRecord>& recs, const Env& env,
                       const std::string& out_prefix) {
  const auto seeds = seeds_present(recs);
  TableBuilder tb;
  tb.header = {"method", "with key", "teacher acc", "student acc"};

  const CellVal scratch = cell(recs, "student_scratch", seeds, "student", "plain");
  const CellVal teacher_base = cell(recs, "pretrain", seeds, "teacher", "plain");

  struct Row {
    const char* label;
    const char* with_key;  // "x" or "ok"
    const char* teacher_role;
    const char* teacher_field;
    const char* student_role;
    const char* student_field;
  };
  const Row defs[] = {
      {"scratch", "x", "", "", "student_scratch", "plain"},
      {"scratch", "ok", "", "", "student_scratch_proxy", "with_key"},
      {"normal", "x", "pretrain", "plain", "student_normal", "plain"},
      {"normal", "ok", "pretrain", "with_key", "student_normal_auth", "plain"},
      {"ke", "x", "ke", "plain", "student_ke_unauth", "plain"},
      {"ke", "ok", "ke", "with_key", "student_ke_auth", "plain"},
      {"sdb", "x", "sdb", "plain", "student_unauth_T4", "plain"},
      {"sdb", "ok", "sdb", "with_key", "student_auth", "plain"},
  };
  for (const auto& d : defs) {
    CellVal t, s;
    if (*d.teacher_role) t = cell(recs, d.teacher_role, seeds, "teacher", d.teacher_field);
    s = cell(recs, d.student_role, seeds, "student", d.student_field);
    std::vector<std::string> row{d.label, d.with_key};
    row.push_back(*d.teacher_role ? cell_text(t, &teacher_base) : "-");
    const bool is_base = std::string(d.label) == "scratch" && std::string(d.with_key) == "x";
    row.push_back(cell_text(s, is_base ? nullptr : &scratch));
    tb.rows.push_back(row);
    const std::string rid = std::string(d.label) + "/" + d.with_key;
    tb.add_cell(rid, "teacher", t, &teacher_base);
    tb.add_cell(rid, "student", s, is_base ? nullptr : &scratch);
  }
  return finish(tb, "table3", "Method comparison (desk scale, medians over seeds)", env,
                out_prefix);
}

Rendered render_table5(const std::vector<ExperimentRecord>& recs, const Env& env,
                       const std::string& out_prefix) {
  const auto seeds = seeds_present(recs);
  TableBuilder tb;
  const std::vector<int> temps{1, 4, 8, 16};
  tb.header = {"method"};
  for (int t : temps) tb.header.push_back("T=" + std::to_string(t));

  std::vector<std::string> normal_row{"normal"}, auth_row{"sdb (w key)"},
      unauth_row{"sdb (w/o key)"};
  for (int t : temps) {
    const std::string col = "T=" + std::to_string(t);
    const CellVal normal = cell(recs, "student_normal", seeds, "student", "plain");
    const CellVal auth = cell(recs, "student_auth", seeds, "student", "plain");
    const CellVal unauth =
        cell(recs, "student_unauth_T" + std::to_string(t), seeds, "student", "plain");
    // the suite trains normal/authorized students at the default temperature
    normal_row.push_back(t == 4 ? cell_text(normal) : "-");
    auth_row.push_back(t == 4 ? cell_text(auth) : "-");
    unauth_row.push_back(cell_text(unauth));
    if (t == 4) {
      tb.add_cell("normal", col, normal);
      tb.add_cell("sdb_with_key", col, auth);
    }
    tb.add_cell("sdb_without_key", col, unauth);
  }
  tb.rows = {normal_row, auth_row, unauth_row};
  return finish(tb, "table5", "Random temperature attack (desk scale)", env, out_prefix);
}

Rendered render_table6(const std::vector<ExperimentRecord>& recs, const Env& env,
                       const std::string& out_prefix) {
  const auto seeds = seeds_present(recs);
  TableBuilder tb;
  tb.header = {"method", "key", "random-1", "random-2", "random-3"};
  const CellVal scratch = cell(recs, "student_scratch", seeds, "student", "plain");
  const CellVal auth = cell(recs, "student_auth", seeds, "student", "plain");
  std::vector<std::string> scratch_row{"scratch"}, sdb_row{"sdb"};
  for (int i = 0; i < 4; ++i) scratch_row.push_back(cell_text(scratch));
  sdb_row.push_back(cell_text(auth));
  tb.add_cell("scratch", "any", scratch);
  tb.add_cell("sdb", "key", auth);
  for (int i = 1; i <= 3; ++i) {
    const CellVal wrong =
        cell(recs, "student_wrongkey_" + std::to_string(i), seeds, "student", "plain");
    sdb_row.push_back(cell_text(wrong));
    tb.add_cell("sdb", "random-" + std::to_string(i), wrong);
  }
  tb.rows = {scratch_row, sdb_row};
  return finish(tb, "table6", "Random key attack (desk scale)", env, out_prefix);
}

// Mean soft label per true class at the distillation temperature, for the
// pretrained teacher on x (normal), the wrapped teacher on x (closed), and
// the wrapped teacher on x~ (open). Each row sums to 1.
Rendered render_softlabels(const std::vector<ExperimentRecord>& recs, const Env& env,
                           const std::string& out_prefix) {
  const auto seeds = seeds_present(recs);
  std::optional<ExperimentRecord> sdb_rec, pre_rec;
  for (auto s : seeds) {
    sdb_rec = find_role(recs, "sdb", s);
    if (sdb_rec) {
      pre_rec = experiments::Registry(env).find_by_id(
          sdb_rec->artifacts.at("teacher_run").get<std::string>());
      break;
    }
  }
  require(sdb_rec.has_value() && pre_rec.has_value(), ErrorCategory::report,
          "softlabels layout needs a wrapped-teacher run; required cells: sdb, pretrain");

  data::DatasetHandle ds =
      data::load_image_dataset(sdb_rec->artifacts.at("dataset").get<std::string>());
  models::Model sdb_model =
      models::load_checkpoint(env.root / sdb_rec->artifacts.at("checkpoint").get<std::string>()).model;
  models::Model pre_model =
      models::load_checkpoint(env.root / pre_rec->artifacts.at("checkpoint").get<std::string>()).model;
  keying::Key key =
      keying::load_key(env.root / sdb_rec->artifacts.at("key").get<std::string>());
  const softops::Temperature t(4.0);

  auto mean_soft = [&](models::Model& m, const keying::Key* k) {
    const Tensor table = train::frozen_logits_table(m, ds, data::Split::test, k);
    const Tensor probs = softops::tempered_softmax(table, t);
    Tensor out({ds.num_classes, ds.num_classes});
    std::vector<std::int64_t> counts(static_cast<std::size_t>(ds.num_classes), 0);
    for (std::int64_t i = 0; i < probs.rows(); ++i) {
      const int label = ds.test_y[static_cast<std::size_t>(i)];
      kern::ops().add(out.row(label), probs.row(i), out.row(label),
                      static_cast<std::size_t>(ds.num_classes));
      counts[static_cast<std::size_t>(label)]++;
    }
    for (std::int64_t k2 = 0; k2 < ds.num_classes; ++k2)
      kern::ops().scale(1.0 / static_cast<double>(counts[static_cast<std::size_t>(k2)]),
                        out.row(k2), static_cast<std::size_t>(ds.num_classes));
    return out;
  };

  const Tensor normal = mean_soft(pre_model, nullptr);
  const Tensor closed = mean_soft(sdb_model, nullptr);
  const Tensor open = mean_soft(sdb_model, &key);

  Rendered out;
  const auto dir = env.reports_dir();
  std::filesystem::create_directories(dir);
  const auto csv_path = dir / (out_prefix + "_softlabels.csv");
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << "stream,true_class";
  for (std::int64_t c = 0; c < ds.num_classes; ++c) csv << ",p" << c;
  csv << "\n";
  auto dump = [&](const char* name, const Tensor& m) {
    for (std::int64_t r = 0; r < m.rows(); ++r) {
      csv << name << "," << r;
      for (std::int64_t c = 0; c < m.cols(); ++c) csv << "," << m.at(r, c);
      csv << "\n";
    }
  };
  dump("normal", normal);
  dump("closed", closed);
  dump("open", open);
  csv.close();

  json streams;
  auto jmat = [&](const Tensor& m) {
    json rows = json::array();
    for (std::int64_t r = 0; r < m.rows(); ++r) {
      json row = json::array();
      for (std::int64_t c = 0; c < m.cols(); ++c) row.push_back(m.at(r, c));
      rows.push_back(row);
    }
    return rows;
  };
  streams["normal"] = jmat(normal);
  streams["closed"] = jmat(closed);
  streams["open"] = jmat(open);
  out.structured = {{"layout", "softlabels"},
                    {"temperature", t.value},
                    {"source_runs", {pre_rec->run_id, sdb_rec->run_id}},
                    {"streams", streams}};
  const auto json_path = dir / (out_prefix + ".json");
  std::ofstream(json_path, std::ios::trunc) << out.structured.dump(2) << "\n";
  out.text = "soft-label export written to " + csv_path.string() + "\n";
  out.files = {csv_path, json_path};
  return out;
}

Rendered render_losscurve(const std::vector<ExperimentRecord>& recs, const Env& env,
                          const std::string& out_prefix) {
  std::optional<ExperimentRecord> sdb_rec;
  for (const auto& r : recs)
    if (r.mode == "sdb" && r.role == "sdb") {
      sdb_rec = r;
      break;
    }
  require(sdb_rec.has_value(), ErrorCategory::report,
          "losscurve layout needs a wrapped-teacher run; required cells: sdb");
  std::ifstream in(env.root / sdb_rec->artifacts.at("metrics").get<std::string>());
  require(in.good(), ErrorCategory::io, "cannot open metrics for " + sdb_rec->run_id);

  Rendered out;
  const auto dir = env.reports_dir();
  std::filesystem::create_directories(dir);
  const auto csv_path = dir / (out_prefix + "_losscurve.csv");
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << "step,cls,dis,neg_dis,main,aug,kp,total\n";
  std::string line;
  std::int64_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    csv << j["step"].get<std::int64_t>() << "," << j["cls"].get<double>() << ","
        << j["dis"].get<double>() << "," << -j["dis"].get<double>() << ","
        << j["main"].get<double>() << "," << j["aug"].get<double>() << ","
        << j["kp"].get<double>() << "," << j["total"].get<double>() << "\n";
    ++rows;
  }
  csv.close();
  out.structured = {{"layout", "losscurve"}, {"source_run", sdb_rec->run_id}, {"rows", rows}};
  const auto json_path = dir / (out_prefix + ".json");
  std::ofstream(json_path, std::ios::trunc) << out.structured.dump(2) << "\n";
  out.text = "loss-curve series written to " + csv_path.string() + "\n";
  out.files = {csv_path, json_path};
  return out;
}

}  // namespace

Rendered render_report(const std::vector<ExperimentRecord>& records,
                       const std::string& layout, const Env& env,
                       const std::string& out_prefix) {
  require(!records.empty(), ErrorCategory::report,
          "no records given; layout " + layout +
              " requires experiment rows (run a suite or pass --runs)");
  if (layout == "table1") return render_table1(records, env, out_prefix);
  if (layout == "table2") return render_table2(records, env, out_prefix);
  if (layout == "table3") return render_table3(records, env, out_prefix);
  if (layout == "table5") return render_table5(records, env, out_prefix);
  if (layout == "table6") return render_table6(records, env, out_prefix);
  if (layout == "softlabels") return render_softlabels(records, env, out_prefix);
  if (layout == "losscurve") return render_losscurve(records, env, out_prefix);
  fail(ErrorCategory::parameter, "unknown report layout: " + layout);
}

}  // namespace sdb::report
