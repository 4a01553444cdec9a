#pragma once

#include "sdb/experiments.hpp"

namespace sdb::report {

using experiments::Env;
using experiments::ExperimentRecord;
using experiments::json;

// Rendered comparison table or plot-series export. Every numeric cell in the
// structured form carries the run id it came from; missing cells render as
// explicit gap markers.
struct Rendered {
  std::string text;
  json structured;
  std::vector<std::filesystem::path> files;  // plot series / table files written
};

// Layouts: table1 (ablation), table2 (knowledge augmentation), table3
// (method comparison), table5 (temperature attack), table6 (random-key
// attack), softlabels (per-class mean soft labels of normal vs closed vs
// open streams at the distillation temperature), losscurve (per-step terms
// of a wrapped-teacher run).
Rendered render_report(const std::vector<ExperimentRecord>& records,
                       const std::string& layout, const Env& env,
                       const std::string& out_prefix);

}  // namespace sdb::report
