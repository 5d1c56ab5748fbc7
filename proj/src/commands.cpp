// Copyright 2026 The bnmr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "bnmr/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bnmr/csv.hpp"
#include "bnmr/errors.hpp"
#include "bnmr/evidence.hpp"
#include "bnmr/km_reconstruct.hpp"
#include "bnmr/pipelines.hpp"
#include "bnmr/run_config.hpp"
#include "bnmr/stats.hpp"
#include "bnmr/trial_emulation.hpp"

namespace bnmr::commands {
namespace {

namespace fs = std::filesystem;

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "[warn] " << w << "\n";
}

RunConfig resolve(const GlobalOptions& opts, bool need_seed) {
  if (opts.config_path.empty())
    throw ValidationError("a configuration file is required: pass --config <file>");
  RunConfig cfg = load_run_config(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (need_seed && !cfg.seed)
    throw ValidationError("a seed is required: set [sampler] seed or pass --seed");
  if (cfg.seed) {
    cfg.sampler.seed = *cfg.seed;
    cfg.protocol.seed = *cfg.seed;
  }
  return cfg;
}

// Paths in a config or manifest are taken relative to the file that names
// them, so a bundle directory can be moved as a unit.
std::string relative_to(const std::string& base_file, const std::string& path) {
  if (path.empty()) return path;
  fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(base_file).parent_path() / p).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  return out;
}

std::string safe_name(const std::string& id) {
  std::string out = id;
  for (char& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '-' || c == '.' || c == '_';
    if (!ok) c = '_';
  }
  return out;
}

struct Bundle {
  TreatmentMap map;
  std::vector<Treatment> treatments;
  Network net;
  std::vector<std::string> warnings;
};

Bundle load_bundle(const RunConfig& cfg, const std::string& config_path) {
  if (cfg.treatment_map.empty())
    throw ValidationError("config: [paths] treatment_map is required");
  Bundle b;
  b.map = load_treatment_map(relative_to(config_path, cfg.treatment_map));
  b.treatments = treatments_from_map(b.map);
  std::vector<ADStudyRecord> ad;
  if (!cfg.ad_csv.empty())
    ad = ingest_ad_file(relative_to(config_path, cfg.ad_csv), b.map, b.treatments, &b.warnings);
  std::vector<IPDStudy> ipd;
  for (const auto& path : cfg.ipd_csvs) {
    auto part = ingest_ipd_file(relative_to(config_path, path), b.map, b.treatments);
    ipd.insert(ipd.end(), std::make_move_iterator(part.begin()),
               std::make_move_iterator(part.end()));
  }
  b.net = build_network(b.treatments, prepare_ad(std::move(ad)), std::move(ipd));
  return b;
}

// One manifest row: a digitized curve plus its risk table, tagged with the
// study, arm label and biomarker status the rebuilt records belong to.
struct ManifestRow {
  std::string study_id;
  std::string treatment;
  int biomarker = 0;
  std::string curve_csv;
  std::string risk_csv;
  std::optional<long long> total_events;
  std::size_t row = 0;
};

std::vector<ManifestRow> read_manifest(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const auto c_study = csv::column(t, "study_id");
  const auto c_trt = csv::column(t, "treatment");
  const auto c_bio = csv::column(t, "biomarker");
  const auto c_curve = csv::column(t, "curve_csv");
  const auto c_risk = csv::column(t, "risk_csv");
  const auto c_events = csv::column(t, "total_events");
  std::vector<ManifestRow> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    ManifestRow r;
    r.study_id = t.rows[i][c_study];
    r.treatment = t.rows[i][c_trt];
    const long long bio = csv::to_int(t, i, c_bio);
    if (bio != 0 && bio != 1)
      throw ParseError(t.where(i) + ": biomarker must be 0 or 1");
    r.biomarker = static_cast<int>(bio);
    r.curve_csv = relative_to(path, t.rows[i][c_curve]);
    r.risk_csv = relative_to(path, t.rows[i][c_risk]);
    if (!t.rows[i][c_events].empty()) r.total_events = csv::to_int(t, i, c_events);
    if (r.study_id.empty() || r.treatment.empty())
      throw ParseError(t.where(i) + ": empty study_id or treatment");
    r.row = i + 2;
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ValidationError(path + ": manifest lists no curves");
  return rows;
}

DigitizedCurve read_curve(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const auto c_time = csv::column(t, "time");
  const auto c_surv = csv::column(t, "survival");
  DigitizedCurve curve;
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    curve.points.push_back({csv::to_double(t, i, c_time), csv::to_double(t, i, c_surv)});
  return curve;
}

RiskTable read_risk(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const auto c_time = csv::column(t, "time");
  const auto c_risk = csv::column(t, "n_risk");
  RiskTable risk;
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    risk.rows.push_back({csv::to_double(t, i, c_time), csv::to_int(t, i, c_risk)});
  return risk;
}

const std::string& label_for(const RunConfig& cfg, emulation::RegimenClass cls) {
  switch (cls) {
    case emulation::RegimenClass::Chemo: return cfg.class_label_c;
    case emulation::RegimenClass::Taxane: return cfg.class_label_x;
    case emulation::RegimenClass::Combination: return cfg.class_label_cx;
    default: break;
  }
  throw ValidationError("emulate: arm class has no treatment label");
}

std::string contrast_heading(const pipelines::ContrastSummary& c) {
  return c.label + (c.subgroup == pipelines::Subgroup::Positive ? "  [+ve]" : "  [-ve]");
}

}  // namespace

int cmd_validate(const GlobalOptions& opts, std::ostream& out) {
  const RunConfig cfg = resolve(opts, /*need_seed=*/false);
  std::vector<std::string> problems;

  std::optional<Bundle> bundle;
  const bool has_evidence =
      !cfg.treatment_map.empty() || !cfg.ad_csv.empty() || !cfg.ipd_csvs.empty();
  if (has_evidence) {
    try {
      bundle = load_bundle(cfg, opts.config_path);
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }

  std::size_t curves = 0;
  if (!cfg.km_manifest.empty()) {
    try {
      const auto manifest = read_manifest(relative_to(opts.config_path, cfg.km_manifest));
      for (const auto& row : manifest) {
        try {
          const auto curve = read_curve(row.curve_csv);
          const auto risk = read_risk(row.risk_csv);
          reconstruct(curve, risk, row.total_events);
          ++curves;
        } catch (const std::exception& e) {
          problems.push_back("km manifest row " + std::to_string(row.row) + " ('" +
                             row.study_id + "'): " + e.what());
        }
      }
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }

  std::size_t ehr_records = 0;
  if (!cfg.ehr_csv.empty()) {
    try {
      ehr_records = emulation::read_ehr_file(relative_to(opts.config_path, cfg.ehr_csv)).size();
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }

  if (bundle) {
    print_warnings(bundle->warnings);
    out << "treatments: " << bundle->treatments.size() << " (";
    for (std::size_t i = 0; i < bundle->treatments.size(); ++i)
      out << (i ? ", " : "") << bundle->treatments[i].label;
    out << ")\n";
    out << "aggregate studies: " << bundle->net.ad.size() << "\n";
    out << "participant-level studies: " << bundle->net.ipd.size() << "\n";
  }
  if (!cfg.km_manifest.empty()) out << "km curves: " << curves << "\n";
  if (!cfg.ehr_csv.empty()) out << "ehr records: " << ehr_records << "\n";

  if (problems.empty()) {
    out << "ok\n";
    return 0;
  }
  for (const auto& p : problems) out << "problem: " << p << "\n";
  return 2;
}

int cmd_reconstruct_km(const GlobalOptions& opts, std::ostream& out) {
  const RunConfig cfg = resolve(opts, /*need_seed=*/false);
  if (cfg.km_manifest.empty())
    throw ValidationError("config: [paths] km_manifest is required for reconstruct-km");
  const auto manifest = read_manifest(relative_to(opts.config_path, cfg.km_manifest));
  fs::create_directories(cfg.out_dir);

  struct Piece {
    std::string treatment;
    int biomarker = 0;
    std::size_t row = 0;
    std::vector<KMRecord> records;
  };
  std::map<std::string, std::vector<Piece>> by_study;  // keyed by study_id
  std::vector<std::string> order;                      // studies in manifest order
  int failures = 0;

  for (const auto& row : manifest) {
    try {
      const auto curve = read_curve(row.curve_csv);
      const auto risk = read_risk(row.risk_csv);
      auto report = reconstruct(curve, risk, row.total_events);
      print_warnings(report.warnings);
      if (report.sup_deviation > 0.02)
        std::cerr << "[warn] manifest row " << row.row << " ('" << row.study_id
                  << "'): round-trip deviation " << fmt("%.4f", report.sup_deviation)
                  << " exceeds 0.02; check the digitization\n";
      out << "row " << row.row << " (" << row.study_id << ", " << row.treatment
          << ", biomarker " << row.biomarker << "): " << report.records.size()
          << " records, deviation " << fmt("%.4f", report.sup_deviation) << ", "
          << report.iterations << " passes\n";
      if (!by_study.count(row.study_id)) order.push_back(row.study_id);
      by_study[row.study_id].push_back(
          Piece{row.treatment, row.biomarker, row.row, std::move(report.records)});
    } catch (const std::exception& e) {
      std::cerr << "[error] manifest row " << row.row << " ('" << row.study_id
                << "'): " << e.what() << "\n";
      ++failures;
    }
  }

  for (const auto& study : order) {
    const fs::path path = fs::path(cfg.out_dir) / (safe_name(study) + "_ipd.csv");
    auto file = open_out(path);
    file << "study_id,subject_id,treatment,biomarker,time,event\n";
    for (const auto& piece : by_study[study]) {
      for (std::size_t k = 0; k < piece.records.size(); ++k) {
        file << study << "," << study << "_r" << piece.row << "_" << (k + 1) << ","
             << piece.treatment << "," << piece.biomarker << ","
             << fmt("%.17g", piece.records[k].time) << ","
             << (piece.records[k].event ? 1 : 0) << "\n";
      }
    }
    out << "wrote " << path.string() << "\n";
  }
  return failures == 0 ? 0 : 2;
}

int cmd_emulate(const GlobalOptions& opts, std::ostream& out) {
  RunConfig cfg = resolve(opts, /*need_seed=*/true);

  std::vector<emulation::EHRRecord> records;
  if (!cfg.ehr_csv.empty()) {
    records = emulation::read_ehr_file(relative_to(opts.config_path, cfg.ehr_csv));
  } else if (cfg.synthetic) {
    // A distinct stream from the protocol's partition shuffle.
    records = emulation::generate_synthetic_ehr(*cfg.synthetic, splitmix64(*cfg.seed));
    out << "generated " << records.size() << " synthetic EHR records\n";
  } else {
    throw ValidationError("emulate needs [paths] ehr or a [synthetic] section");
  }

  const auto result = emulation::emulate(records, cfg.protocol);
  print_warnings(result.warnings);
  fs::create_directories(cfg.out_dir);

  auto balance = open_out(fs::path(cfg.out_dir) / "balance.csv");
  balance << "trial_id,arm,n,mean_age,biomarker_pos\n";
  auto smd = open_out(fs::path(cfg.out_dir) / "smd.csv");
  smd << "trial_id,covariate,smd_before,smd_after\n";

  std::size_t total = 0;
  for (const auto& trial : result.trials) {
    print_warnings(trial.warnings);
    const fs::path path = fs::path(cfg.out_dir) / (safe_name(trial.trial_id) + ".csv");
    auto file = open_out(path);
    file << "study_id,subject_id,treatment,biomarker,time,event\n";
    for (const auto& s : trial.subjects) {
      const auto cls = s.arm == 1 ? cfg.protocol.experimental : cfg.protocol.control;
      file << trial.trial_id << "," << s.patient_id << "," << label_for(cfg, cls) << ","
           << s.biomarker << "," << fmt("%.17g", s.time_months) << "," << s.event << "\n";
    }
    for (int arm = 1; arm >= 0; --arm) {
      std::size_t n = 0, pos = 0;
      double age_sum = 0.0;
      for (const auto& s : trial.subjects)
        if (s.arm == arm) {
          ++n;
          pos += static_cast<std::size_t>(s.biomarker);
          age_sum += s.age;
        }
      const auto cls = arm == 1 ? cfg.protocol.experimental : cfg.protocol.control;
      balance << trial.trial_id << "," << label_for(cfg, cls) << "," << n << ","
              << fmt("%.3f", n ? age_sum / static_cast<double>(n) : 0.0) << ","
              << fmt("%.4f", n ? static_cast<double>(pos) / static_cast<double>(n) : 0.0)
              << "\n";
    }
    for (const auto& b : trial.balance)
      smd << trial.trial_id << "," << b.name << "," << fmt("%.6g", b.smd_before) << ","
          << fmt("%.6g", b.smd_after) << "\n";
    out << trial.trial_id << ": " << trial.subjects.size() / 2 << " pairs (pool "
        << trial.pool_experimental << " experimental vs " << trial.pool_control
        << " control)\n";
    out << "wrote " << path.string() << "\n";
    total += trial.subjects.size();
  }
  out << result.trials.size() << " trials, " << total << " matched subjects\n";
  return 0;
}

int cmd_fit(const GlobalOptions& opts, std::ostream& out) {
  const RunConfig cfg = resolve(opts, /*need_seed=*/true);
  Bundle bundle = load_bundle(cfg, opts.config_path);
  print_warnings(bundle.warnings);

  if (cfg.model == 1 && !bundle.net.ipd.empty())
    throw ValidationError(
        "model 1 is aggregate-only; drop [paths] ipd or choose model 2 or 3");

  ModelSpec spec;
  spec.priors = cfg.priors;
  spec.fixed_tau = cfg.fixed_tau;

  pipelines::FitResult res;
  if (cfg.model == 1) {
    res = pipelines::fit_model1(bundle.net, spec, cfg.sampler);
  } else if (cfg.model == 2) {
    res = pipelines::fit_model2(bundle.net, cfg.stage_one, spec, cfg.sampler);
  } else {
    res = pipelines::fit_model3(bundle.net, spec, cfg.sampler);
  }

  fs::create_directories(cfg.out_dir);
  const std::string tag = "model" + std::to_string(cfg.model);
  const fs::path json_path = fs::path(cfg.out_dir) / ("fit_" + tag + ".json");
  const fs::path draws_path = fs::path(cfg.out_dir) / ("draws_" + tag + ".csv");
  const fs::path forest_path = fs::path(cfg.out_dir) / ("forest_" + tag + ".csv");
  open_out(json_path) << pipelines::to_json(res.summary);
  {
    auto file = open_out(draws_path);
    pipelines::export_draws(res.draws, file);
  }
  {
    auto file = open_out(forest_path);
    pipelines::export_forest(res.summary, file);
  }

  out << res.summary.model << " seed=" << res.summary.seed << " converged="
      << (res.summary.converged ? "yes" : "no")
      << " rhat_max=" << fmt("%.4f", res.summary.rhat_max)
      << " ess_min=" << fmt("%.1f", res.summary.ess_min) << "\n";
  out << "wrote " << json_path.string() << "\n";
  out << "wrote " << draws_path.string() << "\n";
  out << "wrote " << forest_path.string() << "\n";
  if (!res.summary.converged) {
    std::cerr << "[warn] convergence gate flagged this fit (needs rhat <= 1.05 and"
                 " ess >= 400 on contrast parameters); outputs were written\n";
    return 3;
  }
  return 0;
}

int cmd_summarize(const std::string& fit_json_path, std::ostream& out) {
  const auto summary = pipelines::summary_from_json(slurp(fit_json_path));
  out << "model: " << summary.model << "\n";
  out << "seed: " << summary.seed << "\n";
  out << "config " << summary.config_hash << ", data " << summary.data_digest << "\n";
  if (summary.tau_fixed)
    out << "tau: fixed at " << fmt("%.6g", summary.tau.median) << "\n";
  else
    out << "tau: " << fmt("%.3f", summary.tau.median) << " (" << fmt("%.3f", summary.tau.lower)
        << ", " << fmt("%.3f", summary.tau.upper) << ")\n";
  out << "gate: " << (summary.converged ? "pass" : "FLAGGED")
      << " (rhat max " << fmt("%.4f", summary.rhat_max) << ", ess min "
      << fmt("%.1f", summary.ess_min) << ")\n";

  std::size_t width = 0;
  for (const auto& c : summary.contrasts) width = std::max(width, contrast_heading(c).size());
  out << "\n";
  for (const auto& c : summary.contrasts) {
    std::string head = contrast_heading(c);
    head.resize(width, ' ');
    out << head << "  HR " << fmt("%.3f", c.hr_median) << " (" << fmt("%.3f", c.lower)
        << ", " << fmt("%.3f", c.upper) << ")\n";
  }
  return 0;
}

int cmd_compare(const std::string& fit_a_path, const std::string& fit_b_path,
                std::ostream& out) {
  const auto a = pipelines::summary_from_json(slurp(fit_a_path));
  const auto b = pipelines::summary_from_json(slurp(fit_b_path));
  out << "interval widths: " << a.model << " (A) vs " << b.model << " (B)\n\n";

  std::size_t width = 0;
  for (const auto& c : a.contrasts) width = std::max(width, contrast_heading(c).size());
  for (const auto& ca : a.contrasts) {
    const pipelines::ContrastSummary* cb = nullptr;
    for (const auto& c : b.contrasts)
      if (c.k == ca.k && c.l == ca.l && c.subgroup == ca.subgroup) {
        cb = &c;
        break;
      }
    if (!cb)
      throw ValidationError("contrast '" + contrast_heading(ca) +
                            "' is missing from " + fit_b_path);
    if (cb->label != ca.label)
      throw ValidationError("contrast labels disagree ('" + ca.label + "' vs '" + cb->label +
                            "'); the fits come from different networks");
    const double pct = pipelines::width_reduction({ca.lower, ca.upper}, {cb->lower, cb->upper});
    std::string head = contrast_heading(ca);
    head.resize(width, ' ');
    out << head << "  A " << fmt("%.3f", ca.upper - ca.lower) << "  B "
        << fmt("%.3f", cb->upper - cb->lower) << "  reduction "
        << fmt("%.1f", round_half_up(pct, 1)) << "%\n";
  }
  return 0;
}

}  // namespace bnmr::commands
