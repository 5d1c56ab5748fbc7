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

#include "bnmr/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "bnmr/errors.hpp"

namespace bnmr {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  std::string item;
  std::istringstream stream(value);
  while (std::getline(stream, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

struct Entry {
  std::string section;
  std::string key;
  std::string value;
  std::string where;  // "source line N"
};

std::vector<Entry> parse_entries(std::istream& in, const std::string& source) {
  std::vector<Entry> entries;
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    std::ostringstream where;
    where << source << " line " << line_no;
    if (text.front() == '[') {
      if (text.back() != ']' || text.size() < 3)
        throw ParseError(where.str() + ": malformed section header '" + text + "'");
      section = text.substr(1, text.size() - 2);
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ParseError(where.str() + ": expected 'key = value', got '" + text + "'");
    if (section.empty())
      throw ParseError(where.str() + ": key outside any [section]");
    entries.push_back({section, trim(text.substr(0, eq)), trim(text.substr(eq + 1)), where.str()});
  }
  return entries;
}

double parse_double(const Entry& e) {
  try {
    std::size_t used = 0;
    const double v = std::stod(e.value, &used);
    if (used != e.value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError(e.where + ": '" + e.value + "' is not a number (key " + e.key + ")");
  }
}

long long parse_int(const Entry& e) {
  long long v = 0;
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ParseError(e.where + ": '" + e.value + "' is not an integer (key " + e.key + ")");
  return v;
}

std::uint64_t parse_u64(const Entry& e) {
  std::uint64_t v = 0;
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ParseError(e.where + ": '" + e.value + "' is not an unsigned integer (key " + e.key + ")");
  return v;
}

bool is_none(const std::string& v) { return v.empty() || v == "none"; }

}  // namespace

RunConfig parse_run_config(std::istream& in, const std::string& source) {
  RunConfig cfg;
  emulation::SyntheticEHRConfig synth;
  bool synth_seen = false;
  std::vector<std::string> taxanes = {"paclitaxel", "docetaxel"};
  std::vector<std::string> chemo = {"capecitabine", "carboplatin", "gemcitabine", "vinorelbine"};

  for (const Entry& e : parse_entries(in, source)) {
    if (e.section == "paths") {
      if (e.key == "treatment_map") cfg.treatment_map = e.value;
      else if (e.key == "ad") cfg.ad_csv = e.value;
      else if (e.key == "ipd") cfg.ipd_csvs = split_list(e.value);
      else if (e.key == "ehr") cfg.ehr_csv = e.value;
      else if (e.key == "km_manifest") cfg.km_manifest = e.value;
      else if (e.key == "out") cfg.out_dir = e.value;
      else throw ParseError(e.where + ": unknown key '" + e.key + "' in [paths]");
    } else if (e.section == "model") {
      if (e.key == "kind") {
        const long long kind = parse_int(e);
        if (kind < 1 || kind > 3)
          throw ParseError(e.where + ": model kind must be 1, 2, or 3");
        cfg.model = static_cast<int>(kind);
      } else if (e.key == "stage_one") {
        try {
          cfg.stage_one = pipelines::stage_one_mode_from_label(e.value);
        } catch (const std::invalid_argument& ex) {
          throw ParseError(e.where + ": " + ex.what());
        }
      } else {
        throw ParseError(e.where + ": unknown key '" + e.key + "' in [model]");
      }
    } else if (e.section == "priors") {
      if (e.key == "shape_prior_shape") cfg.priors.shape_prior_shape = parse_double(e);
      else if (e.key == "shape_prior_rate") cfg.priors.shape_prior_rate = parse_double(e);
      else if (e.key == "normal_variance") cfg.priors.normal_variance = parse_double(e);
      else if (e.key == "tau_upper") cfg.priors.tau_upper = parse_double(e);
      else if (e.key == "fixed_tau") {
        if (!is_none(e.value)) cfg.fixed_tau = parse_double(e);
      } else throw ParseError(e.where + ": unknown key '" + e.key + "' in [priors]");
    } else if (e.section == "sampler") {
      if (e.key == "chains") cfg.sampler.n_chains = static_cast<int>(parse_int(e));
      else if (e.key == "burn_in") cfg.sampler.burn_in = parse_int(e);
      else if (e.key == "keep") cfg.sampler.keep = parse_int(e);
      else if (e.key == "thin") cfg.sampler.thin = static_cast<int>(parse_int(e));
      else if (e.key == "seed") cfg.seed = parse_u64(e);
      else if (e.key == "target_accept") cfg.sampler.target_accept = parse_double(e);
      else if (e.key == "adapt_window") cfg.sampler.adapt_window = static_cast<int>(parse_int(e));
      else if (e.key == "init_jitter") cfg.sampler.init_jitter = parse_double(e);
      else throw ParseError(e.where + ": unknown key '" + e.key + "' in [sampler]");
    } else if (e.section == "emulate") {
      if (e.key == "n_trials") cfg.protocol.n_trials = static_cast<int>(parse_int(e));
      else if (e.key == "prefix") cfg.protocol.trial_prefix = e.value;
      else if (e.key == "min_age") cfg.protocol.min_age = parse_double(e);
      else if (e.key == "line") cfg.protocol.eligible_line = static_cast<int>(parse_int(e));
      else if (e.key == "taxanes") taxanes = split_list(e.value);
      else if (e.key == "chemo") chemo = split_list(e.value);
      else if (e.key == "experimental" || e.key == "control") {
        try {
          const auto cls = emulation::class_from_label(e.value);
          (e.key == "experimental" ? cfg.protocol.experimental : cfg.protocol.control) = cls;
        } catch (const std::invalid_argument& ex) {
          throw ParseError(e.where + ": " + ex.what());
        }
      } else if (e.key == "caliper") {
        if (!is_none(e.value)) cfg.protocol.caliper = parse_double(e);
      } else if (e.key == "covariates") {
        cfg.protocol.covariates = split_list(e.value);
      } else if (e.key == "class_c") cfg.class_label_c = e.value;
      else if (e.key == "class_x") cfg.class_label_x = e.value;
      else if (e.key == "class_cx") cfg.class_label_cx = e.value;
      else throw ParseError(e.where + ": unknown key '" + e.key + "' in [emulate]");
    } else if (e.section == "synthetic") {
      synth_seen = true;
      if (e.key == "n") synth.n = static_cast<int>(parse_int(e));
      else if (e.key == "mean_age") synth.mean_age = parse_double(e);
      else if (e.key == "sd_age") synth.sd_age = parse_double(e);
      else if (e.key == "prob_biomarker") synth.prob_biomarker = parse_double(e);
      else if (e.key == "prob_line_two") synth.prob_line_two = parse_double(e);
      else if (e.key == "assign_intercept") synth.assign_intercept = parse_double(e);
      else if (e.key == "assign_age") synth.assign_age = parse_double(e);
      else if (e.key == "assign_biomarker") synth.assign_biomarker = parse_double(e);
      else if (e.key == "shape") synth.shape = parse_double(e);
      else if (e.key == "log_base_hazard") synth.log_base_hazard = parse_double(e);
      else if (e.key == "biomarker_loghr") synth.biomarker_loghr = parse_double(e);
      else if (e.key == "treatment_loghr") synth.treatment_loghr = parse_double(e);
      else if (e.key == "interaction_loghr") synth.interaction_loghr = parse_double(e);
      else if (e.key == "second_line_daily_rate") synth.second_line_daily_rate = parse_double(e);
      else if (e.key == "followup_days") synth.followup_days = parse_double(e);
      else if (e.key == "experimental_drugs") synth.experimental_drugs = split_list(e.value);
      else if (e.key == "control_drugs") synth.control_drugs = split_list(e.value);
      else throw ParseError(e.where + ": unknown key '" + e.key + "' in [synthetic]");
    } else {
      throw ParseError(e.where + ": unknown section [" + e.section + "]");
    }
  }

  for (const auto& drug : taxanes) cfg.protocol.class_map[drug] = "taxane";
  for (const auto& drug : chemo) cfg.protocol.class_map[drug] = "chemo";
  if (synth_seen) cfg.synthetic = synth;
  if (cfg.seed) cfg.sampler.seed = *cfg.seed;
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file '" + path + "'");
  return parse_run_config(in, path);
}

std::string default_config_text() {
  return R"(# bnmr run configuration; every key below shows its default.
# Relative input paths resolve against the directory holding this file;
# the output directory resolves against the working directory.

[paths]
treatment_map =
ad =
# comma-separated list of participant-level CSV files
ipd =
ehr =
km_manifest =
out = out

[model]
# 1 = aggregate-only, 2 = two-stage, 3 = one-stage joint
kind = 1
# stage-one reduction for model 2: pooled or subgroup
stage_one = pooled

[priors]
shape_prior_shape = 1
shape_prior_rate = 0.01
normal_variance = 100
tau_upper = 2
# a number fixes the heterogeneity SD; none samples it
fixed_tau = none

[sampler]
chains = 4
burn_in = 10000
keep = 20000
thin = 1
seed = 1
target_accept = 0.44
adapt_window = 50
init_jitter = 0.5

[emulate]
n_trials = 1
# trial ids are "<prefix>_NN"
prefix = trial
min_age = 18
line = 1
taxanes = paclitaxel, docetaxel
chemo = capecitabine, carboplatin, gemcitabine, vinorelbine
experimental = CX
control = C
# logit-scale matching caliper; none disables it
caliper = none
covariates = age, biomarker
# network labels written for each regimen class
class_c = chemotherapy
class_x = taxane
class_cx = taxane+chemotherapy

# Synthetic records are generated when [paths] ehr is empty and this
# section is present. Assignment is confounded through the logistic model
# logit P(experimental) = intercept + age_coef*(age-60)/10 + bio_coef*bio.
[synthetic]
n = 1000
mean_age = 62
sd_age = 9
prob_biomarker = 0.75
prob_line_two = 0
assign_intercept = 0
assign_age = 0
assign_biomarker = 0
shape = 1.1
log_base_hazard = -7.5
biomarker_loghr = 0
treatment_loghr = 0
interaction_loghr = 0
second_line_daily_rate = 0.0008
followup_days = 1095
experimental_drugs = docetaxel, capecitabine
control_drugs = capecitabine
)";
}

}  // namespace bnmr
