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

#pragma once

// Target trial emulation from EHR-style records: eligibility filtering,
// regimen classification, propensity-score 1:1 matching on age and biomarker
// status, and per-protocol outcome derivation. A synthetic record generator
// stands in for real EHR extracts.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bnmr::emulation {

// One patient line of therapy. Dates are day indices on a common axis.
struct EHRRecord {
  std::string patient_id;
  double age = 0.0;
  int biomarker = 0;  // 0/1
  std::vector<std::string> drugs;
  int line_of_therapy = 1;
  double start_date = 0.0;
  std::optional<double> second_line_start;
  std::optional<double> death_date;
  double last_followup = 0.0;
};

// Treatment strategy classes. Chemo backbone is "C", taxane "X", the
// combination "CX"; anything else stays unclassified.
enum class RegimenClass { Unclassified, Chemo, Taxane, Combination };

std::string class_label(RegimenClass c);
RegimenClass class_from_label(const std::string& label);

struct EmulationProtocol {
  double min_age = 18.0;
  int eligible_line = 1;
  // drug label -> "taxane" or "chemo"; drugs absent from the map are ignored.
  std::map<std::string, std::string> class_map;
  std::vector<std::string> covariates = {"age", "biomarker"};
  RegimenClass experimental = RegimenClass::Combination;
  RegimenClass control = RegimenClass::Taxane;
  std::uint64_t seed = 1;
  std::optional<double> caliper;  // logit scale
  int n_trials = 1;
  // Trial ids are "<prefix>_NN"; distinct prefixes keep study ids unique
  // when several emulation runs feed one network.
  std::string trial_prefix = "trial";
};

struct CohortMember {
  EHRRecord record;
  int arm = 0;  // 1 = experimental class, 0 = control class
};

struct PropensityFit {
  std::vector<double> coef;   // intercept first, then protocol covariate order
  std::vector<double> score;  // fitted P(experimental), aligned with the cohort
  int iterations = 0;
};

struct MatchedPair {
  std::size_t experimental = 0;  // indices into the cohort
  std::size_t control = 0;
  double distance = 0.0;  // |logit difference|
};

struct Outcome {
  double time_months = 0.0;
  bool event = false;
};

struct MatchedSubject {
  std::string patient_id;
  int arm = 0;  // 1 = experimental
  int biomarker = 0;
  double age = 0.0;
  double time_months = 0.0;
  int event = 0;
};

struct CovariateBalance {
  std::string name;
  double smd_before = 0.0;
  double smd_after = 0.0;
};

struct EmulatedTrial {
  std::string trial_id;
  std::vector<MatchedSubject> subjects;
  std::vector<CovariateBalance> balance;
  std::size_t pool_experimental = 0;  // fold arm sizes before matching
  std::size_t pool_control = 0;
  std::vector<std::string> warnings;
};

// Classifies a drug list: taxane and chemo present -> Combination, taxane
// only -> Taxane, chemo only -> Chemo, neither -> Unclassified.
RegimenClass classify_regimen(const std::vector<std::string>& drugs,
                              const std::map<std::string, std::string>& class_map);

// Retains records meeting age/line requirements whose regimen classifies to
// one of the protocol arms. Throws ValidationError if nothing survives.
std::vector<CohortMember> filter_eligible(const std::vector<EHRRecord>& records,
                                          const EmulationProtocol& protocol);

// Logistic regression of arm on the named covariates by IRLS. Throws
// ValidationError on separation (any |coefficient| > 20) or a singular
// design, and if either arm is absent.
PropensityFit fit_propensity(const std::vector<CohortMember>& cohort,
                             const std::vector<std::string>& covariates);

// Greedy nearest-neighbor 1:1 matching on logit(score) without replacement.
// Experimental members are processed in descending logit order (ties by
// patient_id); candidate ties also resolve by patient_id. Pairs farther
// apart than the caliper are discarded. Throws ValidationError when no pair
// can be formed.
std::vector<MatchedPair> match_one_to_one(const std::vector<CohortMember>& cohort,
                                          const std::vector<double>& score,
                                          std::optional<double> caliper);

// Per-protocol outcome: follow-up ends at the earliest of death, second-line
// start, and last follow-up; the end is an event only when death comes
// first. Time is reported in months of 30.4375 days. Throws ValidationError
// when the derived time is nonpositive.
Outcome derive_outcome(const EHRRecord& record);

struct EmulationResult {
  std::vector<EmulatedTrial> trials;
  std::vector<std::string> warnings;  // records dropped before partitioning
};

// Full pipeline: eligibility, outcome screening, a seeded shuffle into
// n_trials round-robin folds, then per-fold propensity fitting and matching.
EmulationResult emulate(const std::vector<EHRRecord>& records,
                        const EmulationProtocol& protocol);

// Synthetic EHR configuration. Treatment assignment is confounded by age and
// biomarker through a logistic model; survival is Weibull proportional
// hazards on the day scale.
struct SyntheticEHRConfig {
  int n = 1000;
  double mean_age = 62.0;
  double sd_age = 9.0;
  double prob_biomarker = 0.75;
  double prob_line_two = 0.0;
  // logit P(experimental) = intercept + age_coef*(age-60)/10 + bio_coef*biomarker
  double assign_intercept = 0.0;
  double assign_age = 0.0;
  double assign_biomarker = 0.0;
  // log hazard = base + bio*biomarker + trt*arm + interaction*arm*biomarker
  double shape = 1.1;
  double log_base_hazard = -7.5;
  double biomarker_loghr = 0.0;
  double treatment_loghr = 0.0;
  double interaction_loghr = 0.0;
  double second_line_daily_rate = 0.0008;
  double followup_days = 1095.0;
  std::vector<std::string> experimental_drugs = {"docetaxel", "capecitabine"};
  std::vector<std::string> control_drugs = {"capecitabine"};
};

std::vector<EHRRecord> generate_synthetic_ehr(const SyntheticEHRConfig& config,
                                              std::uint64_t seed);

// CSV round-trip. Columns: patient_id,age,biomarker,drugs,line,start,
// second_line,death,last_followup; drugs are semicolon-joined and absent
// dates are empty fields.
std::vector<EHRRecord> read_ehr_csv(std::istream& in, const std::string& source);
std::vector<EHRRecord> read_ehr_file(const std::string& path);
void write_ehr_csv(std::ostream& out, const std::vector<EHRRecord>& records);

}  // namespace bnmr::emulation
