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

// Evidence layer: typed records for aggregate (published hazard ratios) and
// individual participant data, plus the network that joins them. Treatments
// are analysis classes, not product labels; a user-editable mapping file
// assigns each arm label to a class. Everything downstream consumes the
// canonical Network produced here.

#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bnmr/errors.hpp"
#include "bnmr/stats.hpp"

namespace bnmr {

// Analysis class. id 1 is the network reference; ids are dense 1..K.
struct Treatment {
  int id = 0;
  std::string label;
};

// One published two-arm comparison. Multi-arm trials enter as independent
// rows with distinct study_ids. treatment_l is the experimental class.
// After prepare_ad the pair satisfies treatment_k < treatment_l and (y,
// sigma, prop_pos) are filled; hr/ci keep the published direction.
struct ADStudyRecord {
  std::string study_id;
  int treatment_k = 0;
  int treatment_l = 0;
  double hr = std::numeric_limits<double>::quiet_NaN();
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  long long n_total = 0;
  long long n_pos = 0;
  long long n_neg = 0;
  long long n_unknown = 0;
  double y = std::numeric_limits<double>::quiet_NaN();      // log HR, l vs k
  double sigma = std::numeric_limits<double>::quiet_NaN();  // SE of y
  double prop_pos = std::numeric_limits<double>::quiet_NaN();
  bool flipped = false;  // true when canonicalization reversed the published direction
};

// arm 0 receives treatment_k, arm 1 receives treatment_l.
struct SubjectRecord {
  std::string subject_id;
  int arm = 0;
  int biomarker = 0;  // 1 = positive
  double time = 0.0;  // months, > 0
  bool event = false; // false = censored
};

struct IPDStudy {
  std::string study_id;
  int treatment_k = 0;
  int treatment_l = 0;
  std::vector<SubjectRecord> subjects;
};

struct Network {
  std::vector<Treatment> treatments;           // sorted by id, ids dense from 1
  std::vector<ADStudyRecord> ad;               // sorted by study_id
  std::vector<IPDStudy> ipd;                   // sorted by study_id
  std::vector<std::pair<int, int>> contrasts;  // sorted unique (k, l), k < l

  const Treatment& treatment(int id) const;
};

struct LogHR {
  double y = 0.0;
  double sigma = 0.0;
};

// Normal approximation on the log scale from a published HR and its
// two-sided CI: y = ln hr, sigma = (ln hi - ln lo) / (2 z).
LogHR hr_to_loghr(double hr, double ci_low, double ci_high, double level = 0.95);

struct ImputedCounts {
  long long final_n_pos = 0;
  double prop_pos = 0.0;
};

// Unknown-status subjects are allocated to the positive group at the rate
// observed among known-status subjects, rounding the allocation up:
// final = n_pos + ceil(n_unknown * n_pos / (n_pos + n_neg)).
ImputedCounts impute_missing_status(long long n_pos, long long n_neg, long long n_unknown,
                                    long long n_total);

// Fraction of biomarker-positive subjects in a study.
double ipd_ppos(const IPDStudy& study);

// Arm label -> class tag, from a mapping file of "label -> tag" lines.
// The reserved tag "exclude" drops rows using that label at ingest.
using TreatmentMap = std::map<std::string, std::string>;

TreatmentMap parse_treatment_map(std::istream& in, const std::string& source);
TreatmentMap load_treatment_map(const std::string& path);

// Declared classes of a map: the distinct tags other than "exclude", sorted
// by label and given dense ids from 1. The lexically first class is the
// network reference; contrasts are invariant to that choice.
std::vector<Treatment> treatments_from_map(const TreatmentMap& map);

// AD CSV schema:
//   study_id,ref_treatment,exp_treatment,hr,ci_low,ci_high,n_total,n_pos,n_neg,n_unknown
// Labels are resolved through the map; unknown labels raise row-addressed
// errors. Rows whose arm maps to "exclude" are skipped and reported in
// *warnings when given. y/sigma/prop_pos are left unset.
std::vector<ADStudyRecord> ingest_ad(std::istream& in, const std::string& source,
                                     const TreatmentMap& map, const std::vector<Treatment>& treatments,
                                     std::vector<std::string>* warnings = nullptr);
std::vector<ADStudyRecord> ingest_ad_file(const std::string& path, const TreatmentMap& map,
                                          const std::vector<Treatment>& treatments,
                                          std::vector<std::string>* warnings = nullptr);

// IPD CSV schema: study_id,subject_id,treatment,biomarker,time,event
std::vector<IPDStudy> ingest_ipd(std::istream& in, const std::string& source, const TreatmentMap& map,
                                 const std::vector<Treatment>& treatments);
std::vector<IPDStudy> ingest_ipd_file(const std::string& path, const TreatmentMap& map,
                                      const std::vector<Treatment>& treatments);

// Fills y/sigma via hr_to_loghr and prop_pos via impute_missing_status,
// then flips rows to the canonical k < l direction by negating y.
std::vector<ADStudyRecord> prepare_ad(std::vector<ADStudyRecord> records);

// Validates ids, arms, and prepared values; canonicalizes ordering; checks
// the evidence graph is connected. Throws ValidationError otherwise.
Network build_network(std::vector<Treatment> treatments, std::vector<ADStudyRecord> ad,
                      std::vector<IPDStudy> ipd);

}  // namespace bnmr
