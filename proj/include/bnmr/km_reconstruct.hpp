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

// Reconstructs subject-level survival records from a digitized
// Kaplan-Meier curve and its number-at-risk table. Events are read off the
// curve drops; censorings are spread at a constant rate inside each risk
// interval and their count adjusted iteratively until the implied number
// at risk matches the table exactly.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bnmr/errors.hpp"

namespace bnmr {

struct CurvePoint {
  double time = 0.0;
  double survival = 1.0;
};

// Points ordered by time; (0, 1) is inserted when absent. Small upward
// wobbles from digitization (<= 0.005) are clipped to monotone.
struct DigitizedCurve {
  std::vector<CurvePoint> points;
};

struct RiskRow {
  double time = 0.0;
  long long n_at_risk = 0;
};

// Times strictly increasing starting at 0; counts positive, non-increasing.
struct RiskTable {
  std::vector<RiskRow> rows;
};

struct KMRecord {
  double time = 0.0;
  bool event = false;
};

struct ReconstructionReport {
  std::vector<KMRecord> records;
  double sup_deviation = 0.0;  // KM round-trip error of the records vs the input curve
  int iterations = 0;          // censoring adjustment passes, summed over intervals
  std::vector<std::string> warnings;
};

// Preconditions are validated; inconsistent inputs (a curve the risk table
// cannot produce within 50 adjustment passes per interval) raise
// ValidationError with interval diagnostics. total_events, when given,
// pins the event count after the last risk-table time.
ReconstructionReport reconstruct(const DigitizedCurve& curve, const RiskTable& risk,
                                 std::optional<long long> total_events = std::nullopt);

// Product-limit estimate; returns a point per distinct record time with the
// origin (0, 1) prepended.
DigitizedCurve km_estimate(std::span<const KMRecord> records);

// sup_t |curve(t) - KM(records)(t)| over the curve's points, evaluating the
// KM estimate as a step function (value of the last point at or before t).
double roundtrip_error(const DigitizedCurve& curve, std::span<const KMRecord> records);

// Validated copy of a curve: ordered times, survival in [0, 1], origin
// inserted, digitization wobble clipped. Exposed for reuse by ingestion.
DigitizedCurve normalize_curve(const DigitizedCurve& curve, std::vector<std::string>* warnings = nullptr);

}  // namespace bnmr
