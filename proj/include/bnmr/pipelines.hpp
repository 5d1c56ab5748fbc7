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

// Analysis pipelines over the evidence network: the aggregate-only model,
// the two-stage model (per-study fits reduced to pseudo aggregate rows),
// and the one-stage joint model, plus contrast summaries on the hazard
// ratio scale and interval-width comparisons between fits.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bnmr/evidence.hpp"
#include "bnmr/mcmc.hpp"
#include "bnmr/posterior.hpp"

namespace bnmr::pipelines {

enum class StageOneMode { Pooled, Subgroup };

StageOneMode stage_one_mode_from_label(const std::string& label);  // "pooled"/"subgroup"
std::string stage_one_mode_label(StageOneMode mode);

// Aggregate row distilled from one participant-level study.
struct PseudoADRow {
  std::string study_id;
  int treatment_k = 0;
  int treatment_l = 0;
  double y = 0.0;
  double sigma = 0.0;
  double ppos = 0.0;
  std::string origin;  // which stage-one reduction produced the row
};

enum class Subgroup { Positive, Negative };

std::string subgroup_label(Subgroup s);  // "+ve" / "-ve"

struct ContrastEstimate {
  double hr_median = 0.0;
  double hr_mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct ContrastSummary {
  int k = 0;
  int l = 0;
  std::string label;  // "<label l> vs <label k>"
  Subgroup subgroup = Subgroup::Positive;
  double hr_median = 0.0;
  double hr_mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct ParameterDiagnostic {
  std::string name;
  mcmc::Summary summary;
  double rhat = 0.0;
  double ess = 0.0;
};

struct FitSummary {
  std::string model;  // "model1" | "model2" | "model3"
  std::uint64_t seed = 0;
  std::string config_hash;  // hex digests for provenance
  std::string data_digest;
  bool converged = false;  // rhat <= 1.05 and ess >= 400 on every basic contrast parameter
  double rhat_max = 0.0;
  double ess_min = 0.0;
  bool tau_fixed = false;
  mcmc::Summary tau;
  std::vector<ContrastSummary> contrasts;     // all treatment pairs x both subgroups
  std::vector<ParameterDiagnostic> parameters;  // every sampled coordinate
};

struct FitResult {
  FitSummary summary;
  mcmc::Draws draws;
};

// Sampler coordinates for a network/model pair, in the order the target
// consumes them: d_neg and d_shift per non-reference treatment, tau unless
// fixed, then (one-stage only) per participant-level study its shape,
// baselines, and two standardized effect residuals. Aggregate rows carry no
// coordinates: their normal random effects integrate out exactly, leaving
// the marginal likelihood N(y; md, sigma^2 + tau^2). Participant-level
// effects are sampled as standardized residuals around their consistency
// means, which keeps the geometry well conditioned at small tau.
std::vector<mcmc::ParamDef> model_parameters(const Network& net, const ModelSpec& spec);

// Posterior density over those coordinates; each chain receives its own
// copy (the target memoizes per-study Weibull sufficient statistics).
mcmc::TargetFactory make_target(const Network& net, const ModelSpec& spec);

// Aggregate-only fit. The network must carry no participant-level studies.
FitResult fit_model1(const Network& net, const ModelSpec& spec,
                     const mcmc::SamplerConfig& config);

// Independent fit of one participant-level study. Pooled mode reduces the
// study to a single treatment-effect row at the study's biomarker-positive
// fraction; subgroup mode yields one row per subgroup present.
std::vector<PseudoADRow> stage_one_fit(const IPDStudy& study, StageOneMode mode,
                                       const mcmc::SamplerConfig& config,
                                       const PriorSettings& priors = {});

// Two-stage fit: stage-one rows join the aggregate rows, then the
// aggregate-only model runs on the union.
FitResult fit_model2(const Network& net, StageOneMode mode, const ModelSpec& spec,
                     const mcmc::SamplerConfig& config);

// One-stage joint fit over aggregate rows and participant-level studies.
FitResult fit_model3(const Network& net, const ModelSpec& spec,
                     const mcmc::SamplerConfig& config);

// Hazard ratio of l vs k in a subgroup: per-draw contrast of basic effects,
// summarized on the log scale (so HR(k,l) = 1/HR(l,k) exactly) with an
// equal-tailed interval.
ContrastEstimate contrast_hr(const mcmc::Draws& draws, int k, int l, Subgroup subgroup,
                             double level = 0.95);

// Percent reduction in interval width going from a to b:
// 100 * (1 - width(b) / width(a)). Both intervals must be non-degenerate.
double width_reduction(std::pair<double, double> a, std::pair<double, double> b);

// CSV of contrast rows: model,contrast,subgroup,hr,lo,hi,rhat_max,ess_min
// at three decimals. The multi-fit form interleaves fits ordered by
// (contrast, subgroup, model).
void export_forest(const FitSummary& summary, std::ostream& out);
void export_forest(std::span<const FitSummary> summaries, std::ostream& out);

// Long-format draws CSV: chain,iteration,param,value (full precision).
void export_draws(const mcmc::Draws& draws, std::ostream& out);

// FitSummary round-trip as a single JSON document.
std::string to_json(const FitSummary& summary);
FitSummary summary_from_json(const std::string& text);

}  // namespace bnmr::pipelines
