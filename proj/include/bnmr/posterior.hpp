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

// Joint posterior for the network meta-regression. Time-to-event arms
// follow a Weibull proportional-hazards likelihood whose log hazard scale
// is linear in biomarker status, assigned treatment, and their
// interaction. Published log hazard ratios enter through a normal
// likelihood. Study effects are exchangeable around consistency means
// built from the basic effects, with one shared heterogeneity SD.

#include <optional>
#include <vector>

#include "bnmr/evidence.hpp"

namespace bnmr {

enum class ModelKind {
  AdOnly,    // aggregate rows only (model 1)
  TwoStage,  // aggregate rows incl. pseudo-rows from per-study fits (model 2)
  OneStage   // joint aggregate + participant-level likelihood (model 3)
};

struct PriorSettings {
  double shape_prior_shape = 1.0;  // Gamma(shape, rate) on each Weibull shape
  double shape_prior_rate = 0.01;
  double normal_variance = 100.0;  // vague normal variance on location parameters
  double tau_upper = 2.0;          // U(0, tau_upper) on the heterogeneity SD
};

struct ModelSpec {
  ModelKind kind = ModelKind::OneStage;
  PriorSettings priors;
  std::optional<double> fixed_tau;  // point mass; tau is then not sampled
};

// Heterogeneity SD floor used when evaluating random-effects densities.
inline constexpr double kTauFloor = 1e-6;

// Per-study parameters of a participant-level block.
struct IpdStudyParams {
  double shape = 1.0;         // Weibull shape
  double log_base_neg = 0.0;  // log hazard scale, reference arm, biomarker-negative
  double base_shift = 0.0;    // biomarker-positive baseline shift
  double effect_neg = 0.0;    // study log HR, biomarker-negative
  double effect_shift = 0.0;  // positive-vs-negative log HR shift
  double effect_pos() const { return effect_neg + effect_shift; }
  double log_base_pos() const { return log_base_neg + base_shift; }
};

// Basic-effect vectors are 1-based by treatment id (index 0 unused);
// entries at the reference id must be exactly 0.
struct ModelParameters {
  std::vector<double> basic_neg;    // log HR vs reference, biomarker-negative
  std::vector<double> basic_shift;  // positive-vs-negative shift per treatment
  double tau = 0.5;
  std::vector<double> ad_effect;    // per AD row, network order
  std::vector<IpdStudyParams> ipd;  // per IPD study, network order (OneStage)

  double basic_pos(int id) const { return basic_neg[id] + basic_shift[id]; }
};

// One subject's Weibull log likelihood under h(t) = scale * shape * t^(shape-1)
// with scale = exp(log_scale); censored subjects contribute -H(t).
double weibull_loglik(double time, bool event, double shape, double log_scale);

// log hazard scale for a subject cell (biomarker, arm in {0,1}).
double linear_predictor(const IpdStudyParams& p, int biomarker, int arm);

// Normal likelihood of a published log HR given the true study effect.
double ad_loglik(double y, double sigma, double effect);

// Consistency mean of a study effect on contrast (k, l) at a given
// biomarker-positive fraction.
double consistency_mean(const ModelParameters& p, int k, int l, double ppos);

// Exchangeability terms for every study effect; -inf when tau is outside
// its prior support. The SD is floored at kTauFloor.
double random_effects_loglik(const Network& net, const ModelSpec& spec, const ModelParameters& p);

// Priors on shapes, baselines, basic effects, and tau. Parameters with a
// reference-id slot contribute nothing there.
double log_prior(const Network& net, const ModelSpec& spec, const ModelParameters& p);

// Sum of the data likelihoods, exchangeability terms, and priors.
// Dimension mismatches against the network throw std::invalid_argument.
double log_posterior(const Network& net, const ModelSpec& spec, const ModelParameters& p);

}  // namespace bnmr
