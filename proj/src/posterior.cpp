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

#include "bnmr/posterior.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "bnmr/stats.hpp"

namespace bnmr {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

double weibull_loglik(double time, bool event, double shape, double log_scale) {
  if (!(time > 0.0)) throw std::domain_error("weibull_loglik: time must be positive");
  if (!(shape > 0.0)) throw std::domain_error("weibull_loglik: shape must be positive");
  const double log_t = std::log(time);
  const double cum_hazard = std::exp(log_scale + shape * log_t);
  if (!event) return -cum_hazard;
  return log_scale + std::log(shape) + (shape - 1.0) * log_t - cum_hazard;
}

double linear_predictor(const IpdStudyParams& p, int biomarker, int arm) {
  if ((biomarker != 0 && biomarker != 1) || (arm != 0 && arm != 1))
    throw std::domain_error("linear_predictor: biomarker and arm must be 0 or 1");
  return p.log_base_neg + p.base_shift * biomarker + p.effect_neg * arm +
         p.effect_shift * biomarker * arm;
}

double ad_loglik(double y, double sigma, double effect) {
  if (!(sigma > 0.0)) throw std::domain_error("ad_loglik: sigma must be positive");
  return normal_logpdf(y, effect, sigma);
}

double consistency_mean(const ModelParameters& p, int k, int l, double ppos) {
  const auto valid = [&](int id) {
    return id >= 1 && id < static_cast<int>(p.basic_neg.size()) &&
           id < static_cast<int>(p.basic_shift.size());
  };
  if (!valid(k) || !valid(l) || k == l)
    throw std::invalid_argument("consistency_mean: invalid treatment pair");
  if (!(ppos >= 0.0 && ppos <= 1.0))
    throw std::domain_error("consistency_mean: ppos outside [0,1]");
  return (p.basic_neg[l] - p.basic_neg[k]) + (p.basic_shift[l] - p.basic_shift[k]) * ppos;
}

namespace {

void check_dimensions(const Network& net, const ModelSpec& spec, const ModelParameters& p) {
  const std::size_t want = net.treatments.size() + 1;
  if (p.basic_neg.size() != want || p.basic_shift.size() != want)
    throw std::invalid_argument("model parameters: basic-effect vectors must be 1-based over all ids");
  if (p.ad_effect.size() != net.ad.size())
    throw std::invalid_argument("model parameters: one study effect required per AD row");
  const std::size_t want_ipd = spec.kind == ModelKind::OneStage ? net.ipd.size() : 0;
  if (p.ipd.size() != want_ipd)
    throw std::invalid_argument("model parameters: participant-level block count mismatch");
  if (spec.kind == ModelKind::OneStage) {
    for (const auto& s : net.ipd)
      if (s.subjects.empty())
        throw std::invalid_argument("model parameters: IPD study '" + s.study_id + "' has no subjects");
  }
}

double tau_for_eval(const ModelSpec& spec, const ModelParameters& p) {
  return spec.fixed_tau ? *spec.fixed_tau : p.tau;
}

}  // namespace

double random_effects_loglik(const Network& net, const ModelSpec& spec, const ModelParameters& p) {
  check_dimensions(net, spec, p);
  const double tau = tau_for_eval(spec, p);
  if (!(tau > 0.0) || tau > spec.priors.tau_upper) return kNegInf;
  const double sd = std::max(tau, kTauFloor);
  double total = 0.0;
  for (std::size_t j = 0; j < net.ad.size(); ++j) {
    const auto& row = net.ad[j];
    const double md = consistency_mean(p, row.treatment_k, row.treatment_l, row.prop_pos);
    total += normal_logpdf(p.ad_effect[j], md, sd);
  }
  if (spec.kind == ModelKind::OneStage) {
    for (std::size_t j = 0; j < net.ipd.size(); ++j) {
      const auto& s = net.ipd[j];
      const double md_neg = consistency_mean(p, s.treatment_k, s.treatment_l, 0.0);
      const double md_pos = consistency_mean(p, s.treatment_k, s.treatment_l, 1.0);
      total += normal_logpdf(p.ipd[j].effect_neg, md_neg, sd);
      total += normal_logpdf(p.ipd[j].effect_pos(), md_pos, sd);
    }
  }
  return total;
}

double log_prior(const Network& net, const ModelSpec& spec, const ModelParameters& p) {
  check_dimensions(net, spec, p);
  const auto& pr = spec.priors;
  const double sd0 = std::sqrt(pr.normal_variance);
  double total = 0.0;
  for (const auto& t : net.treatments) {
    if (t.id == 1) {
      if (p.basic_neg[1] != 0.0 || p.basic_shift[1] != 0.0)
        throw std::invalid_argument("log_prior: reference-treatment effects must be 0");
      continue;
    }
    total += normal_logpdf(p.basic_neg[t.id], 0.0, sd0);
    total += normal_logpdf(p.basic_shift[t.id], 0.0, sd0);
  }
  if (spec.kind == ModelKind::OneStage) {
    for (const auto& b : p.ipd) {
      total += gamma_logpdf(b.shape, pr.shape_prior_shape, pr.shape_prior_rate);
      total += normal_logpdf(b.log_base_neg, 0.0, sd0);
      total += normal_logpdf(b.log_base_pos(), 0.0, sd0);
    }
  }
  if (!spec.fixed_tau) {
    const double tau = p.tau;
    if (!(tau > 0.0) || tau > pr.tau_upper) return kNegInf;
    total += -std::log(pr.tau_upper);
  }
  return total;
}

double log_posterior(const Network& net, const ModelSpec& spec, const ModelParameters& p) {
  check_dimensions(net, spec, p);
  double total = 0.0;
  for (std::size_t j = 0; j < net.ad.size(); ++j)
    total += ad_loglik(net.ad[j].y, net.ad[j].sigma, p.ad_effect[j]);
  if (spec.kind == ModelKind::OneStage) {
    for (std::size_t j = 0; j < net.ipd.size(); ++j) {
      const auto& block = p.ipd[j];
      for (const auto& subj : net.ipd[j].subjects)
        total += weibull_loglik(subj.time, subj.event, block.shape,
                                linear_predictor(block, subj.biomarker, subj.arm));
    }
  }
  const double re = random_effects_loglik(net, spec, p);
  if (re == kNegInf) return kNegInf;
  const double prior = log_prior(net, spec, p);
  if (prior == kNegInf) return kNegInf;
  return total + re + prior;
}

}  // namespace bnmr
