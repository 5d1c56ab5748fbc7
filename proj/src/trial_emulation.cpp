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

#include "bnmr/trial_emulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "bnmr/csv.hpp"
#include "bnmr/errors.hpp"
#include "bnmr/stats.hpp"

namespace bnmr::emulation {

namespace {

constexpr double kDaysPerMonth = 30.4375;
constexpr double kInf = std::numeric_limits<double>::infinity();

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double p) {
  const double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return std::log(q / (1.0 - q));
}

double covariate_value(const EHRRecord& r, const std::string& name) {
  if (name == "age") return r.age;
  if (name == "biomarker") return static_cast<double>(r.biomarker);
  throw std::invalid_argument("unknown covariate '" + name + "'");
}

// Gaussian elimination with partial pivoting; a is modified in place.
std::vector<double> solve_linear(std::vector<std::vector<double>>& a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < 1e-12)
      throw ValidationError("propensity design is singular; check for constant covariates");
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

// (mean_1 - mean_0) / sqrt((var_1 + var_0) / 2); zero spread in both arms
// yields 0 for equal means and +-inf otherwise.
double standardized_mean_difference(const std::vector<double>& exp_values,
                                    const std::vector<double>& ctl_values) {
  const double m1 = mean(exp_values);
  const double m0 = mean(ctl_values);
  const double v1 = exp_values.size() > 1 ? sample_variance(exp_values) : 0.0;
  const double v0 = ctl_values.size() > 1 ? sample_variance(ctl_values) : 0.0;
  const double denom = std::sqrt((v1 + v0) / 2.0);
  if (denom == 0.0) return m1 == m0 ? 0.0 : std::copysign(kInf, m1 - m0);
  return (m1 - m0) / denom;
}

}  // namespace

std::string class_label(RegimenClass c) {
  switch (c) {
    case RegimenClass::Chemo:
      return "C";
    case RegimenClass::Taxane:
      return "X";
    case RegimenClass::Combination:
      return "CX";
    case RegimenClass::Unclassified:
      break;
  }
  return "unclassified";
}

RegimenClass class_from_label(const std::string& label) {
  if (label == "C") return RegimenClass::Chemo;
  if (label == "X") return RegimenClass::Taxane;
  if (label == "CX") return RegimenClass::Combination;
  throw std::invalid_argument("unknown regimen class '" + label + "' (expected C, X, or CX)");
}

RegimenClass classify_regimen(const std::vector<std::string>& drugs,
                              const std::map<std::string, std::string>& class_map) {
  bool taxane = false, chemo = false;
  for (const auto& drug : drugs) {
    const auto it = class_map.find(drug);
    if (it == class_map.end()) continue;  // unknown drugs do not block classification
    if (it->second == "taxane") taxane = true;
    else if (it->second == "chemo") chemo = true;
  }
  if (taxane && chemo) return RegimenClass::Combination;
  if (taxane) return RegimenClass::Taxane;
  if (chemo) return RegimenClass::Chemo;
  return RegimenClass::Unclassified;
}

std::vector<CohortMember> filter_eligible(const std::vector<EHRRecord>& records,
                                          const EmulationProtocol& protocol) {
  if (protocol.experimental == protocol.control)
    throw std::invalid_argument("protocol arms must be distinct classes");
  std::vector<CohortMember> cohort;
  for (const auto& r : records) {
    if (r.age < protocol.min_age) continue;
    if (r.line_of_therapy != protocol.eligible_line) continue;
    const RegimenClass cls = classify_regimen(r.drugs, protocol.class_map);
    if (cls == protocol.experimental) cohort.push_back({r, 1});
    else if (cls == protocol.control) cohort.push_back({r, 0});
  }
  if (cohort.empty()) throw ValidationError("no eligible patients for the configured protocol");
  return cohort;
}

PropensityFit fit_propensity(const std::vector<CohortMember>& cohort,
                             const std::vector<std::string>& covariates) {
  if (covariates.empty()) throw std::invalid_argument("propensity covariate list is empty");
  const std::size_t n = cohort.size();
  bool any_exp = false, any_ctl = false;
  for (const auto& m : cohort) (m.arm == 1 ? any_exp : any_ctl) = true;
  if (!any_exp || !any_ctl)
    throw ValidationError("propensity fit requires patients in both arms");

  const std::size_t p = covariates.size() + 1;
  std::vector<std::vector<double>> design(n, std::vector<double>(p, 1.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < covariates.size(); ++j)
      design[i][j + 1] = covariate_value(cohort[i].record, covariates[j]);

  PropensityFit fit;
  fit.coef.assign(p, 0.0);
  std::vector<double> prob(n, 0.5);
  for (int iter = 1; iter <= 100; ++iter) {
    fit.iterations = iter;
    std::vector<double> grad(p, 0.0);
    std::vector<std::vector<double>> hess(p, std::vector<double>(p, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      double eta = 0.0;
      for (std::size_t j = 0; j < p; ++j) eta += design[i][j] * fit.coef[j];
      prob[i] = sigmoid(eta);
      const double resid = static_cast<double>(cohort[i].arm) - prob[i];
      const double w = std::max(prob[i] * (1.0 - prob[i]), 1e-10);
      for (std::size_t j = 0; j < p; ++j) {
        grad[j] += design[i][j] * resid;
        for (std::size_t k = j; k < p; ++k) hess[j][k] += w * design[i][j] * design[i][k];
      }
    }
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t k = 0; k < j; ++k) hess[j][k] = hess[k][j];
    double gnorm = 0.0;
    for (double g : grad) gnorm = std::max(gnorm, std::abs(g));
    if (gnorm <= 1e-8) break;
    const std::vector<double> step = solve_linear(hess, grad);
    for (std::size_t j = 0; j < p; ++j) fit.coef[j] += step[j];
    for (double c : fit.coef)
      if (std::abs(c) > 20.0)
        throw ValidationError("propensity model did not converge (separation suspected)");
  }
  fit.score = std::move(prob);
  return fit;
}

std::vector<MatchedPair> match_one_to_one(const std::vector<CohortMember>& cohort,
                                          const std::vector<double>& score,
                                          std::optional<double> caliper) {
  if (score.size() != cohort.size())
    throw std::invalid_argument("score vector does not align with the cohort");
  std::vector<std::size_t> experimental, control;
  for (std::size_t i = 0; i < cohort.size(); ++i)
    (cohort[i].arm == 1 ? experimental : control).push_back(i);
  if (experimental.empty() || control.empty())
    throw ValidationError("matching requires patients in both arms");

  std::vector<double> lg(score.size());
  for (std::size_t i = 0; i < score.size(); ++i) lg[i] = logit(score[i]);

  std::sort(experimental.begin(), experimental.end(), [&](std::size_t a, std::size_t b) {
    if (lg[a] != lg[b]) return lg[a] > lg[b];
    return cohort[a].record.patient_id < cohort[b].record.patient_id;
  });

  std::vector<bool> used(cohort.size(), false);
  std::vector<MatchedPair> pairs;
  for (std::size_t e : experimental) {
    std::size_t best = cohort.size();
    double best_dist = kInf;
    for (std::size_t c : control) {
      if (used[c]) continue;
      const double dist = std::abs(lg[e] - lg[c]);
      if (dist < best_dist ||
          (dist == best_dist && best < cohort.size() &&
           cohort[c].record.patient_id < cohort[best].record.patient_id)) {
        best = c;
        best_dist = dist;
      }
    }
    if (best == cohort.size()) break;  // controls exhausted
    if (caliper && best_dist > *caliper) continue;
    used[best] = true;
    pairs.push_back({e, best, best_dist});
  }
  if (pairs.empty()) throw ValidationError("matching produced zero pairs");
  return pairs;
}

Outcome derive_outcome(const EHRRecord& record) {
  double end = record.last_followup;
  if (record.second_line_start && *record.second_line_start < end) end = *record.second_line_start;
  Outcome out;
  if (record.death_date && *record.death_date <= end) {
    end = *record.death_date;
    out.event = true;
  }
  out.time_months = (end - record.start_date) / kDaysPerMonth;
  if (!(out.time_months > 0.0))
    throw ValidationError("patient '" + record.patient_id + "': nonpositive follow-up time");
  return out;
}

EmulationResult emulate(const std::vector<EHRRecord>& records,
                        const EmulationProtocol& protocol) {
  if (protocol.n_trials < 1) throw std::invalid_argument("n_trials must be at least 1");
  EmulationResult result;

  std::vector<CohortMember> cohort = filter_eligible(records, protocol);
  std::vector<CohortMember> screened;
  std::vector<Outcome> outcomes;
  for (auto& m : cohort) {
    try {
      outcomes.push_back(derive_outcome(m.record));
      screened.push_back(std::move(m));
    } catch (const ValidationError& e) {
      result.warnings.push_back(std::string(e.what()) + "; record dropped");
    }
  }
  if (screened.empty())
    throw ValidationError("no eligible patients with positive follow-up time");

  std::vector<std::size_t> order(screened.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(splitmix64(protocol.seed));
  for (std::size_t i = order.size(); i-- > 1;)
    std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i + 1))]);

  for (int fold = 0; fold < protocol.n_trials; ++fold) {
    std::vector<CohortMember> members;
    std::vector<Outcome> member_outcomes;
    for (std::size_t i = static_cast<std::size_t>(fold); i < order.size();
         i += static_cast<std::size_t>(protocol.n_trials)) {
      members.push_back(screened[order[i]]);
      member_outcomes.push_back(outcomes[order[i]]);
    }
    char num[16];
    std::snprintf(num, sizeof(num), "_%02d", fold + 1);
    const std::string id = protocol.trial_prefix + num;
    if (members.empty()) throw ValidationError(id + ": fold is empty");

    EmulatedTrial trial;
    trial.trial_id = id;
    for (const auto& m : members) ++(m.arm == 1 ? trial.pool_experimental : trial.pool_control);

    PropensityFit fit;
    std::vector<MatchedPair> pairs;
    try {
      fit = fit_propensity(members, protocol.covariates);
      pairs = match_one_to_one(members, fit.score, protocol.caliper);
    } catch (const ValidationError& e) {
      throw ValidationError(id + ": " + e.what());
    }

    std::vector<std::size_t> matched_members;
    for (const auto& pr : pairs) {
      matched_members.push_back(pr.experimental);
      matched_members.push_back(pr.control);
    }
    for (std::size_t idx : matched_members) {
      const auto& m = members[idx];
      const auto& o = member_outcomes[idx];
      trial.subjects.push_back({m.record.patient_id, m.arm, m.record.biomarker, m.record.age,
                                o.time_months, o.event ? 1 : 0});
    }

    for (const auto& cov : protocol.covariates) {
      std::vector<double> pre_e, pre_c, post_e, post_c;
      for (const auto& m : members)
        (m.arm == 1 ? pre_e : pre_c).push_back(covariate_value(m.record, cov));
      for (std::size_t idx : matched_members) {
        const auto& m = members[idx];
        (m.arm == 1 ? post_e : post_c).push_back(covariate_value(m.record, cov));
      }
      trial.balance.push_back({cov, standardized_mean_difference(pre_e, pre_c),
                               standardized_mean_difference(post_e, post_c)});
    }
    result.trials.push_back(std::move(trial));
  }
  return result;
}

std::vector<EHRRecord> generate_synthetic_ehr(const SyntheticEHRConfig& config,
                                              std::uint64_t seed) {
  if (config.n < 0) throw std::invalid_argument("synthetic EHR size must be nonnegative");
  if (!(config.sd_age > 0.0)) throw std::invalid_argument("sd_age must be positive");
  if (!(config.prob_biomarker >= 0.0 && config.prob_biomarker <= 1.0))
    throw std::invalid_argument("prob_biomarker must lie in [0,1]");
  if (!(config.prob_line_two >= 0.0 && config.prob_line_two <= 1.0))
    throw std::invalid_argument("prob_line_two must lie in [0,1]");
  if (!(config.shape > 0.0)) throw std::invalid_argument("shape must be positive");
  if (!(config.followup_days > 0.0)) throw std::invalid_argument("followup_days must be positive");
  if (config.second_line_daily_rate < 0.0)
    throw std::invalid_argument("second_line_daily_rate must be nonnegative");
  if (config.experimental_drugs.empty() || config.control_drugs.empty())
    throw std::invalid_argument("both arm drug lists must be nonempty");

  Rng rng(splitmix64(seed));
  std::vector<EHRRecord> records;
  records.reserve(static_cast<std::size_t>(config.n));
  for (int i = 0; i < config.n; ++i) {
    EHRRecord r;
    char id[32];
    std::snprintf(id, sizeof(id), "P%05d", i + 1);
    r.patient_id = id;
    r.age = round_half_up(std::clamp(config.mean_age + config.sd_age * rng.normal(), 18.0, 90.0), 1);
    r.biomarker = rng.uniform() < config.prob_biomarker ? 1 : 0;
    r.line_of_therapy = rng.uniform() < config.prob_line_two ? 2 : 1;

    const double assign_logit = config.assign_intercept +
                                config.assign_age * (r.age - 60.0) / 10.0 +
                                config.assign_biomarker * r.biomarker;
    const int arm = rng.uniform() < sigmoid(assign_logit) ? 1 : 0;
    r.drugs = arm == 1 ? config.experimental_drugs : config.control_drugs;

    const double log_hazard = config.log_base_hazard + config.biomarker_loghr * r.biomarker +
                              config.treatment_loghr * arm +
                              config.interaction_loghr * arm * r.biomarker;
    const double u = rng.uniform_pos();
    const double death_days = std::max(
        1.0, round_half_up(std::pow(-std::log(u) / std::exp(log_hazard), 1.0 / config.shape)));

    double second_days = kInf;
    if (config.second_line_daily_rate > 0.0)
      second_days =
          std::max(1.0, round_half_up(-std::log(rng.uniform_pos()) / config.second_line_daily_rate));

    r.start_date = std::floor(rng.uniform() * 365.0);
    r.last_followup = r.start_date + config.followup_days;
    if (death_days <= config.followup_days) r.death_date = r.start_date + death_days;
    if (second_days < death_days && second_days <= config.followup_days)
      r.second_line_start = r.start_date + second_days;
    records.push_back(std::move(r));
  }
  return records;
}

namespace {

std::vector<std::string> split_drugs(const std::string& field) {
  std::vector<std::string> drugs;
  std::string item;
  std::istringstream stream(field);
  while (std::getline(stream, item, ';'))
    if (!item.empty()) drugs.push_back(item);
  return drugs;
}

std::string format_day(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::vector<EHRRecord> read_ehr_csv(std::istream& in, const std::string& source) {
  const csv::Table table = csv::read(in, source);
  const std::size_t c_id = csv::column(table, "patient_id");
  const std::size_t c_age = csv::column(table, "age");
  const std::size_t c_bio = csv::column(table, "biomarker");
  const std::size_t c_drugs = csv::column(table, "drugs");
  const std::size_t c_line = csv::column(table, "line");
  const std::size_t c_start = csv::column(table, "start");
  const std::size_t c_second = csv::column(table, "second_line");
  const std::size_t c_death = csv::column(table, "death");
  const std::size_t c_fup = csv::column(table, "last_followup");

  std::vector<EHRRecord> records;
  records.reserve(table.rows.size());
  for (std::size_t row = 0; row < table.rows.size(); ++row) {
    const auto& cells = table.rows[row];
    EHRRecord r;
    r.patient_id = cells[c_id];
    if (r.patient_id.empty())
      throw ValidationError(table.where(row) + ": empty patient_id");
    r.age = csv::to_double(table, row, c_age);
    r.biomarker = csv::to_int(table, row, c_bio);
    if (r.biomarker != 0 && r.biomarker != 1)
      throw ValidationError(table.where(row) + ": biomarker must be 0 or 1");
    r.drugs = split_drugs(cells[c_drugs]);
    r.line_of_therapy = csv::to_int(table, row, c_line);
    if (r.line_of_therapy < 1)
      throw ValidationError(table.where(row) + ": line must be a positive integer");
    r.start_date = csv::to_double(table, row, c_start);
    if (!cells[c_second].empty()) r.second_line_start = csv::to_double(table, row, c_second);
    if (!cells[c_death].empty()) r.death_date = csv::to_double(table, row, c_death);
    r.last_followup = csv::to_double(table, row, c_fup);
    if (r.last_followup < r.start_date)
      throw ValidationError(table.where(row) + ": last_followup precedes start");
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<EHRRecord> read_ehr_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open EHR file '" + path + "'");
  return read_ehr_csv(in, path);
}

void write_ehr_csv(std::ostream& out, const std::vector<EHRRecord>& records) {
  out << "patient_id,age,biomarker,drugs,line,start,second_line,death,last_followup\n";
  for (const auto& r : records) {
    out << r.patient_id << ',' << format_day(r.age) << ',' << r.biomarker << ',';
    for (std::size_t i = 0; i < r.drugs.size(); ++i) {
      if (i) out << ';';
      out << r.drugs[i];
    }
    out << ',' << r.line_of_therapy << ',' << format_day(r.start_date) << ',';
    if (r.second_line_start) out << format_day(*r.second_line_start);
    out << ',';
    if (r.death_date) out << format_day(*r.death_date);
    out << ',' << format_day(r.last_followup) << '\n';
  }
}

}  // namespace bnmr::emulation
