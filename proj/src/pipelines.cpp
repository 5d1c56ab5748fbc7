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

#include "bnmr/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "bnmr/errors.hpp"
#include "bnmr/stats.hpp"

namespace bnmr::pipelines {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Weibull sufficient statistics for one study, one slot per
// (biomarker, arm) cell. sum(t^shape) depends on the current shape, so it
// is memoized under the last two shape values seen; rejected proposals
// then fall back to the still-cached accepted value.
struct CellSuffStats {
  double events[4] = {0, 0, 0, 0};
  double sum_log_t[4] = {0, 0, 0, 0};
  std::vector<double> times[4];
  double key[2] = {-1.0, -1.0};
  double pow_sum[2][4] = {{0, 0, 0, 0}, {0, 0, 0, 0}};
  int last = 0;

  explicit CellSuffStats(const IPDStudy& study) {
    for (const auto& s : study.subjects) {
      const int cell = s.biomarker * 2 + s.arm;
      times[cell].push_back(s.time);
      if (s.event) {
        events[cell] += 1.0;
        sum_log_t[cell] += std::log(s.time);
      }
    }
  }

  const double* lookup(double shape) {
    if (key[0] == shape) {
      last = 0;
      return pow_sum[0];
    }
    if (key[1] == shape) {
      last = 1;
      return pow_sum[1];
    }
    const int slot = 1 - last;
    for (int c = 0; c < 4; ++c) {
      double total = 0.0;
      for (double t : times[c]) total += std::pow(t, shape);
      pow_sum[slot][c] = total;
    }
    key[slot] = shape;
    last = slot;
    return pow_sum[slot];
  }

  double loglik(const IpdStudyParams& q) {
    const double* pw = lookup(q.shape);
    const double log_shape = std::log(q.shape);
    double lp = 0.0;
    for (int c = 0; c < 4; ++c) {
      if (times[c].empty()) continue;
      const double ls = linear_predictor(q, c >> 1, c & 1);
      lp += events[c] * (ls + log_shape) + (q.shape - 1.0) * sum_log_t[c] - std::exp(ls) * pw[c];
    }
    return lp;
  }
};

struct IpdOffsets {
  int shape = 0, mu_neg = 0, mu_shift = 0, u_neg = 0, u_pos = 0;
};

struct Layout {
  std::vector<mcmc::ParamDef> defs;
  int n_treat = 0;
  int idx_dneg0 = 0;
  int idx_dshift0 = 0;
  int idx_tau = -1;   // -1 when tau is fixed
  double center = 0;  // mean biomarker-positive fraction across rows
  std::vector<IpdOffsets> ipd;
};

// Moment-based starting point for a study's log hazard scale: the
// exponential-rate MLE, clamped to a sane range.
double moment_log_scale(const IPDStudy& study) {
  double events = 0.0, total_time = 0.0;
  for (const auto& s : study.subjects) {
    events += s.event ? 1.0 : 0.0;
    total_time += s.time;
  }
  return std::clamp(std::log(std::max(events, 0.5) / total_time), -10.0, 3.0);
}

Layout build_layout(const Network& net, const ModelSpec& spec) {
  Layout lay;
  lay.n_treat = static_cast<int>(net.treatments.size());
  // The likelihood pins each treatment's effect near the population mix of
  // the trials, so the sampler works in a_k = d_neg[k] + center * d_shift[k]
  // to break the strong anti-correlation between the pair. The map is unit
  // triangular (Jacobian 1) and is undone on the stored draws.
  {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& row : net.ad) sum += row.prop_pos, ++n;
    for (const auto& study : net.ipd) sum += ipd_ppos(study), ++n;
    lay.center = n ? sum / static_cast<double>(n) : 0.0;
  }
  char name[96];
  for (int id = 2; id <= lay.n_treat; ++id) {
    std::snprintf(name, sizeof(name), "d_neg[%d]", id);
    lay.defs.push_back({name, mcmc::Transform::Identity, 0.0, 0.5, 2.0});
  }
  lay.idx_dshift0 = static_cast<int>(lay.defs.size());
  for (int id = 2; id <= lay.n_treat; ++id) {
    std::snprintf(name, sizeof(name), "d_shift[%d]", id);
    lay.defs.push_back({name, mcmc::Transform::Identity, 0.0, 0.5, 2.0});
  }
  if (!spec.fixed_tau) {
    lay.idx_tau = static_cast<int>(lay.defs.size());
    lay.defs.push_back({"tau", mcmc::Transform::ScaledLogit, 0.15 * spec.priors.tau_upper, 0.8,
                        spec.priors.tau_upper});
  }
  if (spec.kind != ModelKind::OneStage) return lay;
  for (const auto& study : net.ipd) {
    IpdOffsets off;
    const char* sid = study.study_id.c_str();
    off.shape = static_cast<int>(lay.defs.size());
    std::snprintf(name, sizeof(name), "shape[%s]", sid);
    lay.defs.push_back({name, mcmc::Transform::Log, 1.0, 0.3, 2.0});
    off.mu_neg = static_cast<int>(lay.defs.size());
    std::snprintf(name, sizeof(name), "mu_neg[%s]", sid);
    lay.defs.push_back({name, mcmc::Transform::Identity, moment_log_scale(study), 0.5, 2.0});
    off.mu_shift = static_cast<int>(lay.defs.size());
    std::snprintf(name, sizeof(name), "mu_shift[%s]", sid);
    lay.defs.push_back({name, mcmc::Transform::Identity, 0.0, 0.5, 2.0});
    off.u_neg = static_cast<int>(lay.defs.size());
    std::snprintf(name, sizeof(name), "u_neg[%s]", sid);
    lay.defs.push_back({name, mcmc::Transform::Identity, 0.0, 1.0, 2.0});
    off.u_pos = static_cast<int>(lay.defs.size());
    std::snprintf(name, sizeof(name), "u_pos[%s]", sid);
    lay.defs.push_back({name, mcmc::Transform::Identity, 0.0, 1.0, 2.0});
    lay.ipd.push_back(off);
  }
  return lay;
}

// Posterior density over the sampler coordinates. Copies carry their own
// sufficient-statistic caches, so each chain works on private state.
class JointTarget {
 public:
  JointTarget(const Network& net, const ModelSpec& spec)
      : net_(&net), spec_(spec), lay_(build_layout(net, spec)) {
    const std::size_t K = net.treatments.size();
    scratch_.basic_neg.assign(K + 1, 0.0);
    scratch_.basic_shift.assign(K + 1, 0.0);
    scratch_.ad_effect.assign(net.ad.size(), 0.0);
    scratch_.ipd.resize(lay_.ipd.size());
    cells_.reserve(lay_.ipd.size());
    for (std::size_t s = 0; s < lay_.ipd.size(); ++s) cells_.emplace_back(net.ipd[s]);
  }

  const Layout& layout() const { return lay_; }

  double operator()(std::span<const double> x) {
    auto& p = scratch_;
    for (int id = 2; id <= lay_.n_treat; ++id) {
      const double shift = x[static_cast<std::size_t>(lay_.idx_dshift0 + id - 2)];
      p.basic_neg[static_cast<std::size_t>(id)] =
          x[static_cast<std::size_t>(lay_.idx_dneg0 + id - 2)] - lay_.center * shift;
      p.basic_shift[static_cast<std::size_t>(id)] = shift;
    }
    p.tau = spec_.fixed_tau ? *spec_.fixed_tau : x[static_cast<std::size_t>(lay_.idx_tau)];
    const double sd = std::max(p.tau, kTauFloor);

    double lp = 0.0;
    for (const auto& row : net_->ad) {
      // Normal-normal: the row's random effect integrates out exactly.
      const double md = consistency_mean(p, row.treatment_k, row.treatment_l, row.prop_pos);
      const double s = std::sqrt(row.sigma * row.sigma + p.tau * p.tau);
      lp += normal_logpdf(row.y, md, s);
    }
    for (std::size_t s = 0; s < lay_.ipd.size(); ++s) {
      const auto& study = net_->ipd[s];
      const auto& off = lay_.ipd[s];
      auto& q = p.ipd[s];
      q.shape = x[static_cast<std::size_t>(off.shape)];
      q.log_base_neg = x[static_cast<std::size_t>(off.mu_neg)];
      q.base_shift = x[static_cast<std::size_t>(off.mu_shift)];
      const double u_neg = x[static_cast<std::size_t>(off.u_neg)];
      const double u_pos = x[static_cast<std::size_t>(off.u_pos)];
      const double md_neg = consistency_mean(p, study.treatment_k, study.treatment_l, 0.0);
      const double md_pos = consistency_mean(p, study.treatment_k, study.treatment_l, 1.0);
      q.effect_neg = md_neg + sd * u_neg;
      q.effect_shift = (md_pos + sd * u_pos) - q.effect_neg;
      lp += -kLog2Pi - 0.5 * (u_neg * u_neg + u_pos * u_pos);
      lp += cells_[s].loglik(q);
    }
    lp += log_prior(*net_, spec_, p);
    return lp;
  }

 private:
  const Network* net_;
  ModelSpec spec_;
  Layout lay_;
  ModelParameters scratch_;
  std::vector<CellSuffStats> cells_;
};

std::uint64_t digest_network(const Network& net) {
  std::ostringstream s;
  for (const auto& t : net.treatments) s << "t|" << t.id << '|' << t.label << '\n';
  for (const auto& r : net.ad)
    s << "ad|" << r.study_id << '|' << r.treatment_k << '|' << r.treatment_l << '|' << g17(r.y)
      << '|' << g17(r.sigma) << '|' << g17(r.prop_pos) << '\n';
  for (const auto& st : net.ipd) {
    s << "ipd|" << st.study_id << '|' << st.treatment_k << '|' << st.treatment_l << '\n';
    for (const auto& sub : st.subjects)
      s << "s|" << sub.subject_id << '|' << sub.arm << '|' << sub.biomarker << '|' << g17(sub.time)
        << '|' << (sub.event ? 1 : 0) << '\n';
  }
  return fnv1a(s.str());
}

// Hash of everything defining the run except the data and the model kind;
// the reduction identities (a two-stage fit of an aggregate-only bundle is
// the aggregate model) then hash alike.
std::uint64_t hash_config(const ModelSpec& spec, const mcmc::SamplerConfig& cfg) {
  std::ostringstream s;
  s << "priors|" << g17(spec.priors.shape_prior_shape) << '|' << g17(spec.priors.shape_prior_rate)
    << '|' << g17(spec.priors.normal_variance) << '|' << g17(spec.priors.tau_upper) << '\n';
  s << "fixed_tau|" << (spec.fixed_tau ? g17(*spec.fixed_tau) : std::string("none")) << '\n';
  s << "sampler|" << cfg.n_chains << '|' << cfg.burn_in << '|' << cfg.keep << '|' << cfg.thin << '|'
    << cfg.seed << '|' << g17(cfg.target_accept) << '|' << cfg.adapt_window << '|'
    << g17(cfg.init_jitter) << '\n';
  return fnv1a(s.str());
}

bool is_contrast_param(const std::string& name) {
  return name.rfind("d_neg[", 0) == 0 || name.rfind("d_shift[", 0) == 0;
}

FitSummary summarize_fit(const Network& net, const ModelSpec& spec,
                         const mcmc::SamplerConfig& cfg, const mcmc::Draws& draws,
                         const std::string& model) {
  FitSummary out;
  out.model = model;
  out.seed = cfg.seed;
  out.config_hash = hex64(hash_config(spec, cfg));
  out.data_digest = hex64(digest_network(net));

  for (std::size_t a = 0; a < net.treatments.size(); ++a) {
    for (std::size_t b = a + 1; b < net.treatments.size(); ++b) {
      const int k = net.treatments[a].id;
      const int l = net.treatments[b].id;
      const std::string label = net.treatments[b].label + " vs " + net.treatments[a].label;
      for (const Subgroup sg : {Subgroup::Positive, Subgroup::Negative}) {
        const ContrastEstimate est = contrast_hr(draws, k, l, sg);
        out.contrasts.push_back(
            {k, l, label, sg, est.hr_median, est.hr_mean, est.lower, est.upper});
      }
    }
  }

  double rhat_max = 0.0, ess_min = std::numeric_limits<double>::infinity();
  bool rhat_nan = false;
  for (int i = 0; i < draws.n_params(); ++i) {
    ParameterDiagnostic diag;
    diag.name = draws.names[static_cast<std::size_t>(i)];
    diag.summary = mcmc::summarize(draws, i);
    diag.rhat = mcmc::rhat(draws, i);
    diag.ess = mcmc::ess(draws, i);
    if (is_contrast_param(diag.name)) {
      if (std::isnan(diag.rhat)) rhat_nan = true;
      else rhat_max = std::max(rhat_max, diag.rhat);
      ess_min = std::min(ess_min, diag.ess);
    }
    out.parameters.push_back(std::move(diag));
  }
  out.rhat_max = rhat_nan ? kNaN : rhat_max;
  out.ess_min = ess_min;
  out.converged = !rhat_nan && rhat_max <= 1.05 && ess_min >= 400.0;

  if (spec.fixed_tau) {
    out.tau_fixed = true;
    const double v = *spec.fixed_tau;
    out.tau = {v, 0.0, v, v, v};
  } else {
    out.tau = mcmc::summarize(draws, draws.index_of("tau"));
  }
  return out;
}

FitResult run_fit(const Network& net, const ModelSpec& spec, const mcmc::SamplerConfig& cfg,
                  const std::string& model) {
  JointTarget prototype(net, spec);
  const std::vector<mcmc::ParamDef> defs = prototype.layout().defs;
  mcmc::TargetFactory factory = [prototype](int) { return mcmc::LogDensity(prototype); };
  FitResult result;
  result.draws = mcmc::run_chains(factory, defs, cfg);
  // Undo the sampler's centering so the stored columns are d_neg itself.
  const Layout& lay = prototype.layout();
  if (lay.center != 0.0) {
    const std::size_t n_params = result.draws.names.size();
    for (auto& chain : result.draws.chains) {
      for (long i = 0; i < result.draws.kept; ++i) {
        double* row = chain.data() + static_cast<std::size_t>(i) * n_params;
        for (int id = 2; id <= lay.n_treat; ++id)
          row[lay.idx_dneg0 + id - 2] -= lay.center * row[lay.idx_dshift0 + id - 2];
      }
    }
  }
  result.summary = summarize_fit(net, spec, cfg, result.draws, model);
  return result;
}

ADStudyRecord pseudo_to_record(const PseudoADRow& row, const std::string& study_id,
                               long long n_pos, long long n_neg) {
  ADStudyRecord r;
  r.study_id = study_id;
  r.treatment_k = row.treatment_k;
  r.treatment_l = row.treatment_l;
  r.y = row.y;
  r.sigma = row.sigma;
  r.prop_pos = row.ppos;
  const double z = normal_quantile(0.975);
  r.hr = std::exp(row.y);
  r.ci_low = std::exp(row.y - z * row.sigma);
  r.ci_high = std::exp(row.y + z * row.sigma);
  r.n_pos = n_pos;
  r.n_neg = n_neg;
  r.n_unknown = 0;
  r.n_total = n_pos + n_neg;
  r.flipped = false;
  return r;
}

}  // namespace

StageOneMode stage_one_mode_from_label(const std::string& label) {
  if (label == "pooled") return StageOneMode::Pooled;
  if (label == "subgroup") return StageOneMode::Subgroup;
  throw std::invalid_argument("unknown stage-one mode '" + label + "' (expected pooled or subgroup)");
}

std::string stage_one_mode_label(StageOneMode mode) {
  return mode == StageOneMode::Pooled ? "pooled" : "subgroup";
}

std::string subgroup_label(Subgroup s) { return s == Subgroup::Positive ? "+ve" : "-ve"; }

std::vector<mcmc::ParamDef> model_parameters(const Network& net, const ModelSpec& spec) {
  return build_layout(net, spec).defs;
}

mcmc::TargetFactory make_target(const Network& net, const ModelSpec& spec) {
  JointTarget prototype(net, spec);
  return [prototype](int) { return mcmc::LogDensity(prototype); };
}

FitResult fit_model1(const Network& net, const ModelSpec& spec,
                     const mcmc::SamplerConfig& config) {
  if (!net.ipd.empty())
    throw std::invalid_argument("the aggregate-only model takes a network without participant data");
  ModelSpec s = spec;
  s.kind = ModelKind::AdOnly;
  return run_fit(net, s, config, "model1");
}

std::vector<PseudoADRow> stage_one_fit(const IPDStudy& study, StageOneMode mode,
                                       const mcmc::SamplerConfig& config,
                                       const PriorSettings& priors) {
  long long arm_n[2] = {0, 0}, arm_events[2] = {0, 0};
  long long n_pos = 0;
  for (const auto& s : study.subjects) {
    ++arm_n[s.arm];
    if (s.event) ++arm_events[s.arm];
    n_pos += s.biomarker;
  }
  for (int arm = 0; arm < 2; ++arm) {
    if (arm_events[arm] == 0) {
      const int id = arm == 0 ? study.treatment_k : study.treatment_l;
      std::ostringstream msg;
      msg << "study '" << study.study_id << "': arm " << arm << " (treatment id " << id
          << ") has zero events";
      throw ValidationError(msg.str());
    }
  }

  CellSuffStats cells(study);
  const double sd0 = std::sqrt(priors.normal_variance);
  const double mu_init = moment_log_scale(study);
  const double ppos = ipd_ppos(study);
  const bool has_pos = n_pos > 0;
  const bool has_neg = n_pos < static_cast<long long>(study.subjects.size());

  mcmc::SamplerConfig cfg = config;
  cfg.seed = splitmix64(config.seed ^ fnv1a(study.study_id));

  const auto run = [&](const std::vector<mcmc::ParamDef>& defs,
                       const std::function<double(std::span<const double>, CellSuffStats&)>& dens) {
    CellSuffStats proto = cells;
    mcmc::TargetFactory factory = [proto, dens](int) mutable {
      CellSuffStats own = proto;
      return mcmc::LogDensity(
          [own, dens](std::span<const double> x) mutable { return dens(x, own); });
    };
    return mcmc::run_chains(factory, defs, cfg);
  };

  std::vector<PseudoADRow> rows;
  const auto make_row = [&](double y, double sigma, double p, const char* origin) {
    rows.push_back({study.study_id, study.treatment_k, study.treatment_l, y, sigma, p, origin});
  };

  if (mode == StageOneMode::Pooled || !has_pos || !has_neg) {
    // One effect over every subject; biomarker enters only through the
    // study-level fraction attached to the row.
    const std::vector<mcmc::ParamDef> defs = {
        {"shape", mcmc::Transform::Log, 1.0, 0.3, 2.0},
        {"mu", mcmc::Transform::Identity, mu_init, 0.5, 2.0},
        {"delta", mcmc::Transform::Identity, 0.0, 0.5, 2.0}};
    const auto dens = [priors, sd0](std::span<const double> x, CellSuffStats& c) {
      IpdStudyParams q;
      q.shape = x[0];
      q.log_base_neg = x[1];
      q.base_shift = 0.0;
      q.effect_neg = x[2];
      q.effect_shift = 0.0;
      return gamma_logpdf(q.shape, priors.shape_prior_shape, priors.shape_prior_rate) +
             normal_logpdf(q.log_base_neg, 0.0, sd0) + normal_logpdf(q.effect_neg, 0.0, sd0) +
             c.loglik(q);
    };
    const mcmc::Draws draws = run(defs, dens);
    const mcmc::Summary delta = mcmc::summarize(draws, 2);
    if (mode == StageOneMode::Pooled) {
      make_row(delta.mean, delta.sd, ppos, "stage-one pooled");
    } else {
      make_row(delta.mean, delta.sd, has_pos ? 1.0 : 0.0, "stage-one subgroup");
    }
    return rows;
  }

  // Both subgroups present: subgroup-specific effects with a baseline shift.
  const std::vector<mcmc::ParamDef> defs = {
      {"shape", mcmc::Transform::Log, 1.0, 0.3, 2.0},
      {"mu", mcmc::Transform::Identity, mu_init, 0.5, 2.0},
      {"beta", mcmc::Transform::Identity, 0.0, 0.5, 2.0},
      {"delta_neg", mcmc::Transform::Identity, 0.0, 0.5, 2.0},
      {"delta_pos", mcmc::Transform::Identity, 0.0, 0.5, 2.0}};
  const auto dens = [priors, sd0](std::span<const double> x, CellSuffStats& c) {
    IpdStudyParams q;
    q.shape = x[0];
    q.log_base_neg = x[1];
    q.base_shift = x[2];
    q.effect_neg = x[3];
    q.effect_shift = x[4] - x[3];
    return gamma_logpdf(q.shape, priors.shape_prior_shape, priors.shape_prior_rate) +
           normal_logpdf(q.log_base_neg, 0.0, sd0) + normal_logpdf(q.base_shift, 0.0, sd0) +
           normal_logpdf(q.effect_neg, 0.0, sd0) + normal_logpdf(x[4], 0.0, sd0) + c.loglik(q);
  };
  const mcmc::Draws draws = run(defs, dens);
  const mcmc::Summary pos = mcmc::summarize(draws, 4);
  const mcmc::Summary neg = mcmc::summarize(draws, 3);
  make_row(pos.mean, pos.sd, 1.0, "stage-one subgroup");
  make_row(neg.mean, neg.sd, 0.0, "stage-one subgroup");
  return rows;
}

FitResult fit_model2(const Network& net, StageOneMode mode, const ModelSpec& spec,
                     const mcmc::SamplerConfig& config) {
  std::vector<ADStudyRecord> rows = net.ad;
  for (const auto& study : net.ipd) {
    long long n_pos = 0;
    for (const auto& s : study.subjects) n_pos += s.biomarker;
    const long long n_neg = static_cast<long long>(study.subjects.size()) - n_pos;
    for (const auto& pr : stage_one_fit(study, mode, config, spec.priors)) {
      std::string id = pr.study_id;
      long long row_pos = n_pos, row_neg = n_neg;
      if (mode == StageOneMode::Subgroup) {
        id += pr.ppos == 1.0 ? " [+ve]" : " [-ve]";
        row_pos = pr.ppos == 1.0 ? n_pos : 0;
        row_neg = pr.ppos == 1.0 ? 0 : n_neg;
      }
      rows.push_back(pseudo_to_record(pr, id, row_pos, row_neg));
    }
  }
  Network assembled = build_network(net.treatments, std::move(rows), {});
  ModelSpec s = spec;
  s.kind = ModelKind::TwoStage;
  return run_fit(assembled, s, config, "model2");
}

FitResult fit_model3(const Network& net, const ModelSpec& spec,
                     const mcmc::SamplerConfig& config) {
  ModelSpec s = spec;
  s.kind = ModelKind::OneStage;
  return run_fit(net, s, config, "model3");
}

ContrastEstimate contrast_hr(const mcmc::Draws& draws, int k, int l, Subgroup subgroup,
                             double level) {
  if (k == l) throw std::invalid_argument("contrast_hr: treatments must differ");
  if (k < 1 || l < 1) throw std::invalid_argument("contrast_hr: treatment ids start at 1");
  if (!(level > 0.0 && level < 1.0)) throw std::domain_error("contrast_hr: level outside (0,1)");
  const auto column = [&draws](const char* base, int id) {
    if (id == 1) return -1;  // reference treatment contributes zero
    char name[48];
    std::snprintf(name, sizeof(name), "%s[%d]", base, id);
    return draws.index_of(name);
  };
  const int neg_k = column("d_neg", k);
  const int neg_l = column("d_neg", l);
  const int shift_k = subgroup == Subgroup::Positive ? column("d_shift", k) : -1;
  const int shift_l = subgroup == Subgroup::Positive ? column("d_shift", l) : -1;

  std::vector<double> log_hr;
  log_hr.reserve(static_cast<std::size_t>(draws.n_chains()) * static_cast<std::size_t>(draws.kept));
  double hr_mean = 0.0;
  for (int c = 0; c < draws.n_chains(); ++c) {
    for (long it = 0; it < draws.kept; ++it) {
      double v = 0.0;
      if (neg_l >= 0) v += draws.value(c, it, neg_l);
      if (neg_k >= 0) v -= draws.value(c, it, neg_k);
      if (shift_l >= 0) v += draws.value(c, it, shift_l);
      if (shift_k >= 0) v -= draws.value(c, it, shift_k);
      log_hr.push_back(v);
      hr_mean += std::exp(v);
    }
  }
  if (log_hr.empty()) throw std::invalid_argument("contrast_hr: no draws");
  hr_mean /= static_cast<double>(log_hr.size());

  // Median and equal-tailed bounds on the log scale; exponentiation keeps
  // the antisymmetry HR(k,l) = 1/HR(l,k) exact.
  std::sort(log_hr.begin(), log_hr.end());
  const double alpha = (1.0 - level) / 2.0;
  ContrastEstimate est;
  est.hr_median = std::exp(quantile_sorted(log_hr, 0.5));
  est.hr_mean = hr_mean;
  est.lower = std::exp(quantile_sorted(log_hr, alpha));
  est.upper = std::exp(quantile_sorted(log_hr, 1.0 - alpha));
  return est;
}

double width_reduction(std::pair<double, double> a, std::pair<double, double> b) {
  if (!(a.second > a.first)) throw ValidationError("width_reduction: baseline interval is degenerate");
  if (!(b.second > b.first))
    throw ValidationError("width_reduction: comparison interval is degenerate");
  return 100.0 * (1.0 - (b.second - b.first) / (a.second - a.first));
}

namespace {

struct ForestRow {
  const FitSummary* fit;
  const ContrastSummary* contrast;
};

void write_forest_rows(std::vector<ForestRow> rows, std::ostream& out) {
  std::stable_sort(rows.begin(), rows.end(), [](const ForestRow& a, const ForestRow& b) {
    if (a.contrast->k != b.contrast->k) return a.contrast->k < b.contrast->k;
    if (a.contrast->l != b.contrast->l) return a.contrast->l < b.contrast->l;
    if (a.contrast->subgroup != b.contrast->subgroup)
      return a.contrast->subgroup == Subgroup::Positive;
    return a.fit->model < b.fit->model;
  });
  out << "model,contrast,subgroup,hr,lo,hi,rhat_max,ess_min\n";
  char buf[160];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%.3f,%.3f,%.3f,%.3f,%.3f", row.contrast->hr_median,
                  row.contrast->lower, row.contrast->upper, row.fit->rhat_max, row.fit->ess_min);
    out << row.fit->model << ',' << row.contrast->label << ','
        << subgroup_label(row.contrast->subgroup) << ',' << buf << '\n';
  }
}

}  // namespace

void export_forest(const FitSummary& summary, std::ostream& out) {
  export_forest(std::span<const FitSummary>(&summary, 1), out);
}

void export_forest(std::span<const FitSummary> summaries, std::ostream& out) {
  std::vector<ForestRow> rows;
  for (const auto& fit : summaries)
    for (const auto& c : fit.contrasts) rows.push_back({&fit, &c});
  write_forest_rows(std::move(rows), out);
}

void export_draws(const mcmc::Draws& draws, std::ostream& out) {
  out << "chain,iteration,param,value\n";
  char buf[48];
  for (int c = 0; c < draws.n_chains(); ++c) {
    for (long it = 0; it < draws.kept; ++it) {
      for (int p = 0; p < draws.n_params(); ++p) {
        std::snprintf(buf, sizeof(buf), "%.17g", draws.value(c, it, p));
        out << (c + 1) << ',' << (it + 1) << ',' << draws.names[static_cast<std::size_t>(p)] << ','
            << buf << '\n';
      }
    }
  }
}

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json summary_to_json(const mcmc::Summary& s) {
  return {{"mean", s.mean}, {"sd", s.sd}, {"median", s.median}, {"lower", s.lower},
          {"upper", s.upper}};
}

double number_or_nan(const ordered_json& j) { return j.is_null() ? kNaN : j.get<double>(); }

mcmc::Summary summary_from(const ordered_json& j) {
  return {number_or_nan(j.at("mean")), number_or_nan(j.at("sd")), number_or_nan(j.at("median")),
          number_or_nan(j.at("lower")), number_or_nan(j.at("upper"))};
}

}  // namespace

std::string to_json(const FitSummary& s) {
  ordered_json j;
  j["model"] = s.model;
  j["seed"] = s.seed;
  j["config_hash"] = s.config_hash;
  j["data_digest"] = s.data_digest;
  j["converged"] = s.converged;
  j["rhat_max"] = s.rhat_max;
  j["ess_min"] = s.ess_min;
  j["tau"] = summary_to_json(s.tau);
  j["tau"]["fixed"] = s.tau_fixed;
  j["contrasts"] = ordered_json::array();
  for (const auto& c : s.contrasts) {
    j["contrasts"].push_back({{"k", c.k},
                              {"l", c.l},
                              {"label", c.label},
                              {"subgroup", subgroup_label(c.subgroup)},
                              {"hr_median", c.hr_median},
                              {"hr_mean", c.hr_mean},
                              {"lower", c.lower},
                              {"upper", c.upper}});
  }
  j["parameters"] = ordered_json::array();
  for (const auto& p : s.parameters) {
    ordered_json e = summary_to_json(p.summary);
    e["name"] = p.name;
    e["rhat"] = p.rhat;
    e["ess"] = p.ess;
    j["parameters"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

FitSummary summary_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ParseError(std::string("fit summary is not valid JSON: ") + e.what());
  }
  try {
    FitSummary s;
    s.model = j.at("model").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.config_hash = j.at("config_hash").get<std::string>();
    s.data_digest = j.at("data_digest").get<std::string>();
    s.converged = j.at("converged").get<bool>();
    s.rhat_max = number_or_nan(j.at("rhat_max"));
    s.ess_min = number_or_nan(j.at("ess_min"));
    s.tau = summary_from(j.at("tau"));
    s.tau_fixed = j.at("tau").at("fixed").get<bool>();
    for (const auto& c : j.at("contrasts")) {
      ContrastSummary cs;
      cs.k = c.at("k").get<int>();
      cs.l = c.at("l").get<int>();
      cs.label = c.at("label").get<std::string>();
      const std::string sg = c.at("subgroup").get<std::string>();
      if (sg != "+ve" && sg != "-ve")
        throw ParseError("fit summary: unknown subgroup '" + sg + "'");
      cs.subgroup = sg == "+ve" ? Subgroup::Positive : Subgroup::Negative;
      cs.hr_median = number_or_nan(c.at("hr_median"));
      cs.hr_mean = number_or_nan(c.at("hr_mean"));
      cs.lower = number_or_nan(c.at("lower"));
      cs.upper = number_or_nan(c.at("upper"));
      s.contrasts.push_back(std::move(cs));
    }
    for (const auto& p : j.at("parameters")) {
      ParameterDiagnostic d;
      d.name = p.at("name").get<std::string>();
      d.summary = summary_from(p);
      d.rhat = number_or_nan(p.at("rhat"));
      d.ess = number_or_nan(p.at("ess"));
      s.parameters.push_back(std::move(d));
    }
    return s;
  } catch (const ordered_json::exception& e) {
    throw ParseError(std::string("fit summary JSON is missing fields: ") + e.what());
  }
}

}  // namespace bnmr::pipelines
