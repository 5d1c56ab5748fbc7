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

#include "bnmr/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <iostream>
#include <limits>
#include <random>
#include <stdexcept>
#include <thread>

#include "bnmr/stats.hpp"

namespace bnmr::mcmc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double to_unconstrained(const ParamDef& def, double x) {
  switch (def.transform) {
    case Transform::Identity:
      return x;
    case Transform::Log:
      if (!(x > 0.0)) throw std::invalid_argument("init for '" + def.name + "' must be positive");
      return std::log(x);
    case Transform::ScaledLogit: {
      if (!(x > 0.0 && x < def.upper))
        throw std::invalid_argument("init for '" + def.name + "' must lie in (0, upper)");
      const double f = x / def.upper;
      return std::log(f / (1.0 - f));
    }
  }
  return x;
}

double to_constrained(const ParamDef& def, double z) {
  switch (def.transform) {
    case Transform::Identity:
      return z;
    case Transform::Log:
      return std::exp(z);
    case Transform::ScaledLogit:
      return def.upper * sigmoid(z);
  }
  return z;
}

// log |dx/dz| for one coordinate.
double log_jacobian(const ParamDef& def, double z) {
  switch (def.transform) {
    case Transform::Identity:
      return 0.0;
    case Transform::Log:
      return z;
    case Transform::ScaledLogit: {
      // log upper + log s + log(1 - s), stably
      const double soft = z >= 0.0 ? std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      const double ls = z >= 0.0 ? -soft : z - soft;
      const double l1ms = z >= 0.0 ? -z - soft : -soft;
      return std::log(def.upper) + ls + l1ms;
    }
  }
  return 0.0;
}

struct ChainResult {
  std::vector<double> draws;
  std::vector<double> accept;
};

ChainResult run_one_chain(const LogDensity& target, const std::vector<ParamDef>& defs,
                          const SamplerConfig& cfg, std::uint64_t chain_seed) {
  const int P = static_cast<int>(defs.size());
  Rng rng(chain_seed);

  std::vector<double> z(defs.size()), x(defs.size()), jac(defs.size());
  const auto eval_all = [&]() {
    double j = 0.0;
    for (int p = 0; p < P; ++p) {
      x[static_cast<std::size_t>(p)] = to_constrained(defs[static_cast<std::size_t>(p)],
                                                      z[static_cast<std::size_t>(p)]);
      jac[static_cast<std::size_t>(p)] = log_jacobian(defs[static_cast<std::size_t>(p)],
                                                      z[static_cast<std::size_t>(p)]);
      j += jac[static_cast<std::size_t>(p)];
    }
    const double t = target(x);
    return std::isnan(t) ? kNegInf : t + j;
  };

  // initialization with jitter; retry while the density is not finite
  std::vector<double> base(defs.size());
  for (int p = 0; p < P; ++p)
    base[static_cast<std::size_t>(p)] =
        to_unconstrained(defs[static_cast<std::size_t>(p)], defs[static_cast<std::size_t>(p)].init);
  double cur = kNegInf;
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (int p = 0; p < P; ++p)
      z[static_cast<std::size_t>(p)] =
          base[static_cast<std::size_t>(p)] + cfg.init_jitter * (2.0 * rng.uniform() - 1.0);
    cur = eval_all();
    if (std::isfinite(cur)) break;
  }
  if (!std::isfinite(cur))
    throw std::runtime_error("mcmc: no finite starting point after 100 jittered attempts");

  std::vector<double> log_step(defs.size());
  for (int p = 0; p < P; ++p)
    log_step[static_cast<std::size_t>(p)] =
        std::log(std::max(defs[static_cast<std::size_t>(p)].init_step, 1e-12));

  const long total = cfg.burn_in + static_cast<long>(cfg.keep) * cfg.thin;
  std::vector<long> win_acc(defs.size(), 0), post_acc(defs.size(), 0);
  long post_sweeps = 0;

  ChainResult out;
  out.draws.reserve(static_cast<std::size_t>(cfg.keep) * defs.size());

  double jac_sum = 0.0;
  for (double v : jac) jac_sum += v;

  for (long t = 1; t <= total; ++t) {
    const bool burning = t <= cfg.burn_in;
    for (int p = 0; p < P; ++p) {
      const auto sp = static_cast<std::size_t>(p);
      const double z_old = z[sp], x_old = x[sp], jac_old = jac[sp];
      z[sp] = z_old + std::exp(log_step[sp]) * rng.normal();
      x[sp] = to_constrained(defs[sp], z[sp]);
      jac[sp] = log_jacobian(defs[sp], z[sp]);
      const double jac_new_sum = jac_sum - jac_old + jac[sp];
      const double dens = target(x);
      const double cand = std::isnan(dens) ? kNegInf : dens + jac_new_sum;
      if (cand - cur > std::log(rng.uniform_pos())) {
        cur = cand;
        jac_sum = jac_new_sum;
        if (burning) ++win_acc[sp];
        else ++post_acc[sp];
      } else {
        z[sp] = z_old;
        x[sp] = x_old;
        jac[sp] = jac_old;
      }
    }
    if (burning) {
      if (t % cfg.adapt_window == 0) {
        const double block = static_cast<double>(t / cfg.adapt_window);
        const double gain = 2.0 / std::pow(block, 0.6);
        for (int p = 0; p < P; ++p) {
          const auto sp = static_cast<std::size_t>(p);
          const double rate =
              static_cast<double>(win_acc[sp]) / static_cast<double>(cfg.adapt_window);
          log_step[sp] = std::clamp(log_step[sp] + gain * (rate - cfg.target_accept), -30.0, 5.0);
          win_acc[sp] = 0;
        }
      }
    } else {
      ++post_sweeps;
      if ((t - cfg.burn_in) % cfg.thin == 0)
        out.draws.insert(out.draws.end(), x.begin(), x.end());
    }
  }

  out.accept.resize(defs.size());
  for (int p = 0; p < P; ++p)
    out.accept[static_cast<std::size_t>(p)] =
        post_sweeps > 0
            ? static_cast<double>(post_acc[static_cast<std::size_t>(p)]) / static_cast<double>(post_sweeps)
            : 0.0;
  return out;
}

}  // namespace

Draws run_chains(const TargetFactory& make_target, const std::vector<ParamDef>& params,
                 const SamplerConfig& cfg) {
  if (params.empty()) throw std::invalid_argument("mcmc: no parameters");
  if (cfg.n_chains < 1 || cfg.keep < 1 || cfg.thin < 1 || cfg.burn_in < 0 || cfg.adapt_window < 1)
    throw std::invalid_argument("mcmc: invalid sampler configuration");

  Draws d;
  for (const auto& p : params) d.names.push_back(p.name);
  d.kept = cfg.keep;
  d.chains.resize(static_cast<std::size_t>(cfg.n_chains));
  d.accept_rate.resize(static_cast<std::size_t>(cfg.n_chains));
  d.chain_seeds.resize(static_cast<std::size_t>(cfg.n_chains));
  for (int c = 0; c < cfg.n_chains; ++c)
    d.chain_seeds[static_cast<std::size_t>(c)] =
        splitmix64(cfg.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(c + 1));

  const bool parallel = std::thread::hardware_concurrency() > 1 && cfg.n_chains > 1;
  if (parallel) {
    std::vector<std::future<ChainResult>> futures;
    futures.reserve(static_cast<std::size_t>(cfg.n_chains));
    for (int c = 0; c < cfg.n_chains; ++c) {
      futures.push_back(std::async(std::launch::async, [&, c]() {
        const LogDensity target = make_target(c);
        return run_one_chain(target, params, cfg, d.chain_seeds[static_cast<std::size_t>(c)]);
      }));
    }
    for (int c = 0; c < cfg.n_chains; ++c) {
      ChainResult r = futures[static_cast<std::size_t>(c)].get();
      d.chains[static_cast<std::size_t>(c)] = std::move(r.draws);
      d.accept_rate[static_cast<std::size_t>(c)] = std::move(r.accept);
    }
  } else {
    for (int c = 0; c < cfg.n_chains; ++c) {
      const LogDensity target = make_target(c);
      ChainResult r = run_one_chain(target, params, cfg, d.chain_seeds[static_cast<std::size_t>(c)]);
      d.chains[static_cast<std::size_t>(c)] = std::move(r.draws);
      d.accept_rate[static_cast<std::size_t>(c)] = std::move(r.accept);
    }
  }
  return d;
}

Draws run_chains(const LogDensity& target, const std::vector<ParamDef>& params,
                 const SamplerConfig& cfg) {
  return run_chains([&target](int) { return target; }, params, cfg);
}

std::vector<double> Draws::chain_column(int chain, int param) const {
  std::vector<double> col(static_cast<std::size_t>(kept));
  const auto& c = chains[static_cast<std::size_t>(chain)];
  const std::size_t P = names.size();
  for (long i = 0; i < kept; ++i)
    col[static_cast<std::size_t>(i)] = c[static_cast<std::size_t>(i) * P + static_cast<std::size_t>(param)];
  return col;
}

std::vector<double> Draws::pooled(int param) const {
  std::vector<double> all;
  all.reserve(chains.size() * static_cast<std::size_t>(kept));
  for (int c = 0; c < n_chains(); ++c) {
    auto col = chain_column(c, param);
    all.insert(all.end(), col.begin(), col.end());
  }
  return all;
}

int Draws::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw std::out_of_range("draws: no parameter named '" + std::string(name) + "'");
}

double rhat(const Draws& draws, int param) {
  const long half = draws.kept / 2;
  if (draws.n_chains() < 1 || half < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> means, vars;
  for (int c = 0; c < draws.n_chains(); ++c) {
    const auto col = draws.chain_column(c, param);
    for (int part = 0; part < 2; ++part) {
      const std::span<const double> seq(col.data() + part * half, static_cast<std::size_t>(half));
      means.push_back(mean(seq));
      vars.push_back(sample_variance(seq));
    }
  }
  const double W = mean(vars);
  if (!(W > 0.0)) {
    std::cerr << "[warn] rhat: zero within-chain variance for '" << draws.names[static_cast<std::size_t>(param)]
              << "'; returning NaN\n";
    return std::numeric_limits<double>::quiet_NaN();
  }
  const double B_over_n = sample_variance(means);  // = B / half
  const double n = static_cast<double>(half);
  const double var_plus = (n - 1.0) / n * W + B_over_n;
  return std::sqrt(var_plus / W);
}

namespace {

// Geyer's initial monotone sequence estimate for one chain; returns the
// effective sample size, floored at 1.
double ess_one_chain(const std::vector<double>& x, const std::string& name) {
  const std::size_t n = x.size();
  if (n < 4) return 1.0;
  const double m = mean(x);
  std::vector<double> centered(n);
  for (std::size_t i = 0; i < n; ++i) centered[i] = x[i] - m;
  const auto gamma_at = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += centered[i] * centered[i + lag];
    return s / static_cast<double>(n);
  };
  const double g0 = gamma_at(0);
  if (!(g0 > 0.0) || !std::isfinite(g0)) {
    std::cerr << "[warn] ess: degenerate (constant) chain for '" << name << "'; using floor of 1\n";
    return 1.0;
  }
  double tau_sum = -g0;  // tau = (-g0 + 2 * sum of monotone positive pair sums) / g0
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t mpair = 0;; ++mpair) {
    const std::size_t t0 = 2 * mpair, t1 = 2 * mpair + 1;
    if (t1 >= n - 1) break;
    double pair = gamma_at(t0) + gamma_at(t1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    tau_sum += 2.0 * pair;
    prev_pair = pair;
  }
  const double tau_int = std::max(tau_sum / g0, 1e-12);
  return std::clamp(static_cast<double>(n) / tau_int, 1.0, static_cast<double>(n));
}

}  // namespace

double ess(const Draws& draws, int param) {
  double total = 0.0;
  for (int c = 0; c < draws.n_chains(); ++c)
    total += ess_one_chain(draws.chain_column(c, param), draws.names[static_cast<std::size_t>(param)]);
  return total;
}

Summary summarize_values(std::vector<double> values, double level) {
  if (values.empty()) throw std::invalid_argument("summarize: no draws");
  if (!(level > 0.0 && level < 1.0)) throw std::domain_error("summarize: level outside (0,1)");
  Summary s;
  s.mean = mean(values);
  s.sd = values.size() > 1 ? sample_sd(values) : 0.0;
  std::sort(values.begin(), values.end());
  const double alpha = (1.0 - level) / 2.0;
  s.median = quantile_sorted(values, 0.5);
  s.lower = quantile_sorted(values, alpha);
  s.upper = quantile_sorted(values, 1.0 - alpha);
  return s;
}

Summary summarize(const Draws& draws, int param, double level) {
  return summarize_values(draws.pooled(param), level);
}

}  // namespace bnmr::mcmc
