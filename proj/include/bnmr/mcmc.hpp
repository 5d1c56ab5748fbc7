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

// Generic posterior sampler: coordinate-wise Gaussian random-walk
// Metropolis on a transformed scale, with Robbins-Monro step adaptation
// during burn-in only. Targets receive points on the constrained scale;
// the engine owns the transforms and their Jacobians. Chains are
// independent, seeded from the master seed by index, and bit-reproducible.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bnmr::mcmc {

enum class Transform {
  Identity,
  Log,         // coordinate lives on (0, inf)
  ScaledLogit  // coordinate lives on (0, upper)
};

struct ParamDef {
  std::string name;
  Transform transform = Transform::Identity;
  double init = 0.0;       // constrained scale
  double init_step = 1.0;  // initial proposal SD on the unconstrained scale
  double upper = 2.0;      // ScaledLogit range
};

struct SamplerConfig {
  int n_chains = 4;
  long burn_in = 10000;
  long keep = 20000;
  int thin = 1;
  std::uint64_t seed = 1;
  double target_accept = 0.44;
  int adapt_window = 50;
  double init_jitter = 0.5;  // uniform jitter half-width on the unconstrained scale
};

// Log density evaluated at a constrained-scale point. The engine adds the
// transform Jacobians itself. -inf rejects; NaN is treated as -inf.
using LogDensity = std::function<double(std::span<const double>)>;

// Builds one target per chain so stateful evaluators (caches) are not
// shared across threads.
using TargetFactory = std::function<LogDensity(int chain)>;

struct Draws {
  std::vector<std::string> names;
  long kept = 0;
  std::vector<std::vector<double>> chains;       // [chain]: kept x n_params, row-major, constrained
  std::vector<std::vector<double>> accept_rate;  // [chain][param], post-burn-in
  std::vector<std::uint64_t> chain_seeds;

  int n_params() const { return static_cast<int>(names.size()); }
  int n_chains() const { return static_cast<int>(chains.size()); }
  double value(int chain, long iter, int param) const {
    return chains[static_cast<std::size_t>(chain)]
                 [static_cast<std::size_t>(iter) * names.size() + static_cast<std::size_t>(param)];
  }
  std::vector<double> chain_column(int chain, int param) const;
  std::vector<double> pooled(int param) const;
  int index_of(std::string_view name) const;  // throws std::out_of_range when absent
};

// Throws std::runtime_error when no finite starting point is found within
// 100 jitter retries for some chain.
Draws run_chains(const TargetFactory& make_target, const std::vector<ParamDef>& params,
                 const SamplerConfig& config);
Draws run_chains(const LogDensity& target, const std::vector<ParamDef>& params,
                 const SamplerConfig& config);

// Split-chain potential scale reduction. NaN (with a stderr warning) when
// the within-chain variance vanishes.
double rhat(const Draws& draws, int param);

// Effective sample size via the initial-monotone-sequence estimator,
// summed over chains; a degenerate chain contributes its floor of 1.
double ess(const Draws& draws, int param);

struct Summary {
  double mean = 0.0;
  double sd = 0.0;
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// Equal-tailed interval via linear-interpolation quantiles, pooled over chains.
Summary summarize(const Draws& draws, int param, double level = 0.95);
Summary summarize_values(std::vector<double> values, double level = 0.95);

}  // namespace bnmr::mcmc
