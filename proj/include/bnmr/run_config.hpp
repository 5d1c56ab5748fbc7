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

// Run configuration: one sectioned key/value file drives every command.
// Unknown sections or keys are rejected so a typo cannot silently fall
// back to a default.

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "bnmr/mcmc.hpp"
#include "bnmr/pipelines.hpp"
#include "bnmr/posterior.hpp"
#include "bnmr/trial_emulation.hpp"

namespace bnmr {

struct RunConfig {
  // [paths]
  std::string treatment_map;
  std::string ad_csv;
  std::vector<std::string> ipd_csvs;
  std::string ehr_csv;
  std::string km_manifest;
  std::string out_dir = "out";

  // [model]
  int model = 1;  // 1, 2, or 3
  pipelines::StageOneMode stage_one = pipelines::StageOneMode::Pooled;

  // [priors]
  PriorSettings priors;
  std::optional<double> fixed_tau;

  // [sampler]; the seed key is mandatory unless overridden on the command line
  mcmc::SamplerConfig sampler;
  std::optional<std::uint64_t> seed;

  // [emulate]
  emulation::EmulationProtocol protocol;
  std::string class_label_c = "chemotherapy";
  std::string class_label_x = "taxane";
  std::string class_label_cx = "taxane+chemotherapy";

  // [synthetic]; used by the emulate command when no EHR file is configured
  std::optional<emulation::SyntheticEHRConfig> synthetic;
};

RunConfig parse_run_config(std::istream& in, const std::string& source);
RunConfig load_run_config(const std::string& path);

// A complete, runnable configuration with every default spelled out.
std::string default_config_text();

}  // namespace bnmr
