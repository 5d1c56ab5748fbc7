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

// Subcommand entry points shared between the CLI binary and in-process
// tests. Progress reports go to `out`; warnings go to standard error;
// machine-readable results go to files under the configured output
// directory. Invalid inputs raise ParseError/ValidationError, which the
// binary maps to exit code 2.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace bnmr::commands {

// Command-line flags layered over the configuration file.
struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;  // overrides [sampler] seed
  std::string out_dir;                // overrides [paths] out when non-empty
};

// Exit codes: 0 success; 2 the input bundle has problems (listed on `out`).
int cmd_validate(const GlobalOptions& opts, std::ostream& out);

// Rebuilds subject-level records from digitized curves listed in the
// configured manifest, one IPD CSV per study. Exit 2 if any row failed.
int cmd_reconstruct_km(const GlobalOptions& opts, std::ostream& out);

// Emulates target trials from EHR records (or the configured synthetic
// cohort) and writes per-trial IPD plus balance tables.
int cmd_emulate(const GlobalOptions& opts, std::ostream& out);

// Fits the configured model and writes fit_modelN.json, draws_modelN.csv
// and forest_modelN.csv. Exit 3 when the convergence gate flags the fit;
// outputs are still written.
int cmd_fit(const GlobalOptions& opts, std::ostream& out);

// Prints a readable table for a stored fit summary.
int cmd_summarize(const std::string& fit_json_path, std::ostream& out);

// Interval-width reductions between two stored fits, matched by contrast
// and subgroup.
int cmd_compare(const std::string& fit_a_path, const std::string& fit_b_path,
                std::ostream& out);

}  // namespace bnmr::commands
