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

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "bnmr/commands.hpp"
#include "bnmr/errors.hpp"
#include "bnmr/run_config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"network meta-regression over aggregate and participant-level evidence"};
  app.require_subcommand(0, 1);

  bnmr::commands::GlobalOptions opts;
  bool print_defaults = false;
  app.add_option("-c,--config", opts.config_path, "run configuration file");
  app.add_option("--seed", opts.seed, "override the sampler seed");
  app.add_option("--out", opts.out_dir, "override the output directory");
  app.add_flag("--print-defaults", print_defaults,
               "print a complete default configuration and exit");

  auto* validate = app.add_subcommand("validate", "check the configured data bundle");
  auto* reconstruct =
      app.add_subcommand("reconstruct-km", "rebuild subject records from digitized curves");
  auto* emulate = app.add_subcommand("emulate", "emulate target trials from EHR records");
  auto* fit = app.add_subcommand("fit", "fit the configured model and write summaries");

  std::string fit_json;
  auto* summarize = app.add_subcommand("summarize", "print a stored fit summary");
  summarize->add_option("fit_json", fit_json, "fit summary JSON file")->required();

  std::string fit_a, fit_b;
  auto* compare =
      app.add_subcommand("compare", "interval-width reductions between two stored fits");
  compare->add_option("fit_a", fit_a, "baseline fit JSON")->required();
  compare->add_option("fit_b", fit_b, "comparison fit JSON")->required();

  CLI11_PARSE(app, argc, argv);

  if (print_defaults) {
    std::cout << bnmr::default_config_text();
    return 0;
  }

  try {
    if (validate->parsed()) return bnmr::commands::cmd_validate(opts, std::cout);
    if (reconstruct->parsed()) return bnmr::commands::cmd_reconstruct_km(opts, std::cout);
    if (emulate->parsed()) return bnmr::commands::cmd_emulate(opts, std::cout);
    if (fit->parsed()) return bnmr::commands::cmd_fit(opts, std::cout);
    if (summarize->parsed()) return bnmr::commands::cmd_summarize(fit_json, std::cout);
    if (compare->parsed()) return bnmr::commands::cmd_compare(fit_a, fit_b, std::cout);
  } catch (const bnmr::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const bnmr::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }

  std::cerr << app.help();
  return 1;
}
