// Copyright 2026 The patsim Authors. All Rights Reserved.
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

#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "patsim/errors.hpp"
#include "patsim/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"patsim: patient similarity experiments on event records"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  app.add_option("--config", config_path, "config file (flat INI, one section per module)");
  app.add_option("--seed", seed, "global seed");
  app.add_option("--out", out, "run directory");

  // Every config key doubles as a flag and overrides the file.
  std::map<std::string, std::string> overrides;
  for (const auto& key : patsim::config_keys()) {
    if (key.name == "seed" || key.name == "out") continue;
    app.add_option("--" + key.name, overrides[key.name], key.help)->group("Config keys");
  }

  using Command = std::function<void(const patsim::PipelineConfig&)>;
  const std::vector<std::tuple<std::string, std::string, Command>> commands = {
      {"synth", "generate a synthetic cohort dataset", patsim::cmd_synth},
      {"embed", "filter events, split patients and train code embeddings", patsim::cmd_embed},
      {"represent", "build per-visit patient matrices", patsim::cmd_represent},
      {"train", "train the convolutional matcher", patsim::cmd_train},
      {"sim", "score test patients pairwise", patsim::cmd_sim},
      {"cluster", "cluster test patients", patsim::cmd_cluster},
      {"eval", "score clusters against cohorts", patsim::cmd_eval},
      {"sweep", "vary one of d, w, m and report metrics per value",
       [](const patsim::PipelineConfig& c) { patsim::cmd_sweep(c); }},
      {"pathways", "count event transitions among the most similar patients of a cohort", patsim::cmd_pathways},
      {"run", "every stage from synth to eval", patsim::cmd_run},
      {"config", "print the effective configuration",
       [](const patsim::PipelineConfig& c) { patsim::write_config(std::cout, c); }},
  };
  for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    patsim::PipelineConfig config;
    if (!config_path.empty()) patsim::apply_config_file(config, config_path);
    for (const auto& [name, value] : overrides) {
      if (app.count("--" + name) > 0) patsim::set_config_value(config, name, value);
    }
    if (seed) config.seed = *seed;
    if (out) config.out = *out;
    for (const auto& [name, help, fn] : commands) {
      if (app.got_subcommand(name)) fn(config);
    }
  } catch (const patsim::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
