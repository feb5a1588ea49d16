#pragma once

// One JSON config document drives every command. Unknown keys are rejected,
// all constants are validated, and `--set key=value` overrides apply before
// validation. All randomness is split from the single root seed.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "framecast/amjpf.hpp"
#include "framecast/continual.hpp"
#include "framecast/synthworld.hpp"

namespace framecast {

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t latent_dim = 8;
  std::size_t cluster_count = 8;
  std::size_t particle_count = 50;
  UkfParams ukf;
  GainMode gain_mode = GainMode::Paper;

  struct VaeSection {
    std::vector<std::size_t> hidden = {256, 128};
    std::size_t epochs = 300;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
  } vae;

  struct DynamicsSection {
    std::size_t hidden = 32;
    std::size_t epochs = 300;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
  } dynamics;

  WorldConfig world;

  struct Paths {
    std::string dataset;
    std::string registry;
    std::string out;
  } paths;
};

nlohmann::json default_config_json();

// Strict parse: every key must exist in the default document with a
// compatible type. Throws ConfigError.
RunConfig parse_run_config(const nlohmann::json& doc);

// Optional file (defaults apply without one) plus `--set` overrides in
// dotted-key form, e.g. "vae.epochs=100" or "world.scenario=2".
RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides);

LearnConfig make_learn_config(const RunConfig& config);
WorldConfig make_world_config(const RunConfig& config);
FilterOptions make_filter_options(const RunConfig& config, const std::string& seed_tag);

}  // namespace framecast
