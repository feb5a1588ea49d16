#include "framecast/config.hpp"

#include <fstream>

namespace framecast {

nlohmann::json default_config_json() {
  return nlohmann::json{
      {"seed", 1},
      {"latent_dim", 8},
      {"cluster_count", 8},
      {"particle_count", 50},
      {"ukf", {{"alpha", 1e-3}, {"beta", 2.0}, {"kappa", 0.0}}},
      {"gain_mode", "paper"},
      {"vae",
       {{"hidden", {256, 128}},
        {"epochs", 300},
        {"batch_size", 32},
        {"learning_rate", 1e-3}}},
      {"dynamics",
       {{"hidden", 32}, {"epochs", 300}, {"batch_size", 32}, {"learning_rate", 1e-3}}},
      {"world",
       {{"arena_width", 40.0},
        {"arena_height", 30.0},
        {"margin", 5.0},
        {"corner_radius", 3.0},
        {"frame_width", 24},
        {"frame_height", 24},
        {"speed", 0.45},
        {"laps", 3},
        {"scenario", 1},
        {"obstacles", nlohmann::json::array()},
        {"detour_offset", 3.2},
        {"detour_ramp", 8.0},
        {"detour_hold", 8.0},
        {"pixel_noise", 0.0}}},
      {"paths", {{"dataset", ""}, {"registry", ""}, {"out", ""}}},
  };
}

namespace {

void reject_unknown_keys(const nlohmann::json& doc, const nlohmann::json& schema,
                         const std::string& prefix) {
  if (!doc.is_object()) return;
  for (const auto& [key, value] : doc.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key: " + path);
    const auto& expect = schema.at(key);
    if (expect.is_object()) {
      if (!value.is_object()) throw ConfigError("config key " + path + " must be an object");
      reject_unknown_keys(value, expect, path);
    } else if (expect.is_number() && !value.is_number()) {
      throw ConfigError("config key " + path + " must be a number");
    } else if (expect.is_string() && !value.is_string()) {
      throw ConfigError("config key " + path + " must be a string");
    } else if (expect.is_array() && !value.is_array()) {
      throw ConfigError("config key " + path + " must be an array");
    }
  }
}

void merge_into(nlohmann::json& base, const nlohmann::json& overlay) {
  for (const auto& [key, value] : overlay.items()) {
    if (value.is_object() && base.contains(key) && base.at(key).is_object())
      merge_into(base.at(key), value);
    else
      base[key] = value;
  }
}

void require_positive(double v, const std::string& name) {
  if (!(v > 0.0)) throw ConfigError("config: " + name + " must be positive");
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& doc) {
  const nlohmann::json schema = default_config_json();
  reject_unknown_keys(doc, schema, "");
  nlohmann::json merged = schema;
  merge_into(merged, doc);

  RunConfig cfg;
  cfg.seed = merged.at("seed").get<std::uint64_t>();
  cfg.latent_dim = merged.at("latent_dim").get<std::size_t>();
  cfg.cluster_count = merged.at("cluster_count").get<std::size_t>();
  cfg.particle_count = merged.at("particle_count").get<std::size_t>();
  cfg.ukf.alpha = merged.at("ukf").at("alpha").get<double>();
  cfg.ukf.beta = merged.at("ukf").at("beta").get<double>();
  cfg.ukf.kappa = merged.at("ukf").at("kappa").get<double>();
  cfg.gain_mode = gain_mode_from_name(merged.at("gain_mode").get<std::string>());

  const auto& vae = merged.at("vae");
  cfg.vae.hidden = vae.at("hidden").get<std::vector<std::size_t>>();
  cfg.vae.epochs = vae.at("epochs").get<std::size_t>();
  cfg.vae.batch_size = vae.at("batch_size").get<std::size_t>();
  cfg.vae.learning_rate = vae.at("learning_rate").get<double>();

  const auto& dyn = merged.at("dynamics");
  cfg.dynamics.hidden = dyn.at("hidden").get<std::size_t>();
  cfg.dynamics.epochs = dyn.at("epochs").get<std::size_t>();
  cfg.dynamics.batch_size = dyn.at("batch_size").get<std::size_t>();
  cfg.dynamics.learning_rate = dyn.at("learning_rate").get<double>();

  const auto& world = merged.at("world");
  cfg.world.arena_width = world.at("arena_width").get<double>();
  cfg.world.arena_height = world.at("arena_height").get<double>();
  cfg.world.margin = world.at("margin").get<double>();
  cfg.world.corner_radius = world.at("corner_radius").get<double>();
  cfg.world.frame_width = world.at("frame_width").get<std::size_t>();
  cfg.world.frame_height = world.at("frame_height").get<std::size_t>();
  cfg.world.speed = world.at("speed").get<double>();
  cfg.world.laps = world.at("laps").get<std::size_t>();
  cfg.world.scenario = world.at("scenario").get<int>();
  cfg.world.obstacles.clear();
  for (const auto& o : world.at("obstacles")) {
    if (!o.is_array() || o.size() != 2)
      throw ConfigError("config: world.obstacles entries must be [x, y]");
    cfg.world.obstacles.emplace_back(o.at(0).get<double>(), o.at(1).get<double>());
  }
  cfg.world.detour_offset = world.at("detour_offset").get<double>();
  cfg.world.detour_ramp = world.at("detour_ramp").get<double>();
  cfg.world.detour_hold = world.at("detour_hold").get<double>();
  cfg.world.pixel_noise = world.at("pixel_noise").get<double>();
  cfg.world.seed = split_seed(cfg.seed, "synth");

  const auto& paths = merged.at("paths");
  cfg.paths.dataset = paths.at("dataset").get<std::string>();
  cfg.paths.registry = paths.at("registry").get<std::string>();
  cfg.paths.out = paths.at("out").get<std::string>();

  if (cfg.latent_dim == 0) throw ConfigError("config: latent_dim must be >= 1");
  if (cfg.cluster_count == 0) throw ConfigError("config: cluster_count must be >= 1");
  if (cfg.particle_count == 0) throw ConfigError("config: particle_count must be >= 1");
  require_positive(cfg.ukf.alpha, "ukf.alpha");
  require_positive(cfg.vae.learning_rate, "vae.learning_rate");
  require_positive(cfg.dynamics.learning_rate, "dynamics.learning_rate");
  if (cfg.vae.epochs == 0 || cfg.vae.batch_size == 0)
    throw ConfigError("config: vae.epochs and vae.batch_size must be >= 1");
  if (cfg.dynamics.epochs == 0 || cfg.dynamics.batch_size == 0 || cfg.dynamics.hidden == 0)
    throw ConfigError("config: dynamics sizes must be >= 1");
  if (cfg.vae.hidden.empty()) throw ConfigError("config: vae.hidden must not be empty");
  for (std::size_t h : cfg.vae.hidden)
    if (h == 0) throw ConfigError("config: vae.hidden entries must be >= 1");
  require_positive(cfg.world.speed, "world.speed");
  require_positive(cfg.world.detour_ramp, "world.detour_ramp");
  if (cfg.world.laps == 0) throw ConfigError("config: world.laps must be >= 1");
  if (cfg.world.scenario != 1 && cfg.world.scenario != 2)
    throw ConfigError("config: world.scenario must be 1 or 2");
  if (cfg.world.frame_width < 4 || cfg.world.frame_height < 4)
    throw ConfigError("config: frame dimensions must be at least 4x4");
  return cfg;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (file) {
    std::ifstream is(*file);
    if (!is) throw ConfigError("cannot open config: " + file->string());
    try {
      doc = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config parse error: " + std::string(e.what()));
    }
  }
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got: " + item);
    const std::string key = item.substr(0, eq);
    const std::string raw = item.substr(eq + 1);

    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      value = raw;  // plain string
    }

    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot - start);
      if (part.empty()) throw ConfigError("--set: empty key segment in " + key);
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      start = dot + 1;
    }
  }
  return parse_run_config(doc);
}

LearnConfig make_learn_config(const RunConfig& config) {
  LearnConfig learn;
  learn.seed = config.seed;
  learn.vae.latent_dim = config.latent_dim;
  learn.vae.hidden = config.vae.hidden;
  learn.vae.epochs = config.vae.epochs;
  learn.vae.batch_size = config.vae.batch_size;
  learn.vae.learning_rate = config.vae.learning_rate;
  learn.vocabulary.cluster_count = config.cluster_count;
  learn.vocabulary.dynamics.hidden = config.dynamics.hidden;
  learn.vocabulary.dynamics.epochs = config.dynamics.epochs;
  learn.vocabulary.dynamics.batch_size = config.dynamics.batch_size;
  learn.vocabulary.dynamics.learning_rate = config.dynamics.learning_rate;
  learn.filter.ukf = config.ukf;
  learn.filter.gain = config.gain_mode;
  learn.filter.particle_count = config.particle_count;
  return learn;
}

WorldConfig make_world_config(const RunConfig& config) { return config.world; }

FilterOptions make_filter_options(const RunConfig& config, const std::string& seed_tag) {
  FilterOptions opts;
  opts.ukf = config.ukf;
  opts.gain = config.gain_mode;
  opts.particle_count = config.particle_count;
  opts.seed = split_seed(config.seed, seed_tag);
  return opts;
}

}  // namespace framecast
