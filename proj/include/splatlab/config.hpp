#pragma once

// Run configuration: typed configs of every stage, JSON views of them, and a
// TOML loader with paper.* constants and desk.* overrides.

#include "splatlab/camera.hpp"
#include "splatlab/fit.hpp"
#include "splatlab/net.hpp"
#include "splatlab/refine.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatlab {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ScenesConfig {
    int train_count = 64;
    int eval_count = 8;
    int splat_budget = 2000;
    int sh_degree = 0;
    double max_radius = 0.4;
};

struct SweepConfig {
    std::vector<double> elevations{0, 10, 20, 30, 40, 50, 60, 70, 80, 90};
    int azimuths = 3;
};

struct RunConfig {
    std::string preset = "desk";
    std::uint64_t seed = 0;
    bool deterministic = false;
    int jobs = 1;
    std::filesystem::path out = "splatlab_run";

    ScenesConfig scenes;
    TrajectoryConfig trajectory;
    FitConfig fit;
    NetConfig net;
    TrainConfig train;
    SweepConfig sweep;

    /// Propagates `seed` into every stage config.
    void set_seed(std::uint64_t s);
    void validate() const;

    static RunConfig desk();
    static RunConfig paper();
    /// "desk" or "paper"; ConfigError otherwise.
    static RunConfig preset_named(const std::string& name);

    CurateConfig curate_config() const;
};

nlohmann::json to_json(const TrajectoryConfig& c);
nlohmann::json to_json(const FitConfig& c);
nlohmann::json to_json(const NetConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const RunConfig& c);

/// Overwrites the fields present in `j`; unknown keys and wrong types throw ConfigError.
void apply_json(TrajectoryConfig& c, const nlohmann::json& j);
void apply_json(FitConfig& c, const nlohmann::json& j);
void apply_json(NetConfig& c, const nlohmann::json& j);
void apply_json(TrainConfig& c, const nlohmann::json& j);
void apply_json(RunConfig& c, const nlohmann::json& j);

/// Starts from the compiled preset, then applies the file's paper.* table and,
/// for the desk preset, its desk.* table on top.
RunConfig parse_run_config(const std::string& toml_text, const std::string& preset);
RunConfig load_run_config(const std::filesystem::path& path, const std::string& preset);

}  // namespace splatlab
