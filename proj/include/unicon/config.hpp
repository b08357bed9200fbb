#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "unicon/server_config.hpp"
#include "unicon/session.hpp"
#include "unicon/trainer.hpp"

namespace unicon {

/// Which character to simulate.
struct ModelSpec {
    std::string kind = "chain";  ///< chain, humanoid or file
    int links = 3;
    bool planar = true;
    ChainOptions chain;
    std::string path;  ///< model file for kind "file", relative to the config file

    void validate() const;
};

struct SchedulerOptions {
    int transition_frames = kDefaultTransitionFrames;
    double turn_rate_deg = 120.0;
    double max_speed = 4.0;
    double stream_smoothing = kDefaultStreamSmoothing;
    std::size_t pose_capacity = 32;
};

struct ServeOptions {
    ServerConfig server;
    PerturbationSchedule perturbation;
    double max_impulse = 100.0;
};

/// Everything a run needs, in one file.
struct RunConfig {
    ModelSpec model;
    TrainConfig train;
    SchedulerOptions schedulers;
    ServeOptions serve;

    void validate() const;
    SessionConfig session() const;
};

/// Environment variables starting with this prefix override config keys. The rest of the
/// name is the key path with "__" between sections: UNICON_PPO__WORKERS=8.
inline constexpr std::string_view kEnvPrefix = "UNICON_";

/// Every key with its value; the defaults when called on a default RunConfig.
std::string config_to_json(const RunConfig& config);
/// Starts from the defaults; unknown keys and wrongly typed values are ParseErrors.
RunConfig config_from_json(std::string_view text, const std::map<std::string, std::string>& overrides = {});
/// Reads `path` (or only the defaults when empty) and applies UNICON_ variables from the environment.
RunConfig load_config(const std::filesystem::path& path);
/// UNICON_ variables currently set, keyed by variable name.
std::map<std::string, std::string> environment_overrides();

CharacterModel build_model(const ModelSpec& spec, const std::filesystem::path& base_dir = {});

}  // namespace unicon
