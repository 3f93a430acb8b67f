// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// Flat "key = value" configuration with '#' comments. Every tunable of a run
// has a key; the manifest written next to a run lists all of them.
//
#pragma once

#include "surfelslam/oracle.hpp"
#include "surfelslam/pipeline.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace surfelslam {

struct RunConfig {
    SceneConfig    scene;
    NoiseModel     noise;
    OracleConfig   oracle;
    TrackingConfig tracking;
    MapperConfig   mapping;
    /// Depth PNGs store round(depth * depth_factor).
    double         depth_factor{5000.0};
    /// Depth-L1 alignment: "median" or "least_squares".
    std::string    depth_alignment{"median"};
    /// Write trajectories with a leading scale column.
    bool           sim3_trajectories{false};
    /// Report the measured frame rate. Off by default so reports are reproducible.
    bool           report_fps{false};

    /// Throws ConfigError.
    void validate() const;
};

/// Parses "key = value" lines; blank lines and '#' comments are skipped.
/// Throws ConfigError on malformed lines or duplicate keys.
std::map<std::string, std::string> parse_key_values(const std::string &text);

/// Sets one option. Throws ConfigError for unknown keys or unparsable values.
void set_option(RunConfig &cfg, const std::string &key, const std::string &value);

/// Applies every pair in order.
void apply_options(RunConfig &cfg, const std::map<std::string, std::string> &options);

/// Every option and its current value, in a fixed order.
std::vector<std::pair<std::string, std::string>> list_options(const RunConfig &cfg);

/// The options as "key = value" lines.
std::string format_options(const RunConfig &cfg);

RunConfig load_config(const std::filesystem::path &path);

} // namespace surfelslam
