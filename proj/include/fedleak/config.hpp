#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedleak/attacks.hpp"
#include "fedleak/defenses.hpp"
#include "fedleak/nn.hpp"

namespace fedleak::config {

/// `key = value` lines under `[section]` headers; '#' and ';' start
/// comments. Values keep internal whitespace, outer whitespace is trimmed.
struct RawConfig {
    std::map<std::string, std::map<std::string, std::string>> sections;
};

RawConfig parse_ini(const std::string& text);
RawConfig parse_ini_file(const std::string& path);

struct DatasetCfg {
    enum class Kind { kPhantom, kDirectory };
    Kind kind = Kind::kPhantom;
    int count = 8;        // phantom corpus size
    int classes = 2;      // phantom classes used (cycled 0..classes-1)
    std::string dir;      // directory datasets
    bool normalize = false;
};

struct TrainCfg {
    bool enabled = false;
    int epochs = 5;
    float lr = 0.1f;
    std::uint64_t seed = 7;
};

struct FlCfg {
    int clients = 4;
    int rounds = 1;
    float lr = 0.1f;
    int batch = 1;
};

struct ExperimentConfig {
    DatasetCfg dataset;
    nn::ModelSpec model;
    std::uint64_t model_seed = 1;
    TrainCfg train;
    FlCfg fl;
    attacks::AttackConfig attack;
    std::vector<defenses::DefenseConfig> defense_grid;  // at least one entry
    int images = 0;  // 0 = all dataset images
    std::vector<std::uint64_t> seeds;
    std::string output_dir = "out";
    int workers = 0;                    // 0 = hardware concurrency
    std::string checkpoints = "first";  // first | all | none

    void validate() const;
};

/// Applies defaults, rejects unknown keys by name, validates values.
ExperimentConfig resolve_config(const RawConfig& raw);

/// The fully resolved configuration, including every default, as INI text;
/// written to manifest.json (as a JSON object) for exact reruns.
std::string manifest_json(const ExperimentConfig& cfg);

std::string defense_tag(const defenses::DefenseConfig& d);
defenses::DefenseConfig parse_defense_spec(const std::string& spec);

}  // namespace fedleak::config
