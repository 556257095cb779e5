#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltlab/classifier.hpp"
#include "ltlab/dataset.hpp"
#include "ltlab/network.hpp"
#include "ltlab/trainer.hpp"

namespace ltlab {

struct DatasetConfig {
    enum class Kind { Synthetic, Idx };
    Kind kind = Kind::Synthetic;

    // synthetic
    LongTailProfile profile{10, 100, 100.0};
    std::size_t dim = 16;
    double separation = 6.0;
    double cov_scale = 1.0;
    std::size_t val_per_class = 20;
    std::size_t test_per_class = 50;
    std::uint64_t data_seed = 1;

    // idx
    std::string train_images, train_labels, test_images, test_labels;

    // grouping; unset => tertile fallback on the training counts
    std::optional<GroupThresholds> thresholds;
};

struct ModelConfig {
    Arch arch = Arch::Mlp;
    std::size_t blocks = 3;
    std::size_t width = 16;
    bool head_bias = false;
};

struct MethodConfig {
    std::string preset = "ce";
    LaConfig::Kind la = LaConfig::Kind::None;
    PresetParams params;
    SgdConfig stage1;
    SgdConfig stage2{0.05, 0.9, 32, 10, 0};
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ModelConfig model;
    MethodConfig method;
    std::vector<std::uint64_t> seeds = {1};
    std::string output_dir = "runs/out";

    NetSpec net_spec(std::size_t input_dim, std::size_t classes) const;
};

/// Strict parse: unknown keys anywhere are rejected with a ConfigError.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Builds (or loads, for IDX data) the train/val/test splits and the group
/// assignment for a config.
struct PreparedData {
    SynthSplits splits;
    GroupAssignment groups;
};
PreparedData prepare_data(const DatasetConfig& config);

}  // namespace ltlab
