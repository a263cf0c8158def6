#pragma once

// Flat key=value run configuration shared by every CLI command.
//
//   # comment
//   dataset = data/FB15k-237
//   decoder = conve
//
// Later assignments win; command-line flags are applied after the file.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "kbgsat/config_types.hpp"
#include "kbgsat/selftrain.hpp"
#include "kbgsat/trainer.hpp"

namespace kbgsat {

enum class Precision { F32, F64 };

struct RunConfig {
    std::filesystem::path dataset;
    std::filesystem::path output = "run";
    std::filesystem::path checkpoint;  // input checkpoint for selftrain/eval/predict
    Split split = Split::Test;
    Precision precision = Precision::F32;
    ModelConfig model;  // entity/relation counts come from the dataset
    TrainConfig train;
    SelfTrainConfig selftrain;

    RunConfig();

    /// Assigns one key. Throws ConfigError on unknown keys or bad values.
    void set(const std::string& key, const std::string& value);

    /// Every key with its resolved value, one `key = value` per line.
    std::string echo() const;

    /// Digest of every setting that influences results.
    std::string hash() const;

    static const std::vector<std::string>& keys();
};

/// Applies every assignment in `text` to `config`. `source` names the
/// text in error messages.
void apply_config_text(RunConfig& config, std::string_view text, const std::string& source);

RunConfig load_run_config(const std::filesystem::path& file);

}  // namespace kbgsat
