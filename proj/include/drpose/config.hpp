#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "drpose/diffusion.hpp"
#include "drpose/model.hpp"
#include "drpose/training.hpp"

namespace drpose {

enum class Strategy { Single, Average, Aggregate, BestOf };

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);

// Everything a run needs, grouped by config section.
struct RunConfig {
    // [data]
    std::size_t train_count = 20000;
    std::size_t val_count = 5000;
    std::size_t test_count = 1000;
    double noise_sigma_px = 3.0;
    Camera camera;

    ModelConfig model;  // [model]

    // [diffusion]; T lives in train.T
    double offset = 0.008;
    std::size_t t_start = 200;
    ReverseOptions reverse;

    TrainConfig train;  // [train]; run.seed is train.seed
    std::size_t pretrain_epochs = 30;

    // [infer]
    std::size_t H = 1;
    std::size_t K = 1;
    Strategy strategy = Strategy::Single;
    std::string split = "val";
    std::size_t chunk = 64;

    // [run]
    std::size_t threads = 1;
    std::string out_dir = "runs";

    void validate() const;
    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct ConfigKey {
    std::string name;  // "section.key"
    std::string description;
};

// Every accepted key in dump order.
const std::vector<ConfigKey>& config_keys();

// Value of `key` formatted as it would appear in a config file.
std::string config_get(const RunConfig& c, const std::string& key);
// Throws UsageError for unknown keys or unparsable values.
void config_set(RunConfig& c, const std::string& key, const std::string& value);

// `[section]` headers followed by `key = value` lines; `#` starts a comment.
// Applies on top of `base`; does not validate.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
std::string dump_config(const RunConfig& c);

// One line per key with its default, for --help.
std::string config_help();

}  // namespace drpose
