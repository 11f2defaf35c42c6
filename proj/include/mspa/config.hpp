#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "mspa/train.hpp"

namespace mspa {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// JSON document mirroring TrainConfig plus optional data/out paths.
struct CliConfig {
    TrainConfig train;
    std::optional<std::string> data_dir;
    std::optional<std::string> out_dir;
};

nlohmann::json to_json(const TrainConfig& config);

// Applies the keys present in `doc` on top of `base`. Unknown keys and
// ill-typed values throw ConfigError naming the key.
CliConfig parse_config(const nlohmann::json& doc, CliConfig base = {});
CliConfig load_config_file(const std::filesystem::path& path);

}  // namespace mspa
