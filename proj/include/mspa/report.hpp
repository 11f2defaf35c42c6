#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mspa/eval.hpp"
#include "mspa/train.hpp"

namespace mspa {

nlohmann::json metrics_json(const Metrics& m);
// {"dsc", ..., "n_images", "per_image": [{"id", "dsc", ...}]}
nlohmann::json metrics_json(const MetricsRecord& record);

struct AblationRow {
    std::string name;
    LossToggles toggles;
    std::vector<std::uint64_t> seeds;
    std::vector<Metrics> per_seed;  // test-set means, one per seed
    Metrics mean;
    Metrics stddev;  // sample standard deviation; 0 for a single seed
};

struct AblationReport {
    std::vector<AblationRow> rows;
};

// The four loss configurations, in table order: L_S, +LPA, +UPA, +SPA.
std::vector<std::pair<std::string, LossToggles>> ablation_rows();

// Trains every row for every seed (sequentially) under
// out_dir/row<i>/seed_<s>/ and evaluates on data_dir/test.
AblationReport ablate(const TrainConfig& base, const std::filesystem::path& data_dir, const std::vector<std::uint64_t>& seeds,
                      const std::filesystem::path& out_dir,
                      const std::function<void(const std::string& row, std::uint64_t seed, const Metrics&)>& on_run = {});

void finalize_row(AblationRow& row);
nlohmann::json ablation_json(const AblationReport& report);
std::string ablation_text(const AblationReport& report);
// Writes ablation.json and ablation.txt under out_dir.
void write_ablation(const AblationReport& report, const std::filesystem::path& out_dir);

}  // namespace mspa
