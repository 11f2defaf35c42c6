#include "mspa/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mspa {

namespace fs = std::filesystem;
using nlohmann::json;

json metrics_json(const Metrics& m) {
    return json{{"dsc", m.dsc}, {"iou", m.iou}, {"sen", m.sen}, {"spe", m.spe}, {"acc", m.acc}};
}

json metrics_json(const MetricsRecord& record) {
    json j = metrics_json(record.mean);
    j["n_images"] = record.per_image.size();
    json per = json::array();
    for (std::size_t i = 0; i < record.per_image.size(); ++i) {
        json e = metrics_json(record.per_image[i]);
        e["id"] = i < record.ids.size() ? record.ids[i] : std::to_string(i);
        per.push_back(std::move(e));
    }
    j["per_image"] = std::move(per);
    return j;
}

std::vector<std::pair<std::string, LossToggles>> ablation_rows() {
    return {{"L_S", LossToggles{false, false, false}},
            {"L_S + L_LPA", LossToggles{true, false, false}},
            {"L_S + L_LPA + L_UPA", LossToggles{true, true, false}},
            {"L_S + L_LPA + L_UPA + L_SPA", LossToggles{true, true, true}}};
}

void finalize_row(AblationRow& row) {
    row.mean = mean_metrics(row.per_seed);
    row.stddev = Metrics{};
    const std::size_t n = row.per_seed.size();
    if (n < 2) return;
    const auto sd = [&](double Metrics::*field) {
        double acc = 0.0;
        for (const auto& m : row.per_seed) acc += (m.*field - row.mean.*field) * (m.*field - row.mean.*field);
        return std::sqrt(acc / static_cast<double>(n - 1));
    };
    row.stddev = Metrics{sd(&Metrics::dsc), sd(&Metrics::iou), sd(&Metrics::sen), sd(&Metrics::spe), sd(&Metrics::acc)};
}

AblationReport ablate(const TrainConfig& base, const fs::path& data_dir, const std::vector<std::uint64_t>& seeds,
                      const fs::path& out_dir,
                      const std::function<void(const std::string&, std::uint64_t, const Metrics&)>& on_run) {
    if (seeds.empty()) throw std::invalid_argument("ablate: need at least one seed");
    if (!fs::is_directory(data_dir / "test" / "images")) throw DataError((data_dir / "test").string() + ": ablation needs a test split");
    AblationReport report;
    for (const auto& [name, toggles] : ablation_rows()) report.rows.push_back(AblationRow{name, toggles, {}, {}, {}, {}});
    for (auto seed : seeds) {
        for (std::size_t r = 0; r < report.rows.size(); ++r) {
            auto& row = report.rows[r];
            TrainConfig cfg = base;
            cfg.seed = seed;
            cfg.toggles = row.toggles;
            const fs::path dir = out_dir / ("row" + std::to_string(r + 1)) / ("seed_" + std::to_string(seed));
            const RunResult res = run(cfg, data_dir, dir);
            row.seeds.push_back(seed);
            row.per_seed.push_back(res.test_metrics->mean);
            if (on_run) on_run(row.name, seed, res.test_metrics->mean);
        }
    }
    for (auto& row : report.rows) finalize_row(row);
    return report;
}

json ablation_json(const AblationReport& report) {
    json rows = json::array();
    for (const auto& row : report.rows) {
        json runs = json::array();
        for (std::size_t i = 0; i < row.per_seed.size(); ++i) {
            json e = metrics_json(row.per_seed[i]);
            e["seed"] = row.seeds[i];
            runs.push_back(std::move(e));
        }
        rows.push_back(json{{"name", row.name},
                            {"toggles", {{"lpa", row.toggles.lpa}, {"upa", row.toggles.upa}, {"spa", row.toggles.spa}}},
                            {"runs", std::move(runs)},
                            {"mean", metrics_json(row.mean)},
                            {"std", metrics_json(row.stddev)}});
    }
    return json{{"rows", std::move(rows)}};
}

std::string ablation_text(const AblationReport& report) {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-30s %15s %15s %15s %15s %15s\n", "Loss Function", "Dsc", "IoU", "Spe", "Sen", "Acc");
    os << buf;
    const auto cell = [](double mean, double sd) {
        char c[32];
        std::snprintf(c, sizeof c, "%.2f+-%.2f", 100.0 * mean, 100.0 * sd);
        return std::string(c);
    };
    for (const auto& row : report.rows) {
        std::snprintf(buf, sizeof buf, "%-30s %15s %15s %15s %15s %15s\n", row.name.c_str(), cell(row.mean.dsc, row.stddev.dsc).c_str(),
                      cell(row.mean.iou, row.stddev.iou).c_str(), cell(row.mean.spe, row.stddev.spe).c_str(),
                      cell(row.mean.sen, row.stddev.sen).c_str(), cell(row.mean.acc, row.stddev.acc).c_str());
        os << buf;
    }
    os << "\nper-seed Dsc (%):\n";
    for (const auto& row : report.rows) {
        os << "  " << row.name << ":";
        for (std::size_t i = 0; i < row.per_seed.size(); ++i) {
            std::snprintf(buf, sizeof buf, " [%llu] %.2f", static_cast<unsigned long long>(row.seeds[i]), 100.0 * row.per_seed[i].dsc);
            os << buf;
        }
        os << '\n';
    }
    return os.str();
}

void write_ablation(const AblationReport& report, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error(out_dir.string() + ": " + ec.message());
    {
        std::ofstream f(out_dir / "ablation.json", std::ios::trunc);
        if (!f) throw std::runtime_error((out_dir / "ablation.json").string() + ": cannot open for writing");
        f << ablation_json(report).dump(2) << '\n';
    }
    std::ofstream f(out_dir / "ablation.txt", std::ios::trunc);
    if (!f) throw std::runtime_error((out_dir / "ablation.txt").string() + ": cannot open for writing");
    f << ablation_text(report);
}

}  // namespace mspa
