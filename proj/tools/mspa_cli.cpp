// mspa: data generation, training, evaluation and ablation.
//
// Exit codes: 0 ok, 2 invalid flags/config/checkpoint, 3 I/O failure,
// 4 non-finite loss.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mspa/config.hpp"
#include "mspa/data.hpp"
#include "mspa/eval.hpp"
#include "mspa/report.hpp"
#include "mspa/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNonFinite = 4;

constexpr const char* kPrecedence =
    "Settings are resolved as: built-in defaults, then the --config file, then flags.\n"
    "A flag always wins over the same key in the config file.";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
    f << text;
    if (!f) throw std::runtime_error(path.string() + ": write failed");
}

// ---- gen-data --------------------------------------------------------------

struct GenArgs {
    std::string out;
    int count = 800;
    int size = 64;
    std::uint64_t seed = 0;
    float contrast = 0.25f;
    std::optional<int> val_count;
    std::optional<int> test_count;
};

int gen_data(const GenArgs& a) {
    if (a.size <= 0 || a.size % 4 != 0)
        throw UsageError("--size " + std::to_string(a.size) + " must be a positive multiple of 4 (the network pools twice)");
    if (a.count < 1) throw UsageError("--count must be >= 1");
    if (!(a.contrast > 0.0f && a.contrast <= 0.5f)) throw UsageError("--contrast must be in (0, 0.5]");
    const int n_val = a.val_count.value_or(a.count / 8);
    const int n_test = a.test_count.value_or(a.count / 8);
    if (n_val < 0 || n_test < 0) throw UsageError("--val-count/--test-count must be >= 0");
    const int n_train = a.count - n_val - n_test;
    if (n_train < 1) throw UsageError("--count leaves no training images after the val/test share");

    mspa::SyntheticParams params;
    params.size = a.size;
    params.contrast = a.contrast;
    const fs::path root(a.out);
    json splits = json::object();
    const std::pair<const char*, int> parts[] = {{"train", n_train}, {"val", n_val}, {"test", n_test}};
    std::uint64_t index = 0;
    for (const auto& [name, n] : parts) {
        json ids = json::array();
        fs::create_directories(root / name / "images");
        fs::create_directories(root / name / "masks");
        for (int i = 0; i < n; ++i, ++index) {
            const mspa::Sample s = mspa::generate_synthetic_sample(params, a.seed, index);
            mspa::write_sample(root / name, s);
            ids.push_back(s.id);
        }
        splits[name] = std::move(ids);
    }
    const json manifest{{"count", a.count},
                        {"seed", a.seed},
                        {"generator",
                         {{"size", params.size},
                          {"contrast", params.contrast},
                          {"noise_sigma", params.noise_sigma},
                          {"texture_amplitude", params.texture_amplitude},
                          {"min_foreground", params.min_foreground},
                          {"max_foreground", params.max_foreground}}},
                        {"splits", std::move(splits)}};
    const fs::path manifest_path = root / "manifest.json";
    write_file(manifest_path, manifest.dump(2) + "\n");
    std::cout << manifest_path.string() << '\n';
    return kExitOk;
}

// ---- shared train/ablate settings ----------------------------------------

struct RunFlags {
    std::string config;
    std::string data;
    std::string out;
    std::optional<double> labeled_frac;
    std::optional<std::uint64_t> seed;
    std::optional<long> t_max;
};

mspa::CliConfig resolve(const RunFlags& f) {
    mspa::CliConfig cfg;
    if (!f.config.empty()) {
        if (!fs::exists(f.config)) throw mspa::ConfigError(f.config + ": config file not found");
        cfg = mspa::load_config_file(f.config);
    }
    if (!f.data.empty()) cfg.data_dir = f.data;
    if (!f.out.empty()) cfg.out_dir = f.out;
    if (f.labeled_frac) cfg.train.labeled_fraction = *f.labeled_frac;
    if (f.seed) cfg.train.seed = *f.seed;
    if (f.t_max) cfg.train.t_max = *f.t_max;
    if (!cfg.data_dir) throw UsageError("no data directory: pass --data or set \"data\" in the config");
    if (!cfg.out_dir) throw UsageError("no output directory: pass --out or set \"out\" in the config");
    try {
        cfg.train.validate();
    } catch (const std::invalid_argument& e) {
        throw mspa::ConfigError(e.what());
    }
    return cfg;
}

void add_run_flags(CLI::App* cmd, RunFlags& f) {
    cmd->add_option("--config", f.config, "JSON config file (keys mirror TrainConfig)");
    cmd->add_option("--data", f.data, "dataset root containing train/ (and optionally val/, test/)");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--labeled-frac", f.labeled_frac, "fraction of train/ used as labeled");
    cmd->add_option("--seed", f.seed, "seed for split, init and sampling");
    cmd->add_option("--t-max", f.t_max, "number of training iterations");
    cmd->footer(kPrecedence);
}

int train(const RunFlags& f, const std::string& resume, bool quiet) {
    const mspa::CliConfig cfg = resolve(f);
    mspa::RunOptions opts;
    if (!resume.empty()) opts.resume_from = resume;
    const long t_max = cfg.train.t_max;
    if (!quiet) {
        opts.on_record = [t_max](const std::string& line) {
            const json rec = json::parse(line);
            const long t = rec["t"].get<long>();
            if ((t + 1) % 50 == 0 || t + 1 == t_max || rec.contains("val_dsc")) std::cerr << line << '\n';
        };
    }
    const mspa::RunResult r = mspa::run(cfg.train, *cfg.data_dir, *cfg.out_dir, opts);
    std::cout << "labeled " << r.n_labeled << ", unlabeled " << r.n_unlabeled << ", steps " << r.steps_run << '\n';
    if (r.test_metrics) {
        const auto& m = r.test_metrics->mean;
        std::printf("test  dsc %.4f  iou %.4f  sen %.4f  spe %.4f  acc %.4f\n", m.dsc, m.iou, m.sen, m.spe, m.acc);
    }
    std::cout << r.final_checkpoint.string() << '\n';
    return kExitOk;
}

// ---- eval ----------------------------------------------------------------

int eval(const std::string& checkpoint, const std::string& data, const std::string& out) {
    const mspa::Checkpoint ck = mspa::load_checkpoint(checkpoint);
    fs::path dir(data);
    if (!fs::is_directory(dir / "images") && fs::is_directory(dir / "test" / "images")) dir /= "test";
    const std::vector<mspa::Sample> samples = mspa::load_pair_dir(dir);
    if (samples.empty()) throw mspa::DataError(dir.string() + ": no images to evaluate");
    const mspa::MetricsRecord rec = mspa::evaluate(ck.params, samples);
    const auto& m = rec.mean;
    std::printf("n %zu | dsc %.4f | iou %.4f | sen %.4f | spe %.4f | acc %.4f\n", rec.per_image.size(), m.dsc, m.iou, m.sen,
                m.spe, m.acc);
    const fs::path out_dir = out.empty() ? fs::absolute(checkpoint).parent_path() : fs::path(out);
    fs::create_directories(out_dir);
    json j = mspa::metrics_json(rec);
    j["checkpoint"] = checkpoint;
    j["data"] = dir.string();
    j["iteration"] = ck.iteration;
    write_file(out_dir / "metrics.json", j.dump(2) + "\n");
    return kExitOk;
}

// ---- ablate --------------------------------------------------------------

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) throw UsageError("--seeds: empty entry in \"" + text + "\"");
        item = item.substr(b, e - b + 1);
        if (item.find_first_not_of("0123456789") != std::string::npos)
            throw UsageError("--seeds: '" + item + "' is not a non-negative integer");
        try {
            seeds.push_back(std::stoull(item));
        } catch (const std::exception&) {
            throw UsageError("--seeds: '" + item + "' is out of range");
        }
    }
    if (seeds.empty()) throw UsageError("--seeds: need at least one seed");
    return seeds;
}

int ablate(const RunFlags& f, const std::string& seeds_text) {
    const std::vector<std::uint64_t> seeds = parse_seeds(seeds_text);
    const mspa::CliConfig cfg = resolve(f);
    const mspa::AblationReport report =
        mspa::ablate(cfg.train, *cfg.data_dir, seeds, *cfg.out_dir, [](const std::string& row, std::uint64_t seed, const mspa::Metrics& m) {
            std::fprintf(stderr, "%s seed %llu: test dsc %.4f\n", row.c_str(), static_cast<unsigned long long>(seed), m.dsc);
        });
    mspa::write_ablation(report, *cfg.out_dir);
    std::cout << mspa::ablation_text(report);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mutual- and self-prototype alignment for semi-supervised binary segmentation"};
    app.require_subcommand(1);
    app.footer("Exit codes: 0 ok, 2 invalid flags/config/checkpoint, 3 I/O failure, 4 non-finite loss.");

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset: root/{train,val,test}/{images,masks}");
    gen_cmd->add_option("--out", gen.out, "dataset root")->required();
    gen_cmd->add_option("--count", gen.count, "total images over all splits")->capture_default_str();
    gen_cmd->add_option("--size", gen.size, "image side, a multiple of 4")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
    gen_cmd->add_option("--contrast", gen.contrast, "foreground/background intensity offset")->capture_default_str();
    gen_cmd->add_option("--val-count", gen.val_count, "validation images (default count/8)");
    gen_cmd->add_option("--test-count", gen.test_count, "test images (default count/8)");

    RunFlags train_flags;
    std::string resume;
    bool quiet = false;
    auto* train_cmd = app.add_subcommand("train", "train one model; writes final.ckpt, log.jsonl, metrics.json");
    add_run_flags(train_cmd, train_flags);
    train_cmd->add_option("--resume", resume, "checkpoint to continue from");
    train_cmd->add_flag("--quiet", quiet, "no progress on stderr");

    std::string ckpt, eval_data, eval_out;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint; writes metrics.json");
    eval_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "directory with images/ and masks/ (or a dataset root with test/)")->required();
    eval_cmd->add_option("--out", eval_out, "where metrics.json goes (default: the checkpoint's directory)");

    RunFlags ablate_flags;
    std::string seeds;
    auto* ablate_cmd = app.add_subcommand("ablate", "four-row loss ablation over seeds; writes ablation.json, ablation.txt");
    add_run_flags(ablate_cmd, ablate_flags);
    ablate_cmd->add_option("--seeds", seeds, "comma-separated seeds, e.g. \"1,2,3\"")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen_cmd) return gen_data(gen);
        if (*train_cmd) return train(train_flags, resume, quiet);
        if (*eval_cmd) return eval(ckpt, eval_data, eval_out);
        if (*ablate_cmd) return ablate(ablate_flags, seeds);
    } catch (const mspa::NonFiniteLossError& e) {
        std::cerr << "error: " << e.what() << " (diagnostic written to nan_dump.json)\n";
        return kExitNonFinite;
    } catch (const mspa::CheckpointError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const mspa::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    }
    return kExitUsage;
}
