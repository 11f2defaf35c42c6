#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string output;
};

Outcome mspa(const std::string& args) {
    const std::string cmd = std::string(MSPA_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    Outcome o;
    char buf[4096];
    for (std::size_t n; (n = fread(buf, 1, sizeof buf, pipe)) > 0;) o.output.append(buf, n);
    const int status = pclose(pipe);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mspa_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::size_t count_lines(const fs::path& p) {
    std::ifstream f(p);
    std::size_t n = 0;
    for (std::string l; std::getline(f, l);) ++n;
    return n;
}

const char* kTinyConfig = R"({"widths": [4, 8, 8], "feature_dim": 4, "n_prototypes": 2,
  "unlabeled_batch": 2, "lr": 0.001, "val_every": 0, "labeled_fraction": 0.5})";

}  // namespace

TEST_CASE("help and usage errors") {
    const Outcome help = mspa("--help");
    CHECK(help.code == 0);
    CHECK(help.output.find("gen-data") != std::string::npos);
    CHECK(mspa("train --help").code == 0);
    CHECK(mspa("--bogus").code == 2);
    CHECK(mspa("").code == 2);
    CHECK(mspa("gen-data").code == 2);
    const fs::path dir = scratch("usage");
    CHECK(mspa("gen-data --out " + (dir / "x").string() + " --size 30").code == 2);
    CHECK(mspa("gen-data --out " + (dir / "x").string() + " --contrast 0.9").code == 2);
    CHECK(mspa("train --config " + (dir / "nope.json").string() + " --data " + dir.string() + " --out " + dir.string()).code == 2);
    CHECK(mspa("eval --checkpoint " + (dir / "nope.ckpt").string() + " --data " + dir.string()).code == 2);
}

TEST_CASE("gen-data writes pairs and a manifest, reproducibly") {
    const fs::path a = scratch("gen_a"), b = scratch("gen_b");
    const Outcome r = mspa("gen-data --out " + a.string() + " --count 13 --size 16 --seed 3 --val-count 2 --test-count 1");
    REQUIRE(r.code == 0);
    CHECK(r.output.find("manifest.json") != std::string::npos);
    std::size_t images = 0, masks = 0;
    for (const char* split : {"train", "val", "test"}) {
        for ([[maybe_unused]] const auto& e : fs::directory_iterator(a / split / "images")) ++images;
        for ([[maybe_unused]] const auto& e : fs::directory_iterator(a / split / "masks")) ++masks;
    }
    CHECK(images == 13);
    CHECK(masks == 13);
    const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
    CHECK(manifest["splits"]["train"].size() == 10);
    CHECK(manifest["splits"]["val"].size() == 2);
    CHECK(manifest["seed"] == 3);

    REQUIRE(mspa("gen-data --out " + b.string() + " --count 13 --size 16 --seed 3 --val-count 2 --test-count 1").code == 0);
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
}

TEST_CASE("train, eval and ablate end to end") {
    const fs::path root = scratch("e2e");
    const fs::path data = root / "data";
    REQUIRE(mspa("gen-data --out " + data.string() + " --count 12 --size 16 --seed 1 --val-count 2 --test-count 2").code == 0);
    std::ofstream(root / "tiny.json") << kTinyConfig;
    const std::string cfg = " --config " + (root / "tiny.json").string() + " --data " + data.string();

    const Outcome tr = mspa("train" + cfg + " --out " + (root / "run").string() + " --t-max 5 --seed 2 --labeled-frac 0.25 --quiet");
    INFO(tr.output);
    REQUIRE(tr.code == 0);
    CHECK(count_lines(root / "run" / "log.jsonl") == 5);
    const fs::path ckpt = root / "run" / "final.ckpt";
    REQUIRE(fs::exists(ckpt));

    // Flags beat the config file.
    const auto rec = nlohmann::json::parse(slurp(root / "run" / "log.jsonl").substr(0, slurp(root / "run" / "log.jsonl").find('\n')));
    CHECK(rec["n_l"] == 2);
    CHECK(rec["n_u"] == 6);

    const Outcome e1 = mspa("eval --checkpoint " + ckpt.string() + " --data " + data.string() + " --out " + (root / "e1").string());
    const Outcome e2 = mspa("eval --checkpoint " + ckpt.string() + " --data " + data.string() + " --out " + (root / "e2").string());
    REQUIRE(e1.code == 0);
    CHECK(e1.output == e2.output);
    CHECK(e1.output.find("dsc") != std::string::npos);
    const auto m1 = nlohmann::json::parse(slurp(root / "e1" / "metrics.json"));
    const auto m2 = nlohmann::json::parse(slurp(root / "e2" / "metrics.json"));
    CHECK(m1["n_images"] == 2);
    CHECK(m1["dsc"] == m2["dsc"]);

    std::ofstream(root / "broken.ckpt", std::ios::binary) << slurp(ckpt).substr(0, 100);
    const Outcome bad = mspa("eval --checkpoint " + (root / "broken.ckpt").string() + " --data " + data.string());
    CHECK(bad.code == 2);
    CHECK(bad.output.find("bad checkpoint") != std::string::npos);

    CHECK(mspa("ablate" + cfg + " --out " + (root / "abl").string() + " --seeds \"\"").code == 2);
    CHECK(mspa("ablate" + cfg + " --out " + (root / "abl").string() + " --seeds 1,x").code == 2);
    const Outcome ab = mspa("ablate" + cfg + " --out " + (root / "abl").string() + " --seeds 1,2,3 --t-max 2");
    INFO(ab.output);
    REQUIRE(ab.code == 0);
    std::size_t runs = 0;
    for (const auto& e : fs::recursive_directory_iterator(root / "abl"))
        if (e.path().filename() == "final.ckpt") ++runs;
    CHECK(runs == 12);
    const auto report = nlohmann::json::parse(slurp(root / "abl" / "ablation.json"));
    REQUIRE(report["rows"].size() == 4);
    CHECK(report["rows"][0]["runs"].size() == 3);
    CHECK(ab.output.find("Loss Function") != std::string::npos);
}
