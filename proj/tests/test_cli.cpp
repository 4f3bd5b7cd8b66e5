#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "tvsr/volume.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = std::string(TVSR_CLI_PATH) + " " + args + " 2>&1";
    RunResult result;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 512> buffer;
    while (fgets(buffer.data(), buffer.size(), pipe) != nullptr) result.output += buffer.data();
    int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::string workspace() {
    static std::string dir = [] {
        auto path = fs::temp_directory_path() / "tvsr_cli_work";
        fs::remove_all(path);
        fs::create_directories(path);
        return path.string();
    }();
    return dir;
}

std::vector<char> file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<char>((std::istreambuf_iterator<char>(in)), {});
}

const std::string kTinyModelFlags =
    " --embed-dim 8 --heads 2 --encoder-depth 1 --n-fim 1 --window 4 --bias-hidden 8 --mlp-ratio 2";

}  // namespace

TEST_CASE("help lists subcommands and flags with defaults") {
    auto r = run_cli("--help");
    CHECK(r.exit_code == 0);
    for (const char* sub : {"gen-phantom", "make-pseudo-lr", "train", "infer", "eval", "slice-sim"})
        CHECK(r.output.find(sub) != std::string::npos);

    auto rt = run_cli("train --help");
    CHECK(rt.exit_code == 0);
    CHECK(rt.output.find("--steps") != std::string::npos);
    CHECK(rt.output.find("500") != std::string::npos);  // default shown
}

TEST_CASE("gen-phantom writes deterministic volumes") {
    const std::string w = workspace();
    auto r1 = run_cli("gen-phantom --seed 7 --dims 40,64,64 --thick-factor 4 -o " + w + "/data");
    CHECK(r1.exit_code == 0);
    CHECK(fs::exists(w + "/data/phantom.thin.vsrv"));
    CHECK(fs::exists(w + "/data/phantom.thick.vsrv"));
    CHECK(r1.output.find("40 x 64 x 64") != std::string::npos);

    auto r2 = run_cli("gen-phantom --seed 7 --dims 40,64,64 --thick-factor 4 -o " + w + "/data2");
    CHECK(r2.exit_code == 0);
    CHECK(file_bytes(w + "/data/phantom.thin.vsrv") == file_bytes(w + "/data2/phantom.thin.vsrv"));
    CHECK(file_bytes(w + "/data/phantom.thick.vsrv") == file_bytes(w + "/data2/phantom.thick.vsrv"));

    auto thin = tvsr::read_volume(w + "/data/phantom.thin.vsrv");
    CHECK(thin.depth == 40);
    auto thick = tvsr::read_volume(w + "/data/phantom.thick.vsrv");
    CHECK(thick.depth == 10);
    CHECK(thick.spacing_mm[0] == 4.0);
}

TEST_CASE("gen-phantom rejects undersized dims with exit 2") {
    auto r = run_cli("gen-phantom --dims 8,8,8 -o " + workspace() + "/bad");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("error") != std::string::npos);
}

TEST_CASE("make-pseudo-lr applies both admission thresholds") {
    const std::string w = workspace();
    auto gen = run_cli("gen-phantom --seed 1 --dims 300,16,16 --thick-factor 4 --stem big -o " + w + "/mp");
    REQUIRE(gen.exit_code == 0);

    auto r = run_cli("make-pseudo-lr -i " + w + "/mp/big.thin.vsrv -o " + w + "/mp");
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(w + "/mp/big.pseudo-k2.vsrv"));
    CHECK(!fs::exists(w + "/mp/big.pseudo-k3.vsrv"));
    CHECK(r.output.find("k=2 chosen") != std::string::npos);
    CHECK(r.output.find("k=3 rejected") != std::string::npos);

    auto r2 = run_cli("make-pseudo-lr -i " + w + "/mp/big.thin.vsrv -o " + w +
                      "/mp2 --max-thickness 5 --min-slices 50");
    CHECK(r2.exit_code == 0);
    for (int k : {2, 3, 4, 5})
        CHECK(fs::exists(w + "/mp2/big.pseudo-k" + std::to_string(k) + ".vsrv"));
    CHECK(!fs::exists(w + "/mp2/big.pseudo-k6.vsrv"));

    // a 4 mm thick input admits no factor at the 3 mm default cap
    auto r3 = run_cli("make-pseudo-lr -i " + w + "/data/phantom.thick.vsrv -o " + w + "/mp3");
    CHECK(r3.exit_code == 0);
    CHECK(r3.output.find("warning") != std::string::npos);
    CHECK(fs::is_empty(w + "/mp3"));
}

TEST_CASE("train writes checkpoints and a loss trace") {
    const std::string w = workspace();
    auto r = run_cli("train --data " + w + "/data -o " + w + "/run1 --steps 12 --seed 5 --patch 4,16,16" +
                     " --checkpoint-interval 6" + kTinyModelFlags);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("variant=full") != std::string::npos);
    CHECK(r.output.find("parameters=") != std::string::npos);
    CHECK(fs::exists(w + "/run1/checkpoint.tvsr"));
    CHECK(fs::exists(w + "/run1/checkpoint-step6.tvsr"));
    CHECK(fs::exists(w + "/run1/trace.csv"));

    std::ifstream trace(w + "/run1/trace.csv");
    std::string line;
    int lines = 0;
    while (std::getline(trace, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 12);
}

TEST_CASE("resume from an interval checkpoint reproduces the uninterrupted run") {
    const std::string w = workspace();
    auto r = run_cli("train --data " + w + "/data -o " + w + "/run2 --resume " + w +
                     "/run1/checkpoint-step6.tvsr --steps 12 --patch 4,16,16");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("resuming") != std::string::npos);
    CHECK(file_bytes(w + "/run2/checkpoint.tvsr") == file_bytes(w + "/run1/checkpoint.tvsr"));
}

TEST_CASE("train runs the no_tab variant and reports fewer parameters") {
    const std::string w = workspace();
    auto full = run_cli("train --data " + w + "/data -o " + w + "/run_full --steps 2 --seed 1 --patch 4,16,16" +
                        kTinyModelFlags);
    auto ablated = run_cli("train --data " + w + "/data -o " + w + "/run_nt --steps 2 --seed 1 --patch 4,16,16" +
                           " --variant no_tab" + kTinyModelFlags);
    REQUIRE(full.exit_code == 0);
    REQUIRE(ablated.exit_code == 0);
    auto param_count = [](const std::string& out) {
        auto at = out.find("parameters=");
        REQUIRE(at != std::string::npos);
        return std::stoll(out.substr(at + 11));
    };
    CHECK(param_count(ablated.output) < param_count(full.output));
    CHECK(ablated.output.find("variant=no_tab") != std::string::npos);
}

TEST_CASE("infer expands a 40-slice volume to 160 slices") {
    const std::string w = workspace();
    auto r = run_cli("infer --checkpoint " + w + "/run1/checkpoint.tvsr -i " + w +
                     "/data/phantom.thin.vsrv -o " + w + "/sr_thin.vsrv");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("160 x 64 x 64") != std::string::npos);
    auto sr = tvsr::read_volume(w + "/sr_thin.vsrv");
    CHECK(sr.depth == 160);
    CHECK(sr.unit == tvsr::IntensityUnit::normalized);
}

TEST_CASE("infer pads a 3-slice input into a single window") {
    const std::string w = workspace();
    tvsr::Volume small = tvsr::make_volume(3, 16, 16, {5, 1, 1}, tvsr::IntensityUnit::normalized, 0.25f);
    tvsr::write_volume(small, w + "/small.vsrv");
    auto r = run_cli("infer --checkpoint " + w + "/run1/checkpoint.tvsr -i " + w + "/small.vsrv -o " + w +
                     "/small_sr.vsrv");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("processed 1 windows") != std::string::npos);
    auto sr = tvsr::read_volume(w + "/small_sr.vsrv");
    CHECK(sr.depth == 12);
}

TEST_CASE("infer with a missing checkpoint fails without partial output") {
    const std::string w = workspace();
    auto r = run_cli("infer --checkpoint " + w + "/nope.tvsr -i " + w + "/data/phantom.thick.vsrv -o " + w +
                     "/never.vsrv");
    CHECK(r.exit_code == 3);
    CHECK(!fs::exists(w + "/never.vsrv"));
}

TEST_CASE("infer rejects a config that contradicts the checkpoint") {
    const std::string w = workspace();
    {
        std::ofstream cfg(w + "/conflict.json");
        cfg << R"({"model.r": 2})";
    }
    auto r = run_cli("infer --checkpoint " + w + "/run1/checkpoint.tvsr --config " + w + "/conflict.json -i " +
                     w + "/data/phantom.thick.vsrv -o " + w + "/never2.vsrv");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("mismatch") != std::string::npos);
    CHECK(!fs::exists(w + "/never2.vsrv"));
}

TEST_CASE("eval writes model and baseline rows, skipping unpaired files") {
    const std::string w = workspace();
    // an orphan thick volume with no thin partner
    tvsr::Volume orphan = tvsr::make_volume(4, 16, 16, {4, 1, 1}, tvsr::IntensityUnit::normalized, 0.5f);
    tvsr::write_volume(orphan, w + "/data/orphan.thick.vsrv");

    auto r = run_cli("eval --checkpoint " + w + "/run1/checkpoint.tvsr --data " + w + "/data -o " + w +
                     "/report.csv --with-baseline");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("warning") != std::string::npos);  // orphan skipped
    REQUIRE(fs::exists(w + "/report.csv"));
    std::ifstream in(w + "/report.csv");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    CHECK(text.find("pair,model,") != std::string::npos);
    CHECK(text.find("stat,model,psnr") != std::string::npos);
    CHECK(text.find("pair,baseline,") != std::string::npos);
    CHECK(text.find("stat,baseline,ssim") != std::string::npos);
    fs::remove(w + "/data/orphan.thick.vsrv");
}

TEST_CASE("slice-sim reports the three distance groups") {
    const std::string w = workspace();
    auto gen = run_cli("gen-phantom --seed 3 --dims 20,16,16 --thick-factor 5 --stem s5 -o " + w + "/sim");
    REQUIRE(gen.exit_code == 0);
    auto r = run_cli("slice-sim --thick " + w + "/sim/s5.thick.vsrv --thin " + w + "/sim/s5.thin.vsrv -o " + w +
                     "/sim/report.csv");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("match:") != std::string::npos);
    std::ifstream in(w + "/sim/report.csv");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    CHECK(text.find("group,match,0") != std::string::npos);
    CHECK(text.find("group,near,1") != std::string::npos);
    CHECK(text.find("group,far,2") != std::string::npos);
}

TEST_CASE("train records a validation trace when asked") {
    const std::string w = workspace();
    auto r = run_cli("train --data " + w + "/data -o " + w + "/run_val --steps 6 --seed 2 --patch 4,16,16" +
                     " --validation-interval 3" + kTinyModelFlags);
    CHECK(r.exit_code == 0);
    REQUIRE(fs::exists(w + "/run_val/validation.csv"));
    std::ifstream in(w + "/run_val/validation.csv");
    std::string line;
    int lines = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 2);  // steps 2 and 5 (the final step coincides with the interval)
}

TEST_CASE("config file values apply beneath command-line flags") {
    const std::string w = workspace();
    {
        std::ofstream cfg(w + "/train.json");
        cfg << R"({"model.embed_dim": 8, "model.heads": 2, "model.encoder_depth": 1, "model.n_fim": 1,)"
            << R"( "model.window": 4, "model.bias_hidden": 8, "model.mlp_ratio": 2,)"
            << R"( "train.steps": 2, "train.patch": "4,16,16"})";
    }
    auto r = run_cli("train --data " + w + "/data -o " + w + "/run_cfg --config " + w +
                     "/train.json --steps 3 --seed 9");
    CHECK(r.exit_code == 0);  // flag --steps 3 overrides the file's 2
    std::ifstream trace(w + "/run_cfg/trace.csv");
    std::string line;
    int lines = 0;
    while (std::getline(trace, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 3);

    {
        std::ofstream cfg(w + "/bad.json");
        cfg << R"({"model.bogus_key": 1})";
    }
    auto rbad = run_cli("train --data " + w + "/data -o " + w + "/run_bad --config " + w + "/bad.json");
    CHECK(rbad.exit_code == 2);
    CHECK(rbad.output.find("unknown key") != std::string::npos);
}

TEST_CASE("unknown flags exit with a validation error") {
    auto r = run_cli("train --definitely-not-a-flag 1");
    CHECK(r.exit_code == 2);
}
