#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "cli_runner.hpp"
#include "doctest.h"
#include "json.hpp"

namespace {

struct Workdir {
    std::filesystem::path dir;
    Workdir() {
        dir = std::filesystem::temp_directory_path() / ("gaproto_cli_" + std::to_string(::getpid()));
        std::filesystem::create_directories(dir);
    }
    ~Workdir() {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }
    std::string operator()(const std::string& name) const { return (dir / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Synthetic 2-cluster data split into train/test, plus a short training run.
struct Fixture {
    Workdir w;
    Fixture() {
        auto r = cli::run("synth --out " + w("train.gape") + " --test-out " + w("test.gape") +
                          " --test-fraction 0.2 --per-cluster 100 --dim 16 --seed 0 --texts");
        REQUIRE_MESSAGE(r.code == 0, r.out);
        r = cli::run("train --train " + w("train.gape") + " --val " + w("test.gape") + " --out " + w("m.gapc") +
                     " --history " + w("h.jsonl") + " --epochs 200");
        REQUIRE_MESSAGE(r.code == 0, r.out);
    }
};

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(cli::run("").code == 1);
    CHECK(cli::run("no-such-command").code == 1);
    CHECK(cli::run("train --bogus-flag").code == 1);
    CHECK(cli::run("--help").code == 0);
}

TEST_CASE("missing or malformed inputs exit with 2") {
    Workdir w;
    CHECK(cli::run("eval --model " + w("nope.gapc") + " --data " + w("nope.gape")).code == 2);
    std::ofstream(w("junk.gape")) << "junk";
    CHECK(cli::run("train --train " + w("junk.gape") + " --out " + w("m.gapc")).code == 2);
}

TEST_CASE("gradcheck on the default small config succeeds") {
    const auto r = cli::run("gradcheck");
    CHECK_MESSAGE(r.code == 0, r.out);
    CHECK(r.out.find("max relative error") != std::string::npos);
}

TEST_CASE("synth, train and eval end to end") {
    Fixture f;
    const auto& w = f.w;

    SUBCASE("banner echoes the default learning rate") {
        const auto r = cli::run("train --train " + w("train.gape") + " --out " + w("m2.gapc") + " --epochs 1");
        REQUIRE(r.code == 0);
        const auto first = r.out.substr(0, r.out.find('\n'));
        REQUIRE(first.rfind("gaproto train ", 0) == 0);
        const auto banner = nlohmann::json::parse(first.substr(14));
        CHECK(banner["lr"].get<double>() == 1e-4);
    }
    SUBCASE("eval reaches high accuracy") {
        const auto r = cli::run("eval --model " + w("m.gapc") + " --data " + w("test.gape") + " --json");
        REQUIRE_MESSAGE(r.code == 0, r.out);
        const auto j = nlohmann::json::parse(r.out);
        CHECK(j["accuracy"].get<double>() >= 0.98);
        CHECK(j["per_class"].size() == 2);
    }
    SUBCASE("history has one line per epoch") {
        const auto h = slurp(w("h.jsonl"));
        CHECK(std::count(h.begin(), h.end(), '\n') == 200);
        const auto last = nlohmann::json::parse(h.substr(h.rfind('\n', h.size() - 2) + 1));
        CHECK(last["epoch"] == 200);
        CHECK(last.contains("val_accuracy"));
    }
    SUBCASE("explain writes a report; bad index is a usage error") {
        const auto r = cli::run("explain --model " + w("m.gapc") + " --data " + w("test.gape") + " --train " +
                                w("train.gape") + " --index 3 --json " + w("e.json"));
        REQUIRE_MESSAGE(r.code == 0, r.out);
        const auto j = nlohmann::json::parse(slurp(w("e.json")));
        CHECK(j["reconstruction_residual"].get<double>() < 1e-9);
        CHECK(j["text"].is_string());
        CHECK(cli::run("explain --model " + w("m.gapc") + " --data " + w("test.gape") + " --index 40").code == 1);
    }
    SUBCASE("project writes one match per prototype") {
        REQUIRE(cli::run("project --model " + w("m.gapc") + " --data " + w("train.gape") + " --out " + w("p.json")).code == 0);
        const auto j = nlohmann::json::parse(slurp(w("p.json")));
        CHECK(j["prototypes"].size() == 20);
    }
    SUBCASE("viz emits one row per sample and prototype") {
        const auto r = cli::run("viz --model " + w("m.gapc") + " --data " + w("train.gape") + " --out " + w("v.csv") +
                                " --iters 300");
        REQUIRE_MESSAGE(r.code == 0, r.out);
        const auto csv = slurp(w("v.csv"));
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 160 + 20);
    }
    SUBCASE("resume with a different head width is a data error") {
        const auto r = cli::run("train --train " + w("train.gape") + " --out " + w("r.gapc") + " --resume " +
                                w("m.gapc") + " --head-dim 3 --epochs 1");
        CHECK_MESSAGE(r.code == 2, r.out);
    }
    SUBCASE("divergence exits with 3 and names the last good epoch") {
        const auto r = cli::run("train --train " + w("train.gape") + " --out " + w("nan.gapc") +
                                " --lr 1e300 --epochs 5 --accum 1");
        CHECK(r.code == 3);
        CHECK(r.out.find("last good epoch") != std::string::npos);
        CHECK_FALSE(std::filesystem::exists(w("nan.gapc")));
    }
    SUBCASE("inputs are not modified and reruns are byte-identical") {
        const auto before = slurp(w("train.gape"));
        REQUIRE(cli::run("train --train " + w("train.gape") + " --out " + w("a.gapc") + " --epochs 3").code == 0);
        REQUIRE(cli::run("train --train " + w("train.gape") + " --out " + w("b.gapc") + " --epochs 3").code == 0);
        CHECK(slurp(w("a.gapc")) == slurp(w("b.gapc")));
        CHECK(slurp(w("train.gape")) == before);
    }
}
