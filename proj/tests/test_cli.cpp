#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "msef/io.hpp"
#include "msef/pipeline.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(MSEF_BINARY) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string write_config(const fs::path& dir, uint64_t seed) {
    json j = json::parse(msef::pipeline::default_config_json());
    j["seed"] = seed;
    j["paths"]["corpus_dir"] = (dir / "corpus").string();
    j["paths"]["checkpoint"] = (dir / "corpus" / "checkpoint.json").string();
    j["paths"]["report_dir"] = (dir / "report").string();
    j["corpus"]["n_communities"] = 10;
    j["corpus"]["images_per_community"] = 2;
    j["corpus"]["respondents"] = 10;
    j["corpus"]["triplet_dims_per_image"] = 2;
    j["adapter"]["model_dim"] = 8;
    j["adapter"]["lora_rank"] = 2;
    j["adapter"]["prefix_len"] = 3;
    j["adapter"]["num_queries"] = 4;
    j["adapter"]["num_heads"] = 2;
    j["adapter"]["vocab_size"] = 32;
    j["adapter"]["num_blocks"] = 2;
    j["adapter"]["ffn_mult"] = 2;
    j["adapter"]["max_rationale_len"] = 4;
    j["training"]["epochs"] = 1;
    j["training"]["curriculum_sample"] = 2;
    j["evaluate"]["repetitions"] = 1;
    const std::string path = (dir / "config.json").string();
    msef::io::write_file(path, j.dump(1));
    return path;
}

}  // namespace

TEST_CASE("subcommands run end to end through the binary with exit code 0") {
    const fs::path dir = fs::temp_directory_path() / "msef_cli_e2e";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string config = write_config(dir, 2024);

    CHECK(run("generate --config " + config) == 0);
    CHECK(run("curate --config " + config) == 0);
    CHECK(run("train --config " + config) == 0);
    CHECK(run("evaluate --config " + config) == 0);
    CHECK(run("audit --config " + config) == 0);
    CHECK(fs::exists(dir / "report" / "report.json"));
    CHECK(fs::exists(dir / "report" / "ols_table.csv"));
    fs::remove_all(dir);
}

TEST_CASE("user errors exit 1") {
    const fs::path dir = fs::temp_directory_path() / "msef_cli_err";
    fs::remove_all(dir);
    fs::create_directories(dir);
    // missing config file
    CHECK(run("generate --config " + (dir / "nope.json").string()) == 1);
    // config with an unknown key
    msef::io::write_file((dir / "bad.json").string(), R"({"sede": 1})");
    CHECK(run("generate --config " + (dir / "bad.json").string()) == 1);
    // curate without generated inputs
    const std::string config = write_config(dir, 5);
    CHECK(run("curate --config " + config) == 1);
    fs::remove_all(dir);
}

TEST_CASE("MSEF_REPORT_DIR overrides the report directory") {
    setenv("MSEF_REPORT_DIR", "/tmp/msef_env_report", 1);
    const auto cfg = msef::pipeline::config_from_json_text(R"({"paths": {"report_dir": "elsewhere"}})");
    CHECK(cfg.report_dir == "/tmp/msef_env_report");
    unsetenv("MSEF_REPORT_DIR");
    const auto cfg2 = msef::pipeline::config_from_json_text(R"({"paths": {"report_dir": "elsewhere"}})");
    CHECK(cfg2.report_dir == "elsewhere");
}

TEST_CASE("--seed override changes outputs deterministically") {
    const fs::path dir = fs::temp_directory_path() / "msef_cli_seed";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string config = write_config(dir, 11);
    CHECK(run("generate --config " + config + " --seed 77") == 0);
    const std::string first = msef::io::file_hash((dir / "corpus" / "manifest.json").string());
    CHECK(run("generate --config " + config + " --seed 77") == 0);
    CHECK(msef::io::file_hash((dir / "corpus" / "manifest.json").string()) == first);
    CHECK(run("generate --config " + config + " --seed 78") == 0);
    CHECK(msef::io::file_hash((dir / "corpus" / "manifest.json").string()) != first);
    fs::remove_all(dir);
}

#ifdef _OPENMP
TEST_CASE("generation and dedup are invariant to the thread count") {
    msef::scenes::CorpusParams p;
    p.n_communities = 12;
    p.images_per_community = 6;
    p.respondents = 8;
    p.planted_hash_dups = 2;
    p.seed = 5150;
    const auto effects = msef::scenes::EffectModel::table1_defaults();

    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const auto serial = msef::scenes::gen_corpus(p, effects);
    const auto dd_serial = msef::curation::dedup(serial.images, 10, 5.0);
    omp_set_num_threads(4);
    const auto parallel = msef::scenes::gen_corpus(p, effects);
    const auto dd_parallel = msef::curation::dedup(parallel.images, 10, 5.0);
    omp_set_num_threads(saved);

    REQUIRE(serial.images.size() == parallel.images.size());
    for (size_t i = 0; i < serial.images.size(); ++i) {
        CHECK(serial.images[i].image_id == parallel.images[i].image_id);
        CHECK(serial.images[i].pixels.px == parallel.images[i].pixels.px);
    }
    REQUIRE(dd_serial.removed.size() == dd_parallel.removed.size());
    for (size_t i = 0; i < dd_serial.removed.size(); ++i)
        CHECK(dd_serial.removed[i].removed_id == dd_parallel.removed[i].removed_id);
}
#endif
