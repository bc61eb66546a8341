#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "msef/errors.hpp"
#include "msef/io.hpp"
#include "msef/pipeline.hpp"

namespace {

// exit codes: 0 success, 1 user error, 2 internal error
int run_command(const std::string& name, const std::string& config_path, long long seed_override,
                const std::string& out_override, bool create) {
    msef::pipeline::RunConfig cfg;
    try {
        cfg = msef::pipeline::load_config(config_path);
        if (seed_override >= 0) {
            // Re-derive the whole config under the new seed.
            nlohmann::json j = nlohmann::json::parse(msef::io::read_file(config_path));
            j["seed"] = static_cast<uint64_t>(seed_override);
            cfg = msef::pipeline::config_from_json_text(j.dump());
        }
        if (!out_override.empty()) cfg.report_dir = out_override;
    } catch (const std::exception& e) {
        std::cerr << "msef: " << e.what() << "\n";
        return 1;
    }

    try {
        if (name == "generate") return msef::pipeline::cmd_generate(cfg, create);
        if (name == "curate") return msef::pipeline::cmd_curate(cfg);
        if (name == "train") return msef::pipeline::cmd_train(cfg);
        if (name == "evaluate") return msef::pipeline::cmd_evaluate(cfg);
        if (name == "audit") return msef::pipeline::cmd_audit(cfg);
        std::cerr << "msef: unknown command " << name << "\n";
        return 1;
    } catch (const msef::InputError& e) {
        std::cerr << "msef " << name << ": " << e.what() << "\n";
        return 1;
    } catch (const msef::ValidationError& e) {
        std::cerr << "msef " << name << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "msef " << name << ": internal error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MSEF pipeline driver: generate, curate, train, evaluate, audit"};
    app.require_subcommand(1);

    std::string config_path;
    long long seed = -1;
    std::string out_dir;
    bool create = true;

    const char* names[] = {"generate", "curate", "train", "evaluate", "audit"};
    const char* blurbs[] = {"write a synthetic corpus with planted ground truth",
                            "validate, scrub, dedup, normalize, balance and split the corpus",
                            "fine-tune the adapters on the curated training split",
                            "score the validation split with the trained checkpoint",
                            "compute the statistical audit report and figures"};
    for (int i = 0; i < 5; ++i) {
        CLI::App* sub = app.add_subcommand(names[i], blurbs[i]);
        sub->add_option("--config", config_path, "path to the run config JSON")->required();
        sub->add_option("--seed", seed, "override the run seed");
        sub->add_option("--out", out_dir, "override the report directory");
        sub->add_flag("--create,!--no-create", create, "create missing output directories");
    }

    if (argc <= 1) {
        std::cout << app.help();
        return 1;
    }
    CLI11_PARSE(app, argc, argv);

    for (const auto* sub : app.get_subcommands())
        return run_command(sub->get_name(), config_path, seed, out_dir, create);
    return 1;
}
