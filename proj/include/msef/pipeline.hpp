#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msef/model.hpp"
#include "msef/scenes.hpp"

namespace msef::pipeline {

struct CurationConfig {
    int hamming_max = 10;
    double geo_max_m = 5.0;
    double tau = 0.2;
    double periodic_fraction = 0.1;
    double val_fraction = 0.2;
    bool fixed_price_cuts = false;  // true: Harbin threshold mode
};

struct TrainingConfig {
    int epochs = 3;
    int batch_size = 8;
    double lr = 0.01;
    double loss_weight_mse = 1.0;
    double loss_weight_ce = 1.0;
    int curriculum_sample = 16;  // images sampled for the n-gram drift check
    bool resume = false;
};

struct ReportToggles {
    bool f1 = true;
    bool agreement = true;
    bool bland_altman = true;
    bool ols = true;
    bool poly = true;
    bool correlations = true;
    bool out_of_range = true;
    bool distributions = true;
    bool figures = true;
};

struct ReportConfig {
    ReportToggles toggles;
    double expected_range_band = 1.5;
};

struct RunConfig {
    uint64_t seed = 42;
    std::string corpus_dir = "corpus";
    std::string checkpoint = "corpus/checkpoint.json";
    std::string report_dir = "report";
    model::AdapterConfig adapter;
    CurationConfig curation;
    scenes::EffectModel effects = scenes::EffectModel::table1_defaults();
    scenes::CorpusParams corpus;
    TrainingConfig training;
    ReportConfig report;
    int eval_repetitions = 3;
};

// Strict parse: unknown keys anywhere in the tree are rejected.
RunConfig load_config(const std::string& path);
RunConfig config_from_json_text(const std::string& text);
std::string default_config_json();

// Structural validation of a report document (schema_version 1). Throws
// ValidationError on any malformed section.
void validate_report(const std::string& report_json_text);

// Commands return 0 on success; they throw on hard errors (the CLI maps
// exception types onto exit codes 1/2).
int cmd_generate(const RunConfig& cfg, bool create_dirs = true);
int cmd_curate(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_evaluate(const RunConfig& cfg);
int cmd_audit(const RunConfig& cfg);

// Paths derived from the config; shared by commands and tests.
struct Paths {
    std::string images, ratings, communities, triplets, manifest;
    std::string curated_triplets, curated_ratings, splits, dedup_log, swap_log, curation_report;
    std::string curation_audit;  // one JSON line per curation stage
    std::string loss_csv, predictions, report_json;
};
Paths paths_of(const RunConfig& cfg);

}  // namespace msef::pipeline
