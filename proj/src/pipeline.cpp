#include "msef/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "msef/io.hpp"
#include "msef/model_json.hpp"
#include "msef/report.hpp"
#include "msef/rng.hpp"
#include "msef/stats.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace msef::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw InputError("config: " + where + " must be an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw InputError("config: unknown key '" + key + "' in " + where);
}

}  // namespace

std::string default_config_json() {
    json j;
    j["seed"] = 42;
    j["paths"] = {{"corpus_dir", "corpus"}, {"checkpoint", "corpus/checkpoint.json"}, {"report_dir", "report"}};
    model::AdapterConfig adapter;
    // The pipeline scores the survey registry dimensions so evaluate/audit
    // can join predictions against ratings and planted references.
    adapter.score_dims.clear();
    const auto registry = curation::DimensionRegistry::standard();
    for (const auto& [name, spec] : registry.all()) adapter.score_dims.push_back(name);
    json aj = model::adapter_to_json(adapter);
    aj.erase("seed");  // derived from the top-level seed
    j["adapter"] = aj;
    j["curation"] = {{"hamming_max", 10}, {"geo_max_m", 5.0},      {"tau", 0.2},
                     {"periodic_fraction", 0.1}, {"val_fraction", 0.2}, {"fixed_price_cuts", false}};
    scenes::EffectModel e = scenes::EffectModel::table1_defaults();
    j["effects"] = {{"betas", e.betas},
                    {"quad_coeff", e.quad_coeff},
                    {"quad_vertex", e.quad_vertex},
                    {"openness_commercial_beta", e.openness_commercial_beta},
                    {"noise_sd", e.noise_sd},
                    {"intercept", e.intercept},
                    {"clip_lo", e.clip_lo},
                    {"clip_hi", e.clip_hi},
                    {"feature_center", e.feature_center}};
    scenes::CorpusParams c;
    j["corpus"] = {{"n_communities", c.n_communities},
                   {"images_per_community", c.images_per_community},
                   {"respondents", c.respondents},
                   {"ratings_per_image_dim", c.ratings_per_image_dim},
                   {"feature_lo", c.feature_lo},
                   {"feature_hi", c.feature_hi},
                   {"planted_biases", json::array()},
                   {"respondent_bias_lo", c.respondent_bias_lo},
                   {"respondent_bias_hi", c.respondent_bias_hi},
                   {"respondent_spread_lo", c.respondent_spread_lo},
                   {"respondent_spread_hi", c.respondent_spread_hi},
                   {"skip_prob", c.skip_prob},
                   {"rating_noise_sd", c.rating_noise_sd},
                   {"planted_hash_dups", 0},
                   {"planted_geo_dups", 0},
                   {"planted_chains", 0},
                   {"triplet_dims_per_image", c.triplet_dims_per_image}};
    TrainingConfig t;
    j["training"] = {{"epochs", t.epochs},
                     {"batch_size", t.batch_size},
                     {"lr", t.lr},
                     {"loss_weight_mse", t.loss_weight_mse},
                     {"loss_weight_ce", t.loss_weight_ce},
                     {"curriculum_sample", t.curriculum_sample},
                     {"resume", t.resume}};
    j["evaluate"] = {{"repetitions", 3}};
    ReportConfig r;
    j["report"] = {{"expected_range_band", r.expected_range_band},
                   {"toggles",
                    {{"f1", true},
                     {"agreement", true},
                     {"bland_altman", true},
                     {"ols", true},
                     {"poly", true},
                     {"correlations", true},
                     {"out_of_range", true},
                     {"distributions", true},
                     {"figures", true}}}};
    return j.dump(1);
}

RunConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(std::string("config: invalid JSON: ") + e.what());
    }
    check_keys(j, {"seed", "paths", "adapter", "curation", "effects", "corpus", "training", "evaluate", "report"},
               "top level");

    RunConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);

    if (j.contains("paths")) {
        check_keys(j["paths"], {"corpus_dir", "checkpoint", "report_dir"}, "paths");
        cfg.corpus_dir = j["paths"].value("corpus_dir", cfg.corpus_dir);
        cfg.checkpoint = j["paths"].value("checkpoint", cfg.checkpoint);
        cfg.report_dir = j["paths"].value("report_dir", cfg.report_dir);
    }
    if (j.contains("adapter")) {
        check_keys(j["adapter"],
                   {"model_dim", "lora_rank", "prefix_len", "num_queries", "num_heads", "patch_size",
                    "vocab_size", "num_blocks", "ffn_mult", "max_rationale_len", "seed", "score_dims"},
                   "adapter");
        cfg.adapter = model::adapter_from_json(j["adapter"]);
    }
    if (!j.contains("adapter") || !j["adapter"].contains("score_dims")) {
        // the pipeline scores the survey registry dimensions by default
        cfg.adapter.score_dims.clear();
        const auto registry = curation::DimensionRegistry::standard();
        for (const auto& [name, spec] : registry.all()) cfg.adapter.score_dims.push_back(name);
    }
    if (j.contains("curation")) {
        check_keys(j["curation"],
                   {"hamming_max", "geo_max_m", "tau", "periodic_fraction", "val_fraction", "fixed_price_cuts"},
                   "curation");
        cfg.curation.hamming_max = j["curation"].value("hamming_max", cfg.curation.hamming_max);
        cfg.curation.geo_max_m = j["curation"].value("geo_max_m", cfg.curation.geo_max_m);
        cfg.curation.tau = j["curation"].value("tau", cfg.curation.tau);
        cfg.curation.periodic_fraction = j["curation"].value("periodic_fraction", cfg.curation.periodic_fraction);
        cfg.curation.val_fraction = j["curation"].value("val_fraction", cfg.curation.val_fraction);
        cfg.curation.fixed_price_cuts = j["curation"].value("fixed_price_cuts", cfg.curation.fixed_price_cuts);
    }
    if (j.contains("effects")) {
        check_keys(j["effects"],
                   {"betas", "quad_coeff", "quad_vertex", "openness_commercial_beta", "noise_sd", "intercept",
                    "clip_lo", "clip_hi", "feature_center"},
                   "effects");
        const json& e = j["effects"];
        if (e.contains("betas")) cfg.effects.betas = e["betas"].get<std::map<std::string, double>>();
        cfg.effects.quad_coeff = e.value("quad_coeff", cfg.effects.quad_coeff);
        cfg.effects.quad_vertex = e.value("quad_vertex", cfg.effects.quad_vertex);
        cfg.effects.openness_commercial_beta =
            e.value("openness_commercial_beta", cfg.effects.openness_commercial_beta);
        cfg.effects.noise_sd = e.value("noise_sd", cfg.effects.noise_sd);
        cfg.effects.intercept = e.value("intercept", cfg.effects.intercept);
        cfg.effects.clip_lo = e.value("clip_lo", cfg.effects.clip_lo);
        cfg.effects.clip_hi = e.value("clip_hi", cfg.effects.clip_hi);
        cfg.effects.feature_center = e.value("feature_center", cfg.effects.feature_center);
    }
    if (j.contains("corpus")) {
        check_keys(j["corpus"],
                   {"n_communities", "images_per_community", "respondents", "ratings_per_image_dim", "feature_lo",
                    "feature_hi", "planted_biases", "respondent_bias_lo", "respondent_bias_hi",
                    "respondent_spread_lo", "respondent_spread_hi", "skip_prob", "rating_noise_sd",
                    "planted_hash_dups", "planted_geo_dups", "planted_chains", "triplet_dims_per_image"},
                   "corpus");
        const json& c = j["corpus"];
        auto& p = cfg.corpus;
        p.n_communities = c.value("n_communities", p.n_communities);
        p.images_per_community = c.value("images_per_community", p.images_per_community);
        p.respondents = c.value("respondents", p.respondents);
        p.ratings_per_image_dim = c.value("ratings_per_image_dim", p.ratings_per_image_dim);
        p.feature_lo = c.value("feature_lo", p.feature_lo);
        p.feature_hi = c.value("feature_hi", p.feature_hi);
        if (c.contains("planted_biases")) p.planted_biases = c["planted_biases"].get<std::vector<double>>();
        p.respondent_bias_lo = c.value("respondent_bias_lo", p.respondent_bias_lo);
        p.respondent_bias_hi = c.value("respondent_bias_hi", p.respondent_bias_hi);
        p.respondent_spread_lo = c.value("respondent_spread_lo", p.respondent_spread_lo);
        p.respondent_spread_hi = c.value("respondent_spread_hi", p.respondent_spread_hi);
        p.skip_prob = c.value("skip_prob", p.skip_prob);
        p.rating_noise_sd = c.value("rating_noise_sd", p.rating_noise_sd);
        p.planted_hash_dups = c.value("planted_hash_dups", p.planted_hash_dups);
        p.planted_geo_dups = c.value("planted_geo_dups", p.planted_geo_dups);
        p.planted_chains = c.value("planted_chains", p.planted_chains);
        p.triplet_dims_per_image = c.value("triplet_dims_per_image", p.triplet_dims_per_image);
    }
    if (j.contains("training")) {
        check_keys(j["training"],
                   {"epochs", "batch_size", "lr", "loss_weight_mse", "loss_weight_ce", "curriculum_sample",
                    "resume"},
                   "training");
        const json& t = j["training"];
        cfg.training.epochs = t.value("epochs", cfg.training.epochs);
        cfg.training.batch_size = t.value("batch_size", cfg.training.batch_size);
        cfg.training.lr = t.value("lr", cfg.training.lr);
        cfg.training.loss_weight_mse = t.value("loss_weight_mse", cfg.training.loss_weight_mse);
        cfg.training.loss_weight_ce = t.value("loss_weight_ce", cfg.training.loss_weight_ce);
        cfg.training.curriculum_sample = t.value("curriculum_sample", cfg.training.curriculum_sample);
        cfg.training.resume = t.value("resume", cfg.training.resume);
    }
    if (j.contains("evaluate")) {
        check_keys(j["evaluate"], {"repetitions"}, "evaluate");
        cfg.eval_repetitions = j["evaluate"].value("repetitions", cfg.eval_repetitions);
    }
    if (j.contains("report")) {
        check_keys(j["report"], {"expected_range_band", "toggles"}, "report");
        cfg.report.expected_range_band = j["report"].value("expected_range_band", cfg.report.expected_range_band);
        if (j["report"].contains("toggles")) {
            const json& t = j["report"]["toggles"];
            check_keys(t,
                       {"f1", "agreement", "bland_altman", "ols", "poly", "correlations", "out_of_range",
                        "distributions", "figures"},
                       "report.toggles");
            auto& g = cfg.report.toggles;
            g.f1 = t.value("f1", g.f1);
            g.agreement = t.value("agreement", g.agreement);
            g.bland_altman = t.value("bland_altman", g.bland_altman);
            g.ols = t.value("ols", g.ols);
            g.poly = t.value("poly", g.poly);
            g.correlations = t.value("correlations", g.correlations);
            g.out_of_range = t.value("out_of_range", g.out_of_range);
            g.distributions = t.value("distributions", g.distributions);
            g.figures = t.value("figures", g.figures);
        }
    }

    // Sub-seeds derive from the run seed unless pinned explicitly.
    if (!j.contains("adapter") || !j["adapter"].contains("seed"))
        cfg.adapter.seed = CounterRng::derive(cfg.seed, "model");
    cfg.corpus.seed = CounterRng::derive(cfg.seed, "corpus");

    // Environment override honored for the report directory only.
    if (const char* env = std::getenv("MSEF_REPORT_DIR"); env && *env) cfg.report_dir = env;
    return cfg;
}

RunConfig load_config(const std::string& path) { return config_from_json_text(io::read_file(path)); }

Paths paths_of(const RunConfig& cfg) {
    Paths p;
    const std::string d = cfg.corpus_dir + "/";
    p.images = d + "images.jsonl";
    p.ratings = d + "ratings.csv";
    p.communities = d + "communities.csv";
    p.triplets = d + "triplets.jsonl";
    p.manifest = d + "manifest.json";
    p.curated_triplets = d + "triplets_curated.jsonl";
    p.curated_ratings = d + "ratings_curated.csv";
    p.splits = d + "splits.json";
    p.dedup_log = d + "dedup_log.jsonl";
    p.swap_log = d + "swap_log.jsonl";
    p.curation_report = d + "curation_report.json";
    p.curation_audit = d + "curation_audit.jsonl";
    p.loss_csv = d + "loss.csv";
    p.predictions = d + "predictions.csv";
    p.report_json = cfg.report_dir + "/report.json";
    return p;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

int cmd_generate(const RunConfig& cfg, bool create_dirs) {
    const Paths p = paths_of(cfg);
    if (create_dirs) fs::create_directories(cfg.corpus_dir);
    if (!fs::exists(cfg.corpus_dir)) throw InputError("generate: output directory missing: " + cfg.corpus_dir);

    scenes::CorpusData corpus = scenes::gen_corpus(cfg.corpus, cfg.effects);

    io::write_images(p.images, corpus.images, corpus.truth);
    io::write_ratings(p.ratings, corpus.ratings);
    std::vector<io::CommunityRow> rows;
    std::set<std::string> seen;
    for (const auto& img : corpus.images)
        if (seen.insert(img.community_id).second)
            rows.push_back(io::CommunityRow{img.community_id, img.price_per_sqm, img.lat, img.lon});
    io::write_communities(p.communities, rows);
    io::write_triplets(p.triplets, corpus.triplets);
    io::write_manifest(p.manifest, corpus);

    std::cout << "generate: images=" << corpus.images.size() << " ratings=" << corpus.ratings.size()
              << " triplets=" << corpus.triplets.size() << " communities=" << rows.size()
              << " manifest_hash=" << io::file_hash(p.manifest) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// curate
// ---------------------------------------------------------------------------

namespace {

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw InputError("missing input: " + what + " (" + path + ")");
}

}  // namespace

int cmd_curate(const RunConfig& cfg) {
    const Paths p = paths_of(cfg);
    require_file(p.triplets, "triplet file");
    require_file(p.ratings, "ratings file");
    require_file(p.communities, "community file");
    require_file(p.images, "image file");

    const auto registry = curation::DimensionRegistry::standard();
    json report;
    std::ostringstream stage_audit;
    auto stage = [&stage_audit](json record) { stage_audit << record.dump() << '\n'; };

    // validate
    io::TripletLoad load = io::read_triplets(p.triplets, registry, curation::ParseMode::strict);
    if (!load.errors.empty()) {
        for (const auto& e : load.errors) std::cerr << "curate: validation: " << e << "\n";
        throw ValidationError("curate: " + std::to_string(load.errors.size()) + " invalid triplet line(s)");
    }
    report["validated"] = load.triplets.size();
    stage({{"stage", "validate"}, {"triplets", load.triplets.size()}, {"errors", 0}});

    // scrub
    long redactions = 0;
    for (auto& t : load.triplets) {
        auto rq = curation::scrub_pii(t.question);
        auto ra = curation::scrub_pii(t.answer_text);
        t.question = rq.text;
        t.answer_text = ra.text;
        redactions += rq.redactions + ra.redactions;
    }
    report["redactions"] = redactions;
    stage({{"stage", "scrub"}, {"redactions", redactions}});

    // dedup
    io::ImageLoad images = io::read_images(p.images);
    curation::DedupResult dd = curation::dedup(images.images, cfg.curation.hamming_max, cfg.curation.geo_max_m);
    {
        std::ostringstream log;
        for (const auto& r : dd.removed) {
            json e;
            e["rule"] = r.rule;
            e["kept"] = r.kept_id;
            e["removed"] = r.removed_id;
            e["hamming"] = r.hamming_distance;
            e["geo_m"] = r.geo_distance_m;
            log << e.dump() << '\n';
        }
        io::write_file(p.dedup_log, log.str());
    }
    std::set<std::string> removed_ids;
    for (const auto& r : dd.removed) removed_ids.insert(r.removed_id);
    report["dedup_removed"] = dd.removed.size();

    const size_t triplets_before = load.triplets.size();
    std::erase_if(load.triplets, [&](const curation::QATriplet& t) { return removed_ids.count(t.image_id) > 0; });
    report["triplets_dropped_by_dedup"] = triplets_before - load.triplets.size();
    stage({{"stage", "dedup"},
           {"removed_images", dd.removed.size()},
           {"dropped_triplets", triplets_before - load.triplets.size()}});

    // normalize
    std::vector<curation::RatingRecord> ratings = io::read_ratings(p.ratings);
    const size_t ratings_before = ratings.size();
    std::erase_if(ratings, [&](const curation::RatingRecord& r) { return removed_ids.count(r.image_id) > 0; });
    curation::NormalizeResult norm = curation::normalize_likert(ratings);
    io::write_ratings(p.curated_ratings, norm.ratings);
    report["ratings_dropped_by_dedup"] = ratings_before - ratings.size();
    report["unnormalized_respondents"] = norm.unnormalized_respondents.size();
    stage({{"stage", "normalize"},
           {"ratings", norm.ratings.size()},
           {"dropped_ratings", ratings_before - ratings.size()},
           {"unnormalized_respondents", norm.unnormalized_respondents.size()}});

    // balance the active corpus (reserve pairs are a separate buffer)
    std::vector<curation::QATriplet> active, reserve;
    for (auto& t : load.triplets)
        (t.split == curation::Split::reserve ? reserve : active).push_back(std::move(t));
    curation::BalanceResult balanced =
        curation::balance_dimensions(active, registry, CounterRng::derive(cfg.seed, "balance"));
    {
        json bj = json::object();
        for (const auto& [dim, b] : balanced.report)
            bj[dim] = {{"count", b.count},
                       {"positive", b.positive},
                       {"added", b.added},
                       {"sentiment_ratio", b.sentiment_ratio},
                       {"deficient", b.deficient}};
        report["balance"] = std::move(bj);
        long added = 0, deficient = 0;
        for (const auto& [dim, b] : balanced.report) {
            added += b.added;
            if (b.deficient) ++deficient;
        }
        stage({{"stage", "balance"}, {"added", added}, {"deficient_dimensions", deficient}});
    }

    // tiers + spatial holdout
    std::vector<io::CommunityRow> comm = io::read_communities(p.communities);
    std::vector<std::pair<std::string, double>> prices;
    for (const auto& c : comm) prices.emplace_back(c.community_id, c.price_per_sqm);
    curation::QuintileResult tiers = cfg.curation.fixed_price_cuts
                                         ? curation::fixed_threshold_bin(prices, curation::harbin_price_cuts())
                                         : curation::quintile_bin(prices);
    curation::SplitResult split =
        curation::stratified_split(tiers.tier, cfg.curation.val_fraction, CounterRng::derive(cfg.seed, "split"));
    for (const auto& w : split.warnings) std::cerr << "curate: " << w << "\n";

    std::map<std::string, std::string> image_community;
    for (const auto& img : dd.kept) image_community[img.image_id] = img.community_id;

    std::vector<curation::QATriplet> curated = std::move(balanced.corpus);
    for (auto& t : reserve) curated.push_back(std::move(t));
    for (auto& t : curated) {
        auto it = image_community.find(t.image_id);
        if (it == image_community.end()) continue;
        if (split.val_communities.count(it->second) && t.split != curation::Split::reserve)
            t.split = curation::Split::val;
    }
    io::write_triplets(p.curated_triplets, curated);

    {
        json sj;
        json cj = json::object();
        for (const auto& [cid, tier] : tiers.tier) {
            cj[cid] = {{"tier", tier},
                       {"split", split.val_communities.count(cid) ? "val" : "train"}};
        }
        sj["communities"] = std::move(cj);
        sj["thresholds"] = tiers.thresholds;
        sj["mode"] = cfg.curation.fixed_price_cuts ? "fixed" : "equal_frequency";
        io::write_file(p.splits, sj.dump(1));
    }
    report["split_warnings"] = split.warnings;
    report["train_communities"] = split.train_communities.size();
    report["val_communities"] = split.val_communities.size();
    stage({{"stage", "split"},
           {"train_communities", split.train_communities.size()},
           {"val_communities", split.val_communities.size()},
           {"warnings", split.warnings.size()}});
    io::write_file(p.curation_audit, stage_audit.str());
    io::write_file(p.curation_report, report.dump(1));

    std::cout << "curate: validated=" << report["validated"] << " redactions=" << redactions
              << " dedup_removed=" << dd.removed.size() << " curated_triplets=" << curated.size() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace {

double map_score_to_unit_range(double s, const curation::DimensionSpec& spec) {
    return 1.0 + 4.0 * (s - spec.lo) / (spec.hi - spec.lo);
}

std::string tokens_to_text(const std::vector<int>& ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out.push_back(' ');
        out += std::to_string(ids[i]);
    }
    return out;
}

}  // namespace

int cmd_train(const RunConfig& cfg) {
    const Paths p = paths_of(cfg);
    require_file(p.curated_triplets, "curated triplet file");
    require_file(p.images, "image file");
    require_file(p.splits, "split assignments");

    const auto registry = curation::DimensionRegistry::standard();
    io::TripletLoad load = io::read_triplets(p.curated_triplets, registry, curation::ParseMode::strict);
    if (!load.errors.empty()) throw ValidationError("train: curated corpus failed validation");

    io::ImageLoad images = io::read_images(p.images);
    std::map<std::string, const curation::Image*> image_by_id;
    for (const auto& img : images.images) image_by_id[img.image_id] = &img.pixels;

    model::AdapterConfig acfg = cfg.adapter;
    model::MsefModel mdl(acfg);
    Adam opt(AdamHyper{cfg.training.lr, 0.9, 0.999, 1e-8});
    int64_t start_epoch = 0;
    if (cfg.training.resume && fs::exists(cfg.checkpoint)) {
        model::Checkpoint ck = model::load_checkpoint(mdl, opt, cfg.checkpoint);
        start_epoch = ck.epoch;
        std::cout << "train: resumed from epoch " << start_epoch << " (optimizer step " << opt.step_count()
                  << ")\n";
    }
    const model::Vocab vocab(acfg.vocab_size);

    const uint64_t hash_before = mdl.frozen_manifest_hash();
    std::printf("train: frozen manifest hash before = %016llx\n",
                static_cast<unsigned long long>(hash_before));

    // Curriculum state over training-split images.
    curation::CurriculumState state;
    for (const auto& t : load.triplets) {
        if (!image_by_id.count(t.image_id)) continue;
        if (t.split == curation::Split::train)
            state.active[t.image_id].push_back(curation::CurriculumEntry{t, -1});
        else if (t.split == curation::Split::reserve)
            state.reserve[t.image_id].push_back(t);
    }
    if (state.active.empty()) throw InputError("train: no training-split triplets");

    auto encode_ref = [&](const curation::QATriplet& t) { return tokens_to_text(vocab.encode(t.answer_text)); };

    std::ostringstream losscsv;
    if (start_epoch == 0) losscsv << "epoch,mean_loss,steps\n";
    std::vector<std::string> swap_log_lines;
    std::vector<std::string> periodic;

    for (int64_t epoch = start_epoch; epoch < cfg.training.epochs; ++epoch) {
        // Assemble examples; periodic images draw their first pair from reserve.
        std::set<std::string> periodic_set(periodic.begin(), periodic.end());
        std::vector<model::TrainExample> examples;
        for (const auto& [image_id, entries] : state.active) {
            const curation::Image* img = image_by_id.at(image_id);
            bool replaced_one = false;
            const auto reserve_it = state.reserve.find(image_id);
            for (const auto& entry : entries) {
                const curation::QATriplet* src = &entry.triplet;
                if (!replaced_one && periodic_set.count(image_id) && reserve_it != state.reserve.end() &&
                    !reserve_it->second.empty()) {
                    src = &reserve_it->second.front();
                    replaced_one = true;
                }
                if (!src->answer_score.has_value()) continue;
                model::TrainExample ex;
                ex.image = *img;
                ex.question_tokens = vocab.encode(src->question);
                ex.answer_tokens = vocab.encode(src->answer_text);
                ex.dimension = src->dimension;
                ex.target_score = map_score_to_unit_range(*src->answer_score, registry.get(src->dimension));
                examples.push_back(std::move(ex));
            }
        }

        CounterRng shuffle_rng(CounterRng::derive(CounterRng::derive(cfg.seed, "epoch"), static_cast<uint64_t>(epoch)));
        for (size_t i = examples.size(); i > 1; --i)
            std::swap(examples[i - 1], examples[static_cast<size_t>(shuffle_rng.next_below(i))]);

        double loss_sum = 0.0;
        long steps = 0;
        for (size_t b = 0; b < examples.size(); b += static_cast<size_t>(cfg.training.batch_size)) {
            const size_t e = std::min(examples.size(), b + static_cast<size_t>(cfg.training.batch_size));
            std::vector<model::TrainExample> batch(examples.begin() + static_cast<long>(b),
                                                   examples.begin() + static_cast<long>(e));
            loss_sum += mdl.train_step(batch, opt, cfg.training.loss_weight_mse, cfg.training.loss_weight_ce);
            ++steps;
        }
        const double mean_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
        losscsv << epoch << ',' << mean_loss << ',' << steps << '\n';
        std::cout << "train: epoch " << epoch << " mean_loss=" << mean_loss << " steps=" << steps << "\n";

        // Mark usage for LRU bookkeeping.
        for (auto& [image_id, entries] : state.active)
            for (auto& entry : entries)
                if (!periodic_set.count(image_id)) entry.last_used_epoch = epoch;

        // Generate rationales for a seeded sample and refresh the curriculum.
        std::vector<std::string> train_images;
        for (const auto& [image_id, entries] : state.active) train_images.push_back(image_id);
        CounterRng sample_rng(CounterRng::derive(CounterRng::derive(cfg.seed, "sample"), static_cast<uint64_t>(epoch)));
        for (size_t i = train_images.size(); i > 1; --i)
            std::swap(train_images[i - 1], train_images[static_cast<size_t>(sample_rng.next_below(i))]);
        if (static_cast<long>(train_images.size()) > cfg.training.curriculum_sample)
            train_images.resize(static_cast<size_t>(cfg.training.curriculum_sample));
        std::sort(train_images.begin(), train_images.end());

        std::map<std::string, std::string> generations;
        const auto& sat_questions = scenes::question_bank("overall satisfaction");
        const std::vector<int> qtok = vocab.encode(sat_questions[0]);
        for (const auto& image_id : train_images) {
            const model::DualOutput out = mdl.forward(*image_by_id.at(image_id), qtok);
            generations[image_id] = tokens_to_text(out.rationale_tokens);
        }

        curation::CurriculumOutcome refresh = curation::curriculum_refresh(
            generations, state, cfg.curation.tau, cfg.curation.periodic_fraction,
            CounterRng::derive(cfg.seed, "curriculum"), epoch, encode_ref);
        state = std::move(refresh.state);
        periodic = std::move(refresh.periodic_images);
        for (const auto& ev : refresh.log) {
            json e;
            e["epoch"] = epoch;
            e["type"] = ev.type;
            e["image_id"] = ev.image_id;
            if (ev.overlap >= 0) e["overlap"] = ev.overlap;
            if (!ev.promoted_question.empty()) e["promoted_question"] = ev.promoted_question;
            if (!ev.demoted_question.empty()) e["demoted_question"] = ev.demoted_question;
            swap_log_lines.push_back(e.dump());
        }
    }

    const uint64_t hash_after = mdl.frozen_manifest_hash();
    std::printf("train: frozen manifest hash after  = %016llx\n",
                static_cast<unsigned long long>(hash_after));
    if (hash_before != hash_after)
        throw NumericError("train: frozen weights changed during training");

    {
        std::ostringstream log;
        for (const auto& line : swap_log_lines) log << line << '\n';
        io::write_file(p.swap_log, log.str());
    }
    if (cfg.training.resume && fs::exists(p.loss_csv) && start_epoch > 0) {
        io::write_file(p.loss_csv, io::read_file(p.loss_csv) + losscsv.str());
    } else {
        io::write_file(p.loss_csv, losscsv.str());
    }
    model::save_checkpoint(mdl, opt, cfg.training.epochs, cfg.checkpoint);
    std::cout << "train: checkpoint written to " << cfg.checkpoint << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

int cmd_evaluate(const RunConfig& cfg) {
    const Paths p = paths_of(cfg);
    if (!fs::exists(cfg.checkpoint)) throw InputError("evaluate: missing checkpoint " + cfg.checkpoint);
    require_file(p.images, "image file");
    require_file(p.splits, "split assignments");

    model::MsefModel mdl = model::model_from_checkpoint(cfg.checkpoint);
    const model::Vocab vocab(mdl.config().vocab_size);

    const json sj = json::parse(io::read_file(p.splits));
    std::set<std::string> val_communities;
    for (const auto& [cid, entry] : sj.at("communities").items())
        if (entry.at("split").get<std::string>() == "val") val_communities.insert(cid);

    io::ImageLoad images = io::read_images(p.images);
    std::vector<const curation::ImageRecord*> val_images;
    for (const auto& img : images.images)
        if (val_communities.count(img.community_id)) val_images.push_back(&img);
    std::sort(val_images.begin(), val_images.end(),
              [](const auto* a, const auto* b) { return a->image_id < b->image_id; });
    if (val_images.empty()) throw InputError("evaluate: validation split is empty");

    const auto& dims = mdl.config().score_dims;
    std::vector<std::vector<int>> questions;
    for (const auto& dim : dims) questions.push_back(vocab.encode(scenes::question_bank(dim)[0]));

    const int k = std::max(1, cfg.eval_repetitions);
    const long total = static_cast<long>(val_images.size()) * static_cast<long>(dims.size());
    std::vector<io::PredictionRow> rows(static_cast<size_t>(total));

#pragma omp parallel for schedule(dynamic)
    for (long idx = 0; idx < total; ++idx) {
        const size_t ii = static_cast<size_t>(idx) / dims.size();
        const size_t di = static_cast<size_t>(idx) % dims.size();
        const curation::ImageRecord& img = *val_images[ii];
        std::vector<double> reps;
        model::DualOutput out;
        for (int rep = 0; rep < k; ++rep) {
            out = mdl.forward(img.pixels, questions[di]);
            reps.push_back(out.scores.at(dims[di]));
        }
        double mean = 0;
        for (double v : reps) mean += v;
        mean /= static_cast<double>(reps.size());
        double var = 0;
        for (double v : reps) var += (v - mean) * (v - mean);
        var /= static_cast<double>(reps.size());
        io::PredictionRow& row = rows[static_cast<size_t>(idx)];
        row.image_id = img.image_id;
        row.dimension = dims[di];
        row.score = mean;
        row.rep_variance = var;
        row.rationale_tokens = out.rationale_tokens;
    }

    io::write_predictions(p.predictions, rows);
    std::cout << "evaluate: predictions=" << rows.size() << " (val images=" << val_images.size()
              << " x dims=" << dims.size() << ", repetitions=" << k << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

namespace {

double map_ref_to_model_scale(double ref, const curation::DimensionSpec& spec) {
    return 1.0 + 4.0 * (ref - spec.lo) / (spec.hi - spec.lo);
}

}  // namespace

int cmd_audit(const RunConfig& cfg) {
    const Paths p = paths_of(cfg);
    require_file(p.manifest, "ground-truth manifest");
    require_file(p.images, "image file");
    fs::create_directories(cfg.report_dir);

    const auto registry = curation::DimensionRegistry::standard();
    const io::ManifestData manifest = io::read_manifest(p.manifest);
    io::ImageLoad images = io::read_images(p.images, /*render=*/false);

    json report;
    report["schema_version"] = 1;
    json omitted = json::object();
    json inputs = json::object();
    inputs["manifest"] = io::file_hash(p.manifest);
    inputs["images"] = io::file_hash(p.images);

    // Image-aligned vectors, sorted by id.
    std::vector<const curation::ImageRecord*> recs;
    for (const auto& img : images.images)
        if (manifest.truth.count(img.image_id)) recs.push_back(&img);
    std::sort(recs.begin(), recs.end(), [](const auto* a, const auto* b) { return a->image_id < b->image_id; });

    std::vector<double> satisfaction;
    std::map<std::string, std::vector<double>> feat;
    for (const auto* r : recs) {
        satisfaction.push_back(manifest.truth.at(r->image_id).satisfaction);
        for (const auto& name : scenes::feature_names()) feat[name].push_back(r->objective_features.at(name));
    }
    const long n_imgs = static_cast<long>(recs.size());

    // Predictions are optional; prediction-dependent sections are omitted
    // with a reason when the file is absent.
    std::vector<io::PredictionRow> preds;
    bool have_preds = fs::exists(p.predictions);
    if (have_preds) {
        preds = io::read_predictions(p.predictions);
        inputs["predictions"] = io::file_hash(p.predictions);
    }
    std::map<std::string, std::map<std::string, double>> pred_by_dim;  // dim -> image -> score
    for (const auto& row : preds) pred_by_dim[row.dimension][row.image_id] = row.score;

    const std::string ratings_path = fs::exists(p.curated_ratings) ? p.curated_ratings : p.ratings;
    std::vector<curation::RatingRecord> ratings;
    bool have_ratings = fs::exists(ratings_path);
    if (have_ratings) {
        ratings = io::read_ratings(ratings_path);
        inputs["ratings"] = io::file_hash(ratings_path);
    }
    // dim -> image -> mean non-skipped rating
    std::map<std::string, std::map<std::string, std::pair<double, long>>> consensus_acc;
    for (const auto& r : ratings) {
        if (r.skipped) continue;
        auto& cell = consensus_acc[r.dimension][r.image_id];
        cell.first += r.score;
        cell.second += 1;
    }

    const auto& toggles = cfg.report.toggles;

    // --- OLS: planted satisfaction on the eight linear street attributes ---
    if (!toggles.ols) {
        omitted["ols"] = "disabled by config";
    } else if (n_imgs <= 10) {
        omitted["ols"] = "insufficient N (" + std::to_string(n_imgs) + ")";
    } else {
        std::vector<std::string> names;
        for (const auto& name : scenes::feature_names())
            if (name != "connectivity") names.push_back(name);
        std::vector<double> X(static_cast<size_t>(n_imgs) * names.size());
        for (long i = 0; i < n_imgs; ++i)
            for (size_t jn = 0; jn < names.size(); ++jn)
                X[static_cast<size_t>(i) * names.size() + jn] = feat[names[jn]][static_cast<size_t>(i)];
        const stats::OlsResult ols =
            stats::ols_fit(X, n_imgs, static_cast<long>(names.size()), satisfaction, true, names);
        json oj;
        oj["n"] = ols.n;
        oj["df"] = ols.df;
        oj["r2"] = ols.r2;
        oj["sigma2"] = ols.sigma2;
        json tbl = json::array();
        for (size_t jn = 0; jn < ols.names.size(); ++jn) {
            tbl.push_back({{"variable", ols.names[jn]},
                           {"beta", ols.beta[jn]},
                           {"se", ols.se[jn]},
                           {"t", ols.t[jn]},
                           {"p", ols.p[jn]},
                           {"ci_lower", ols.ci_lower[jn]},
                           {"ci_upper", ols.ci_upper[jn]}});
        }
        oj["table"] = std::move(tbl);
        report["ols"] = std::move(oj);

        std::ostringstream csv;
        csv << "variable,beta,se,t,p,ci_lower,ci_upper\n";
        char line[256];
        for (size_t jn = 0; jn < ols.names.size(); ++jn) {
            std::snprintf(line, sizeof(line), "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                          ols.names[jn].c_str(), ols.beta[jn], ols.se[jn], ols.t[jn], ols.p[jn],
                          ols.ci_lower[jn], ols.ci_upper[jn]);
            csv << line;
        }
        io::write_file(cfg.report_dir + "/ols_table.csv", csv.str());
    }

    // --- polynomial connectivity fit ---
    if (!toggles.poly) {
        omitted["poly"] = "disabled by config";
    } else if (n_imgs <= 3) {
        omitted["poly"] = "insufficient N";
    } else {
        const auto& conn = feat["connectivity"];
        const stats::PolyFit quad = stats::poly_fit_r2(conn, satisfaction, 2);
        const stats::PolyFit lin = stats::poly_fit_r2(conn, satisfaction, 1);
        json pj;
        pj["coeffs"] = quad.coeffs;
        pj["r2_quadratic"] = quad.r2;
        pj["r2_linear"] = lin.r2;
        if (quad.coeffs.size() == 3 && quad.coeffs[2] != 0.0)
            pj["vertex"] = -quad.coeffs[1] / (2.0 * quad.coeffs[2]);
        report["poly"] = std::move(pj);
        if (toggles.figures)
            io::write_file(cfg.report_dir + "/fig_connectivity.svg",
                           report::scatter_svg(conn, satisfaction, quad.coeffs,
                                               "Connectivity vs satisfaction", "connectivity", "satisfaction"));
    }

    // --- correlations ---
    if (!toggles.correlations) {
        omitted["correlations"] = "disabled by config";
    } else if (n_imgs < 3) {
        omitted["correlations"] = "insufficient N";
    } else {
        std::vector<std::pair<std::string, std::vector<double>>> cols;
        for (const auto& name : scenes::feature_names()) cols.emplace_back(name, feat[name]);
        cols.emplace_back("satisfaction", satisfaction);
        const stats::CorrMatrix pearson = stats::corr_matrix(cols, stats::CorrMethod::pearson);
        const stats::CorrMatrix spearman = stats::corr_matrix(cols, stats::CorrMethod::spearman);
        auto to_json = [](const stats::CorrMatrix& m) {
            json mj;
            mj["names"] = m.names;
            mj["matrix"] = m.m;
            return mj;
        };
        report["correlations"] = {{"pearson", to_json(pearson)}, {"spearman", to_json(spearman)}};
        if (toggles.figures)
            io::write_file(cfg.report_dir + "/fig_heatmap.svg",
                           report::heatmap_svg(pearson, "Attribute correlations"));
    }

    // --- prediction-dependent sections ---
    auto ref_on_model_scale = [&](const std::string& dim, const std::string& image_id) -> std::optional<double> {
        const auto it = manifest.truth.find(image_id);
        if (it == manifest.truth.end()) return std::nullopt;
        const auto rit = it->second.dim_refs.find(dim);
        if (rit == it->second.dim_refs.end()) return std::nullopt;
        return map_ref_to_model_scale(rit->second, registry.get(dim));
    };

    if (!toggles.f1) {
        omitted["f1"] = "disabled by config";
    } else if (!have_preds) {
        omitted["f1"] = "predictions file absent";
    } else {
        json fj = json::object();
        double macro_sum = 0;
        long macro_n = 0;
        for (const auto& [dim, by_img] : pred_by_dim) {
            std::vector<double> pv, rv;
            for (const auto& [img, score] : by_img) {
                const auto ref = ref_on_model_scale(dim, img);
                if (!ref) continue;
                pv.push_back(score);
                rv.push_back(*ref);
            }
            if (pv.size() < 3) continue;
            const auto pt = stats::tertile_recode(pv);
            const auto rt = stats::tertile_recode(rv);
            const auto conf = stats::confusion_from_labels(rt.labels, pt.labels, 3);
            const auto prf = stats::precision_recall_f1(conf);
            fj[dim] = {{"precision", prf.macro.precision},
                       {"recall", prf.macro.recall},
                       {"f1", prf.macro.f1},
                       {"n", pv.size()}};
            macro_sum += prf.macro.f1;
            ++macro_n;
        }
        if (macro_n == 0) {
            omitted["f1"] = "no prediction/reference overlap";
        } else {
            fj["macro_f1"] = macro_sum / static_cast<double>(macro_n);
            report["f1"] = std::move(fj);
        }
    }

    if (!toggles.agreement) {
        omitted["agreement"] = "disabled by config";
    } else if (!have_preds) {
        omitted["agreement"] = "predictions file absent";
    } else {
        json aj = json::object();
        bool any = false;
        for (const auto& [dim, by_img] : pred_by_dim) {
            std::vector<double> pv, rv;
            for (const auto& [img, score] : by_img) {
                const auto ref = ref_on_model_scale(dim, img);
                if (!ref) continue;
                pv.push_back(score);
                rv.push_back(*ref);
            }
            if (pv.size() < 3) continue;
            const auto pt = stats::tertile_recode(pv);
            const auto rt = stats::tertile_recode(rv);
            std::vector<double> pl(pt.labels.begin(), pt.labels.end());
            std::vector<double> rl(rt.labels.begin(), rt.labels.end());
            aj[dim] = {{"exact", stats::agreement_rate(pl, rl, stats::AgreementMode::exact)},
                       {"fuzzy", stats::agreement_rate(pl, rl, stats::AgreementMode::fuzzy, 1.0)}};
            any = true;
        }
        if (any)
            report["agreement"] = std::move(aj);
        else
            omitted["agreement"] = "no prediction/reference overlap";
    }

    if (!toggles.bland_altman) {
        omitted["bland_altman"] = "disabled by config";
    } else if (!have_preds) {
        omitted["bland_altman"] = "predictions file absent";
    } else if (!have_ratings) {
        omitted["bland_altman"] = "ratings file absent";
    } else {
        json bj = json::object();
        bool any = false;
        for (const auto& [dim, by_img] : pred_by_dim) {
            const auto cit = consensus_acc.find(dim);
            if (cit == consensus_acc.end()) continue;
            std::vector<double> mv, hv;
            for (const auto& [img, score] : by_img) {
                const auto hit = cit->second.find(img);
                if (hit == cit->second.end() || hit->second.second == 0) continue;
                mv.push_back(score);
                hv.push_back(hit->second.first / static_cast<double>(hit->second.second));
            }
            if (mv.size() < 2) continue;
            const auto ba = stats::bland_altman(mv, hv);
            bj[dim] = {{"bias", ba.bias},
                       {"sd", ba.sd},
                       {"loa_lower", ba.loa_lower},
                       {"loa_upper", ba.loa_upper},
                       {"outliers", ba.outlier_indices.size()},
                       {"n", mv.size()}};
            any = true;
            if (toggles.figures && dim == "overall satisfaction")
                io::write_file(cfg.report_dir + "/fig_bland_altman.svg",
                               report::bland_altman_svg(mv, hv, ba, "Model vs human: " + dim));
        }
        if (any)
            report["bland_altman"] = std::move(bj);
        else
            omitted["bland_altman"] = "no prediction/rating overlap";
    }

    if (!toggles.out_of_range) {
        omitted["out_of_range"] = "disabled by config";
    } else if (!have_preds) {
        omitted["out_of_range"] = "predictions file absent";
    } else {
        std::vector<double> pv;
        std::vector<std::pair<double, double>> ranges;
        for (const auto& [dim, by_img] : pred_by_dim)
            for (const auto& [img, score] : by_img) {
                const auto ref = ref_on_model_scale(dim, img);
                if (!ref) continue;
                pv.push_back(score);
                ranges.emplace_back(*ref - cfg.report.expected_range_band, *ref + cfg.report.expected_range_band);
            }
        if (pv.empty()) {
            omitted["out_of_range"] = "no prediction/reference overlap";
        } else {
            const auto rc = stats::out_of_range_rate(pv, ranges);
            report["out_of_range"] = {{"rate", rc.rate},
                                      {"n", pv.size()},
                                      {"offending", rc.offending_indices.size()},
                                      {"band", cfg.report.expected_range_band}};
        }
    }

    if (!toggles.distributions) {
        omitted["distributions"] = "disabled by config";
    } else if (satisfaction.empty()) {
        omitted["distributions"] = "no images";
    } else {
        json dj;
        const auto s = stats::distribution_summary(satisfaction);
        dj["satisfaction_truth"] = {{"median", s.median}, {"q1", s.q1}, {"q3", s.q3}, {"iqr", s.iqr}};
        if (have_preds && pred_by_dim.count("overall satisfaction")) {
            std::vector<double> pv;
            for (const auto& [img, score] : pred_by_dim["overall satisfaction"]) pv.push_back(score);
            const auto ps = stats::distribution_summary(pv);
            dj["predicted_overall_satisfaction"] = {
                {"median", ps.median}, {"q1", ps.q1}, {"q3", ps.q3}, {"iqr", ps.iqr}};
        }
        report["distributions"] = std::move(dj);
        if (toggles.figures)
            io::write_file(cfg.report_dir + "/fig_histogram.svg",
                           report::histogram_svg(satisfaction, 24, "Planted satisfaction distribution"));
    }

    report["inputs"] = std::move(inputs);
    report["omitted"] = std::move(omitted);
    const std::string text = report.dump(1);
    validate_report(text);
    io::write_file(p.report_json, text);
    std::cout << "audit: report written to " << p.report_json << "\n";
    return 0;
}

void validate_report(const std::string& report_json_text) {
    json r;
    try {
        r = json::parse(report_json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("report: invalid JSON: ") + e.what());
    }
    auto need = [&](const char* key, bool object) {
        if (!r.contains(key) || (object && !r[key].is_object()))
            throw ValidationError(std::string("report: missing or malformed section ") + key);
    };
    if (r.value("schema_version", 0) != 1) throw ValidationError("report: unsupported schema_version");
    need("inputs", true);
    need("omitted", true);
    for (const auto& [name, hash] : r["inputs"].items())
        if (!hash.is_string() || hash.get<std::string>().size() != 16)
            throw ValidationError("report: input hash for " + name + " must be 16 hex chars");
    if (r.contains("ols")) {
        const json& o = r["ols"];
        for (const char* k : {"n", "df", "r2", "sigma2", "table"})
            if (!o.contains(k)) throw ValidationError(std::string("report: ols missing ") + k);
        for (const auto& row : o["table"])
            for (const char* k : {"variable", "beta", "se", "t", "p", "ci_lower", "ci_upper"})
                if (!row.contains(k)) throw ValidationError(std::string("report: ols row missing ") + k);
    }
    if (r.contains("poly")) {
        for (const char* k : {"coeffs", "r2_quadratic", "r2_linear"})
            if (!r["poly"].contains(k)) throw ValidationError(std::string("report: poly missing ") + k);
    }
    if (r.contains("correlations")) {
        for (const char* m : {"pearson", "spearman"}) {
            if (!r["correlations"].contains(m)) throw ValidationError("report: correlations incomplete");
            const json& mm = r["correlations"][m];
            if (!mm.contains("names") || !mm.contains("matrix"))
                throw ValidationError("report: correlation matrix malformed");
            if (mm["names"].size() != mm["matrix"].size())
                throw ValidationError("report: correlation matrix shape mismatch");
        }
    }
    if (r.contains("bland_altman"))
        for (const auto& [dim, b] : r["bland_altman"].items())
            for (const char* k : {"bias", "sd", "loa_lower", "loa_upper", "outliers", "n"})
                if (!b.contains(k)) throw ValidationError("report: bland_altman entry missing " + std::string(k));
    if (r.contains("out_of_range"))
        for (const char* k : {"rate", "n", "offending", "band"})
            if (!r["out_of_range"].contains(k)) throw ValidationError(std::string("report: out_of_range missing ") + k);
}

}  // namespace msef::pipeline
