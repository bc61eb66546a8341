#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msef/curation.hpp"

namespace msef::scenes {

// Order fixed: the first 8 carry the planted linear effects, connectivity
// carries the inverted-U.
const std::vector<std::string>& feature_names();

struct SceneSpec {
    std::map<std::string, double> features;  // 9 named values on the 1-7 scale
    double openness = 4.0;                   // separate survey-side attribute
    std::string land_use = "residential";
    std::string community_id;
    int tier = 0;
    uint64_t seed = 0;
};

struct EffectModel {
    std::map<std::string, double> betas;   // linear effect per feature
    double quad_coeff = 0.25;              // satisfaction -= quad_coeff * (conn - vertex)^2
    double quad_vertex = 5.0;
    double openness_commercial_beta = 0.3; // commercial land use only
    double noise_sd = 0.5;
    double intercept = 4.5;
    double clip_lo = 1.0, clip_hi = 7.0;
    double feature_center = 4.0;  // features enter centered at the scale midpoint

    static EffectModel table1_defaults();
    // Pure quadratic corpus for the connectivity analysis; noise calibrated
    // so the degree-2 fit lands near R^2 = 0.49.
    static EffectModel inverted_u_only();
};

struct RespondentProfile {
    std::string respondent_id;
    double bias = 0.0;
    double spread = 1.0;
    double skip_prob = 0.0;
};

struct CorpusParams {
    int n_communities = 25;
    int images_per_community = 8;
    int respondents = 40;
    int ratings_per_image_dim = 3;
    double feature_lo = 2.5, feature_hi = 5.5;
    std::vector<double> planted_biases;  // cycled over respondents when set
    double respondent_bias_lo = -0.75, respondent_bias_hi = 0.75;
    double respondent_spread_lo = 0.85, respondent_spread_hi = 1.2;
    double skip_prob = 0.05;
    double rating_noise_sd = 0.3;
    int planted_hash_dups = 0;
    int planted_geo_dups = 0;
    int planted_chains = 0;
    int image_hw = 32;
    int triplet_dims_per_image = 6;  // always includes overall satisfaction
    uint64_t seed = 42;
};

struct ImageTruth {
    double satisfaction = 0;                  // planted, 1-7 scale
    std::map<std::string, double> dim_refs;   // registry-dimension reference values
    uint64_t render_seed = 0;
};

struct CorpusData {
    std::vector<curation::ImageRecord> images;
    std::vector<curation::RatingRecord> ratings;
    std::vector<curation::QATriplet> triplets;
    std::vector<RespondentProfile> profiles;
    std::map<std::string, ImageTruth> truth;  // by image_id
    EffectModel effects;
    CorpusParams params;
};

// Deterministic raster: each feature drives one horizontal band; the
// designated band statistic (mean, std for visual richness) is strictly
// monotone in the feature.
curation::Image render_scene(const SceneSpec& spec);

// Band statistic used by the monotonicity checks.
double feature_band_statistic(const curation::Image& img, const std::string& feature);

double plant_satisfaction(const SceneSpec& spec, const EffectModel& effects, uint64_t noise_seed);

CorpusData gen_corpus(const CorpusParams& params, const EffectModel& effects);

// Question / answer banks keyed by registry dimension.
const std::vector<std::string>& question_bank(const std::string& dimension);
std::string answer_text_for(const std::string& dimension, double score, double lo, double hi, int variant);

// Bisection sweep: noise sd that lands the quadratic corpus at target R^2.
double calibrate_quad_noise(const EffectModel& base, double conn_lo, double conn_hi, double target_r2,
                            uint64_t seed, int n = 20000);

}  // namespace msef::scenes
