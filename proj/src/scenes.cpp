#include "msef/scenes.hpp"

#include <algorithm>
#include <cmath>

#include "msef/rng.hpp"
#include "msef/stats.hpp"

namespace msef::scenes {

const std::vector<std::string>& feature_names() {
    static const std::vector<std::string> names = {
        "pedestrian_width", "greenery",           "public_amenities", "visual_richness", "perceived_safety",
        "motorization",     "vehicle_lane_width", "commercial_intensity", "connectivity"};
    return names;
}

EffectModel EffectModel::table1_defaults() {
    EffectModel e;
    e.betas = {{"pedestrian_width", 0.419},  {"greenery", 0.444},
               {"public_amenities", 0.346},  {"visual_richness", 0.483},
               {"perceived_safety", 0.486},  {"motorization", -0.437},
               {"vehicle_lane_width", -0.506}, {"commercial_intensity", -0.392}};
    return e;
}

EffectModel EffectModel::inverted_u_only() {
    EffectModel e;
    for (const auto& name : feature_names())
        if (name != "connectivity") e.betas[name] = 0.0;
    e.quad_coeff = 0.25;
    e.quad_vertex = 5.0;
    e.openness_commercial_beta = 0.0;
    e.intercept = 5.2;
    e.noise_sd = 0.601;  // calibrated for R^2 ~ 0.49 over connectivity in [2, 7]
    return e;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace {

// Band order top to bottom; greenery on top, vehicle lane stripe at the bottom.
const std::vector<std::string>& band_order() {
    static const std::vector<std::string> order = {
        "greenery",       "commercial_intensity", "visual_richness",  "public_amenities", "perceived_safety",
        "pedestrian_width", "motorization",       "connectivity",     "vehicle_lane_width"};
    return order;
}

double level_of(const SceneSpec& spec, const std::string& name) {
    auto it = spec.features.find(name);
    if (it == spec.features.end()) throw InputError("render_scene: missing feature " + name);
    if (it->second < 1.0 || it->second > 7.0)
        throw InputError("render_scene: feature " + name + " outside [1,7]");
    return (it->second - 1.0) / 6.0;  // [0, 1]
}

}  // namespace

curation::Image render_scene(const SceneSpec& spec) {
    const int hw = 32;
    curation::Image img;
    img.h = hw;
    img.w = hw;
    img.px.assign(static_cast<size_t>(hw) * hw, 0.0);
    CounterRng noise(CounterRng::derive(spec.seed, "render"));

    // Local brightness field on 4x4 blocks, seeded per image. Real panoramas
    // differ in large-scale lighting; without this every scene shares the
    // band skeleton and average-hashes collapse onto a few dozen bits.
    double field[8][8];
    {
        CounterRng frng(CounterRng::derive(spec.seed, "field"));
        for (auto& row : field)
            for (auto& cell : row) cell = 0.30 * frng.next_double();
    }

    const auto& order = band_order();
    for (size_t b = 0; b < order.size(); ++b) {
        const std::string& name = order[b];
        const double level = level_of(spec, name);
        // Seeded pattern geometry: placement varies per image while a feature
        // sweep at a fixed seed keeps the texture constant and the statistic
        // monotone.
        CounterRng band_rng(CounterRng::derive(spec.seed, name));
        const int phase = static_cast<int>(band_rng.next_below(32));
        const int modulus = 3 + static_cast<int>(band_rng.next_below(4));  // 3..6
        const int duty = 1 + static_cast<int>(band_rng.next_below(static_cast<uint64_t>(modulus - 1)));
        const double tint = 0.05 * band_rng.next_double();
        const int r0 = static_cast<int>(b) * hw / static_cast<int>(order.size());
        const int r1 = static_cast<int>(b + 1) * hw / static_cast<int>(order.size());
        for (int r = r0; r < r1; ++r) {
            for (int c = 0; c < hw; ++c) {
                const double jitter = 2.0 * noise.next_double() - 1.0;  // consumed uniformly per pixel
                const int cp = (c + phase) % hw;
                const double local = field[r / 4][c / 4];
                double v;
                if (name == "greenery" || name == "perceived_safety") {
                    // stipple / plain level band
                    v = 0.04 + tint + local + 0.56 * level + 0.04 * jitter;
                } else if (name == "pedestrian_width" || name == "vehicle_lane_width") {
                    // anti-aliased bright stripe whose width tracks the feature
                    const double w = level * hw;
                    const double coverage = std::clamp(w - ((c + phase / 4) % hw), 0.0, 1.0);
                    v = 0.04 + tint + local + 0.56 * coverage + 0.04 * jitter;
                } else if (name == "visual_richness") {
                    // checker contrast; band std is the designated statistic
                    const double checker = ((r + c + phase) % 2 == 0) ? 1.0 : -1.0;
                    v = 0.32 + tint + local + (0.04 + 0.24 * level) * checker;
                } else if (name == "public_amenities") {
                    const bool marker = (cp % modulus) < duty;
                    v = 0.04 + tint + local + (marker ? 0.56 * level : 0.0) + 0.04 * jitter;
                } else if (name == "commercial_intensity") {
                    const bool kiosk = ((cp / 2) % modulus) < duty;
                    v = 0.04 + tint + local + (kiosk ? 0.54 * level : 0.05 * level) + 0.04 * jitter;
                } else if (name == "motorization") {
                    const bool lane_dot = ((cp + r) % modulus) < duty;
                    v = 0.04 + tint + local + (lane_dot ? 0.55 * level : 0.07 * level) + 0.04 * jitter;
                } else {  // connectivity: vertical links
                    const bool link = (cp % modulus) < duty;
                    v = 0.04 + tint + local + (link ? 0.55 * level : 0.05 * level) + 0.04 * jitter;
                }
                img.at(r, c) = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return img;
}

double feature_band_statistic(const curation::Image& img, const std::string& feature) {
    const auto& order = band_order();
    const auto it = std::find(order.begin(), order.end(), feature);
    if (it == order.end()) throw InputError("feature_band_statistic: unknown feature " + feature);
    const size_t b = static_cast<size_t>(it - order.begin());
    const int r0 = static_cast<int>(b) * img.h / static_cast<int>(order.size());
    const int r1 = static_cast<int>(b + 1) * img.h / static_cast<int>(order.size());
    double mean = 0.0;
    int n = 0;
    for (int r = r0; r < r1; ++r)
        for (int c = 0; c < img.w; ++c) {
            mean += img.at(r, c);
            ++n;
        }
    mean /= n;
    if (feature != "visual_richness") return mean;
    double var = 0.0;
    for (int r = r0; r < r1; ++r)
        for (int c = 0; c < img.w; ++c) var += (img.at(r, c) - mean) * (img.at(r, c) - mean);
    return std::sqrt(var / n);
}

// ---------------------------------------------------------------------------
// Planted satisfaction
// ---------------------------------------------------------------------------

double plant_satisfaction(const SceneSpec& spec, const EffectModel& effects, uint64_t noise_seed) {
    double y = effects.intercept;
    for (const auto& [name, beta] : effects.betas) {
        auto it = spec.features.find(name);
        if (it == spec.features.end()) throw InputError("plant_satisfaction: missing feature " + name);
        y += beta * (it->second - effects.feature_center);
    }
    const double conn = spec.features.at("connectivity");
    y -= effects.quad_coeff * (conn - effects.quad_vertex) * (conn - effects.quad_vertex);
    if (spec.land_use == "commercial")
        y += effects.openness_commercial_beta * (spec.openness - effects.feature_center);
    if (effects.noise_sd > 0.0) {
        CounterRng rng(CounterRng::derive(noise_seed, "sat"));
        y += effects.noise_sd * rng.gaussian();
    }
    return std::clamp(y, effects.clip_lo, effects.clip_hi);
}

// ---------------------------------------------------------------------------
// Question / answer banks
// ---------------------------------------------------------------------------

const std::vector<std::string>& question_bank(const std::string& dimension) {
    static const std::map<std::string, std::vector<std::string>> bank = {
        {"accessibility",
         {"how easy is it to move along this street", "rate how accessible this street feels",
          "can a pedestrian travel this street without obstacles"}},
        {"cleanliness",
         {"how clean is this street", "rate the tidiness of this street scene",
          "does this street look well maintained"}},
        {"perceived safety",
         {"how safe does this street feel", "rate the sense of safety on this street",
          "would you feel secure walking here"}},
        {"visual richness",
         {"how visually interesting is this street", "rate the visual variety of this scene",
          "does this street offer much to look at"}},
        {"commercial convenience",
         {"how convenient is shopping along this street", "rate the commercial services here",
          "are daily errands easy on this street"}},
        {"overall satisfaction",
         {"how satisfying is this street overall", "rate your overall impression of this street",
          "would residents be pleased with this street"}},
        {"sidewalk width", {"how wide is the sidewalk", "rate the walking space along this street"}},
        {"roadway width", {"how wide is the roadway", "rate the width of the vehicle lanes"}},
        {"greening level", {"how green is this street", "rate the planting along this street"}},
        {"motorization", {"how dominated by vehicles is this street", "rate the traffic presence here"}},
        {"commercial activity density",
         {"how dense is the commercial activity", "rate the storefront density of this street"}},
        {"sky openness", {"how open is the sky above this street", "rate the sky view from this street"}},
        {"public facilities",
         {"how many public facilities serve this street", "rate the street furniture and facilities"}},
    };
    auto it = bank.find(dimension);
    if (it == bank.end()) throw InputError("question_bank: unknown dimension " + dimension);
    return it->second;
}

std::string answer_text_for(const std::string& dimension, double score, double lo, double hi, int variant) {
    static const std::vector<std::string> low = {
        "the scene reads poorly with cramped space and visible neglect",
        "conditions look weak here and the street feels unwelcoming"};
    static const std::vector<std::string> mid = {
        "the street is adequate though nothing stands out either way",
        "a mixed impression with both tidy stretches and rough patches"};
    static const std::vector<std::string> high = {
        "generous space and careful upkeep make the street inviting",
        "strong qualities throughout with clear order and comfort"};
    const double span = hi - lo;
    const double t = (score - lo) / (span > 0 ? span : 1.0);
    const auto& pool = (t < 0.4) ? low : (t <= 0.65) ? mid : high;
    const std::string& base = pool[static_cast<size_t>(variant) % pool.size()];
    return base + " regarding " + dimension;
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

namespace {

struct TierBand {
    double lo, hi;
};

const TierBand kPriceBands[5] = {{3500, 5000}, {5000, 6800}, {6800, 8200}, {8200, 10000}, {10000, 14000}};

// Registry reference value per dimension, on that dimension's own scale.
std::map<std::string, double> make_dim_refs(const SceneSpec& spec, double satisfaction) {
    auto to5 = [](double x) { return 1.0 + (x - 1.0) * (2.0 / 3.0); };
    std::map<std::string, double> refs;
    refs["accessibility"] = to5(spec.features.at("pedestrian_width"));
    refs["cleanliness"] = to5(spec.features.at("public_amenities"));
    refs["perceived safety"] = to5(spec.features.at("perceived_safety"));
    refs["visual richness"] = to5(spec.features.at("visual_richness"));
    refs["commercial convenience"] = to5(spec.features.at("commercial_intensity"));
    refs["overall satisfaction"] = to5(satisfaction);
    refs["sidewalk width"] = spec.features.at("pedestrian_width");
    refs["roadway width"] = spec.features.at("vehicle_lane_width");
    refs["greening level"] = spec.features.at("greenery");
    refs["motorization"] = spec.features.at("motorization");
    refs["commercial activity density"] = spec.features.at("commercial_intensity");
    refs["sky openness"] = spec.openness;
    refs["public facilities"] = spec.features.at("public_amenities");
    return refs;
}

int likert_round(double x) {
    const int v = static_cast<int>(std::floor(x + 0.5));
    return std::clamp(v, 1, 5);
}

}  // namespace

CorpusData gen_corpus(const CorpusParams& params, const EffectModel& effects) {
    if (params.n_communities < 1 || params.images_per_community < 1 || params.respondents < 1)
        throw InputError("gen_corpus: counts must be >= 1");
    CorpusData out;
    out.effects = effects;
    out.params = params;

    const auto registry = curation::DimensionRegistry::standard();
    const auto subjective = registry.subjective_names();
    const auto objective = registry.objective_names();

    // Respondent pool.
    CounterRng prof_rng(CounterRng::derive(params.seed, "profiles"));
    for (int r = 0; r < params.respondents; ++r) {
        RespondentProfile p;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "r%04d", r);
        p.respondent_id = buf;
        if (!params.planted_biases.empty())
            p.bias = params.planted_biases[static_cast<size_t>(r) % params.planted_biases.size()];
        else
            p.bias = prof_rng.uniform(params.respondent_bias_lo, params.respondent_bias_hi);
        p.spread = prof_rng.uniform(params.respondent_spread_lo, params.respondent_spread_hi);
        p.skip_prob = params.skip_prob;
        out.profiles.push_back(std::move(p));
    }

    // Tier sizes mirror the equal-frequency remainder rule (lowest bins first).
    const int n = params.n_communities;
    std::vector<int> tiers(static_cast<size_t>(n));
    {
        const int base = n / 5, rem = n % 5;
        int idx = 0;
        for (int t = 0; t < 5; ++t) {
            const int size = base + (t < rem ? 1 : 0);
            for (int q = 0; q < size && idx < n; ++q) tiers[static_cast<size_t>(idx++)] = t;
        }
    }

    const int imgs = params.images_per_community;
    const int n_dims = std::clamp(params.triplet_dims_per_image, 1,
                                  static_cast<int>(subjective.size() + objective.size()));

    struct CommunityBlock {
        std::vector<curation::ImageRecord> images;
        std::vector<curation::RatingRecord> ratings;
        std::vector<curation::QATriplet> triplets;
        std::vector<std::pair<std::string, ImageTruth>> truth;
    };
    std::vector<CommunityBlock> blocks(static_cast<size_t>(n));

    const double lat0 = 45.75, lon0 = 126.63;

#pragma omp parallel for schedule(dynamic)
    for (int ci = 0; ci < n; ++ci) {
        CommunityBlock& blk = blocks[static_cast<size_t>(ci)];
        char cbuf[16];
        std::snprintf(cbuf, sizeof(cbuf), "c%04d", ci);
        const std::string community_id = cbuf;
        const uint64_t cseed = CounterRng::derive(params.seed, community_id);
        CounterRng crng(cseed);
        const int tier = tiers[static_cast<size_t>(ci)];
        const double price = crng.uniform(kPriceBands[tier].lo, kPriceBands[tier].hi);
        const double clat = lat0 + (ci / 10) * 0.01 + crng.uniform(-0.001, 0.001);
        const double clon = lon0 + (ci % 10) * 0.012 + crng.uniform(-0.001, 0.001);

        for (int ii = 0; ii < imgs; ++ii) {
            char ibuf[32];
            std::snprintf(ibuf, sizeof(ibuf), "img_%04d_%04d", ci, ii);
            const uint64_t iseed = CounterRng::derive(cseed, static_cast<uint64_t>(ii));
            CounterRng irng(iseed);

            SceneSpec spec;
            spec.community_id = community_id;
            spec.tier = tier;
            spec.seed = iseed;
            for (const auto& fname : feature_names())
                spec.features[fname] = irng.uniform(params.feature_lo, params.feature_hi);
            spec.openness = irng.uniform(params.feature_lo, params.feature_hi);
            spec.land_use = (irng.next_double() < 0.5) ? "residential" : "commercial";

            curation::ImageRecord rec;
            rec.image_id = ibuf;
            rec.pixels = render_scene(spec);
            // 55 m grid spacing plus ±5 m jitter keeps unplanted images apart.
            rec.lat = clat + (ii / 20) * 0.0005 + irng.uniform(-0.00004, 0.00004);
            rec.lon = clon + (ii % 20) * 0.0005 + irng.uniform(-0.00004, 0.00004);
            rec.capture_time = 1654041600 + static_cast<int64_t>(ci) * 86400 + ii * 600;  // summer 2022 onwards
            rec.community_id = community_id;
            rec.price_per_sqm = price;
            rec.tier = tier;
            rec.objective_features = spec.features;
            rec.openness = spec.openness;
            rec.land_use = spec.land_use;

            ImageTruth truth;
            truth.satisfaction = plant_satisfaction(spec, effects, iseed);
            truth.dim_refs = make_dim_refs(spec, truth.satisfaction);
            truth.render_seed = iseed;

            // Ratings: k seeded respondents per subjective dimension.
            const size_t ratings_begin = blk.ratings.size();
            for (const auto& dim : subjective) {
                const double ref5 = truth.dim_refs.at(dim);
                for (int rr = 0; rr < params.ratings_per_image_dim; ++rr) {
                    const auto& prof =
                        out.profiles[static_cast<size_t>(irng.next_below(static_cast<uint64_t>(params.respondents)))];
                    curation::RatingRecord rate;
                    rate.respondent_id = prof.respondent_id;
                    rate.image_id = rec.image_id;
                    rate.dimension = dim;
                    if (irng.next_double() < prof.skip_prob) {
                        rate.skipped = true;
                        rate.score = 0;
                    } else {
                        const double v = ref5 + prof.bias + prof.spread * params.rating_noise_sd * irng.gaussian();
                        rate.score = likert_round(v);
                    }
                    blk.ratings.push_back(std::move(rate));
                }
            }

            // Q&A triplets: overall satisfaction always, remaining dims seeded.
            std::vector<std::string> pool;
            for (const auto& d : subjective)
                if (d != "overall satisfaction") pool.push_back(d);
            for (const auto& d : objective) pool.push_back(d);
            for (size_t s = pool.size(); s > 1; --s) std::swap(pool[s - 1], pool[static_cast<size_t>(irng.next_below(s))]);
            std::vector<std::string> chosen = {"overall satisfaction"};
            for (int q = 0; q < n_dims - 1 && q < static_cast<int>(pool.size()); ++q) chosen.push_back(pool[static_cast<size_t>(q)]);

            for (const auto& dim : chosen) {
                const auto& dspec = registry.get(dim);
                double score;
                if (dspec.subjective) {
                    // consensus: median of this image's non-skipped ratings
                    std::vector<double> got;
                    for (size_t ri = ratings_begin; ri < blk.ratings.size(); ++ri) {
                        const auto& rate = blk.ratings[ri];
                        if (rate.dimension == dim && !rate.skipped) got.push_back(rate.score);
                    }
                    score = got.empty() ? std::clamp(std::round(truth.dim_refs.at(dim)), dspec.lo, dspec.hi)
                                        : stats::quantile(got, 0.5);
                } else {
                    score = std::clamp(std::round(truth.dim_refs.at(dim)), dspec.lo, dspec.hi);
                }
                const auto& questions = question_bank(dim);

                curation::QATriplet active;
                active.image_id = rec.image_id;
                active.question = questions[0];
                active.answer_score = score;
                active.answer_text = answer_text_for(dim, score, dspec.lo, dspec.hi, ii % 2);
                active.dimension = dim;
                active.split = curation::Split::train;
                blk.triplets.push_back(std::move(active));

                curation::QATriplet res;
                res.image_id = rec.image_id;
                res.question = questions[1 % questions.size()];
                res.answer_score = score;
                res.answer_text = answer_text_for(dim, score, dspec.lo, dspec.hi, (ii + 1) % 2);
                res.dimension = dim;
                res.split = curation::Split::reserve;
                blk.triplets.push_back(std::move(res));
            }

            blk.truth.emplace_back(rec.image_id, std::move(truth));
            blk.images.push_back(std::move(rec));
        }
    }

    for (auto& blk : blocks) {
        for (auto& r : blk.images) out.images.push_back(std::move(r));
        for (auto& r : blk.ratings) out.ratings.push_back(std::move(r));
        for (auto& r : blk.triplets) out.triplets.push_back(std::move(r));
        for (auto& [id, t] : blk.truth) out.truth.emplace(id, std::move(t));
    }

    // Planted near-duplicates; removed later by curation, so they carry no
    // ratings or triplets of their own.
    CounterRng dup_rng(CounterRng::derive(params.seed, "dups"));
    const size_t base_count = out.images.size();
    auto add_dup = [&](const std::string& kind, int k, const curation::ImageRecord& victim, bool same_pixels,
                       double dlat, double dlon) {
        curation::ImageRecord rec = victim;
        rec.image_id = "dup_" + kind + "_" + std::to_string(k);
        rec.lat = victim.lat + dlat;
        rec.lon = victim.lon + dlon;
        rec.capture_time = victim.capture_time + 86400;
        if (!same_pixels) {
            SceneSpec spec;
            spec.seed = CounterRng::derive(params.seed, rec.image_id);
            spec.community_id = rec.community_id;
            spec.tier = rec.tier;
            for (const auto& fname : feature_names()) spec.features[fname] = dup_rng.uniform(params.feature_lo, params.feature_hi);
            spec.openness = dup_rng.uniform(params.feature_lo, params.feature_hi);
            spec.land_use = rec.land_use;
            rec.pixels = render_scene(spec);
            rec.objective_features = spec.features;
            rec.openness = spec.openness;
            ImageTruth t;
            t.satisfaction = plant_satisfaction(spec, effects, spec.seed);
            t.dim_refs = make_dim_refs(spec, t.satisfaction);
            t.render_seed = spec.seed;
            out.truth[rec.image_id] = std::move(t);
        } else {
            ImageTruth t = out.truth.at(victim.image_id);
            out.truth[rec.image_id] = std::move(t);
        }
        out.images.push_back(std::move(rec));
        return out.images.size() - 1;
    };

    for (int k = 0; k < params.planted_hash_dups; ++k) {
        const auto& victim = out.images[static_cast<size_t>(dup_rng.next_below(base_count))];
        add_dup("hash", k, victim, /*same_pixels=*/true, 0.001, 0.001);  // far apart, identical raster
    }
    for (int k = 0; k < params.planted_geo_dups; ++k) {
        const auto& victim = out.images[static_cast<size_t>(dup_rng.next_below(base_count))];
        add_dup("geo", k, victim, /*same_pixels=*/false, 0.000027, 0.0);  // ~3 m away, fresh raster
    }
    for (int k = 0; k < params.planted_chains; ++k) {
        const size_t vidx = static_cast<size_t>(dup_rng.next_below(base_count));
        const std::string victim_id = out.images[vidx].image_id;
        const size_t b = add_dup("chain_b", k, out.images[vidx], /*same_pixels=*/true, 0.002, 0.002);
        add_dup("chain_c", k, out.images[b], /*same_pixels=*/false, 0.000027, 0.0);
    }

    return out;
}

double calibrate_quad_noise(const EffectModel& base, double conn_lo, double conn_hi, double target_r2,
                            uint64_t seed, int n) {
    EffectModel probe = base;
    auto sample_r2 = [&](double sd) {
        probe.noise_sd = sd;
        std::vector<double> conn(static_cast<size_t>(n)), sat(static_cast<size_t>(n));
        CounterRng rng(CounterRng::derive(seed, "calibrate"));
        SceneSpec spec;
        for (const auto& fname : feature_names()) spec.features[fname] = 4.0;
        for (int i = 0; i < n; ++i) {
            const double c = rng.uniform(conn_lo, conn_hi);
            spec.features["connectivity"] = c;
            spec.seed = CounterRng::derive(seed, static_cast<uint64_t>(i) + 7);
            conn[static_cast<size_t>(i)] = c;
            sat[static_cast<size_t>(i)] = plant_satisfaction(spec, probe, spec.seed);
        }
        return stats::poly_fit_r2(conn, sat, 2).r2;
    };
    double lo = 1e-3, hi = 5.0;
    for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (sample_r2(mid) > target_r2)
            lo = mid;  // more noise lowers R^2
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace msef::scenes
