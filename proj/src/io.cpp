#include "msef/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "msef/rng.hpp"

namespace msef::io {

using nlohmann::json;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open " + path + " for writing");
    out << content;
    if (!out) throw InputError("write failed for " + path);
}

std::string file_hash(const std::string& path) {
    const std::string bytes = read_file(path);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
    return std::string(buf, 16);
}

// ---------------------------------------------------------------------------
// Triplets
// ---------------------------------------------------------------------------

void write_triplets(const std::string& path, const std::vector<curation::QATriplet>& triplets) {
    std::ostringstream out;
    for (const auto& t : triplets) out << curation::triplet_to_json(t) << '\n';
    write_file(path, out.str());
}

TripletLoad read_triplets(const std::string& path, const curation::DimensionRegistry& registry,
                          curation::ParseMode mode) {
    TripletLoad out;
    std::istringstream in(read_file(path));
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.triplets.push_back(curation::parse_triplet(line, registry, mode));
        } catch (const std::exception& e) {
            out.errors.push_back("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV helpers
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_ratings(const std::string& path, const std::vector<curation::RatingRecord>& ratings) {
    std::ostringstream out;
    out << "respondent_id,image_id,dimension,score,skipped\n";
    for (const auto& r : ratings)
        out << r.respondent_id << ',' << r.image_id << ',' << r.dimension << ',' << fmt_double(r.score)
            << ',' << (r.skipped ? 1 : 0) << '\n';
    write_file(path, out.str());
}

std::vector<curation::RatingRecord> read_ratings(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line) !=
        std::vector<std::string>{"respondent_id", "image_id", "dimension", "score", "skipped"})
        throw InputError(path + ": bad or missing ratings header");
    std::vector<curation::RatingRecord> out;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 5) throw ValidationError(path + " line " + std::to_string(lineno) + ": expected 5 fields");
        curation::RatingRecord r;
        r.respondent_id = f[0];
        r.image_id = f[1];
        r.dimension = f[2];
        r.score = std::stod(f[3]);
        r.skipped = f[4] == "1" || f[4] == "true";
        out.push_back(std::move(r));
    }
    return out;
}

void write_communities(const std::string& path, const std::vector<CommunityRow>& rows) {
    std::ostringstream out;
    out << "community_id,price_per_sqm,lat,lon\n";
    for (const auto& r : rows)
        out << r.community_id << ',' << fmt_double(r.price_per_sqm) << ',' << fmt_double(r.lat) << ','
            << fmt_double(r.lon) << '\n';
    write_file(path, out.str());
}

std::vector<CommunityRow> read_communities(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) ||
        split_csv_line(line) != std::vector<std::string>{"community_id", "price_per_sqm", "lat", "lon"})
        throw InputError(path + ": bad or missing communities header");
    std::vector<CommunityRow> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 4) throw ValidationError(path + ": expected 4 fields");
        out.push_back(CommunityRow{f[0], std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

void write_images(const std::string& path, const std::vector<curation::ImageRecord>& images,
                  const std::map<std::string, scenes::ImageTruth>& truth) {
    std::ostringstream out;
    for (const auto& r : images) {
        json j;
        j["image_id"] = r.image_id;
        j["community_id"] = r.community_id;
        j["lat"] = r.lat;
        j["lon"] = r.lon;
        j["capture_time"] = r.capture_time;
        j["price_per_sqm"] = r.price_per_sqm;
        j["tier"] = r.tier;
        j["features"] = r.objective_features;
        j["openness"] = r.openness;
        j["land_use"] = r.land_use;
        const auto it = truth.find(r.image_id);
        j["render_seed"] = (it != truth.end()) ? it->second.render_seed : uint64_t{0};
        out << j.dump() << '\n';
    }
    write_file(path, out.str());
}

ImageLoad read_images(const std::string& path, bool render) {
    ImageLoad out;
    std::istringstream in(read_file(path));
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ValidationError(path + " line " + std::to_string(lineno) + ": " + e.what());
        }
        curation::ImageRecord r;
        r.image_id = j.at("image_id").get<std::string>();
        r.community_id = j.at("community_id").get<std::string>();
        r.lat = j.at("lat").get<double>();
        r.lon = j.at("lon").get<double>();
        r.capture_time = j.at("capture_time").get<int64_t>();
        r.price_per_sqm = j.at("price_per_sqm").get<double>();
        r.tier = j.at("tier").get<int>();
        r.objective_features = j.at("features").get<std::map<std::string, double>>();
        r.openness = j.at("openness").get<double>();
        r.land_use = j.at("land_use").get<std::string>();
        const auto seed = j.at("render_seed").get<uint64_t>();
        out.render_seeds[r.image_id] = seed;
        if (render) {
            scenes::SceneSpec spec;
            spec.features = r.objective_features;
            spec.openness = r.openness;
            spec.land_use = r.land_use;
            spec.community_id = r.community_id;
            spec.tier = r.tier;
            spec.seed = seed;
            r.pixels = scenes::render_scene(spec);
        }
        out.images.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

json effects_to_json(const scenes::EffectModel& e) {
    json j;
    j["betas"] = e.betas;
    j["quad_coeff"] = e.quad_coeff;
    j["quad_vertex"] = e.quad_vertex;
    j["openness_commercial_beta"] = e.openness_commercial_beta;
    j["noise_sd"] = e.noise_sd;
    j["intercept"] = e.intercept;
    j["clip_lo"] = e.clip_lo;
    j["clip_hi"] = e.clip_hi;
    j["feature_center"] = e.feature_center;
    return j;
}

scenes::EffectModel effects_from_json(const json& j) {
    scenes::EffectModel e;
    e.betas = j.at("betas").get<std::map<std::string, double>>();
    e.quad_coeff = j.at("quad_coeff").get<double>();
    e.quad_vertex = j.at("quad_vertex").get<double>();
    e.openness_commercial_beta = j.at("openness_commercial_beta").get<double>();
    e.noise_sd = j.at("noise_sd").get<double>();
    e.intercept = j.at("intercept").get<double>();
    e.clip_lo = j.at("clip_lo").get<double>();
    e.clip_hi = j.at("clip_hi").get<double>();
    e.feature_center = j.at("feature_center").get<double>();
    return e;
}

}  // namespace

void write_manifest(const std::string& path, const scenes::CorpusData& corpus) {
    json j;
    j["format_version"] = 1;
    j["effects"] = effects_to_json(corpus.effects);
    json truth = json::object();
    for (const auto& [id, t] : corpus.truth) {
        json tj;
        tj["satisfaction"] = t.satisfaction;
        tj["dim_refs"] = t.dim_refs;
        tj["render_seed"] = t.render_seed;
        truth[id] = std::move(tj);
    }
    j["truth"] = std::move(truth);
    json profs = json::array();
    for (const auto& p : corpus.profiles) {
        json pj;
        pj["respondent_id"] = p.respondent_id;
        pj["bias"] = p.bias;
        pj["spread"] = p.spread;
        pj["skip_prob"] = p.skip_prob;
        profs.push_back(std::move(pj));
    }
    j["respondent_profiles"] = std::move(profs);
    j["seed"] = corpus.params.seed;
    write_file(path, j.dump(1));
}

ManifestData read_manifest(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
    ManifestData out;
    out.effects = effects_from_json(j.at("effects"));
    for (const auto& [id, tj] : j.at("truth").items()) {
        scenes::ImageTruth t;
        t.satisfaction = tj.at("satisfaction").get<double>();
        t.dim_refs = tj.at("dim_refs").get<std::map<std::string, double>>();
        t.render_seed = tj.at("render_seed").get<uint64_t>();
        out.truth[id] = std::move(t);
    }
    for (const auto& pj : j.at("respondent_profiles")) {
        scenes::RespondentProfile p;
        p.respondent_id = pj.at("respondent_id").get<std::string>();
        p.bias = pj.at("bias").get<double>();
        p.spread = pj.at("spread").get<double>();
        p.skip_prob = pj.at("skip_prob").get<double>();
        out.profiles.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Predictions
// ---------------------------------------------------------------------------

void write_predictions(const std::string& path, const std::vector<PredictionRow>& rows) {
    std::ostringstream out;
    out << "image_id,dimension,score,rep_variance,rationale_tokens\n";
    for (const auto& r : rows) {
        out << r.image_id << ',' << r.dimension << ',' << fmt_double(r.score) << ','
            << fmt_double(r.rep_variance) << ',';
        for (size_t i = 0; i < r.rationale_tokens.size(); ++i) {
            if (i) out << ' ';
            out << r.rationale_tokens[i];
        }
        out << '\n';
    }
    write_file(path, out.str());
}

std::vector<PredictionRow> read_predictions(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) ||
        split_csv_line(line) !=
            std::vector<std::string>{"image_id", "dimension", "score", "rep_variance", "rationale_tokens"})
        throw InputError(path + ": bad or missing predictions header");
    std::vector<PredictionRow> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 5) throw ValidationError(path + ": expected 5 fields");
        PredictionRow r;
        r.image_id = f[0];
        r.dimension = f[1];
        r.score = std::stod(f[2]);
        r.rep_variance = std::stod(f[3]);
        std::istringstream toks(f[4]);
        int t;
        while (toks >> t) r.rationale_tokens.push_back(t);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace msef::io
