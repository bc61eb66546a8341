#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msef/curation.hpp"
#include "msef/scenes.hpp"

namespace msef::io {

// 64-bit FNV-1a of the file bytes, 16 hex chars.
std::string file_hash(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// --- triplets: UTF-8 JSON lines -------------------------------------------
void write_triplets(const std::string& path, const std::vector<curation::QATriplet>& triplets);

struct TripletLoad {
    std::vector<curation::QATriplet> triplets;
    std::vector<std::string> errors;  // "line N: message"
};

TripletLoad read_triplets(const std::string& path, const curation::DimensionRegistry& registry,
                          curation::ParseMode mode);

// --- ratings: CSV respondent_id,image_id,dimension,score,skipped ----------
void write_ratings(const std::string& path, const std::vector<curation::RatingRecord>& ratings);
std::vector<curation::RatingRecord> read_ratings(const std::string& path);

// --- communities: CSV community_id,price_per_sqm,lat,lon -------------------
struct CommunityRow {
    std::string community_id;
    double price_per_sqm = 0, lat = 0, lon = 0;
};

void write_communities(const std::string& path, const std::vector<CommunityRow>& rows);
std::vector<CommunityRow> read_communities(const std::string& path);

// --- images: JSON lines of scene metadata; rasters re-render on load ------
void write_images(const std::string& path, const std::vector<curation::ImageRecord>& images,
                  const std::map<std::string, scenes::ImageTruth>& truth);

struct ImageLoad {
    std::vector<curation::ImageRecord> images;          // pixels rendered
    std::map<std::string, uint64_t> render_seeds;
};

ImageLoad read_images(const std::string& path, bool render = true);

// --- ground-truth manifest --------------------------------------------------
void write_manifest(const std::string& path, const scenes::CorpusData& corpus);

struct ManifestData {
    scenes::EffectModel effects;
    std::map<std::string, scenes::ImageTruth> truth;
    std::vector<scenes::RespondentProfile> profiles;
};

ManifestData read_manifest(const std::string& path);

// --- predictions ------------------------------------------------------------
struct PredictionRow {
    std::string image_id;
    std::string dimension;
    double score = 0;
    double rep_variance = 0;
    std::vector<int> rationale_tokens;
};

void write_predictions(const std::string& path, const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> read_predictions(const std::string& path);

}  // namespace msef::io
