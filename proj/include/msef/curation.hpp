#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "msef/errors.hpp"

namespace msef::curation {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct Image {
    int h = 0, w = 0;
    std::vector<double> px;  // row-major grayscale in [0,1]

    double at(int r, int c) const { return px[static_cast<size_t>(r) * w + c]; }
    double& at(int r, int c) { return px[static_cast<size_t>(r) * w + c]; }
};

enum class Split { train, val, reserve };

std::string split_name(Split s);
Split split_from_name(const std::string& s);

struct QATriplet {
    std::string image_id;
    std::string question;
    std::optional<double> answer_score;
    std::string answer_text;
    std::string dimension;
    Split split = Split::train;
    bool augmented = false;
};

struct ImageRecord {
    std::string image_id;
    Image pixels;
    double lat = 0, lon = 0;
    int64_t capture_time = 0;  // unix seconds
    std::string community_id;
    double price_per_sqm = 0;
    int tier = -1;
    std::map<std::string, double> objective_features;  // 9 named values, 1-7 scale
    double openness = 4.0;
    std::string land_use = "residential";
};

struct RatingRecord {
    std::string respondent_id;
    std::string image_id;
    std::string dimension;
    double score = 0;  // Likert 1-5 raw; float after normalization
    bool skipped = false;
};

struct DimensionSpec {
    double lo = 1, hi = 5;
    bool subjective = true;
};

// Six subjective survey dimensions plus seven coded physical attributes.
class DimensionRegistry {
public:
    static DimensionRegistry standard();

    void add(const std::string& name, DimensionSpec spec);
    bool has(const std::string& name) const { return dims_.count(name) > 0; }
    const DimensionSpec& get(const std::string& name) const;
    const std::map<std::string, DimensionSpec>& all() const { return dims_; }
    std::vector<std::string> subjective_names() const;
    std::vector<std::string> objective_names() const;

private:
    std::map<std::string, DimensionSpec> dims_;
};

// ---------------------------------------------------------------------------
// Triplet parsing and PII scrubbing
// ---------------------------------------------------------------------------

enum class ParseMode { strict, lenient };

// One JSON object per call; unknown fields reject (strict) or collect warnings
// (lenient). Scores are range-checked against the registry.
QATriplet parse_triplet(const std::string& json_text, const DimensionRegistry& registry,
                        ParseMode mode = ParseMode::strict,
                        std::vector<std::string>* warnings = nullptr);

std::string triplet_to_json(const QATriplet& t);

struct ScrubResult {
    std::string text;
    int redactions = 0;
};

using AliasTable = std::vector<std::pair<std::string, std::string>>;

AliasTable default_alias_table();
ScrubResult scrub_pii(const std::string& text, const AliasTable& aliases = default_alias_table());

// ---------------------------------------------------------------------------
// Deduplication
// ---------------------------------------------------------------------------

// Average hash: 8x8 box-mean downscale, threshold at the cell mean (ties map
// to 1), packed row-major MSB-first.
uint64_t phash(const Image& img);

int hamming(uint64_t a, uint64_t b);

double haversine_m(double lat1, double lon1, double lat2, double lon2);

struct DedupRemoval {
    std::string kept_id;
    std::string removed_id;
    std::string rule;  // "hash", "geo" or "hash+geo"
    int hamming_distance = -1;
    double geo_distance_m = -1;
};

struct DedupResult {
    std::vector<ImageRecord> kept;
    std::vector<DedupRemoval> removed;
};

// Duplicate iff Hamming(phash) <= hamming_max OR haversine <= geo_max_m,
// transitively closed; survivor = earliest capture_time, ties by image_id.
DedupResult dedup(const std::vector<ImageRecord>& records, int hamming_max = 10,
                  double geo_max_m = 5.0);

// ---------------------------------------------------------------------------
// Rating normalization / tiering / splitting
// ---------------------------------------------------------------------------

struct NormalizeResult {
    std::vector<RatingRecord> ratings;
    std::set<std::string> unnormalized_respondents;  // fewer than 2 usable ratings
};

// Per-respondent z-score over all their non-skipped ratings (population sd),
// rescaled as clip(3 + z, 1, 5); sd == 0 maps every rating to 3.0.
NormalizeResult normalize_likert(const std::vector<RatingRecord>& ratings);

struct QuintileResult {
    std::map<std::string, int> tier;   // community_id -> 0..4
    std::vector<double> thresholds;    // upper price edge of tiers 0..3
};

QuintileResult quintile_bin(const std::vector<std::pair<std::string, double>>& community_prices);

// Fixed-threshold mode: tier = #cuts strictly below price.
QuintileResult fixed_threshold_bin(const std::vector<std::pair<std::string, double>>& community_prices,
                                   const std::vector<double>& cuts);

std::vector<double> harbin_price_cuts();  // 5000 / 6800 / 8200 / 10000

struct SplitResult {
    std::set<std::string> train_communities;
    std::set<std::string> val_communities;
    std::vector<std::string> warnings;
};

// Per tier, round(count * fraction) communities (min 1, capped at count-1 so
// the tier keeps at least one training community) drawn by seeded shuffle.
SplitResult stratified_split(const std::map<std::string, int>& community_tiers,
                             double val_fraction, uint64_t seed);

// ---------------------------------------------------------------------------
// Balancing
// ---------------------------------------------------------------------------

struct DimensionBalance {
    long count = 0;
    long positive = 0;
    long added = 0;
    double sentiment_ratio = 0;  // positive / scored count
    bool deficient = false;      // needed donors but none available
};

struct BalanceResult {
    std::vector<QATriplet> corpus;
    std::map<std::string, DimensionBalance> report;
};

// Upsample by seeded duplication until every dimension reaches >= 80% of the
// largest dimension count and its sentiment ratio lies in [0.35, 0.65].
BalanceResult balance_dimensions(const std::vector<QATriplet>& corpus,
                                 const DimensionRegistry& registry, uint64_t seed);

// ---------------------------------------------------------------------------
// N-gram curriculum
// ---------------------------------------------------------------------------

// Max Jaccard similarity of n-gram sets (texts lowercased, whitespace-split).
// Both sides empty -> 1.0, one side empty -> 0.0.
double ngram_overlap(const std::string& generated, const std::vector<std::string>& references,
                     int n = 2);

struct CurriculumEntry {
    QATriplet triplet;
    int64_t last_used_epoch = -1;
};

struct CurriculumState {
    // keyed by image_id; reserve queues are FIFO
    std::map<std::string, std::vector<CurriculumEntry>> active;
    std::map<std::string, std::vector<QATriplet>> reserve;

    long total_count() const;
};

struct SwapEvent {
    std::string type;  // "promotion", "periodic", "deficiency"
    std::string image_id;
    std::string promoted_question;
    std::string demoted_question;
    double overlap = -1;
};

struct CurriculumOutcome {
    CurriculumState state;
    std::vector<SwapEvent> log;
    // image_ids whose active pair is transiently replaced by a reserve pair
    // for the coming epoch (paper's periodic batch replacement)
    std::vector<std::string> periodic_images;
};

// `ref_text` projects a triplet onto the text space the generations live in
// (identity on answer_text by default; the trainer passes token-id strings).
using RefTextFn = std::function<std::string(const QATriplet&)>;

CurriculumOutcome curriculum_refresh(const std::map<std::string, std::string>& epoch_generations,
                                     const CurriculumState& state, double tau,
                                     double periodic_fraction, uint64_t seed, int64_t epoch,
                                     const RefTextFn& ref_text = {});

}  // namespace msef::curation
