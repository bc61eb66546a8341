#include "msef/curation.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include "json.hpp"
#include "msef/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace msef::curation {

using nlohmann::json;

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::reserve: return "reserve";
    }
    return "train";
}

Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "reserve") return Split::reserve;
    throw ValidationError("unknown split value: " + s);
}

DimensionRegistry DimensionRegistry::standard() {
    DimensionRegistry r;
    for (const char* name : {"accessibility", "cleanliness", "perceived safety", "visual richness",
                             "commercial convenience", "overall satisfaction"})
        r.add(name, {1, 5, true});
    for (const char* name : {"sidewalk width", "roadway width", "greening level", "motorization",
                             "commercial activity density", "sky openness", "public facilities"})
        r.add(name, {1, 7, false});
    return r;
}

void DimensionRegistry::add(const std::string& name, DimensionSpec spec) {
    if (dims_.count(name)) throw InputError("DimensionRegistry: duplicate dimension " + name);
    dims_[name] = spec;
}

const DimensionSpec& DimensionRegistry::get(const std::string& name) const {
    auto it = dims_.find(name);
    if (it == dims_.end()) throw ValidationError("unregistered dimension: " + name);
    return it->second;
}

std::vector<std::string> DimensionRegistry::subjective_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : dims_)
        if (v.subjective) out.push_back(k);
    return out;
}

std::vector<std::string> DimensionRegistry::objective_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : dims_)
        if (!v.subjective) out.push_back(k);
    return out;
}

// ---------------------------------------------------------------------------
// Triplet parsing
// ---------------------------------------------------------------------------

QATriplet parse_triplet(const std::string& json_text, const DimensionRegistry& registry,
                        ParseMode mode, std::vector<std::string>* warnings) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("triplet is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("triplet must be a JSON object");

    static const std::set<std::string> known = {"image_id", "question",  "answer_score", "answer_text",
                                                "dimension", "split",    "augmented"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) {
            if (mode == ParseMode::strict) throw ValidationError("unknown field: " + key);
            if (warnings) warnings->push_back("ignored unknown field: " + key);
        }
    }

    auto require_string = [&](const char* field) -> std::string {
        if (!j.contains(field) || !j[field].is_string())
            throw ValidationError(std::string("missing required field: ") + field);
        return j[field].get<std::string>();
    };

    QATriplet t;
    t.image_id = require_string("image_id");
    if (t.image_id.empty()) throw ValidationError("missing required field: image_id");
    t.question = require_string("question");
    t.answer_text = require_string("answer_text");
    t.dimension = require_string("dimension");
    const DimensionSpec& spec = registry.get(t.dimension);

    if (j.contains("answer_score") && !j["answer_score"].is_null()) {
        if (!j["answer_score"].is_number()) throw ValidationError("answer_score must be a number");
        const double s = j["answer_score"].get<double>();
        if (s < spec.lo || s > spec.hi)
            throw ValidationError("answer_score " + std::to_string(s) + " out of range [" +
                                  std::to_string(spec.lo) + ", " + std::to_string(spec.hi) + "] for " +
                                  t.dimension);
        t.answer_score = s;
    } else {
        throw ValidationError("missing required field: answer_score");
    }

    if (j.contains("split")) t.split = split_from_name(j["split"].get<std::string>());
    if (j.contains("augmented")) {
        if (!j["augmented"].is_boolean()) throw ValidationError("augmented must be a boolean");
        t.augmented = j["augmented"].get<bool>();
    }
    return t;
}

std::string triplet_to_json(const QATriplet& t) {
    json j;
    j["image_id"] = t.image_id;
    j["question"] = t.question;
    j["answer_score"] = t.answer_score.has_value() ? json(*t.answer_score) : json(nullptr);
    j["answer_text"] = t.answer_text;
    j["dimension"] = t.dimension;
    j["split"] = split_name(t.split);
    j["augmented"] = t.augmented;
    return j.dump();
}

// ---------------------------------------------------------------------------
// PII scrubbing
// ---------------------------------------------------------------------------

AliasTable default_alias_table() {
    return {{"the power plant compound", "Dongli Square Residential Area"}};
}

ScrubResult scrub_pii(const std::string& text, const AliasTable& aliases) {
    static const std::regex email_re(R"([A-Za-z0-9._%+\-]+@[A-Za-z0-9.\-]+\.[A-Za-z]{2,})");
    static const std::regex phone_re(R"([0-9]{7,})");

    ScrubResult r;
    r.text = text;

    auto replace_all_re = [&r](const std::regex& re, const char* placeholder) {
        std::string out;
        auto begin = std::sregex_iterator(r.text.begin(), r.text.end(), re);
        auto end = std::sregex_iterator();
        size_t last = 0;
        for (auto it = begin; it != end; ++it) {
            out += r.text.substr(last, static_cast<size_t>(it->position()) - last);
            out += placeholder;
            last = static_cast<size_t>(it->position() + it->length());
            ++r.redactions;
        }
        out += r.text.substr(last);
        r.text = std::move(out);
    };

    replace_all_re(email_re, "⟨EMAIL⟩");
    replace_all_re(phone_re, "⟨PHONE⟩");

    for (const auto& [from, to] : aliases) {
        if (from.empty()) continue;
        size_t pos = 0;
        while ((pos = r.text.find(from, pos)) != std::string::npos) {
            r.text.replace(pos, from.size(), to);
            pos += to.size();
            ++r.redactions;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Perceptual hash / dedup
// ---------------------------------------------------------------------------

uint64_t phash(const Image& img) {
    if (img.h <= 0 || img.w <= 0 || img.px.empty()) throw InputError("phash: empty image");
    double cell[64];
    for (int bi = 0; bi < 8; ++bi) {
        int r0 = bi * img.h / 8;
        int r1 = std::max((bi + 1) * img.h / 8, r0 + 1);
        r1 = std::min(r1, img.h);
        for (int bj = 0; bj < 8; ++bj) {
            int c0 = bj * img.w / 8;
            int c1 = std::max((bj + 1) * img.w / 8, c0 + 1);
            c1 = std::min(c1, img.w);
            double sum = 0.0;
            for (int r = r0; r < r1; ++r)
                for (int c = c0; c < c1; ++c) sum += img.at(r, c);
            cell[bi * 8 + bj] = sum / ((r1 - r0) * (c1 - c0));
        }
    }
    double mean = 0.0;
    for (double v : cell) mean += v;
    mean /= 64.0;
    uint64_t bits = 0;
    for (int i = 0; i < 64; ++i) {
        bits <<= 1;
        if (cell[i] >= mean) bits |= 1;  // ties map to 1 for determinism
    }
    return bits;
}

int hamming(uint64_t a, uint64_t b) { return static_cast<int>(std::popcount(a ^ b)); }

double haversine_m(double lat1, double lon1, double lat2, double lon2) {
    constexpr double kEarthRadiusM = 6371000.0;
    constexpr double kDeg = 0.017453292519943295;
    const double dlat = (lat2 - lat1) * kDeg;
    const double dlon = (lon2 - lon1) * kDeg;
    const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(lat1 * kDeg) * std::cos(lat2 * kDeg) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(a)));
}

namespace {
struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(static_cast<size_t>(n)) {
        for (int i = 0; i < n; ++i) parent[static_cast<size_t>(i)] = i;
    }
    int find(int x) {
        while (parent[static_cast<size_t>(x)] != x) {
            parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
            x = parent[static_cast<size_t>(x)];
        }
        return x;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[static_cast<size_t>(std::max(a, b))] = std::min(a, b);
    }
};
}  // namespace

DedupResult dedup(const std::vector<ImageRecord>& records, int hamming_max, double geo_max_m) {
    const int n = static_cast<int>(records.size());
    DedupResult out;
    if (n == 0) return out;

    std::vector<uint64_t> hashes(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) hashes[static_cast<size_t>(i)] = phash(records[static_cast<size_t>(i)].pixels);

    // Pair scan, row-parallel with ordered merge so results are identical
    // across thread counts.
    std::vector<std::vector<int>> row_pairs(static_cast<size_t>(n));
#pragma omp parallel for schedule(dynamic, 16)
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const bool hash_dup = hamming(hashes[static_cast<size_t>(i)], hashes[static_cast<size_t>(j)]) <= hamming_max;
            const bool geo_dup = haversine_m(records[static_cast<size_t>(i)].lat, records[static_cast<size_t>(i)].lon,
                                             records[static_cast<size_t>(j)].lat, records[static_cast<size_t>(j)].lon) <= geo_max_m;
            if (hash_dup || geo_dup) row_pairs[static_cast<size_t>(i)].push_back(j);
        }
    }

    UnionFind uf(n);
    for (int i = 0; i < n; ++i)
        for (int j : row_pairs[static_cast<size_t>(i)]) uf.unite(i, j);

    // Survivor per component: earliest capture_time, ties by smallest id.
    std::map<int, int> survivor;
    for (int i = 0; i < n; ++i) {
        const int root = uf.find(i);
        auto it = survivor.find(root);
        if (it == survivor.end()) {
            survivor[root] = i;
        } else {
            const ImageRecord& cur = records[static_cast<size_t>(it->second)];
            const ImageRecord& cand = records[static_cast<size_t>(i)];
            if (cand.capture_time < cur.capture_time ||
                (cand.capture_time == cur.capture_time && cand.image_id < cur.image_id))
                it->second = i;
        }
    }

    for (int i = 0; i < n; ++i) {
        const int root = uf.find(i);
        const int keep = survivor[root];
        if (keep == i) {
            out.kept.push_back(records[static_cast<size_t>(i)]);
            continue;
        }
        DedupRemoval rem;
        rem.kept_id = records[static_cast<size_t>(keep)].image_id;
        rem.removed_id = records[static_cast<size_t>(i)].image_id;
        rem.hamming_distance = hamming(hashes[static_cast<size_t>(keep)], hashes[static_cast<size_t>(i)]);
        rem.geo_distance_m = haversine_m(records[static_cast<size_t>(keep)].lat, records[static_cast<size_t>(keep)].lon,
                                         records[static_cast<size_t>(i)].lat, records[static_cast<size_t>(i)].lon);
        const bool by_hash = rem.hamming_distance <= hamming_max;
        const bool by_geo = rem.geo_distance_m <= geo_max_m;
        rem.rule = by_hash && by_geo ? "hash+geo" : by_hash ? "hash" : by_geo ? "geo" : "chain";
        out.removed.push_back(std::move(rem));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Likert normalization
// ---------------------------------------------------------------------------

NormalizeResult normalize_likert(const std::vector<RatingRecord>& ratings) {
    std::map<std::string, std::vector<size_t>> by_respondent;
    for (size_t i = 0; i < ratings.size(); ++i)
        if (!ratings[i].skipped) by_respondent[ratings[i].respondent_id].push_back(i);

    NormalizeResult out;
    out.ratings = ratings;
    for (const auto& [rid, idxs] : by_respondent) {
        if (idxs.size() < 2) {
            out.unnormalized_respondents.insert(rid);
            continue;
        }
        double mean = 0.0;
        for (size_t i : idxs) mean += ratings[i].score;
        mean /= static_cast<double>(idxs.size());
        double var = 0.0;
        for (size_t i : idxs) var += (ratings[i].score - mean) * (ratings[i].score - mean);
        var /= static_cast<double>(idxs.size());  // population sd
        const double sd = std::sqrt(var);
        for (size_t i : idxs) {
            double z = sd > 0.0 ? (ratings[i].score - mean) / sd : 0.0;
            out.ratings[i].score = std::clamp(3.0 + z, 1.0, 5.0);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tiering
// ---------------------------------------------------------------------------

QuintileResult quintile_bin(const std::vector<std::pair<std::string, double>>& community_prices) {
    const size_t n = community_prices.size();
    if (n < 5) throw InputError("quintile_bin: need at least 5 communities");
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (community_prices[a].second != community_prices[b].second)
            return community_prices[a].second < community_prices[b].second;
        return community_prices[a].first < community_prices[b].first;
    });
    const size_t base = n / 5, rem = n % 5;
    QuintileResult out;
    size_t pos = 0;
    for (int t = 0; t < 5; ++t) {
        const size_t size = base + (static_cast<size_t>(t) < rem ? 1 : 0);
        for (size_t q = 0; q < size; ++q, ++pos) out.tier[community_prices[order[pos]].first] = t;
        if (t < 4 && pos > 0) out.thresholds.push_back(community_prices[order[pos - 1]].second);
    }
    return out;
}

QuintileResult fixed_threshold_bin(const std::vector<std::pair<std::string, double>>& community_prices,
                                   const std::vector<double>& cuts) {
    if (cuts.size() != 4) throw InputError("fixed_threshold_bin: exactly 4 cut points required");
    QuintileResult out;
    out.thresholds = cuts;
    for (const auto& [id, price] : community_prices) {
        int t = 0;
        for (double c : cuts)
            if (price >= c) ++t;
        out.tier[id] = t;
    }
    return out;
}

std::vector<double> harbin_price_cuts() { return {5000.0, 6800.0, 8200.0, 10000.0}; }

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

SplitResult stratified_split(const std::map<std::string, int>& community_tiers, double val_fraction,
                             uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw InputError("stratified_split: bad fraction");
    std::map<int, std::vector<std::string>> by_tier;
    for (const auto& [cid, tier] : community_tiers) by_tier[tier].push_back(cid);

    SplitResult out;
    for (auto& [tier, ids] : by_tier) {
        std::sort(ids.begin(), ids.end());
        const long count = static_cast<long>(ids.size());
        long k = std::max(1l, std::lround(static_cast<double>(count) * val_fraction));
        if (k >= count) {
            k = count - 1;
            out.warnings.push_back("tier " + std::to_string(tier) +
                                   ": validation quota would empty training; kept " +
                                   std::to_string(count - k) + " in train");
        }
        CounterRng rng(CounterRng::derive(seed, static_cast<uint64_t>(tier) + 0x5741u));
        for (size_t i = ids.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(rng.next_below(i));
            std::swap(ids[i - 1], ids[j]);
        }
        for (long i = 0; i < count; ++i) {
            if (i < k)
                out.val_communities.insert(ids[static_cast<size_t>(i)]);
            else
                out.train_communities.insert(ids[static_cast<size_t>(i)]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Balancing
// ---------------------------------------------------------------------------

BalanceResult balance_dimensions(const std::vector<QATriplet>& corpus,
                                 const DimensionRegistry& registry, uint64_t seed) {
    BalanceResult out;
    out.corpus = corpus;

    std::map<std::string, std::vector<size_t>> donors;  // dim -> indices into input corpus
    for (size_t i = 0; i < corpus.size(); ++i) donors[corpus[i].dimension].push_back(i);

    auto positive_threshold = [&](const std::string& dim) {
        const DimensionSpec& s = registry.get(dim);
        return (s.lo + s.hi) / 2.0 + 0.5;
    };

    long max_count = 0;
    for (const auto& [dim, spec] : registry.all()) {
        auto it = donors.find(dim);
        max_count = std::max(max_count, it == donors.end() ? 0l : static_cast<long>(it->second.size()));
    }
    const long target = static_cast<long>(std::ceil(0.8 * static_cast<double>(max_count)));

    for (const auto& [dim, spec] : registry.all()) {
        DimensionBalance bal;
        std::vector<size_t> pos_pool, neg_pool;
        if (auto it = donors.find(dim); it != donors.end()) {
            bal.count = static_cast<long>(it->second.size());
            const double thr = positive_threshold(dim);
            for (size_t idx : it->second) {
                const bool pos = corpus[idx].answer_score.value_or(spec.lo) >= thr;
                if (pos) {
                    ++bal.positive;
                    pos_pool.push_back(idx);
                } else {
                    neg_pool.push_back(idx);
                }
            }
        }

        CounterRng rng(CounterRng::derive(seed, dim));
        const long cap = std::max(4 * std::max(target, 1l), 64l);
        long iterations = 0;
        while (iterations++ < cap) {
            bal.sentiment_ratio = bal.count > 0 ? static_cast<double>(bal.positive) / static_cast<double>(bal.count) : 0.0;
            const bool short_count = bal.count < target;
            const bool skewed = bal.count > 0 && (bal.sentiment_ratio < 0.35 || bal.sentiment_ratio > 0.65);
            if (!short_count && !skewed) break;

            const std::vector<size_t>* pool;
            if (bal.count > 0 && bal.sentiment_ratio < 0.35 && !pos_pool.empty())
                pool = &pos_pool;
            else if (bal.count > 0 && bal.sentiment_ratio > 0.65 && !neg_pool.empty())
                pool = &neg_pool;
            else if (skewed && !short_count) {
                bal.deficient = true;  // cannot fix skew without the missing class
                break;
            } else if (!pos_pool.empty() || !neg_pool.empty()) {
                pool = !pos_pool.empty() ? &pos_pool : &neg_pool;
            } else {
                bal.deficient = true;  // no donors at all
                break;
            }

            const size_t donor = (*pool)[static_cast<size_t>(rng.next_below(pool->size()))];
            QATriplet copy = corpus[donor];
            copy.augmented = true;
            const double thr = positive_threshold(dim);
            if (copy.answer_score.value_or(spec.lo) >= thr) ++bal.positive;
            ++bal.count;
            out.corpus.push_back(std::move(copy));
            ++bal.added;
        }
        bal.sentiment_ratio = bal.count > 0 ? static_cast<double>(bal.positive) / static_cast<double>(bal.count) : 0.0;
        if (bal.count == 0) bal.deficient = true;
        out.report[dim] = bal;
    }
    return out;
}

// ---------------------------------------------------------------------------
// N-gram overlap and curriculum
// ---------------------------------------------------------------------------

namespace {
std::vector<std::string> tokenize_lower(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::set<std::string> ngram_set(const std::vector<std::string>& tokens, int n) {
    std::set<std::string> out;
    if (static_cast<int>(tokens.size()) < n) return out;
    for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
        std::string key;
        for (int q = 0; q < n; ++q) {
            if (q) key.push_back('\x1f');
            key += tokens[i + static_cast<size_t>(q)];
        }
        out.insert(std::move(key));
    }
    return out;
}
}  // namespace

double ngram_overlap(const std::string& generated, const std::vector<std::string>& references, int n) {
    if (n < 1) throw InputError("ngram_overlap: n must be >= 1");
    const auto g = ngram_set(tokenize_lower(generated), n);
    double best = 0.0;
    for (const auto& ref : references) {
        const auto r = ngram_set(tokenize_lower(ref), n);
        if (g.empty() && r.empty()) {
            best = std::max(best, 1.0);
            continue;
        }
        if (g.empty() || r.empty()) continue;  // jaccard 0
        size_t inter = 0;
        for (const auto& key : g)
            if (r.count(key)) ++inter;
        const size_t uni = g.size() + r.size() - inter;
        best = std::max(best, static_cast<double>(inter) / static_cast<double>(uni));
    }
    return best;
}

long CurriculumState::total_count() const {
    long n = 0;
    for (const auto& [img, entries] : active) n += static_cast<long>(entries.size());
    for (const auto& [img, entries] : reserve) n += static_cast<long>(entries.size());
    return n;
}

CurriculumOutcome curriculum_refresh(const std::map<std::string, std::string>& epoch_generations,
                                     const CurriculumState& state, double tau,
                                     double periodic_fraction, uint64_t seed, int64_t epoch,
                                     const RefTextFn& ref_text) {
    CurriculumOutcome out;
    out.state = state;
    const auto project = [&ref_text](const QATriplet& t) { return ref_text ? ref_text(t) : t.answer_text; };

    // Promotion pass: images whose generation drifted below tau vs all active
    // references swap one reserve pair in (FIFO) and retire the LRU active pair.
    for (const auto& [image_id, generated] : epoch_generations) {
        auto ait = out.state.active.find(image_id);
        if (ait == out.state.active.end() || ait->second.empty()) continue;
        std::vector<std::string> refs;
        for (const auto& entry : ait->second) refs.push_back(project(entry.triplet));
        const double overlap = ngram_overlap(generated, refs);
        if (overlap >= tau) continue;

        auto rit = out.state.reserve.find(image_id);
        if (rit == out.state.reserve.end() || rit->second.empty()) {
            SwapEvent ev;
            ev.type = "deficiency";
            ev.image_id = image_id;
            ev.overlap = overlap;
            out.log.push_back(std::move(ev));
            continue;
        }

        size_t lru = 0;
        for (size_t i = 1; i < ait->second.size(); ++i)
            if (ait->second[i].last_used_epoch < ait->second[lru].last_used_epoch) lru = i;

        QATriplet promoted = rit->second.front();
        rit->second.erase(rit->second.begin());
        promoted.split = Split::train;
        QATriplet demoted = ait->second[lru].triplet;
        demoted.split = Split::reserve;

        SwapEvent ev;
        ev.type = "promotion";
        ev.image_id = image_id;
        ev.promoted_question = promoted.question;
        ev.demoted_question = demoted.question;
        ev.overlap = overlap;
        out.log.push_back(std::move(ev));

        ait->second[lru] = CurriculumEntry{std::move(promoted), epoch};
        rit->second.push_back(std::move(demoted));
    }

    // Periodic pass: a fixed fraction of images use a reserve pair for the
    // coming epoch's batches without any permanent promotion.
    std::vector<std::string> eligible;
    for (const auto& [image_id, entries] : out.state.active) {
        if (entries.empty()) continue;
        auto rit = out.state.reserve.find(image_id);
        if (rit != out.state.reserve.end() && !rit->second.empty()) eligible.push_back(image_id);
    }
    long want = std::lround(periodic_fraction * static_cast<double>(out.state.active.size()));
    want = std::min(want, static_cast<long>(eligible.size()));
    if (want > 0) {
        CounterRng rng(CounterRng::derive(seed, static_cast<uint64_t>(epoch) ^ 0x9e3779b9u));
        for (size_t i = eligible.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(rng.next_below(i));
            std::swap(eligible[i - 1], eligible[j]);
        }
        eligible.resize(static_cast<size_t>(want));
        std::sort(eligible.begin(), eligible.end());
        for (const auto& image_id : eligible) {
            SwapEvent ev;
            ev.type = "periodic";
            ev.image_id = image_id;
            out.log.push_back(std::move(ev));
            out.periodic_images.push_back(image_id);
        }
    }
    return out;
}

}  // namespace msef::curation
