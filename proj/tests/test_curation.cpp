#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "msef/curation.hpp"
#include "msef/rng.hpp"

using namespace msef;
using namespace msef::curation;

namespace {

Image constant_image(int h, int w, double v) {
    Image img;
    img.h = h;
    img.w = w;
    img.px.assign(static_cast<size_t>(h) * w, v);
    return img;
}

ImageRecord make_record(const std::string& id, const Image& px, double lat, double lon, int64_t t) {
    ImageRecord r;
    r.image_id = id;
    r.pixels = px;
    r.lat = lat;
    r.lon = lon;
    r.capture_time = t;
    r.community_id = "c";
    return r;
}

Image noise_image(int h, int w, uint64_t seed) {
    CounterRng rng(seed);
    Image img;
    img.h = h;
    img.w = w;
    img.px.resize(static_cast<size_t>(h) * w);
    for (auto& v : img.px) v = rng.next_double();
    return img;
}

}  // namespace

TEST_CASE("parse_triplet round trip and failures") {
    const auto reg = DimensionRegistry::standard();
    QATriplet t;
    t.image_id = "img_1";
    t.question = "how clean is this street";
    t.answer_score = 4.0;
    t.answer_text = "tidy and well kept";
    t.dimension = "cleanliness";
    t.split = Split::train;
    const auto parsed = parse_triplet(triplet_to_json(t), reg);
    CHECK(parsed.image_id == t.image_id);
    CHECK(parsed.answer_score == 4.0);
    CHECK(parsed.dimension == "cleanliness");

    // missing answer_score on a scored dimension
    CHECK_THROWS_WITH_AS(
        parse_triplet(R"({"image_id":"a","question":"q","answer_text":"t","dimension":"cleanliness"})", reg),
        doctest::Contains("answer_score"), ValidationError);

    // out-of-range score
    CHECK_THROWS_AS(
        parse_triplet(
            R"({"image_id":"a","question":"q","answer_score":6,"answer_text":"t","dimension":"cleanliness"})",
            reg),
        ValidationError);

    // unknown field: strict rejects, lenient warns
    const std::string extra =
        R"({"image_id":"a","question":"q","answer_score":3,"answer_text":"t","dimension":"cleanliness","bonus":1})";
    CHECK_THROWS_WITH_AS(parse_triplet(extra, reg), doctest::Contains("bonus"), ValidationError);
    std::vector<std::string> warnings;
    CHECK_NOTHROW(parse_triplet(extra, reg, ParseMode::lenient, &warnings));
    CHECK(warnings.size() == 1);

    // unregistered dimension
    CHECK_THROWS_AS(
        parse_triplet(R"({"image_id":"a","question":"q","answer_score":3,"answer_text":"t","dimension":"zen"})",
                      reg),
        ValidationError);

    // malformed JSON
    CHECK_THROWS_AS(parse_triplet("{not json", reg), ValidationError);
}

TEST_CASE("scrub_pii") {
    auto r = scrub_pii("a perfectly ordinary comment");
    CHECK(r.text == "a perfectly ordinary comment");
    CHECK(r.redactions == 0);

    r = scrub_pii("call 13812345678");
    CHECK(r.text == "call ⟨PHONE⟩");
    CHECK(r.redactions == 1);

    r = scrub_pii("mail me at resident@example.com please");
    CHECK(r.text == "mail me at ⟨EMAIL⟩ please");
    CHECK(r.redactions == 1);

    r = scrub_pii("near the power plant compound gate");
    CHECK(r.text == "near Dongli Square Residential Area gate");
    CHECK(r.redactions == 1);
}

TEST_CASE("phash fixed values") {
    // constant image: every cell equals the mean; tie rule maps all bits to 1
    CHECK(phash(constant_image(8, 8, 0.5)) == 0xFFFFFFFFFFFFFFFFull);

    // copy has hamming distance zero
    const Image img = noise_image(16, 16, 3);
    CHECK(hamming(phash(img), phash(img)) == 0);

    // left-bright / right-dark 8x8: 0xF0 per row
    Image half = constant_image(8, 8, 0.0);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 4; ++c) half.at(r, c) = 1.0;
    CHECK(phash(half) == 0xF0F0F0F0F0F0F0F0ull);

    CHECK_THROWS_AS(phash(Image{}), InputError);
}

TEST_CASE("dedup rules and chains") {
    const double lat = 45.75, lon = 126.63;
    const Image a_px = noise_image(16, 16, 1);
    const Image b_px = noise_image(16, 16, 2);

    // identical pixels far apart -> hash rule
    {
        std::vector<ImageRecord> recs = {make_record("a", a_px, lat, lon, 100),
                                         make_record("b", a_px, lat + 0.01, lon, 200)};
        const auto r = dedup(recs, 10, 5.0);
        REQUIRE(r.kept.size() == 1);
        CHECK(r.kept[0].image_id == "a");  // earliest capture wins
        REQUIRE(r.removed.size() == 1);
        CHECK(r.removed[0].rule == "hash");
    }
    // distinct pixels 3 m apart -> geo rule
    {
        std::vector<ImageRecord> recs = {make_record("a", a_px, lat, lon, 100),
                                         make_record("b", b_px, lat + 0.000027, lon, 50)};
        const auto r = dedup(recs, 10, 5.0);
        REQUIRE(r.kept.size() == 1);
        CHECK(r.kept[0].image_id == "b");  // earlier capture
        CHECK(r.removed[0].rule == "geo");
    }
    // chain a~b (hash), b~c (geo) -> one survivor
    {
        std::vector<ImageRecord> recs = {
            make_record("a", a_px, lat, lon, 10),
            make_record("b", a_px, lat + 0.01, lon, 20),
            make_record("c", b_px, lat + 0.01 + 0.000018, lon, 30),
        };
        const auto r = dedup(recs, 10, 5.0);
        CHECK(r.kept.size() == 1);
        CHECK(r.kept[0].image_id == "a");
        CHECK(r.removed.size() == 2);
    }
    // capture-time tie falls back to lexicographic id
    {
        std::vector<ImageRecord> recs = {make_record("z", a_px, lat, lon, 5),
                                         make_record("y", a_px, lat, lon, 5)};
        const auto r = dedup(recs, 10, 5.0);
        CHECK(r.kept[0].image_id == "y");
    }
}

TEST_CASE("dedup soundness and idempotence on a planted corpus") {
    CounterRng rng(99);
    std::vector<ImageRecord> recs;
    for (int i = 0; i < 120; ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "img%03d", i);
        recs.push_back(make_record(id, noise_image(16, 16, 1000 + static_cast<uint64_t>(i)),
                                   45.0 + i * 0.01, 126.0, 1000 + i));
    }
    // plant: 3 hash pairs, 3 geo pairs, 2 chains
    for (int k = 0; k < 3; ++k) {
        auto dup = recs[static_cast<size_t>(k) * 7];
        dup.image_id = "hdup" + std::to_string(k);
        dup.lat += 0.5;
        dup.capture_time += 99999;
        recs.push_back(dup);
    }
    for (int k = 0; k < 3; ++k) {
        auto dup = make_record("gdup" + std::to_string(k), noise_image(16, 16, 5000 + static_cast<uint64_t>(k)),
                               recs[static_cast<size_t>(k) * 11].lat + 0.00002,
                               recs[static_cast<size_t>(k) * 11].lon, 999999);
        recs.push_back(dup);
    }

    const auto first = dedup(recs, 10, 5.0);
    CHECK(first.removed.size() >= 6);

    // soundness: no surviving pair violates either threshold
    for (size_t i = 0; i < first.kept.size(); ++i)
        for (size_t j = i + 1; j < first.kept.size(); ++j) {
            const auto& a = first.kept[i];
            const auto& b = first.kept[j];
            CHECK(hamming(phash(a.pixels), phash(b.pixels)) > 10);
            CHECK(haversine_m(a.lat, a.lon, b.lat, b.lon) > 5.0);
        }

    // idempotence
    const auto second = dedup(first.kept, 10, 5.0);
    CHECK(second.removed.empty());
    CHECK(second.kept.size() == first.kept.size());
}

TEST_CASE("normalize_likert") {
    auto make = [](const std::string& rid, double score) {
        RatingRecord r;
        r.respondent_id = rid;
        r.image_id = "i";
        r.dimension = "cleanliness";
        r.score = score;
        return r;
    };

    // all threes -> all 3.0 (degenerate sd)
    {
        std::vector<RatingRecord> rs = {make("a", 3), make("a", 3), make("a", 3)};
        const auto out = normalize_likert(rs);
        for (const auto& r : out.ratings) CHECK(r.score == 3.0);
    }
    // [1,3,5] with population sd
    {
        std::vector<RatingRecord> rs = {make("a", 1), make("a", 3), make("a", 5)};
        const auto out = normalize_likert(rs);
        CHECK(out.ratings[0].score == doctest::Approx(1.7753).epsilon(1e-3));
        CHECK(out.ratings[1].score == doctest::Approx(3.0));
        CHECK(out.ratings[2].score == doctest::Approx(4.2247).epsilon(1e-3));
    }
    // clip contract and rank preservation
    {
        CounterRng rng(6);
        std::vector<RatingRecord> rs;
        for (int i = 0; i < 40; ++i) rs.push_back(make("a", 1 + static_cast<double>(rng.next_below(5))));
        const auto out = normalize_likert(rs);
        for (const auto& r : out.ratings) {
            CHECK(r.score >= 1.0);
            CHECK(r.score <= 5.0);
        }
        for (size_t i = 0; i < rs.size(); ++i)
            for (size_t j = 0; j < rs.size(); ++j)
                if (rs[i].score < rs[j].score) CHECK(out.ratings[i].score <= out.ratings[j].score);
    }
    // fewer than 2 ratings -> passthrough with warning
    {
        std::vector<RatingRecord> rs = {make("solo", 5)};
        const auto out = normalize_likert(rs);
        CHECK(out.ratings[0].score == 5.0);
        CHECK(out.unnormalized_respondents.count("solo") == 1);
    }
    // skipped records are excluded from the statistics and passed through
    {
        std::vector<RatingRecord> rs = {make("a", 1), make("a", 5)};
        RatingRecord sk = make("a", 0);
        sk.skipped = true;
        rs.push_back(sk);
        const auto out = normalize_likert(rs);
        CHECK(out.ratings[2].score == 0.0);
        CHECK(out.ratings[0].score == doctest::Approx(2.0));  // z=-1 -> 2
        CHECK(out.ratings[1].score == doctest::Approx(4.0));
    }
}

TEST_CASE("quintile binning") {
    // 10 items -> bins of 2
    std::vector<std::pair<std::string, double>> ten;
    for (int i = 0; i < 10; ++i) ten.emplace_back("c" + std::to_string(i), 1000.0 * (i + 1));
    auto q = quintile_bin(ten);
    for (int i = 0; i < 10; ++i) CHECK(q.tier["c" + std::to_string(i)] == i / 2);

    // 7 items -> sizes (2,2,1,1,1)
    std::vector<std::pair<std::string, double>> seven;
    for (int i = 0; i < 7; ++i) seven.emplace_back("c" + std::to_string(i), 100.0 * (i + 1));
    q = quintile_bin(seven);
    long sizes[5] = {};
    for (const auto& [cid, t] : q.tier) ++sizes[t];
    CHECK(sizes[0] == 2);
    CHECK(sizes[1] == 2);
    CHECK(sizes[2] == 1);
    CHECK(sizes[3] == 1);
    CHECK(sizes[4] == 1);

    CHECK_THROWS_AS(quintile_bin({{"a", 1.0}, {"b", 2.0}}), InputError);

    // equal-frequency invariant: sizes differ by at most one
    CounterRng rng(31);
    for (int t = 0; t < 10; ++t) {
        std::vector<std::pair<std::string, double>> v;
        const int n = 5 + static_cast<int>(rng.next_below(40));
        for (int i = 0; i < n; ++i) v.emplace_back("c" + std::to_string(i), rng.next_double() * 1e4);
        auto qq = quintile_bin(v);
        long s[5] = {};
        for (const auto& [cid, tier] : qq.tier) ++s[tier];
        const auto [mn, mx] = std::minmax_element(std::begin(s), std::end(s));
        CHECK(*mx - *mn <= 1);
    }
}

TEST_CASE("fixed Harbin thresholds") {
    std::vector<std::pair<std::string, double>> cs = {
        {"under", 4200}, {"midlow", 5000}, {"mid", 7000}, {"upper", 9000}, {"top", 12000}};
    const auto q = fixed_threshold_bin(cs, harbin_price_cuts());
    CHECK(q.tier.at("under") == 0);
    CHECK(q.tier.at("midlow") == 1);
    CHECK(q.tier.at("mid") == 2);
    CHECK(q.tier.at("upper") == 3);
    CHECK(q.tier.at("top") == 4);
    CHECK(q.thresholds == std::vector<double>{5000, 6800, 8200, 10000});
}

TEST_CASE("stratified split") {
    // 5 tiers x 5 communities, fraction 0.2 -> exactly 1 val per tier
    std::map<std::string, int> tiers;
    for (int t = 0; t < 5; ++t)
        for (int i = 0; i < 5; ++i) tiers["t" + std::to_string(t) + "c" + std::to_string(i)] = t;
    auto s = stratified_split(tiers, 0.2, 7);
    CHECK(s.val_communities.size() == 5);
    CHECK(s.train_communities.size() == 20);
    long val_per_tier[5] = {};
    for (const auto& cid : s.val_communities) ++val_per_tier[tiers[cid]];
    for (long v : val_per_tier) CHECK(v == 1);

    // determinism
    auto s2 = stratified_split(tiers, 0.2, 7);
    CHECK(s.val_communities == s2.val_communities);

    // partition: disjoint and exhaustive
    for (const auto& [cid, t] : tiers) {
        const bool in_val = s.val_communities.count(cid) > 0;
        const bool in_train = s.train_communities.count(cid) > 0;
        CHECK(in_val != in_train);
    }

    // 10 per tier -> 2 per tier
    std::map<std::string, int> tiers10;
    for (int t = 0; t < 5; ++t)
        for (int i = 0; i < 10; ++i) tiers10["t" + std::to_string(t) + "c" + std::to_string(i)] = t;
    s = stratified_split(tiers10, 0.2, 3);
    long vt[5] = {};
    for (const auto& cid : s.val_communities) ++vt[tiers10[cid]];
    for (long v : vt) CHECK(v == 2);

    // single-community tier keeps it in train with a warning
    std::map<std::string, int> lone = {{"only", 0}, {"a", 1}, {"b", 1}, {"c", 1}, {"d", 1}, {"e", 1}};
    s = stratified_split(lone, 0.2, 1);
    CHECK(s.train_communities.count("only") == 1);
    CHECK(!s.warnings.empty());

    // per-tier val counts within 1 of count*fraction
    CounterRng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        std::map<std::string, int> tmap;
        std::map<int, long> count;
        for (int t = 0; t < 5; ++t) {
            const int n = 2 + static_cast<int>(rng.next_below(12));
            for (int i = 0; i < n; ++i) tmap["t" + std::to_string(t) + "x" + std::to_string(i)] = t;
            count[t] = n;
        }
        const auto sp = stratified_split(tmap, 0.2, trial);
        std::map<int, long> val_count;
        for (const auto& cid : sp.val_communities) ++val_count[tmap[cid]];
        for (const auto& [t, n] : count) CHECK(std::abs(val_count[t] - 0.2 * n) < 1.0);
    }
}

TEST_CASE("balance_dimensions") {
    DimensionRegistry reg;
    for (const char* d : {"alpha", "beta", "gamma"}) reg.add(d, {1, 5, true});

    auto trip = [](const std::string& dim, double score) {
        QATriplet t;
        t.image_id = "i";
        t.question = "q";
        t.answer_score = score;
        t.answer_text = "text";
        t.dimension = dim;
        return t;
    };

    // already balanced: unchanged, all-green
    {
        std::vector<QATriplet> corpus;
        for (int i = 0; i < 10; ++i) {
            corpus.push_back(trip("alpha", i % 2 ? 4 : 2));
            corpus.push_back(trip("beta", i % 2 ? 5 : 1));
            corpus.push_back(trip("gamma", i % 2 ? 4 : 3));
        }
        const auto r = balance_dimensions(corpus, reg, 1);
        CHECK(r.corpus.size() == corpus.size());
        for (const auto& [dim, b] : r.report) {
            CHECK(!b.deficient);
            CHECK(b.added == 0);
        }
    }
    // dimension at 50% of max with donors -> upsampled to >= 80%
    {
        std::vector<QATriplet> corpus;
        for (int i = 0; i < 20; ++i) corpus.push_back(trip("alpha", i % 2 ? 4 : 2));
        for (int i = 0; i < 10; ++i) corpus.push_back(trip("beta", i % 2 ? 4 : 2));
        for (int i = 0; i < 20; ++i) corpus.push_back(trip("gamma", i % 2 ? 4 : 2));
        const auto r = balance_dimensions(corpus, reg, 2);
        CHECK(r.report.at("beta").count >= 16);
        CHECK(r.report.at("beta").sentiment_ratio >= 0.35);
        CHECK(r.report.at("beta").sentiment_ratio <= 0.65);
        long augmented = 0;
        for (const auto& t : r.corpus)
            if (t.augmented) ++augmented;
        CHECK(augmented == r.report.at("beta").added);
    }
    // corpus covering one dimension only: the others are flagged empty
    {
        std::vector<QATriplet> corpus;
        for (int i = 0; i < 6; ++i) corpus.push_back(trip("alpha", i % 2 ? 4 : 2));
        const auto r = balance_dimensions(corpus, reg, 3);
        CHECK(!r.report.at("alpha").deficient);
        CHECK(r.report.at("beta").deficient);
        CHECK(r.report.at("gamma").deficient);
        long deficient = 0;
        for (const auto& [dim, b] : r.report)
            if (b.deficient) ++deficient;
        CHECK(deficient == 2);
    }
}

TEST_CASE("ngram overlap") {
    CHECK(ngram_overlap("wide clean sidewalk", {"wide clean sidewalk"}) == 1.0);
    CHECK(ngram_overlap("alpha beta gamma", {"delta epsilon zeta"}) == 0.0);
    CHECK(ngram_overlap("clean wide sidewalk", {"wide sidewalk here"}) == doctest::Approx(1.0 / 3.0));
    // one-word texts have empty bigram sets
    CHECK(ngram_overlap("word", {"word"}) == 1.0);
    CHECK(ngram_overlap("word", {"two words"}) == 0.0);
    // case and whitespace folding
    CHECK(ngram_overlap("Wide   SIDEWALK", {"wide sidewalk"}) == 1.0);
    // max over references
    CHECK(ngram_overlap("a b c", {"x y", "a b c"}) == 1.0);
}

TEST_CASE("curriculum refresh") {
    auto trip = [](const std::string& img, const std::string& q, const std::string& text) {
        QATriplet t;
        t.image_id = img;
        t.question = q;
        t.answer_score = 3.0;
        t.answer_text = text;
        t.dimension = "cleanliness";
        return t;
    };

    CurriculumState state;
    state.active["i1"].push_back(CurriculumEntry{trip("i1", "q1", "calm tidy street"), 0});
    state.active["i2"].push_back(CurriculumEntry{trip("i2", "q2", "busy market lane"), 0});
    state.reserve["i1"].push_back(trip("i1", "q1alt", "orderly walk with greenery"));

    // all overlaps above tau, zero periodic fraction -> unchanged
    {
        std::map<std::string, std::string> gen = {{"i1", "calm tidy street"}, {"i2", "busy market lane"}};
        const auto out = curriculum_refresh(gen, state, 0.2, 0.0, 5, 1);
        CHECK(out.log.empty());
        CHECK(out.state.active.at("i1")[0].triplet.answer_text == "calm tidy street");
        CHECK(out.state.total_count() == state.total_count());
    }
    // tau = 0 can never trigger promotion (overlap < 0 impossible)
    {
        std::map<std::string, std::string> gen = {{"i1", "zz yy xx"}};
        const auto out = curriculum_refresh(gen, state, 0.0, 0.0, 5, 1);
        CHECK(out.log.empty());
    }
    // one drifted image with one reserve pair -> exactly one swap
    {
        std::map<std::string, std::string> gen = {{"i1", "totally unrelated words"}};
        const auto out = curriculum_refresh(gen, state, 0.2, 0.0, 5, 2);
        REQUIRE(out.log.size() == 1);
        CHECK(out.log[0].type == "promotion");
        CHECK(out.log[0].image_id == "i1");
        CHECK(out.state.active.at("i1")[0].triplet.answer_text == "orderly walk with greenery");
        CHECK(out.state.reserve.at("i1").size() == 1);
        CHECK(out.state.reserve.at("i1")[0].answer_text == "calm tidy street");
        CHECK(out.state.total_count() == state.total_count());
    }
    // drifted image with no reserve -> logged deficiency, no swap
    {
        std::map<std::string, std::string> gen = {{"i2", "totally unrelated words"}};
        const auto out = curriculum_refresh(gen, state, 0.2, 0.0, 5, 2);
        REQUIRE(out.log.size() == 1);
        CHECK(out.log[0].type == "deficiency");
        CHECK(out.state.total_count() == state.total_count());
    }
    // periodic replacement: seeded, exact count, reproducible
    {
        CurriculumState many;
        for (int i = 0; i < 100; ++i) {
            const std::string img = "img" + std::to_string(i);
            many.active[img].push_back(CurriculumEntry{trip(img, "q", "text body here"), 0});
            many.reserve[img].push_back(trip(img, "qa", "alternate body here"));
        }
        const auto a = curriculum_refresh({}, many, 0.2, 0.1, 9, 4);
        CHECK(a.periodic_images.size() == 10);
        const auto b = curriculum_refresh({}, many, 0.2, 0.1, 9, 4);
        CHECK(a.periodic_images == b.periodic_images);
        CHECK(a.state.total_count() == many.total_count());
    }
}
