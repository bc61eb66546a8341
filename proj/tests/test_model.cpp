#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "msef/model.hpp"
#include "msef/rng.hpp"

using namespace msef;
using namespace msef::model;

namespace {

AdapterConfig tiny_config(uint64_t seed = 1) {
    AdapterConfig c;
    c.model_dim = 8;
    c.lora_rank = 2;
    c.prefix_len = 3;
    c.num_queries = 4;
    c.num_heads = 2;
    c.patch_size = 4;
    c.vocab_size = 16;
    c.num_blocks = 2;
    c.ffn_mult = 2;
    c.max_rationale_len = 4;
    c.seed = seed;
    c.score_dims = {"walkability", "greenery"};
    return c;
}

curation::Image test_image(int h, int w, uint64_t seed) {
    CounterRng rng(seed);
    curation::Image img;
    img.h = h;
    img.w = w;
    img.px.resize(static_cast<size_t>(h) * w);
    for (auto& v : img.px) v = rng.next_double();
    return img;
}

void perturb_trainable(MsefModel& m, uint64_t seed, double sd = 0.05) {
    CounterRng rng(seed);
    for (auto& p : m.params())
        if (p.trainable)
            for (auto& v : p.t.data) v += sd * rng.gaussian();
}

TrainExample make_example(const MsefModel& m, uint64_t seed) {
    const Vocab vocab(m.config().vocab_size);
    TrainExample ex;
    ex.image = test_image(8, 8, seed);
    ex.question_tokens = vocab.encode("how walkable is this street");
    ex.answer_tokens = vocab.encode("quite walkable overall");
    ex.dimension = m.config().score_dims[0];
    ex.target_score = 4.0;
    return ex;
}

}  // namespace

TEST_CASE("config validation") {
    AdapterConfig c = tiny_config();
    c.lora_rank = 8;  // not < d
    CHECK_THROWS_AS(MsefModel{c}, InputError);
    c = tiny_config();
    c.num_heads = 3;  // does not divide d
    CHECK_THROWS_AS(MsefModel{c}, InputError);
}

TEST_CASE("attention op contract") {
    // single key: alpha = 1, output = that value row
    Tensor q(1, 2), k(1, 2), v(1, 3);
    q.data = {0.3, -1.0};
    k.data = {2.0, 0.5};
    v.data = {7.0, 8.0, 9.0};
    auto [out, alpha] = attention(q, k, v);
    CHECK(alpha.at(0, 0) == 1.0);
    CHECK(out.at(0, 0) == 7.0);
    CHECK(out.at(0, 2) == 9.0);

    // identical keys -> uniform weights
    Tensor k2(3, 2);
    k2.data = {1.0, 2.0, 1.0, 2.0, 1.0, 2.0};
    Tensor v2(3, 1);
    v2.data = {1.0, 2.0, 3.0};
    auto [out2, alpha2] = attention(q, k2, v2);
    for (int j = 0; j < 3; ++j) CHECK(alpha2.at(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // hand-evaluated 2x2 with d_k = 1
    Tensor qq(2, 1), kk(2, 1), vv(2, 2);
    qq.data = {1.0, 0.0};
    kk.data = {1.0, 0.0};
    vv.data = {1.0, 0.0, 0.0, 1.0};
    auto [out3, alpha3] = attention(qq, kk, vv);
    const double e = std::exp(1.0);
    CHECK(alpha3.at(0, 0) == doctest::Approx(e / (e + 1)).epsilon(1e-6));
    CHECK(alpha3.at(0, 1) == doctest::Approx(1 / (e + 1)).epsilon(1e-6));
    CHECK(alpha3.at(0, 0) == doctest::Approx(0.731).epsilon(1e-3));

    Tensor bad(1, 3);
    CHECK_THROWS_AS(attention(bad, k, v), ShapeError);
}

TEST_CASE("patch_embed") {
    MsefModel m(tiny_config());
    // 8x8 image, patch 4 -> 4 tokens of dim d
    const Tensor t = m.patch_embed(test_image(8, 8, 2));
    CHECK(t.rows() == 4);
    CHECK(t.cols() == 8);

    // all-zero image with zero bias: tokens equal the position encodings
    curation::Image zero;
    zero.h = zero.w = 8;
    zero.px.assign(64, 0.0);
    const Tensor pe_only = m.patch_embed(zero);
    // position encoding of position 0: sin(0)=0, cos(0)=1 alternating
    CHECK(pe_only.at(0, 0) == doctest::Approx(0.0));
    CHECK(pe_only.at(0, 1) == doctest::Approx(1.0));

    // 32x32 with patch 4 -> 64 tokens
    AdapterConfig c32 = tiny_config();
    MsefModel m32(c32);
    CHECK(m32.patch_embed(test_image(32, 32, 3)).rows() == 64);

    curation::Image ragged;
    ragged.h = 6;
    ragged.w = 8;
    ragged.px.assign(48, 0.1);
    CHECK_THROWS_AS(m.patch_embed(ragged), ShapeError);

    curation::Image out_of_range;
    out_of_range.h = out_of_range.w = 8;
    out_of_range.px.assign(64, 1.5);
    CHECK_THROWS_AS(m.patch_embed(out_of_range), InputError);
}

TEST_CASE("lora apply, merge, equivalence, rank bound") {
    MsefModel m(tiny_config(5));
    perturb_trainable(m, 17, 0.3);  // give B nonzero mass

    const auto layers = m.lora_layers();
    CHECK(layers.size() == 6);  // qformer qkv + last decoder block qkv

    CounterRng rng(3);
    for (const auto& layer : layers) {
        Tensor x = Tensor::randn(5, m.config().model_dim, rng);
        const Tensor via_apply = m.lora_apply(layer, x);
        const Tensor merged = m.lora_merge(layer);
        Graph g;
        const Tensor& mm = g.val(g.matmul(g.leaf(x), g.leaf(merged)));
        for (size_t i = 0; i < mm.data.size(); ++i)
            CHECK(std::abs(via_apply.data[i] - mm.data[i]) < 1e-10);
    }

    // A = 0 or B = 0 -> exactly x W0
    {
        MsefModel fresh(tiny_config(6));
        const std::string layer = fresh.lora_layers()[0];
        // B starts at zero by construction
        Tensor x = Tensor::randn(3, fresh.config().model_dim, rng);
        const Tensor base = fresh.lora_apply(layer, x);
        Graph g;
        const Tensor& w0 = fresh.param(layer + ".w0").t;
        const Tensor& plain = g.val(g.matmul(g.leaf(x), g.leaf(w0)));
        for (size_t i = 0; i < base.data.size(); ++i) CHECK(base.data[i] == plain.data[i]);
        CHECK(fresh.lora_merge(layer).data == w0.data);
    }

    // d=2 r=1 hand case: A=[[1],[0]], B=[[0,1]] -> delta [[0,1],[0,0]]
    {
        AdapterConfig c;
        c.model_dim = 2;
        c.lora_rank = 1;
        c.prefix_len = 0;
        c.num_queries = 2;
        c.num_heads = 1;
        c.patch_size = 1;
        c.vocab_size = 8;
        c.num_blocks = 1;
        c.seed = 9;
        c.score_dims = {"walkability"};
        MsefModel small(c);
        const std::string layer = small.lora_layers()[0];
        small.param(layer + ".a").t.data = {1.0, 0.0};
        small.param(layer + ".b").t.data = {0.0, 1.0};
        const Tensor& w0 = small.param(layer + ".w0").t;
        const Tensor merged = small.lora_merge(layer);
        CHECK(merged.at(0, 0) == w0.at(0, 0));
        CHECK(merged.at(0, 1) == w0.at(0, 1) + 1.0);
        CHECK(merged.at(1, 0) == w0.at(1, 0));
        CHECK(merged.at(1, 1) == w0.at(1, 1));
    }
}

TEST_CASE("prefix_concat contract") {
    CounterRng rng(21);
    // m = 0: identity
    Tensor tokens = Tensor::randn(5, 4, rng);
    Tensor empty;
    CHECK(prefix_concat(empty, tokens).data == tokens.data);

    // length arithmetic and exact suffix recovery
    for (int trial = 0; trial < 30; ++trial) {
        const int m = static_cast<int>(rng.next_below(33));
        const int n = 1 + static_cast<int>(rng.next_below(64));
        const int d = 1 + static_cast<int>(rng.next_below(8));
        Tensor pre = m > 0 ? Tensor::randn(m, d, rng) : Tensor();
        Tensor tok = Tensor::randn(n, d, rng);
        const Tensor out = prefix_concat(pre, tok);
        CHECK(out.rows() == m + n);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < d; ++j) CHECK(out.at(i, j) == pre.at(i, j));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) CHECK(out.at(m + i, j) == tok.at(i, j));
    }

    Tensor mismatched = Tensor::randn(2, 3, rng);
    Tensor toks = Tensor::randn(2, 4, rng);
    CHECK_THROWS_AS(prefix_concat(mismatched, toks), ShapeError);
}

TEST_CASE("qformer compression contract") {
    MsefModel m(tiny_config(11));
    CounterRng rng(2);

    // single image token: every query attends it fully
    Tensor one = Tensor::randn(1, 8, rng);
    const Tensor lat1 = m.qformer_compress(one);
    CHECK(lat1.rows() == m.config().num_queries);

    // output shape independent of the token count
    for (int n : {4, 64}) {
        Tensor toks = Tensor::randn(n, 8, rng);
        const Tensor lat = m.qformer_compress(toks);
        CHECK(lat.rows() == 4);
        CHECK(lat.cols() == 8);
    }

    // determinism across re-execution
    Tensor toks = Tensor::randn(10, 8, rng);
    CHECK(m.qformer_compress(toks).data == m.qformer_compress(toks).data);
}

TEST_CASE("gated fusion endpoints") {
    MsefModel m(tiny_config(13));
    CounterRng rng(4);
    Tensor visual = Tensor::randn(1, 8, rng);
    Tensor textual = Tensor::randn(1, 8, rng);

    // large positive bias -> gate ~ 1 -> visual
    m.param("gate.b").t.data.assign(8, 50.0);
    Tensor fused = m.gated_fusion(visual, textual);
    for (int j = 0; j < 8; ++j) CHECK(fused.at(0, j) == doctest::Approx(visual.at(0, j)).epsilon(1e-9));

    // large negative bias -> gate ~ 0 -> textual
    m.param("gate.b").t.data.assign(8, -50.0);
    fused = m.gated_fusion(visual, textual);
    for (int j = 0; j < 8; ++j) CHECK(fused.at(0, j) == doctest::Approx(textual.at(0, j)).epsilon(1e-9));

    // equal summaries are a fixed point regardless of the gate
    m.param("gate.b").t.data.assign(8, 0.31);
    fused = m.gated_fusion(visual, visual);
    for (int j = 0; j < 8; ++j) CHECK(fused.at(0, j) == doctest::Approx(visual.at(0, j)).epsilon(1e-12));
}

TEST_CASE("forward contracts") {
    MsefModel m(tiny_config(19));
    const Vocab vocab(m.config().vocab_size);
    const curation::Image img = test_image(8, 8, 7);
    const auto q = vocab.encode("how green is this street");

    const DualOutput out = m.forward(img, q);
    // untrained scores stay within [1,5] and finite
    for (const auto& [dim, score] : out.scores) {
        CHECK(score >= 1.0);
        CHECK(score <= 5.0);
        CHECK(std::isfinite(score));
    }
    CHECK(out.scores.size() == 2);

    // bit-identical on identical inputs
    const DualOutput out2 = m.forward(img, q);
    CHECK(out.scores == out2.scores);
    CHECK(out.rationale_tokens == out2.rationale_tokens);
    REQUIRE(out.attention_maps.size() == out2.attention_maps.size());
    for (size_t i = 0; i < out.attention_maps.size(); ++i)
        for (size_t h = 0; h < out.attention_maps[i].heads.size(); ++h)
            CHECK(out.attention_maps[i].heads[h].data == out2.attention_maps[i].heads[h].data);

    // every attention row sums to 1
    for (const auto& map : out.attention_maps)
        for (const auto& alpha : map.heads)
            for (int i = 0; i < alpha.rows(); ++i) {
                double s = 0;
                for (int j = 0; j < alpha.cols(); ++j) s += alpha.at(i, j);
                CHECK(std::abs(s - 1.0) <= 1e-9);
            }

    // adversarial all-max-pixel input stays bounded
    curation::Image bright;
    bright.h = bright.w = 8;
    bright.px.assign(64, 1.0);
    for (const auto& [dim, score] : m.forward(bright, q).scores) {
        CHECK(score >= 1.0);
        CHECK(score <= 5.0);
    }

    // unknown token id -> vocabulary error
    CHECK_THROWS_AS(m.forward(img, {9999}), InputError);
}

TEST_CASE("attention heatmap") {
    MsefModel m(tiny_config(23));
    const Vocab vocab(m.config().vocab_size);

    // 4x4 image with patch 4 -> a single patch with weight 1
    const DualOutput one = m.forward(test_image(4, 4, 5), vocab.encode("how green"));
    const Tensor h1 = attention_heatmap(one, 0, 0);
    CHECK(h1.rows() == 1);
    CHECK(h1.cols() == 1);
    CHECK(h1.at(0, 0) == doctest::Approx(1.0));

    // mass preserved and argmax matches the stored alpha column means
    const DualOutput out = m.forward(test_image(8, 8, 6), vocab.encode("how green"));
    for (int layer = 0; layer < static_cast<int>(out.attention_maps.size()); ++layer) {
        const Tensor grid = attention_heatmap(out, layer, 1);
        double sum = 0;
        for (double v : grid.data) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        for (double v : grid.data) CHECK(v >= 0.0);
    }
    {
        const Tensor& alpha = out.attention_maps[0].heads[1];
        std::vector<double> colmean(static_cast<size_t>(alpha.cols()), 0.0);
        for (int i = 0; i < alpha.rows(); ++i)
            for (int j = 0; j < alpha.cols(); ++j) colmean[static_cast<size_t>(j)] += alpha.at(i, j);
        size_t argmax = 0;
        for (size_t j = 1; j < colmean.size(); ++j)
            if (colmean[j] > colmean[argmax]) argmax = j;
        const Tensor grid = attention_heatmap(out, 0, 1);
        size_t gmax = 0;
        for (size_t j = 1; j < grid.data.size(); ++j)
            if (grid.data[j] > grid.data[gmax]) gmax = j;
        CHECK(gmax == argmax);
    }

    CHECK_THROWS_AS(attention_heatmap(out, 99, 0), std::out_of_range);
    CHECK_THROWS_AS(attention_heatmap(out, 0, 99), std::out_of_range);
}

TEST_CASE("train_step mechanics") {
    MsefModel m(tiny_config(29));
    const TrainExample ex = make_example(m, 31);

    // learning rate ~0 leaves parameters unchanged but reports the loss
    {
        MsefModel frozen_run(tiny_config(29));
        Adam opt(AdamHyper{1e-300, 0.9, 0.999, 1e-8});
        std::map<std::string, std::vector<double>> before;
        for (const auto& p : frozen_run.params()) before[p.name] = p.t.data;
        const double loss = frozen_run.train_step({ex}, opt);
        CHECK(std::isfinite(loss));
        CHECK(loss > 0.0);
        for (const auto& p : frozen_run.params()) {
            for (size_t i = 0; i < p.t.data.size(); ++i)
                CHECK(p.t.data[i] == doctest::Approx(before[p.name][i]).epsilon(1e-12));
        }
    }

    // frozen weights bit-identical after many steps; trainable fraction <= 10%
    {
        Adam opt(AdamHyper{0.01, 0.9, 0.999, 1e-8});
        const uint64_t before = m.frozen_manifest_hash();
        for (int s = 0; s < 20; ++s) m.train_step({ex}, opt);
        CHECK(m.frozen_manifest_hash() == before);
    }

    // empty batch rejected
    {
        Adam opt;
        CHECK_THROWS_AS(m.train_step({}, opt), InputError);
    }
}

TEST_CASE("default config keeps at least 90 percent of weights frozen") {
    MsefModel m(AdapterConfig{});
    const double frac =
        static_cast<double>(m.trainable_param_count()) / static_cast<double>(m.total_param_count());
    CHECK(frac <= 0.10);
    CHECK(m.total_param_count() > 50000);  // sanity: the toy model is not degenerate
}

TEST_CASE("overfit a single example") {
    AdapterConfig cfg = tiny_config(37);
    cfg.model_dim = 16;  // d=8 saturates against the tied vocabulary head
    cfg.lora_rank = 4;
    MsefModel m(cfg);
    Adam opt(AdamHyper{0.02, 0.9, 0.999, 1e-8});
    const TrainExample ex = make_example(m, 41);
    const double initial = m.train_step({ex}, opt);
    double final_loss = initial;
    for (int s = 0; s < 200; ++s) final_loss = m.train_step({ex}, opt);
    CHECK(final_loss < 0.1 * initial);
}

TEST_CASE("gradient check on the training loss for adapter tensors") {
    AdapterConfig c = tiny_config(43);
    MsefModel m(c);
    perturb_trainable(m, 101, 0.05);
    const TrainExample ex = make_example(m, 47);

    Adam opt(AdamHyper{1e-300, 0.9, 0.999, 1e-8});
    m.train_step({ex}, opt);  // populate last_gradients
    const auto& grads = m.last_gradients();

    const double h = 1e-5;
    for (const std::string name :
         {"qformer.wq.a", "qformer.wq.b", "prefix", "qformer.queries", "gate.w", "head.walkability.w"}) {
        REQUIRE(grads.count(name));
        const auto& g = grads.at(name);
        Param& p = m.param(name);
        double worst = 0;
        for (size_t i = 0; i < p.t.data.size(); ++i) {
            const double keep = p.t.data[i];
            p.t.data[i] = keep + h;
            const double up = m.example_loss(ex);
            p.t.data[i] = keep - h;
            const double dn = m.example_loss(ex);
            p.t.data[i] = keep;
            const double numeric = (up - dn) / (2 * h);
            worst = std::max(worst, std::abs(numeric - g[i]) / std::max(1.0, std::abs(numeric)));
        }
        INFO("tensor ", name);
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("checkpoint round trip is bit exact") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "msef_test_ckpt.json").string();

    MsefModel m(tiny_config(53));
    Adam opt(AdamHyper{0.01, 0.9, 0.999, 1e-8});
    const TrainExample ex = make_example(m, 59);
    for (int s = 0; s < 5; ++s) m.train_step({ex}, opt);
    save_checkpoint(m, opt, 3, path);

    Adam opt2;
    int64_t epoch = 0;
    MsefModel loaded = model_from_checkpoint(path, &opt2, &epoch);
    CHECK(epoch == 3);
    CHECK(opt2.step_count() == opt.step_count());
    for (size_t i = 0; i < m.params().size(); ++i) {
        CHECK(m.params()[i].name == loaded.params()[i].name);
        CHECK(m.params()[i].t.data == loaded.params()[i].t.data);  // bit exact
        CHECK(m.params()[i].trainable == loaded.params()[i].trainable);
    }
    CHECK(m.frozen_manifest_hash() == loaded.frozen_manifest_hash());

    // training continues identically from the restored state
    const double a = m.train_step({ex}, opt);
    const double b = loaded.train_step({ex}, opt2);
    CHECK(a == b);
    fs::remove(path);
}

TEST_CASE("vocab encoding is deterministic and in range") {
    const Vocab v(64);
    const auto ids = v.encode("How Safe is this STREET, really?");
    CHECK(!ids.empty());
    for (int id : ids) {
        CHECK(id >= 4);
        CHECK(id < 64);
    }
    CHECK(v.encode("same words") == v.encode("same words"));
    CHECK_THROWS_AS(Vocab(3), InputError);
}
