#include "msef/model.hpp"

#include <algorithm>
#include <cmath>

#include "msef/kernels.hpp"
#include "msef/rng.hpp"

namespace msef::model {

void AdapterConfig::validate() const {
    if (model_dim <= 0 || lora_rank <= 0 || num_queries <= 0 || num_heads <= 0 || patch_size <= 0 ||
        vocab_size <= 4 || num_blocks <= 0 || ffn_mult <= 0)
        throw InputError("AdapterConfig: extents must be positive");
    if (prefix_len < 0) throw InputError("AdapterConfig: prefix_len must be nonnegative");
    if (lora_rank >= model_dim) throw InputError("AdapterConfig: requires r < d");
    if (model_dim % num_heads != 0) throw InputError("AdapterConfig: d must be divisible by num_heads");
    if (score_dims.empty()) throw InputError("AdapterConfig: score_dims empty");
}

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

Vocab::Vocab(int size) : size_(size) {
    if (size <= 4) throw InputError("Vocab: size must exceed the 4 special tokens");
}

int Vocab::word_id(const std::string& word) const {
    return 4 + static_cast<int>(fnv1a(word) % static_cast<uint64_t>(size_ - 4));
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> ids;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            ids.push_back(word_id(cur));
            cur.clear();
        }
    };
    for (char ch : text) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::isalnum(u))
            cur.push_back(static_cast<char>(std::tolower(u)));
        else
            flush();
    }
    flush();
    return ids;
}

// ---------------------------------------------------------------------------
// Plain spec ops
// ---------------------------------------------------------------------------

std::pair<Tensor, Tensor> attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.cols() != k.cols()) throw ShapeError("attention: d_k mismatch");
    if (k.rows() != v.rows()) throw ShapeError("attention: key/value row mismatch");
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor scores(q.rows(), k.rows());
    kernels::matmul_nt(q.data.data(), k.data.data(), scores.data.data(), q.rows(), q.cols(), k.rows());
    Tensor alpha(q.rows(), k.rows());
    for (int i = 0; i < scores.rows(); ++i) {
        double mx = -1e300;
        for (int j = 0; j < scores.cols(); ++j) mx = std::max(mx, scores.at(i, j) * scale);
        double sum = 0.0;
        for (int j = 0; j < scores.cols(); ++j) {
            const double e = std::exp(scores.at(i, j) * scale - mx);
            alpha.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < scores.cols(); ++j) alpha.at(i, j) /= sum;
    }
    Tensor out(q.rows(), v.cols());
    kernels::matmul(alpha.data.data(), v.data.data(), out.data.data(), alpha.rows(), alpha.cols(), v.cols());
    return {out, alpha};
}

Tensor prefix_concat(const Tensor& prefix, const Tensor& tokens) {
    if (prefix.numel() == 0) return tokens;
    if (prefix.cols() != tokens.cols()) throw ShapeError("prefix_concat: dim mismatch");
    Tensor out(prefix.rows() + tokens.rows(), tokens.cols());
    std::copy(prefix.data.begin(), prefix.data.end(), out.data.begin());
    std::copy(tokens.data.begin(), tokens.data.end(), out.data.begin() + static_cast<long>(prefix.data.size()));
    return out;
}

namespace {

Tensor sinusoidal_pe(int positions, int d) {
    Tensor pe(positions, d);
    for (int pos = 0; pos < positions; ++pos)
        for (int j = 0; j < d; ++j) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / d);
            pe.at(pos, j) = (j % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
        }
    return pe;
}

}  // namespace

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

int MsefModel::add_param(const std::string& name, Tensor t, bool trainable) {
    t.requires_grad = trainable;
    index_[name] = params_.size();
    params_.push_back(Param{name, std::move(t), trainable});
    return static_cast<int>(params_.size() - 1);
}

MsefModel::MsefModel(AdapterConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    CounterRng rng(cfg_.seed);
    const int d = cfg_.model_dim;
    const int fd = cfg_.ffn_mult * d;
    const double wsd = 1.0 / std::sqrt(static_cast<double>(d));

    const int pp = cfg_.patch_size * cfg_.patch_size;
    add_param("patch.w", Tensor::randn(pp, d, rng, 1.0 / std::sqrt(static_cast<double>(pp))), false);
    add_param("patch.b", Tensor::zeros(1, d), false);
    add_param("embed", Tensor::randn(cfg_.vocab_size, d, rng, 0.5), false);

    add_param("qformer.queries", Tensor::randn(cfg_.num_queries, d, rng, 0.5), true);

    auto add_lora = [&](const std::string& stem) {
        add_param(stem + ".w0", Tensor::randn(d, d, rng, wsd), false);
        add_param(stem + ".a", Tensor::randn(d, cfg_.lora_rank, rng, 0.1), true);
        add_param(stem + ".b", Tensor::zeros(cfg_.lora_rank, d), true);
    };
    auto add_plain = [&](const std::string& name) { add_param(name + ".w", Tensor::randn(d, d, rng, wsd), false); };
    auto add_common = [&](const std::string& stem) {
        add_param(stem + ".wo", Tensor::randn(d, d, rng, wsd), false);
        add_param(stem + ".wo_b", Tensor::zeros(1, d), false);
        add_param(stem + ".ffn.w1", Tensor::randn(d, fd, rng, wsd), false);
        add_param(stem + ".ffn.b1", Tensor::zeros(1, fd), false);
        add_param(stem + ".ffn.w2", Tensor::randn(fd, d, rng, 1.0 / std::sqrt(static_cast<double>(fd))), false);
        add_param(stem + ".ffn.b2", Tensor::zeros(1, d), false);
        add_param(stem + ".ln1.g", Tensor(1, d, 1.0), false);
        add_param(stem + ".ln1.b", Tensor::zeros(1, d), false);
        add_param(stem + ".ln2.g", Tensor(1, d, 1.0), false);
        add_param(stem + ".ln2.b", Tensor::zeros(1, d), false);
    };

    add_lora("qformer.wq");
    add_lora("qformer.wk");
    add_lora("qformer.wv");
    add_common("qformer");

    if (cfg_.prefix_len > 0) add_param("prefix", Tensor::randn(cfg_.prefix_len, d, rng, 0.5), true);

    for (int i = 0; i < cfg_.num_blocks; ++i) {
        const std::string stem = "dec" + std::to_string(i);
        if (i == cfg_.num_blocks - 1) {
            add_lora(stem + ".wq");
            add_lora(stem + ".wk");
            add_lora(stem + ".wv");
        } else {
            add_plain(stem + ".wq");
            add_plain(stem + ".wk");
            add_plain(stem + ".wv");
        }
        add_common(stem);
    }

    add_param("final_ln.g", Tensor(1, d, 1.0), false);
    add_param("final_ln.b", Tensor::zeros(1, d), false);

    add_param("gate.w", Tensor::randn(2 * d, d, rng, 1.0 / std::sqrt(2.0 * d)), true);
    add_param("gate.b", Tensor::zeros(1, d), true);

    for (const auto& dim : cfg_.score_dims) {
        add_param("head." + dim + ".w", Tensor::randn(d, 1, rng, wsd), true);
        add_param("head." + dim + ".b", Tensor::zeros(1, 1), true);
    }
}

Param& MsefModel::param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InputError("unknown parameter: " + name);
    return params_[it->second];
}

const Param& MsefModel::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InputError("unknown parameter: " + name);
    return params_[it->second];
}

size_t MsefModel::total_param_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.t.numel();
    return n;
}

size_t MsefModel::trainable_param_count() const {
    size_t n = 0;
    for (const auto& p : params_)
        if (p.trainable) n += p.t.numel();
    return n;
}

std::vector<std::string> MsefModel::frozen_names() const {
    std::vector<std::string> names;
    for (const auto& p : params_)
        if (!p.trainable) names.push_back(p.name);
    std::sort(names.begin(), names.end());
    return names;
}

uint64_t MsefModel::frozen_manifest_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& name : frozen_names()) {
        const Param& p = param(name);
        h = fnv1a(name, h);
        h = fnv1a(p.t.shape.data(), p.t.shape.size() * sizeof(int), h);
        h = fnv1a(p.t.data.data(), p.t.data.size() * sizeof(double), h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Spec ops on the live parameters
// ---------------------------------------------------------------------------

Tensor MsefModel::patch_embed(const curation::Image& image) const {
    const int p = cfg_.patch_size;
    if (image.h <= 0 || image.w <= 0) throw ShapeError("patch_embed: empty image");
    if (image.h % p != 0 || image.w % p != 0)
        throw ShapeError("patch_embed: image dimensions must be divisible by patch size");
    for (double v : image.px)
        if (!(v >= 0.0 && v <= 1.0)) throw InputError("patch_embed: pixel values must lie in [0,1]");
    const int gr = image.h / p, gc = image.w / p;
    const int n = gr * gc;
    Tensor flat(n, p * p);
    for (int bi = 0; bi < gr; ++bi)
        for (int bj = 0; bj < gc; ++bj)
            for (int r = 0; r < p; ++r)
                for (int c = 0; c < p; ++c)
                    flat.at(bi * gc + bj, r * p + c) = image.at(bi * p + r, bj * p + c);
    const Tensor& w = param("patch.w").t;
    const Tensor& b = param("patch.b").t;
    Tensor tokens(n, cfg_.model_dim);
    kernels::matmul(flat.data.data(), w.data.data(), tokens.data.data(), n, p * p, cfg_.model_dim);
    const Tensor pe = sinusoidal_pe(n, cfg_.model_dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < cfg_.model_dim; ++j) tokens.at(i, j) += b.at(0, j) + pe.at(i, j);
    return tokens;
}

std::vector<std::string> MsefModel::lora_layers() const {
    std::vector<std::string> out;
    for (const auto& p : params_) {
        if (p.name.size() > 3 && p.name.compare(p.name.size() - 3, 3, ".w0") == 0)
            out.push_back(p.name.substr(0, p.name.size() - 3));
    }
    return out;
}

Tensor MsefModel::lora_apply(const std::string& layer, const Tensor& x) const {
    const Tensor& w0 = param(layer + ".w0").t;
    const Tensor& a = param(layer + ".a").t;
    const Tensor& b = param(layer + ".b").t;
    if (x.cols() != w0.rows()) throw ShapeError("lora_apply: dim mismatch");
    Tensor base(x.rows(), w0.cols());
    kernels::matmul(x.data.data(), w0.data.data(), base.data.data(), x.rows(), x.cols(), w0.cols());
    Tensor xa(x.rows(), a.cols());
    kernels::matmul(x.data.data(), a.data.data(), xa.data.data(), x.rows(), x.cols(), a.cols());
    Tensor delta(x.rows(), b.cols());
    kernels::matmul(xa.data.data(), b.data.data(), delta.data.data(), xa.rows(), xa.cols(), b.cols());
    for (size_t i = 0; i < base.data.size(); ++i) base.data[i] += delta.data[i];
    return base;
}

Tensor MsefModel::lora_merge(const std::string& layer) const {
    const Tensor& w0 = param(layer + ".w0").t;
    const Tensor& a = param(layer + ".a").t;
    const Tensor& b = param(layer + ".b").t;
    Tensor delta(w0.rows(), w0.cols());
    kernels::matmul(a.data.data(), b.data.data(), delta.data.data(), a.rows(), a.cols(), b.cols());
    Tensor merged = w0;
    for (size_t i = 0; i < merged.data.size(); ++i) merged.data[i] += delta.data[i];
    return merged;
}

Tensor MsefModel::gated_fusion(const Tensor& visual, const Tensor& textual) const {
    if (visual.rows() != 1 || textual.rows() != 1 || visual.cols() != cfg_.model_dim ||
        textual.cols() != cfg_.model_dim)
        throw ShapeError("gated_fusion: summaries must be 1 x d");
    const Tensor& w = param("gate.w").t;
    const Tensor& b = param("gate.b").t;
    Tensor cat(1, 2 * cfg_.model_dim);
    for (int j = 0; j < cfg_.model_dim; ++j) {
        cat.at(0, j) = visual.at(0, j);
        cat.at(0, cfg_.model_dim + j) = textual.at(0, j);
    }
    Tensor pre(1, cfg_.model_dim);
    kernels::matmul(cat.data.data(), w.data.data(), pre.data.data(), 1, 2 * cfg_.model_dim, cfg_.model_dim);
    Tensor fused(1, cfg_.model_dim);
    for (int j = 0; j < cfg_.model_dim; ++j) {
        const double g = 1.0 / (1.0 + std::exp(-(pre.at(0, j) + b.at(0, j))));
        fused.at(0, j) = g * visual.at(0, j) + (1.0 - g) * textual.at(0, j);
    }
    return fused;
}

// ---------------------------------------------------------------------------
// Graph assembly
// ---------------------------------------------------------------------------

Graph::Id MsefModel::leaf_for(Graph& g, std::map<std::string, Graph::Id>& leaves,
                              const std::string& name, bool with_grad) const {
    auto it = leaves.find(name);
    if (it != leaves.end()) return it->second;
    const Param& p = param(name);
    Tensor t = p.t;
    t.requires_grad = with_grad && p.trainable;
    const Graph::Id id = g.leaf(std::move(t));
    leaves[name] = id;
    return id;
}

Graph::Id MsefModel::project(Graph& g, std::map<std::string, Graph::Id>& leaves,
                             const std::string& stem, Graph::Id x, bool with_grad) const {
    if (index_.count(stem + ".w0")) {
        // LoRA path: x W0 + (x A) B; gradient reaches only A and B.
        const Graph::Id base = g.matmul(x, leaf_for(g, leaves, stem + ".w0", with_grad));
        const Graph::Id xa = g.matmul(x, leaf_for(g, leaves, stem + ".a", with_grad));
        const Graph::Id delta = g.matmul(xa, leaf_for(g, leaves, stem + ".b", with_grad));
        return g.add(base, delta);
    }
    return g.matmul(x, leaf_for(g, leaves, stem + ".w", with_grad));
}

Graph::Id MsefModel::multihead(Graph& g, std::map<std::string, Graph::Id>& leaves,
                               const std::string& stem, Graph::Id q_src, Graph::Id kv_src,
                               bool causal, bool with_grad, std::vector<Graph::Id>& alphas_out) const {
    const int dk = cfg_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const Graph::Id q = project(g, leaves, stem + ".wq", q_src, with_grad);
    const Graph::Id k = project(g, leaves, stem + ".wk", kv_src, with_grad);
    const Graph::Id v = project(g, leaves, stem + ".wv", kv_src, with_grad);
    Graph::Id merged = -1;
    for (int h = 0; h < cfg_.num_heads; ++h) {
        const Graph::Id qh = g.col_slice(q, h * dk, (h + 1) * dk);
        const Graph::Id kh = g.col_slice(k, h * dk, (h + 1) * dk);
        const Graph::Id vh = g.col_slice(v, h * dk, (h + 1) * dk);
        Graph::Id scores = g.affine(g.matmul_nt(qh, kh), scale, 0.0);
        if (causal) scores = g.causal_mask(scores);
        const Graph::Id alpha = g.softmax_rows(scores);
        alphas_out.push_back(alpha);
        const Graph::Id oh = g.matmul(alpha, vh);
        merged = (h == 0) ? oh : g.concat_cols(merged, oh);
    }
    const Graph::Id proj = g.matmul(merged, leaf_for(g, leaves, stem + ".wo", with_grad));
    return g.add_row_vec(proj, leaf_for(g, leaves, stem + ".wo_b", with_grad));
}

Graph::Id MsefModel::ffn(Graph& g, std::map<std::string, Graph::Id>& leaves, const std::string& stem,
                         Graph::Id x, bool with_grad) const {
    const Graph::Id h1 = g.tanh_act(g.add_row_vec(g.matmul(x, leaf_for(g, leaves, stem + ".w1", with_grad)),
                                                  leaf_for(g, leaves, stem + ".b1", with_grad)));
    return g.add_row_vec(g.matmul(h1, leaf_for(g, leaves, stem + ".w2", with_grad)),
                         leaf_for(g, leaves, stem + ".b2", with_grad));
}

Graph::Id MsefModel::lnorm(Graph& g, std::map<std::string, Graph::Id>& leaves, const std::string& stem,
                           Graph::Id x, bool with_grad) const {
    return g.layer_norm(x, leaf_for(g, leaves, stem + ".g", with_grad),
                        leaf_for(g, leaves, stem + ".b", with_grad));
}

Graph::Id MsefModel::qformer_graph(Graph& g, std::map<std::string, Graph::Id>& leaves,
                                   Graph::Id image_tokens, bool with_grad,
                                   std::vector<Graph::Id>& alphas_out) const {
    const Graph::Id queries = leaf_for(g, leaves, "qformer.queries", with_grad);
    const Graph::Id attn =
        multihead(g, leaves, "qformer", queries, image_tokens, /*causal=*/false, with_grad, alphas_out);
    const Graph::Id h = lnorm(g, leaves, "qformer.ln1", g.add(queries, attn), with_grad);
    return lnorm(g, leaves, "qformer.ln2", g.add(h, ffn(g, leaves, "qformer.ffn", h, with_grad)), with_grad);
}

Tensor MsefModel::qformer_compress(const Tensor& image_tokens) const {
    if (image_tokens.rows() < 1) throw ShapeError("qformer_compress: need at least one image token");
    if (image_tokens.cols() != cfg_.model_dim) throw ShapeError("qformer_compress: token dim mismatch");
    Graph g;
    std::map<std::string, Graph::Id> leaves;
    Tensor img = image_tokens;
    img.requires_grad = false;
    std::vector<Graph::Id> alphas;
    const Graph::Id latents = qformer_graph(g, leaves, g.leaf(std::move(img)), false, alphas);
    return g.val(latents);
}

MsefModel::ForwardResult MsefModel::build_forward(Graph& g, std::map<std::string, Graph::Id>& leaves,
                                                  const Tensor& image_tokens,
                                                  const std::vector<int>& question_tokens,
                                                  const std::vector<int>& answer_tokens,
                                                  bool with_grad) const {
    if (question_tokens.empty()) throw InputError("forward: question tokens required");
    for (int id : question_tokens)
        if (id < 0 || id >= cfg_.vocab_size) throw InputError("forward: token id outside the vocabulary");
    for (int id : answer_tokens)
        if (id < 0 || id >= cfg_.vocab_size) throw InputError("forward: token id outside the vocabulary");

    ForwardResult fr;
    const int d = cfg_.model_dim;
    const int m = cfg_.prefix_len;
    const int nq = cfg_.num_queries;

    // Q-Former: learnable queries cross-attend the image tokens.
    const Graph::Id img = g.leaf([&] {
        Tensor t = image_tokens;
        t.requires_grad = false;
        return t;
    }());
    std::vector<Graph::Id> qf_alphas;
    const Graph::Id latents = qformer_graph(g, leaves, img, with_grad, qf_alphas);
    fr.alpha_ids.emplace_back("qformer.cross", qf_alphas);
    fr.latents = latents;

    // Decoder input: [prefix; latents; question; SEP; answer...].
    std::vector<int> text_ids = question_tokens;
    text_ids.push_back(Vocab::kSep);
    text_ids.insert(text_ids.end(), answer_tokens.begin(), answer_tokens.end());
    const Graph::Id embed = leaf_for(g, leaves, "embed", with_grad);
    Graph::Id text = g.embed_rows(embed, text_ids);
    {
        Tensor pe = sinusoidal_pe(static_cast<int>(text_ids.size()), d);
        pe.requires_grad = false;
        text = g.add(text, g.leaf(std::move(pe)));
    }

    Graph::Id seq = g.concat_rows(latents, text);
    if (m > 0) seq = g.concat_rows(leaf_for(g, leaves, "prefix", with_grad), seq);

    for (int i = 0; i < cfg_.num_blocks; ++i) {
        const std::string stem = "dec" + std::to_string(i);
        std::vector<Graph::Id> alphas;
        const Graph::Id attn = multihead(g, leaves, stem, seq, seq, /*causal=*/true, with_grad, alphas);
        fr.alpha_ids.emplace_back("decoder" + std::to_string(i) + ".self", alphas);
        const Graph::Id h = lnorm(g, leaves, stem + ".ln1", g.add(seq, attn), with_grad);
        seq = lnorm(g, leaves, stem + ".ln2", g.add(h, ffn(g, leaves, stem + ".ffn", h, with_grad)), with_grad);
    }
    const Graph::Id decoded = lnorm(g, leaves, "final_ln", seq, with_grad);
    fr.decoder_out = decoded;
    fr.seq_len = g.val(decoded).rows();

    const int q_begin = m + nq;
    const int q_end = q_begin + static_cast<int>(question_tokens.size());
    fr.answer_begin = q_end;  // the SEP row predicts the first answer token

    // Context-aware gated fusion of the two modality summaries.
    const Graph::Id visual = g.mean_rows(latents);
    const Graph::Id textual = g.mean_rows(g.row_slice(decoded, q_begin, q_end));
    const Graph::Id cat = g.concat_cols(visual, textual);
    const Graph::Id gate = g.sigmoid(g.add_row_vec(g.matmul(cat, leaf_for(g, leaves, "gate.w", with_grad)),
                                                   leaf_for(g, leaves, "gate.b", with_grad)));
    fr.gate = gate;
    const Graph::Id fused = g.add(g.mul(gate, visual), g.mul(g.affine(gate, -1.0, 1.0), textual));
    fr.fused = fused;

    // Scalar heads: affine -> sigmoid -> affine onto [1, 5].
    for (const auto& dim : cfg_.score_dims) {
        const Graph::Id pre = g.add(g.matmul(fused, leaf_for(g, leaves, "head." + dim + ".w", with_grad)),
                                    leaf_for(g, leaves, "head." + dim + ".b", with_grad));
        fr.score_ids[dim] = g.affine(g.sigmoid(pre), 4.0, 1.0);
    }
    return fr;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

DualOutput MsefModel::forward(const curation::Image& image,
                              const std::vector<int>& question_tokens) const {
    const Tensor image_tokens = patch_embed(image);

    DualOutput out;
    out.patch_rows = image.h / cfg_.patch_size;
    out.patch_cols = image.w / cfg_.patch_size;
    out.prefix_len = cfg_.prefix_len;
    out.num_queries = cfg_.num_queries;

    std::vector<int> answer;
    for (int step = 0;; ++step) {
        Graph g;
        std::map<std::string, Graph::Id> leaves;
        const ForwardResult fr = build_forward(g, leaves, image_tokens, question_tokens, answer, false);

        if (step == 0) {
            for (const auto& [dim, id] : fr.score_ids) out.scores[dim] = g.val(id).data[0];
            out.gate = g.val(fr.gate).data;
        }

        // Greedy next token from the last position, weight-tied to the
        // frozen embedding table.
        const Graph::Id last = g.row_slice(fr.decoder_out, fr.seq_len - 1, fr.seq_len);
        const Graph::Id logits = g.matmul_nt(last, leaves.at("embed"));
        const Tensor& lv = g.val(logits);
        int next = 0;
        for (int j = 1; j < lv.cols(); ++j)
            if (lv.at(0, j) > lv.at(0, next)) next = j;

        const bool done = next == Vocab::kEos || static_cast<int>(answer.size()) >= cfg_.max_rationale_len;
        if (done) {
            // Capture attention maps over the final full sequence.
            for (const auto& [name, ids] : fr.alpha_ids) {
                AttentionMap am;
                am.name = name;
                for (Graph::Id id : ids) am.heads.push_back(g.val(id));
                out.attention_maps.push_back(std::move(am));
            }
            break;
        }
        answer.push_back(next);
    }
    out.rationale_tokens = answer;
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

double MsefModel::example_loss(const TrainExample& ex, double w_mse, double w_ce) const {
    Graph g;
    std::map<std::string, Graph::Id> leaves;
    const Tensor image_tokens = patch_embed(ex.image);
    const ForwardResult fr = build_forward(g, leaves, image_tokens, ex.question_tokens, ex.answer_tokens, false);
    auto it = fr.score_ids.find(ex.dimension);
    if (it == fr.score_ids.end()) throw InputError("example_loss: dimension not in score_dims: " + ex.dimension);
    const Graph::Id diff = g.affine(it->second, 1.0, -ex.target_score);
    const Graph::Id mse = g.mul(diff, diff);
    std::vector<int> targets = ex.answer_tokens;
    targets.push_back(Vocab::kEos);
    const Graph::Id rows = g.row_slice(fr.decoder_out, fr.answer_begin, fr.answer_begin + static_cast<int>(targets.size()));
    const Graph::Id logits = g.matmul_nt(rows, leaves.at("embed"));
    const Graph::Id ce = g.cross_entropy_rows(logits, targets);
    const Graph::Id loss = g.add(g.affine(mse, w_mse, 0.0), g.affine(ce, w_ce, 0.0));
    return g.val(loss).data[0];
}

double MsefModel::train_step(const std::vector<TrainExample>& batch, Adam& opt, double w_mse, double w_ce) {
    if (batch.empty()) throw InputError("train_step: empty batch");

    Graph g;
    std::map<std::string, Graph::Id> leaves;
    Graph::Id total = -1;
    for (const auto& ex : batch) {
        const Tensor image_tokens = patch_embed(ex.image);
        const ForwardResult fr = build_forward(g, leaves, image_tokens, ex.question_tokens, ex.answer_tokens, true);
        auto it = fr.score_ids.find(ex.dimension);
        if (it == fr.score_ids.end()) throw InputError("train_step: dimension not in score_dims: " + ex.dimension);
        if (ex.target_score < 1.0 || ex.target_score > 5.0)
            throw InputError("train_step: target score must lie in [1,5]");
        const Graph::Id diff = g.affine(it->second, 1.0, -ex.target_score);
        const Graph::Id mse = g.mul(diff, diff);
        std::vector<int> targets = ex.answer_tokens;
        targets.push_back(Vocab::kEos);
        const Graph::Id rows =
            g.row_slice(fr.decoder_out, fr.answer_begin, fr.answer_begin + static_cast<int>(targets.size()));
        const Graph::Id logits = g.matmul_nt(rows, leaves.at("embed"));
        const Graph::Id ce = g.cross_entropy_rows(logits, targets);
        const Graph::Id loss = g.add(g.affine(mse, w_mse, 0.0), g.affine(ce, w_ce, 0.0));
        total = (total < 0) ? loss : g.add(total, loss);
    }
    total = g.affine(total, 1.0 / static_cast<double>(batch.size()), 0.0);
    const double loss_value = g.val(total).data[0];
    if (!std::isfinite(loss_value)) throw NumericError("train_step: non-finite loss, training aborted");

    g.backward(total);

    last_grads_.clear();
    std::vector<Tensor*> tensors;
    std::vector<const std::vector<double>*> grads;
    for (auto& p : params_) {
        if (!p.trainable) continue;
        tensors.push_back(&p.t);
        const auto lit = leaves.find(p.name);
        if (lit != leaves.end() && g.has_grad(lit->second)) {
            last_grads_[p.name] = g.grad(lit->second);
            grads.push_back(&last_grads_[p.name]);
        } else {
            grads.push_back(nullptr);
        }
    }
    opt.step(tensors, grads);
    return loss_value;
}

// ---------------------------------------------------------------------------
// Heatmaps
// ---------------------------------------------------------------------------

Tensor attention_heatmap(const DualOutput& out, int layer, int head) {
    if (layer < 0 || layer >= static_cast<int>(out.attention_maps.size()))
        throw std::out_of_range("attention_heatmap: layer index out of range");
    const AttentionMap& map = out.attention_maps[static_cast<size_t>(layer)];
    if (head < 0 || head >= static_cast<int>(map.heads.size()))
        throw std::out_of_range("attention_heatmap: head index out of range");
    const int n_patches = out.patch_rows * out.patch_cols;
    const Tensor& alpha = map.heads[static_cast<size_t>(head)];

    Tensor patch_alpha(1, 1);
    if (alpha.cols() == n_patches) {
        patch_alpha = alpha;
    } else {
        // Decoder self-attention: keep the latent-token columns and map them
        // through the head-averaged qformer attention.
        if (out.attention_maps.empty() || out.attention_maps[0].heads.empty())
            throw std::out_of_range("attention_heatmap: no qformer map to compose with");
        const int m = out.prefix_len, nq = out.num_queries;
        if (alpha.cols() < m + nq) throw std::out_of_range("attention_heatmap: map has no latent columns");
        Tensor sub(alpha.rows(), nq);
        for (int i = 0; i < alpha.rows(); ++i)
            for (int j = 0; j < nq; ++j) sub.at(i, j) = alpha.at(i, m + j);
        const auto& qheads = out.attention_maps[0].heads;
        Tensor qmean(nq, n_patches);
        for (const Tensor& qh : qheads)
            for (size_t i = 0; i < qmean.data.size(); ++i) qmean.data[i] += qh.data[i];
        for (auto& v : qmean.data) v /= static_cast<double>(qheads.size());
        patch_alpha = Tensor(alpha.rows(), n_patches);
        kernels::matmul(sub.data.data(), qmean.data.data(), patch_alpha.data.data(), sub.rows(), nq, n_patches);
    }

    // Mean over query rows, renormalize, reshape to the patch grid.
    std::vector<double> heat(static_cast<size_t>(n_patches), 0.0);
    for (int i = 0; i < patch_alpha.rows(); ++i)
        for (int j = 0; j < n_patches; ++j) heat[static_cast<size_t>(j)] += patch_alpha.at(i, j);
    double sum = 0.0;
    for (double v : heat) sum += v;
    Tensor grid(out.patch_rows, out.patch_cols);
    for (int i = 0; i < n_patches; ++i)
        grid.data[static_cast<size_t>(i)] = (sum > 0) ? heat[static_cast<size_t>(i)] / sum : 1.0 / n_patches;
    return grid;
}

}  // namespace msef::model
