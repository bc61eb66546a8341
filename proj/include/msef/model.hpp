#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msef/curation.hpp"
#include "msef/graph.hpp"
#include "msef/optim.hpp"
#include "msef/tensor.hpp"

namespace msef::model {

struct AdapterConfig {
    int model_dim = 32;   // d
    int lora_rank = 8;    // r, must satisfy r < d
    int prefix_len = 16;  // m
    int num_queries = 32;
    int num_heads = 4;
    int patch_size = 4;
    int vocab_size = 64;
    int num_blocks = 4;  // decoder depth; only the last block carries LoRA
    int ffn_mult = 4;
    int max_rationale_len = 16;
    uint64_t seed = 0;
    std::vector<std::string> score_dims = {"walkability", "enclosure", "greenery", "vibrancy"};

    int head_dim() const { return model_dim / num_heads; }
    void validate() const;
};

// Hashed 64-symbol token set; ids 0-3 are pad/bos/eos/sep.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kSep = 3;

    explicit Vocab(int size);
    int size() const { return size_; }
    std::vector<int> encode(const std::string& text) const;
    int word_id(const std::string& word) const;

private:
    int size_;
};

struct AttentionMap {
    std::string name;            // "qformer.cross", "decoder0.self", ...
    std::vector<Tensor> heads;   // one alpha matrix per head
};

struct DualOutput {
    std::map<std::string, double> scores;      // each in [1, 5]
    std::vector<int> rationale_tokens;
    std::vector<AttentionMap> attention_maps;  // index 0 = qformer cross-attention
    std::vector<double> gate;                  // per-coordinate gate values
    int patch_rows = 0, patch_cols = 0;
    int prefix_len = 0, num_queries = 0;
};

struct Param {
    std::string name;
    Tensor t;
    bool trainable = false;
};

struct TrainExample {
    curation::Image image;
    std::vector<int> question_tokens;
    std::vector<int> answer_tokens;
    std::string dimension;
    double target_score = 3.0;  // already mapped onto [1, 5]
};

// Plain (non-graph) scaled dot-product attention:
// alpha = softmax_rows(Q K^T / sqrt(d_k)), output = alpha V.
std::pair<Tensor, Tensor> attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Pure concatenation: rows 0..m-1 prefix, rows m.. input tokens.
Tensor prefix_concat(const Tensor& prefix, const Tensor& tokens);

class MsefModel {
public:
    explicit MsefModel(AdapterConfig cfg);

    const AdapterConfig& config() const { return cfg_; }

    // --- spec surface -----------------------------------------------------
    Tensor patch_embed(const curation::Image& image) const;
    Tensor qformer_compress(const Tensor& image_tokens) const;
    Tensor lora_apply(const std::string& layer, const Tensor& x) const;   // x W0 + (x A) B
    Tensor lora_merge(const std::string& layer) const;                    // W0 + A B
    std::vector<std::string> lora_layers() const;
    Tensor gated_fusion(const Tensor& visual, const Tensor& textual) const;

    DualOutput forward(const curation::Image& image, const std::vector<int>& question_tokens) const;

    double train_step(const std::vector<TrainExample>& batch, Adam& opt, double w_mse = 1.0,
                      double w_ce = 1.0);

    // Loss graph for a single example; exposed so gradient audits can drive
    // finite differences through the full training loss.
    double example_loss(const TrainExample& ex, double w_mse = 1.0, double w_ce = 1.0) const;

    // --- parameters -------------------------------------------------------
    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    Param& param(const std::string& name);
    const Param& param(const std::string& name) const;
    size_t total_param_count() const;
    size_t trainable_param_count() const;
    uint64_t frozen_manifest_hash() const;
    std::vector<std::string> frozen_names() const;

    // Gradients of the last train_step, keyed like params(); for audits.
    const std::map<std::string, std::vector<double>>& last_gradients() const { return last_grads_; }

private:
    struct ForwardResult {
        Graph::Id latents = -1;
        Graph::Id decoder_out = -1;
        Graph::Id gate = -1;
        Graph::Id fused = -1;
        std::map<std::string, Graph::Id> score_ids;
        std::vector<std::pair<std::string, std::vector<Graph::Id>>> alpha_ids;
        int seq_len = 0;
        int answer_begin = 0;  // absolute row of the first answer-predicting position
    };

    ForwardResult build_forward(Graph& g, std::map<std::string, Graph::Id>& leaves,
                                const Tensor& image_tokens, const std::vector<int>& question_tokens,
                                const std::vector<int>& answer_tokens, bool with_grad) const;

    Graph::Id leaf_for(Graph& g, std::map<std::string, Graph::Id>& leaves, const std::string& name,
                       bool with_grad) const;
    Graph::Id qformer_graph(Graph& g, std::map<std::string, Graph::Id>& leaves, Graph::Id image_tokens,
                            bool with_grad, std::vector<Graph::Id>& alphas_out) const;
    Graph::Id project(Graph& g, std::map<std::string, Graph::Id>& leaves, const std::string& stem,
                      Graph::Id x, bool with_grad) const;  // LoRA-wrapped or plain
    Graph::Id multihead(Graph& g, std::map<std::string, Graph::Id>& leaves, const std::string& stem,
                        Graph::Id q_src, Graph::Id kv_src, bool causal, bool with_grad,
                        std::vector<Graph::Id>& alphas_out) const;
    Graph::Id ffn(Graph& g, std::map<std::string, Graph::Id>& leaves, const std::string& stem,
                  Graph::Id x, bool with_grad) const;
    Graph::Id lnorm(Graph& g, std::map<std::string, Graph::Id>& leaves, const std::string& stem,
                    Graph::Id x, bool with_grad) const;

    int add_param(const std::string& name, Tensor t, bool trainable);

    AdapterConfig cfg_;
    std::vector<Param> params_;
    std::map<std::string, size_t> index_;
    std::map<std::string, std::vector<double>> last_grads_;
};

// Maps attention back to the patch grid: qformer maps directly; decoder
// self-attention maps through its latent-token columns composed with the
// head-averaged qformer attention. Rows are aggregated by mean, then the grid
// is renormalized to total mass 1.
Tensor attention_heatmap(const DualOutput& out, int layer, int head);

// ---------------------------------------------------------------------------
// Checkpointing: versioned JSON, doubles hex-encoded so round-trips are
// bit-exact for every tensor.
// ---------------------------------------------------------------------------

struct Checkpoint {
    AdapterConfig config;
    int64_t epoch = 0;
};

void save_checkpoint(const MsefModel& model, const Adam& opt, int64_t epoch, const std::string& path);
Checkpoint load_checkpoint(MsefModel& model, Adam& opt, const std::string& path);
MsefModel model_from_checkpoint(const std::string& path, Adam* opt = nullptr, int64_t* epoch = nullptr);

}  // namespace msef::model
