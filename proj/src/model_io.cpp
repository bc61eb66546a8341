#include <bit>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "msef/model.hpp"

namespace msef::model {

using nlohmann::json;

namespace {

std::string doubles_to_hex(const std::vector<double>& xs) {
    std::string out;
    out.reserve(xs.size() * 16);
    char buf[17];
    for (double d : xs) {
        const uint64_t u = std::bit_cast<uint64_t>(d);
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(u));
        out.append(buf, 16);
    }
    return out;
}

std::vector<double> hex_to_doubles(const std::string& hex) {
    if (hex.size() % 16 != 0) throw InputError("checkpoint: malformed hex tensor data");
    std::vector<double> out(hex.size() / 16);
    for (size_t i = 0; i < out.size(); ++i) {
        uint64_t u = 0;
        for (size_t c = 0; c < 16; ++c) {
            const char ch = hex[i * 16 + c];
            uint64_t nib;
            if (ch >= '0' && ch <= '9')
                nib = static_cast<uint64_t>(ch - '0');
            else if (ch >= 'a' && ch <= 'f')
                nib = static_cast<uint64_t>(ch - 'a' + 10);
            else
                throw InputError("checkpoint: invalid hex digit");
            u = (u << 4) | nib;
        }
        out[i] = std::bit_cast<double>(u);
    }
    return out;
}

}  // namespace

json adapter_to_json(const AdapterConfig& c) {
    json j;
    j["model_dim"] = c.model_dim;
    j["lora_rank"] = c.lora_rank;
    j["prefix_len"] = c.prefix_len;
    j["num_queries"] = c.num_queries;
    j["num_heads"] = c.num_heads;
    j["patch_size"] = c.patch_size;
    j["vocab_size"] = c.vocab_size;
    j["num_blocks"] = c.num_blocks;
    j["ffn_mult"] = c.ffn_mult;
    j["max_rationale_len"] = c.max_rationale_len;
    j["seed"] = c.seed;
    j["score_dims"] = c.score_dims;
    return j;
}

AdapterConfig adapter_from_json(const json& j) {
    AdapterConfig c;
    c.model_dim = j.value("model_dim", c.model_dim);
    c.lora_rank = j.value("lora_rank", c.lora_rank);
    c.prefix_len = j.value("prefix_len", c.prefix_len);
    c.num_queries = j.value("num_queries", c.num_queries);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.num_blocks = j.value("num_blocks", c.num_blocks);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.max_rationale_len = j.value("max_rationale_len", c.max_rationale_len);
    c.seed = j.value("seed", c.seed);
    if (j.contains("score_dims")) c.score_dims = j["score_dims"].get<std::vector<std::string>>();
    c.validate();
    return c;
}

void save_checkpoint(const MsefModel& model, const Adam& opt, int64_t epoch, const std::string& path) {
    json j;
    j["format_version"] = 1;
    j["config"] = adapter_to_json(model.config());
    j["constants"] = {{"layer_norm_eps", Graph::kLayerNormEps}, {"adam_eps", opt.hyper().eps}};
    j["epoch"] = epoch;

    json tensors = json::object();
    for (const auto& p : model.params()) {
        json t;
        t["shape"] = p.t.shape;
        t["trainable"] = p.trainable;
        t["hex"] = doubles_to_hex(p.t.data);
        tensors[p.name] = std::move(t);
    }
    j["tensors"] = std::move(tensors);

    json optj;
    optj["step"] = opt.step_count();
    optj["lr"] = opt.hyper().lr;
    optj["beta1"] = opt.hyper().beta1;
    optj["beta2"] = opt.hyper().beta2;
    optj["eps"] = opt.hyper().eps;
    json mj = json::object(), vj = json::object();
    // Slot order matches the trainable-parameter order used by train_step.
    const auto& m = opt.first_moments();
    const auto& v = opt.second_moments();
    size_t slot = 0;
    for (const auto& p : model.params()) {
        if (!p.trainable) continue;
        if (slot < m.size() && !m[slot].empty()) mj[p.name] = doubles_to_hex(m[slot]);
        if (slot < v.size() && !v[slot].empty()) vj[p.name] = doubles_to_hex(v[slot]);
        ++slot;
    }
    optj["m"] = std::move(mj);
    optj["v"] = std::move(vj);
    j["optimizer"] = std::move(optj);

    json frozen;
    frozen["names"] = model.frozen_names();
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(model.frozen_manifest_hash()));
    frozen["hash"] = std::string(hash, 16);
    j["frozen_manifest"] = std::move(frozen);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("save_checkpoint: cannot open " + path);
    out << j.dump(1);
    if (!out) throw InputError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(MsefModel& model, Adam& opt, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("load_checkpoint: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw InputError(std::string("load_checkpoint: invalid JSON: ") + e.what());
    }
    if (j.value("format_version", 0) != 1) throw InputError("load_checkpoint: unsupported format version");

    Checkpoint ck;
    ck.config = adapter_from_json(j.at("config"));
    ck.epoch = j.value("epoch", int64_t{0});

    const json& tensors = j.at("tensors");
    for (auto& p : model.params()) {
        if (!tensors.contains(p.name)) throw InputError("load_checkpoint: missing tensor " + p.name);
        const json& t = tensors.at(p.name);
        const auto shape = t.at("shape").get<std::vector<int>>();
        if (shape != p.t.shape) throw InputError("load_checkpoint: shape mismatch for " + p.name);
        p.t.data = hex_to_doubles(t.at("hex").get<std::string>());
        if (p.t.data.size() != p.t.numel()) throw InputError("load_checkpoint: size mismatch for " + p.name);
    }

    const json& optj = j.at("optimizer");
    opt.hyper().lr = optj.value("lr", opt.hyper().lr);
    opt.hyper().beta1 = optj.value("beta1", opt.hyper().beta1);
    opt.hyper().beta2 = optj.value("beta2", opt.hyper().beta2);
    opt.hyper().eps = optj.value("eps", opt.hyper().eps);
    opt.set_step_count(optj.value("step", int64_t{0}));
    auto& m = opt.first_moments();
    auto& v = opt.second_moments();
    m.clear();
    v.clear();
    for (const auto& p : model.params()) {
        if (!p.trainable) continue;
        m.push_back(optj.at("m").contains(p.name) ? hex_to_doubles(optj.at("m")[p.name].get<std::string>())
                                                  : std::vector<double>{});
        v.push_back(optj.at("v").contains(p.name) ? hex_to_doubles(optj.at("v")[p.name].get<std::string>())
                                                  : std::vector<double>{});
    }
    return ck;
}

MsefModel model_from_checkpoint(const std::string& path, Adam* opt, int64_t* epoch) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("model_from_checkpoint: cannot open " + path);
    json j;
    in >> j;
    AdapterConfig cfg = adapter_from_json(j.at("config"));
    MsefModel model(cfg);
    Adam local;
    Adam& target = opt ? *opt : local;
    Checkpoint ck = load_checkpoint(model, target, path);
    if (epoch) *epoch = ck.epoch;
    return model;
}

}  // namespace msef::model
