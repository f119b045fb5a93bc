#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "omoe/backbone.hpp"
#include "omoe/checkpoint.hpp"
#include "omoe/decomp.hpp"
#include "omoe/errors.hpp"
#include "omoe/losses.hpp"
#include "omoe/optim.hpp"
#include "omoe/router.hpp"
#include "omoe/synthdata.hpp"
#include "omoe/tape.hpp"

namespace omoe {

struct TrainConfig {
    double lr_stage1 = 2e-4;
    double lr_stage2 = 2e-5;
    std::size_t batch_size = 32;
    std::size_t epochs_per_stage = 1;
    std::size_t r = 4;
    std::size_t k_s = 1;
    LossConfig loss;
    std::uint64_t seed = 7;
    OptimKind optim = OptimKind::sgd;
    double momentum = 0.9;
    double clip_norm = 1.0;
    bool stage1_include_universal = false;  // compose the trained universal during stage 1
    bool orth_include_universal = true;     // universal counts as a preceding basis
    bool router_renormalize = false;        // renormalize gates over the selected set
    std::size_t router_hidden = 16;

    void validate(std::size_t n_semantic) const {
        if (lr_stage1 <= 0 || lr_stage2 <= 0) throw InvalidInput("learning rates must be positive");
        if (r < 1) throw InvalidInput("rank must be >= 1");
        if (k_s < 1 || k_s > n_semantic) throw InvalidTopK("k_s outside [1, n_semantic]");
        if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
        loss.validate();
    }
};

constexpr int kUniversalExpert = -1;

struct TrainRecord {
    int stage = 0;
    int expert_index = kUniversalExpert;  // semantic index, kUniversalExpert, or -2 for stage 2
    std::size_t step = 0;
    double l_cls = 0.0;
    double l_orth = 0.0;
    double l_gating = 0.0;
    double l_balance = 0.0;
    double total = 0.0;
    BatchRoutingStats routing;                             // stage 2 only
    std::map<std::string, std::uint64_t> param_checksums;  // full-store snapshot
};

/// Everything the two stages and evaluation operate on. The store holds the
/// frozen pretrained backbone (which doubles as the router's feature
/// encoder), the per-layer decompositions and expert pools, the router, and
/// the classification head.
struct ModelState {
    BackboneConfig bcfg;
    std::size_t n_semantic = 2;
    std::size_t r = 4;
    std::size_t k_s = 1;
    std::size_t router_hidden = 16;
    std::vector<std::string> adapted;  // adapted attention layer ids, canonical order
    ParamStore store;
};

// ---- tensor naming ----

inline std::string expert_tensor(const std::string& layer_id, int expert_index,
                                 const char* part) {
    if (expert_index == kUniversalExpert) return layer_id + ".universal." + part;
    return layer_id + ".expert" + std::to_string(expert_index) + "." + part;
}

inline std::string principal_tensor(const std::string& layer_id) {
    return layer_id + ".principal";
}

// ---- struct views over the store ----

inline WeightDecomposition decomp_view(const ParamStore& store, const std::string& layer_id) {
    WeightDecomposition d;
    d.layer_id = layer_id;
    d.w_principal = store.at(principal_tensor(layer_id));
    d.principal_u = store.at(layer_id + ".principal_u");
    d.principal_v = store.at(layer_id + ".principal_v");
    d.resid_u = store.at(layer_id + ".universal.u");
    d.resid_v = store.at(layer_id + ".universal.v");
    const Matrix& s = store.at(layer_id + ".universal.sigma");
    d.resid_sigma.assign(s.data().begin(), s.data().end());
    d.r = d.resid_sigma.size();
    return d;
}

inline Expert expert_view(const ParamStore& store, const std::string& layer_id,
                          int expert_index) {
    Expert e;
    e.u = store.at(expert_tensor(layer_id, expert_index, "u"));
    e.v = store.at(expert_tensor(layer_id, expert_index, "v"));
    const Matrix& s = store.at(expert_tensor(layer_id, expert_index, "sigma"));
    e.sigma.assign(s.data().begin(), s.data().end());
    e.kind = expert_index == kUniversalExpert ? ExpertKind::universal : ExpertKind::semantic;
    e.index = expert_index == kUniversalExpert ? 0 : static_cast<std::size_t>(expert_index);
    return e;
}

inline ExpertPool pool_view(const ParamStore& store, const std::string& layer_id,
                            std::size_t n_semantic) {
    ExpertPool pool;
    pool.universal = expert_view(store, layer_id, kUniversalExpert);
    for (std::size_t i = 0; i < n_semantic; ++i)
        pool.semantic.push_back(expert_view(store, layer_id, static_cast<int>(i)));
    return pool;
}

inline GatingNet router_view(const ParamStore& store) {
    GatingNet net;
    net.layer1 = store.at("router.layer1.weight");
    net.bias1 = store.at("router.layer1.bias");
    net.layer2 = store.at("router.layer2.weight");
    net.bias2 = store.at("router.layer2.bias");
    return net;
}

inline Matrix row_vector(const std::vector<double>& v) {
    Matrix m(1, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) m.at(0, i) = v[i];
    return m;
}

/// Split every adapted attention weight into principal + residual and seed
/// the expert pool with residual copies. Also initializes the router.
inline void setup_decomposition(ModelState& model, const TrainConfig& cfg) {
    cfg.validate(model.n_semantic);
    model.r = cfg.r;
    model.k_s = cfg.k_s;
    model.router_hidden = cfg.router_hidden;
    if (model.adapted.empty()) model.adapted = all_attn_layer_ids(model.bcfg);
    for (const auto& layer_id : model.adapted) {
        const Matrix& w = model.store.at(layer_id_to_weight_name(layer_id));
        WeightDecomposition d = decompose(w, cfg.r, layer_id);
        ExpertPool pool = init_pool(d, model.n_semantic);
        model.store.set(principal_tensor(layer_id), d.w_principal);
        model.store.set(layer_id + ".principal_u", d.principal_u);
        model.store.set(layer_id + ".principal_v", d.principal_v);
        model.store.set(expert_tensor(layer_id, kUniversalExpert, "u"), pool.universal.u);
        model.store.set(expert_tensor(layer_id, kUniversalExpert, "sigma"),
                        row_vector(pool.universal.sigma));
        model.store.set(expert_tensor(layer_id, kUniversalExpert, "v"), pool.universal.v);
        for (std::size_t i = 0; i < model.n_semantic; ++i) {
            const int idx = static_cast<int>(i);
            model.store.set(expert_tensor(layer_id, idx, "u"), pool.semantic[i].u);
            model.store.set(expert_tensor(layer_id, idx, "sigma"),
                            row_vector(pool.semantic[i].sigma));
            model.store.set(expert_tensor(layer_id, idx, "v"), pool.semantic[i].v);
        }
    }
    Rng router_rng = derived_rng(cfg.seed, 0x6071);
    GatingNet net =
        GatingNet::init(model.n_semantic, model.bcfg.embed_dim, cfg.router_hidden, router_rng);
    model.store.set("router.layer1.weight", net.layer1);
    model.store.set("router.layer1.bias", net.bias1);
    model.store.set("router.layer2.weight", net.layer2);
    model.store.set("router.layer2.bias", net.bias2);
    Rng head_rng = derived_rng(cfg.seed, 0x6072);
    reinit_head(model.store, 2, model.bcfg.embed_dim, head_rng);
}

// ---- meta tensors so a checkpoint is self-describing ----

inline void write_meta(ModelState& model) {
    auto scalar = [](double v) { return Matrix(1, 1, v); };
    auto& s = model.store;
    s.set("meta.image_size", scalar(static_cast<double>(model.bcfg.image_size)));
    s.set("meta.patch_size", scalar(static_cast<double>(model.bcfg.patch_size)));
    s.set("meta.embed_dim", scalar(static_cast<double>(model.bcfg.embed_dim)));
    s.set("meta.n_blocks", scalar(static_cast<double>(model.bcfg.n_blocks)));
    s.set("meta.n_heads", scalar(static_cast<double>(model.bcfg.n_heads)));
    s.set("meta.mlp_ratio", scalar(static_cast<double>(model.bcfg.mlp_ratio)));
    s.set("meta.n_semantic", scalar(static_cast<double>(model.n_semantic)));
    s.set("meta.r", scalar(static_cast<double>(model.r)));
    s.set("meta.k_s", scalar(static_cast<double>(model.k_s)));
    s.set("meta.router_hidden", scalar(static_cast<double>(model.router_hidden)));
    Matrix adapted(model.adapted.size(), 2);
    for (std::size_t i = 0; i < model.adapted.size(); ++i) {
        const std::string& id = model.adapted[i];
        const auto dot = id.find('.');
        adapted.at(i, 0) = std::stod(id.substr(5, dot - 5));
        adapted.at(i, 1) = static_cast<double>(std::string("qkvo").find(id[dot + 1]));
    }
    s.set("meta.adapted", adapted);
}

inline ModelState model_from_store(ParamStore store) {
    require_tensors(store, {"meta.image_size", "meta.patch_size", "meta.embed_dim",
                            "meta.n_blocks", "meta.n_heads", "meta.mlp_ratio", "meta.n_semantic",
                            "meta.r", "meta.k_s", "meta.router_hidden", "meta.adapted",
                            "backbone.patch.weight"});
    ModelState m;
    auto scalar = [&](const std::string& n) { return static_cast<std::size_t>(store.at(n)[0]); };
    m.bcfg.image_size = scalar("meta.image_size");
    m.bcfg.patch_size = scalar("meta.patch_size");
    m.bcfg.embed_dim = scalar("meta.embed_dim");
    m.bcfg.n_blocks = scalar("meta.n_blocks");
    m.bcfg.n_heads = scalar("meta.n_heads");
    m.bcfg.mlp_ratio = scalar("meta.mlp_ratio");
    m.n_semantic = scalar("meta.n_semantic");
    m.r = scalar("meta.r");
    m.k_s = scalar("meta.k_s");
    m.router_hidden = scalar("meta.router_hidden");
    const Matrix& adapted = store.at("meta.adapted");
    for (std::size_t i = 0; i < adapted.rows(); ++i)
        m.adapted.push_back(attn_layer_id(static_cast<std::size_t>(adapted.at(i, 0)),
                                          "qkvo"[static_cast<std::size_t>(adapted.at(i, 1))]));
    m.store = std::move(store);
    return m;
}

inline void save_model(const ModelState& model, const std::string& path) {
    ModelState copy = model;  // meta rewrite happens on the copy
    write_meta(copy);
    save_checkpoint(path, copy.store);
}

inline ModelState load_model(const std::string& path) {
    return model_from_store(load_checkpoint(path));
}

// ---- per-batch objective graphs (shared by the trainer and the gradient
// checks) ----

/// Stage-1 objective over one batch: classification CE through the
/// (principal + active expert) composition plus the weighted orthogonality
/// constraint summed over the adapted layers. Binds the active expert's
/// u/sigma/v and the head as tape parameters.
inline Tape::Var build_stage1_objective(Tape& t, TapeBinding& bind, const ModelState& model,
                                        const std::vector<const SyntheticSample*>& batch,
                                        int expert_index, const TrainConfig& cfg,
                                        Tape::Var* cls_out = nullptr,
                                        Tape::Var* orth_out = nullptr) {
    auto hw = bind.param("head.weight");
    auto hb = bind.param("head.bias");

    std::map<std::string, Tape::Var> composed;
    Tape::Var orth_total;
    for (const auto& layer_id : model.adapted) {
        auto u = bind.param(expert_tensor(layer_id, expert_index, "u"));
        auto sg = bind.param(expert_tensor(layer_id, expert_index, "sigma"));
        auto v = bind.param(expert_tensor(layer_id, expert_index, "v"));
        auto w_active = t.matmul_nt(t.scale_cols(u, sg), v);
        Matrix base = model.store.at(principal_tensor(layer_id));
        if (cfg.stage1_include_universal && expert_index != kUniversalExpert)
            base += expert_view(model.store, layer_id, kUniversalExpert).weight();
        composed[layer_id_to_weight_name(layer_id)] = t.add(t.constant(std::move(base)), w_active);

        // orthogonality against every preceding frozen basis
        std::vector<std::string> prev_u = {layer_id + ".principal_u"};
        std::vector<std::string> prev_v = {layer_id + ".principal_v"};
        if (expert_index != kUniversalExpert) {
            if (cfg.orth_include_universal) {
                prev_u.push_back(expert_tensor(layer_id, kUniversalExpert, "u"));
                prev_v.push_back(expert_tensor(layer_id, kUniversalExpert, "v"));
            }
            for (int j = 0; j < expert_index; ++j) {
                prev_u.push_back(expert_tensor(layer_id, j, "u"));
                prev_v.push_back(expert_tensor(layer_id, j, "v"));
            }
        }
        for (std::size_t k = 0; k < prev_u.size(); ++k) {
            auto term = t.add(t.sum_sq(t.matmul_tn(u, bind.constant(prev_u[k]))),
                              t.sum_sq(t.matmul_tn(v, bind.constant(prev_v[k]))));
            orth_total = orth_total.valid() ? t.add(orth_total, term) : term;
        }
    }

    std::map<std::string, Tape::Var> cache;
    VarLookup lookup = [&](const std::string& name) {
        auto c = composed.find(name);
        if (c != composed.end()) return c->second;
        auto it = cache.find(name);
        if (it != cache.end()) return it->second;
        auto var = bind.constant(name);
        cache[name] = var;
        return var;
    };

    Tape::Var ce_sum;
    for (const SyntheticSample* s : batch) {
        auto feat = encode_on_tape(t, s->image, model.bcfg, lookup);
        auto logits = t.add_rowvec(t.matmul_nt(feat, hw), hb);
        auto ce = t.cross_entropy_mean(logits, {s->fake ? 1 : 0});
        ce_sum = ce_sum.valid() ? t.add(ce_sum, ce) : ce;
    }
    auto cls = t.scale(ce_sum, 1.0 / static_cast<double>(batch.size()));
    auto objective = t.add(cls, t.scale(orth_total, cfg.loss.lambda1));
    if (cls_out) *cls_out = cls;
    if (orth_out) *orth_out = orth_total;
    return objective;
}

/// Frozen per-stage context for Stage 2: router-input features and the
/// dense expert weights, none of which depend on the trained parameters.
struct Stage2Context {
    std::vector<Matrix> features;                          // one per dataset index
    std::map<std::string, Matrix> base_w;                  // principal + universal per layer
    std::map<std::string, std::vector<Matrix>> expert_w;   // dense semantic weights per layer
};

inline Stage2Context make_stage2_context(const ModelState& model,
                                         const std::vector<SyntheticSample>& data) {
    Stage2Context ctx;
    ctx.features.reserve(data.size());
    for (const auto& s : data) ctx.features.push_back(encode(s.image, model.bcfg, model.store));
    for (const auto& layer_id : model.adapted) {
        Matrix base = model.store.at(principal_tensor(layer_id));
        base += expert_view(model.store, layer_id, kUniversalExpert).weight();
        ctx.base_w[layer_id] = std::move(base);
        auto& ws = ctx.expert_w[layer_id];
        for (std::size_t i = 0; i < model.n_semantic; ++i)
            ws.push_back(expert_view(model.store, layer_id, static_cast<int>(i)).weight());
    }
    return ctx;
}

struct Stage2Item {
    const SyntheticSample* sample;
    const Matrix* feature;  // frozen router input
    int expert_label;       // y_e
};

/// Stage-2 objective over one batch: per-sample routing on frozen features,
/// gate-weighted composition, classification CE, gating CE, and the load
/// balance term with argmax fractions treated as constants. Binds router
/// and head as tape parameters.
inline Tape::Var build_stage2_objective(Tape& t, TapeBinding& bind, const ModelState& model,
                                        const std::vector<Stage2Item>& batch,
                                        const Stage2Context& ctx, const TrainConfig& cfg,
                                        Tape::Var* cls_out = nullptr,
                                        Tape::Var* gating_out = nullptr,
                                        Tape::Var* balance_out = nullptr,
                                        BatchRoutingStats* stats_out = nullptr) {
    auto hw = bind.param("head.weight");
    auto hb = bind.param("head.bias");
    auto r1 = bind.param("router.layer1.weight");
    auto rb1 = bind.param("router.layer1.bias");
    auto r2 = bind.param("router.layer2.weight");
    auto rb2 = bind.param("router.layer2.bias");

    std::map<std::string, Tape::Var> base_vars;
    std::map<std::string, std::vector<Tape::Var>> expert_vars;
    for (const auto& layer_id : model.adapted) {
        base_vars[layer_id] = t.constant(ctx.base_w.at(layer_id));
        for (const auto& w : ctx.expert_w.at(layer_id))
            expert_vars[layer_id].push_back(t.constant(w));
    }

    Tape::Var ce_sum, gate_ce_sum;
    std::vector<Tape::Var> p_sums(model.n_semantic);
    std::vector<double> f_counts(model.n_semantic, 0.0);

    for (const Stage2Item& item : batch) {
        auto feat = t.constant(*item.feature);
        auto z = route_on_tape(t, feat, r1, rb1, r2, rb2);
        auto gates = t.softmax_rows(z);

        const Matrix& zv = t.value(z);
        f_counts[argmax_index(std::vector<double>(zv.data().begin(), zv.data().end()))] += 1.0;
        const Matrix& gv = t.value(gates);
        auto selected =
            top_k_indices(std::vector<double>(gv.data().begin(), gv.data().end()), model.k_s);

        std::vector<Tape::Var> picks(model.n_semantic);
        for (std::size_t e = 0; e < model.n_semantic; ++e) {
            picks[e] = t.pick(gates, 0, e);
            p_sums[e] = p_sums[e].valid() ? t.add(p_sums[e], picks[e]) : picks[e];
        }

        Tape::Var gate_norm;  // optional renormalization over the selection
        if (cfg.router_renormalize) {
            Tape::Var sum;
            for (auto idx : selected) sum = sum.valid() ? t.add(sum, picks[idx]) : picks[idx];
            gate_norm = t.inv(sum);
        }

        std::map<std::string, Tape::Var> composed;
        for (const auto& layer_id : model.adapted) {
            auto wf = base_vars[layer_id];
            for (auto idx : selected) {
                auto g =
                    cfg.router_renormalize ? t.hadamard(picks[idx], gate_norm) : picks[idx];
                wf = t.add(wf, t.scale_by(expert_vars[layer_id][idx], g));
            }
            composed[layer_id_to_weight_name(layer_id)] = wf;
        }

        std::map<std::string, Tape::Var> cache;
        VarLookup lookup = [&](const std::string& name) {
            auto c = composed.find(name);
            if (c != composed.end()) return c->second;
            auto it = cache.find(name);
            if (it != cache.end()) return it->second;
            auto var = bind.constant(name);
            cache[name] = var;
            return var;
        };
        auto feat2 = encode_on_tape(t, item.sample->image, model.bcfg, lookup);
        auto logits = t.add_rowvec(t.matmul_nt(feat2, hw), hb);
        auto ce = t.cross_entropy_mean(logits, {item.sample->fake ? 1 : 0});
        ce_sum = ce_sum.valid() ? t.add(ce_sum, ce) : ce;
        auto gce = t.cross_entropy_mean(z, {item.expert_label});
        gate_ce_sum = gate_ce_sum.valid() ? t.add(gate_ce_sum, gce) : gce;
    }

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    auto cls = t.scale(ce_sum, inv_b);
    auto gating = t.scale(gate_ce_sum, inv_b);

    BatchRoutingStats stats;
    stats.batch_size = batch.size();
    stats.p.assign(model.n_semantic, 0.0);
    stats.f.assign(model.n_semantic, 0.0);
    Tape::Var balance;
    for (std::size_t e = 0; e < model.n_semantic; ++e) {
        auto p_mean = t.scale(p_sums[e], inv_b);
        stats.p[e] = t.scalar(p_mean);
        stats.f[e] = f_counts[e] * inv_b;
        auto term = t.scale(p_mean, stats.f[e]);  // argmax fraction held constant
        balance = balance.valid() ? t.add(balance, term) : term;
    }
    balance = t.scale(balance, static_cast<double>(model.n_semantic));

    auto objective = t.add(
        cls, t.add(t.scale(gating, cfg.loss.lambda2), t.scale(balance, cfg.loss.lambda3)));
    if (cls_out) *cls_out = cls;
    if (gating_out) *gating_out = gating;
    if (balance_out) *balance_out = balance;
    if (stats_out) *stats_out = stats;
    return objective;
}

// ---- training loops ----

namespace detail {

inline std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

inline std::vector<std::string> frozen_names(const ParamStore& store,
                                             const std::vector<std::string>& trainable) {
    std::vector<std::string> out;
    for (const auto& [name, m] : store.items())
        if (std::find(trainable.begin(), trainable.end(), name) == trainable.end())
            out.push_back(name);
    return out;
}

inline void verify_frozen(const ParamStore& store,
                          const std::map<std::string, std::uint64_t>& before,
                          const std::vector<std::string>& frozen, const char* stage) {
    for (const auto& name : frozen) {
        const auto it = before.find(name);
        if (it == before.end()) continue;
        if (fnv1a_checksum(store.at(name)) != it->second)
            throw FreezeViolation(std::string(stage) + " modified frozen tensor " + name);
    }
}

}  // namespace detail

/// Stage 1: specialize one expert (or the universal one) on its hard-sampled
/// stream. Only the active expert's u/sigma/v across the adapted layers and
/// a freshly reinitialized head receive gradients; everything else is
/// checksum-verified frozen.
inline std::vector<TrainRecord> train_stage1(ModelState& model,
                                             const std::vector<SyntheticSample>& data,
                                             int expert_index, const TrainConfig& cfg) {
    cfg.validate(model.n_semantic);
    if (data.empty()) throw InvalidInput("stage-1 stream is empty");
    if (expert_index != kUniversalExpert &&
        (expert_index < 0 || static_cast<std::size_t>(expert_index) >= model.n_semantic))
        throw InvalidExpertIndex("stage-1 expert index " + std::to_string(expert_index));

    // hard-sampling contract
    for (const auto& s : data) {
        if (expert_index != kUniversalExpert &&
            s.domain != static_cast<std::size_t>(expert_index))
            throw HardSamplingViolation("sample from domain " + std::to_string(s.domain) +
                                        " in the stream of expert " +
                                        std::to_string(expert_index));
        if (expert_index == kUniversalExpert && s.fake && s.mode != FakeMode::artifact)
            throw HardSamplingViolation("universal expert stream must be purified pairs");
    }

    std::vector<std::string> trainable = {"head.weight", "head.bias"};
    for (const auto& layer_id : model.adapted)
        for (const char* part : {"u", "sigma", "v"})
            trainable.push_back(expert_tensor(layer_id, expert_index, part));
    const auto frozen = detail::frozen_names(model.store, trainable);
    const auto before = model.store.checksums();

    Rng head_rng = derived_rng(cfg.seed, 0x5e10 + static_cast<std::uint64_t>(expert_index + 1));
    reinit_head(model.store, 2, model.bcfg.embed_dim, head_rng);

    Optimizer opt(OptimConfig{cfg.optim, cfg.lr_stage1, cfg.momentum, cfg.clip_norm});
    Rng order_rng = derived_rng(cfg.seed, 0x0d37 + static_cast<std::uint64_t>(expert_index + 1));

    std::vector<std::string> principal_names;
    for (const auto& layer_id : model.adapted)
        principal_names.push_back(principal_tensor(layer_id));

    std::vector<TrainRecord> records;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
        auto order = detail::shuffled_order(data.size(), order_rng);
        for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(data.size(), start + cfg.batch_size);
            const auto principal_before = model.store.combined_checksum(principal_names);

            Tape t;
            TapeBinding bind(t, model.store);
            std::vector<const SyntheticSample*> batch;
            for (std::size_t i = start; i < stop; ++i) batch.push_back(&data[order[i]]);
            Tape::Var cls, orth;
            auto objective =
                build_stage1_objective(t, bind, model, batch, expert_index, cfg, &cls, &orth);
            t.backward(objective);
            opt.step(model.store, bind.gradients());

            if (model.store.combined_checksum(principal_names) != principal_before)
                throw FreezeViolation("principal subspace moved during a stage-1 step");

            TrainRecord rec;
            rec.stage = 1;
            rec.expert_index = expert_index;
            rec.step = step++;
            rec.l_cls = t.scalar(cls);
            rec.l_orth = t.scalar(orth);
            rec.total = t.scalar(objective);
            rec.param_checksums = model.store.checksums();
            records.push_back(std::move(rec));
        }
    }
    detail::verify_frozen(model.store, before, frozen, "stage 1");
    return records;
}

/// Stage 2: freeze all experts, reinitialize the head, and train the router
/// and head jointly through the gate-weighted composition.
inline std::vector<TrainRecord> train_stage2(ModelState& model,
                                             const std::vector<SyntheticSample>& data,
                                             const std::vector<int>& expert_labels,
                                             const TrainConfig& cfg) {
    cfg.validate(model.n_semantic);
    if (data.empty()) throw InvalidInput("stage-2 stream is empty");
    if (expert_labels.size() != data.size())
        throw InvalidInput("expert label count != sample count");
    for (int y : expert_labels)
        if (y < 0 || static_cast<std::size_t>(y) >= model.n_semantic)
            throw InvalidInput("expert label out of range");

    std::vector<std::string> trainable = {"head.weight",         "head.bias",
                                          "router.layer1.weight", "router.layer1.bias",
                                          "router.layer2.weight", "router.layer2.bias"};
    const auto frozen = detail::frozen_names(model.store, trainable);
    const auto before = model.store.checksums();

    Rng head_rng = derived_rng(cfg.seed, 0x5e2f);
    reinit_head(model.store, 2, model.bcfg.embed_dim, head_rng);

    const Stage2Context ctx = make_stage2_context(model, data);

    Optimizer opt(OptimConfig{cfg.optim, cfg.lr_stage2, cfg.momentum, cfg.clip_norm});
    Rng order_rng = derived_rng(cfg.seed, 0x0d55);

    std::vector<TrainRecord> records;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
        auto order = detail::shuffled_order(data.size(), order_rng);
        for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(data.size(), start + cfg.batch_size);

            Tape t;
            TapeBinding bind(t, model.store);
            std::vector<Stage2Item> batch;
            for (std::size_t i = start; i < stop; ++i)
                batch.push_back(Stage2Item{&data[order[i]], &ctx.features[order[i]],
                                           expert_labels[order[i]]});
            Tape::Var cls, gating, balance;
            BatchRoutingStats stats;
            auto objective = build_stage2_objective(t, bind, model, batch, ctx, cfg, &cls,
                                                    &gating, &balance, &stats);
            t.backward(objective);
            opt.step(model.store, bind.gradients());

            TrainRecord rec;
            rec.stage = 2;
            rec.expert_index = -2;
            rec.step = step++;
            rec.l_cls = t.scalar(cls);
            rec.l_gating = t.scalar(gating);
            rec.l_balance = t.scalar(balance);
            rec.total = t.scalar(objective);
            rec.routing = stats;
            rec.param_checksums = model.store.checksums();
            records.push_back(std::move(rec));
        }
    }
    detail::verify_frozen(model.store, before, frozen, "stage 2");
    return records;
}

/// Loss CSV: step,l_cls,l_orth,l_gating,l_balance,total
inline void write_training_log(const std::string& path, const std::vector<TrainRecord>& records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw InvalidInput("cannot open log file " + path);
    os << "step,l_cls,l_orth,l_gating,l_balance,total\n";
    os.precision(17);
    for (const auto& r : records)
        os << r.step << ',' << r.l_cls << ',' << r.l_orth << ',' << r.l_gating << ','
           << r.l_balance << ',' << r.total << '\n';
}

}  // namespace omoe
