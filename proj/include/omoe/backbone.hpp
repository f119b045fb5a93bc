#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/matrix.hpp"
#include "omoe/optim.hpp"
#include "omoe/rng.hpp"
#include "omoe/synthdata.hpp"
#include "omoe/tape.hpp"

namespace omoe {

/// Toy pre-norm transformer image encoder. Attention projection weights sit
/// behind the decomposition; everything else is frozen after pretraining.
struct BackboneConfig {
    std::size_t image_size = 16;
    std::size_t patch_size = 4;
    std::size_t embed_dim = 32;
    std::size_t n_blocks = 2;
    std::size_t n_heads = 2;
    std::size_t mlp_ratio = 4;

    void validate() const {
        if (image_size % patch_size != 0) throw InvalidInput("image_size % patch_size != 0");
        if (embed_dim % n_heads != 0) throw InvalidInput("embed_dim % n_heads != 0");
    }

    std::size_t n_tokens() const {
        const std::size_t g = image_size / patch_size;
        return g * g;
    }
    std::size_t patch_dim() const { return patch_size * patch_size; }
    std::size_t mlp_hidden() const { return mlp_ratio * embed_dim; }
    std::size_t head_dim() const { return embed_dim / n_heads; }
};

// Adapted attention projections are addressed as layer{block}.{q|k|v|o}.
inline std::string attn_layer_id(std::size_t block, char proj) {
    return "layer" + std::to_string(block) + "." + std::string(1, proj);
}

inline std::string attn_weight_name(std::size_t block, char proj) {
    return "backbone.block" + std::to_string(block) + ".attn." + std::string(1, proj) + ".weight";
}

inline std::vector<std::string> all_attn_layer_ids(const BackboneConfig& cfg) {
    std::vector<std::string> out;
    for (std::size_t b = 0; b < cfg.n_blocks; ++b)
        for (char p : {'q', 'k', 'v', 'o'}) out.push_back(attn_layer_id(b, p));
    return out;
}

// layer{b}.{p} -> backbone tensor name of the hosted weight
inline std::string layer_id_to_weight_name(const std::string& layer_id) {
    const auto dot = layer_id.find('.');
    if (layer_id.rfind("layer", 0) != 0 || dot == std::string::npos || dot + 2 != layer_id.size())
        throw InvalidInput("bad adapted layer id: " + layer_id);
    const std::size_t block = std::stoul(layer_id.substr(5, dot - 5));
    return attn_weight_name(block, layer_id[dot + 1]);
}

inline ParamStore init_backbone(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamStore p;
    auto xavier = [&](std::size_t rows, std::size_t cols) {
        const double std = std::sqrt(2.0 / static_cast<double>(rows + cols));
        return rng.gaussian_matrix(rows, cols, std);
    };
    p.set("backbone.patch.weight", xavier(cfg.embed_dim, cfg.patch_dim()));
    p.set("backbone.patch.bias", Matrix(1, cfg.embed_dim));
    p.set("backbone.pos", rng.gaussian_matrix(cfg.n_tokens(), cfg.embed_dim, 0.02));
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        const std::string base = "backbone.block" + std::to_string(b) + ".";
        p.set(base + "ln1.gamma", Matrix(1, cfg.embed_dim, 1.0));
        p.set(base + "ln1.beta", Matrix(1, cfg.embed_dim));
        for (char proj : {'q', 'k', 'v', 'o'}) {
            p.set(attn_weight_name(b, proj), xavier(cfg.embed_dim, cfg.embed_dim));
            p.set(base + "attn." + std::string(1, proj) + ".bias", Matrix(1, cfg.embed_dim));
        }
        p.set(base + "ln2.gamma", Matrix(1, cfg.embed_dim, 1.0));
        p.set(base + "ln2.beta", Matrix(1, cfg.embed_dim));
        p.set(base + "mlp.w1", xavier(cfg.mlp_hidden(), cfg.embed_dim));
        p.set(base + "mlp.b1", Matrix(1, cfg.mlp_hidden()));
        p.set(base + "mlp.w2", xavier(cfg.embed_dim, cfg.mlp_hidden()));
        p.set(base + "mlp.b2", Matrix(1, cfg.embed_dim));
    }
    p.set("backbone.final_ln.gamma", Matrix(1, cfg.embed_dim, 1.0));
    p.set("backbone.final_ln.beta", Matrix(1, cfg.embed_dim));
    return p;
}

/// Seeded Gaussian head (std 0.02, zero bias); reinitialized at every expert
/// activation and at Stage-2 entry.
inline void reinit_head(ParamStore& p, std::size_t classes, std::size_t embed_dim, Rng& rng) {
    p.set("head.weight", rng.gaussian_matrix(classes, embed_dim, 0.02));
    p.set("head.bias", Matrix(1, classes));
}

// Row-per-token pixel layout of one image; the constant entering the tape.
inline Matrix patchify(const Matrix& image, const BackboneConfig& cfg) {
    if (image.rows() != cfg.image_size || image.cols() != cfg.image_size)
        throw InvalidInput("image shape mismatch");
    const std::size_t g = cfg.image_size / cfg.patch_size;
    Matrix tokens(cfg.n_tokens(), cfg.patch_dim());
    for (std::size_t pr = 0; pr < g; ++pr)
        for (std::size_t pc = 0; pc < g; ++pc) {
            const std::size_t tok = pr * g + pc;
            for (std::size_t i = 0; i < cfg.patch_size; ++i)
                for (std::size_t j = 0; j < cfg.patch_size; ++j)
                    tokens.at(tok, i * cfg.patch_size + j) =
                        image.at(pr * cfg.patch_size + i, pc * cfg.patch_size + j);
        }
    return tokens;
}

/// Weight lookup feeding the forward pass; returns the tape var for a
/// backbone tensor name. Lets callers swap composed attention weights in
/// without touching the rest of the network.
using VarLookup = std::function<Tape::Var(const std::string&)>;

inline Tape::Var encode_on_tape(Tape& t, const Matrix& image, const BackboneConfig& cfg,
                                const VarLookup& w) {
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    auto tokens = t.constant(patchify(image, cfg));
    auto x = t.add(t.add_rowvec(t.matmul_nt(tokens, w("backbone.patch.weight")),
                                w("backbone.patch.bias")),
                   w("backbone.pos"));
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        const std::string base = "backbone.block" + std::to_string(b) + ".";
        auto h = t.layernorm_rows(x, w(base + "ln1.gamma"), w(base + "ln1.beta"));
        auto q = t.add_rowvec(t.matmul_nt(h, w(attn_weight_name(b, 'q'))),
                              w(base + "attn.q.bias"));
        auto k = t.add_rowvec(t.matmul_nt(h, w(attn_weight_name(b, 'k'))),
                              w(base + "attn.k.bias"));
        auto v = t.add_rowvec(t.matmul_nt(h, w(attn_weight_name(b, 'v'))),
                              w(base + "attn.v.bias"));
        Tape::Var heads;
        for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
            const std::size_t c0 = hd * cfg.head_dim(), c1 = c0 + cfg.head_dim();
            auto qh = t.slice_cols(q, c0, c1);
            auto kh = t.slice_cols(k, c0, c1);
            auto vh = t.slice_cols(v, c0, c1);
            auto scores = t.scale(t.matmul_nt(qh, kh), attn_scale);
            auto attn = t.softmax_rows(scores);
            auto oh = t.matmul(attn, vh);
            heads = hd == 0 ? oh : t.concat_cols(heads, oh);
        }
        auto attn_out = t.add_rowvec(t.matmul_nt(heads, w(attn_weight_name(b, 'o'))),
                                     w(base + "attn.o.bias"));
        x = t.add(x, attn_out);
        auto h2 = t.layernorm_rows(x, w(base + "ln2.gamma"), w(base + "ln2.beta"));
        auto m1 = t.gelu(t.add_rowvec(t.matmul_nt(h2, w(base + "mlp.w1")), w(base + "mlp.b1")));
        auto m2 = t.add_rowvec(t.matmul_nt(m1, w(base + "mlp.w2")), w(base + "mlp.b2"));
        x = t.add(x, m2);
    }
    auto normed = t.layernorm_rows(x, w("backbone.final_ln.gamma"), w("backbone.final_ln.beta"));
    return t.mean_rows(normed);  // 1 x embed_dim pooled feature
}

/// Plain (inference) encode: the tape forward with every weight a constant.
/// `overrides` swaps named tensors, e.g. composed attention weights.
inline Matrix encode(const Matrix& image, const BackboneConfig& cfg, const ParamStore& params,
                     const std::map<std::string, Matrix>* overrides = nullptr) {
    Tape t;
    std::map<std::string, Tape::Var> cache;
    VarLookup w = [&](const std::string& name) {
        auto it = cache.find(name);
        if (it != cache.end()) return it->second;
        const Matrix* m = nullptr;
        if (overrides) {
            auto ov = overrides->find(name);
            if (ov != overrides->end()) m = &ov->second;
        }
        if (!m) m = &params.at(name);
        auto var = t.constant(*m);
        cache[name] = var;
        return var;
    };
    auto feat = encode_on_tape(t, image, cfg, w);
    Matrix out = t.value(feat);
    if (!out.all_finite()) throw NumericalFailure("encode produced non-finite feature");
    return out;
}

/// Affine classification readout on a pooled feature row.
inline Matrix classify(const Matrix& features, const Matrix& head_weight,
                       const Matrix& head_bias) {
    Matrix logits = matmul_nt(features, head_weight);
    for (std::size_t r = 0; r < logits.rows(); ++r)
        for (std::size_t c = 0; c < logits.cols(); ++c) logits.at(r, c) += head_bias.at(0, c);
    if (!logits.all_finite()) throw NumericalFailure("classify produced non-finite logits");
    return logits;
}

struct PretrainResult {
    ParamStore params;   // frozen backbone weights (head excluded)
    double holdout_accuracy = 0.0;
};

struct PretrainConfig {
    std::size_t epochs = 5;
    std::size_t batch_size = 32;
    double lr = 0.05;
    double accept_threshold = 0.80;
    std::uint64_t seed = 7;
};

/// Domain-classification pretraining from scratch; the resulting weights are
/// what the decomposition splits. Throws PretrainDiverged when the held-out
/// accuracy stays under the acceptance threshold.
inline PretrainResult pretrain_backbone(const std::vector<SyntheticSample>& train,
                                        const std::vector<SyntheticSample>& holdout,
                                        std::size_t n_domains, const BackboneConfig& cfg,
                                        const PretrainConfig& pcfg) {
    if (train.empty() || holdout.empty()) throw InvalidInput("pretrain dataset is empty");
    cfg.validate();
    Rng init_rng = derived_rng(pcfg.seed, 0x9a5e);
    ParamStore params = init_backbone(cfg, init_rng);
    Rng head_rng = derived_rng(pcfg.seed, 0x9a5f);
    reinit_head(params, n_domains, cfg.embed_dim, head_rng);

    Optimizer opt(OptimConfig{OptimKind::sgd, pcfg.lr});
    Rng order_rng = derived_rng(pcfg.seed, 0x9a60);

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < pcfg.epochs; ++epoch) {
        // Fisher-Yates with the seeded stream
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[order_rng.below(i)]);
        for (std::size_t start = 0; start < order.size(); start += pcfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + pcfg.batch_size);
            Tape t;
            TapeBinding bind(t, params);
            std::map<std::string, Tape::Var> vars;
            VarLookup w = [&](const std::string& name) {
                auto it = vars.find(name);
                if (it != vars.end()) return it->second;
                auto var = bind.param(name);
                vars[name] = var;
                return var;
            };
            Tape::Var total;
            for (std::size_t i = start; i < stop; ++i) {
                const auto& s = train[order[i]];
                auto feat = encode_on_tape(t, s.image, cfg, w);
                auto logits = t.add_rowvec(t.matmul_nt(feat, w("head.weight")), w("head.bias"));
                auto ce = t.cross_entropy_mean(logits, {static_cast<int>(s.domain)});
                total = (i == start) ? ce : t.add(total, ce);
            }
            auto loss = t.scale(total, 1.0 / static_cast<double>(stop - start));
            t.backward(loss);
            opt.step(params, bind.gradients());
        }
    }

    std::size_t hits = 0;
    for (const auto& s : holdout) {
        Matrix feat = encode(s.image, cfg, params);
        Matrix logits = classify(feat, params.at("head.weight"), params.at("head.bias"));
        std::size_t arg = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits.at(0, c) > logits.at(0, arg)) arg = c;
        hits += arg == s.domain ? 1 : 0;
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(holdout.size());
    if (acc < pcfg.accept_threshold)
        throw PretrainDiverged("held-out domain accuracy " + std::to_string(acc) + " below " +
                               std::to_string(pcfg.accept_threshold));
    PretrainResult res;
    res.params = std::move(params);
    res.holdout_accuracy = acc;
    return res;
}

}  // namespace omoe
