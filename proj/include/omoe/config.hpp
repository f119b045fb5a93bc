#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "omoe/backbone.hpp"
#include "omoe/errors.hpp"
#include "omoe/synthdata.hpp"
#include "omoe/trainer.hpp"

namespace omoe {

// Fixed tags for deriving per-purpose rng streams from the config seed.
// Changing any of these changes every downstream result, so they are part
// of the reproducibility contract.
enum SeedTag : std::uint64_t {
    kSeedPretrainData = 1,
    kSeedPretrainHoldout = 2,
    kSeedUniversalStream = 3,
    kSeedDomainStreamBase = 4,  // + domain index
    kSeedStage2Stream = 20,
    kSeedEvalStream = 21,
    kSeedEvalSubsetBase = 32,  // + variant
};

/// Full application configuration: generator, backbone, both stages, and
/// dataset sizes. Defaults are the desk-scale toy profile.
struct AppConfig {
    GeneratorConfig gen;
    BackboneConfig backbone;
    TrainConfig train;
    PretrainConfig pretrain;
    std::size_t epochs_stage1 = 3;
    std::size_t epochs_stage2 = 2;
    std::size_t samples_per_domain = 2000;
    std::size_t eval_samples = 800;
    std::vector<std::string> adapt_layers;  // empty = all attention projections

    void sync_seed() {
        pretrain.seed = train.seed;
        gen.seed = train.seed;
    }
};

/// Toy profile backing the end-to-end acceptance run: 2 domains, r = 4,
/// k_s = 1, SGD at desk-scale learning rates, seed 7.
inline AppConfig toy_profile() {
    AppConfig cfg;
    cfg.gen.n_domains = 2;
    cfg.train.r = 4;
    cfg.train.k_s = 1;
    cfg.train.seed = 7;
    cfg.train.optim = OptimKind::sgd;
    cfg.train.lr_stage1 = 0.05;
    cfg.train.lr_stage2 = 0.05;
    cfg.train.loss = LossConfig{0.01, 0.1, 0.1};
    cfg.pretrain.epochs = 3;
    cfg.pretrain.lr = 0.05;
    cfg.epochs_stage1 = 3;
    cfg.epochs_stage2 = 2;
    cfg.sync_seed();
    return cfg;
}

/// Larger profile: 4 domains, r = 8, top-2 routing, softer orthogonality
/// and balance weights.
inline AppConfig large_profile() {
    AppConfig cfg = toy_profile();
    cfg.gen.n_domains = 4;
    cfg.train.r = 8;
    cfg.train.k_s = 2;
    cfg.train.loss = LossConfig{0.001, 0.1, 0.001};
    return cfg;
}

namespace detail {

inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw InvalidInput("expected boolean, got '" + v + "'");
}

inline double parse_double(const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw InvalidInput("expected number, got '" + v + "'");
    }
}

inline std::size_t parse_count(const std::string& v) {
    const double d = parse_double(v);
    if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d)))
        throw InvalidInput("expected nonnegative integer, got '" + v + "'");
    return static_cast<std::size_t>(d);
}

}  // namespace detail

inline void apply_config_key(AppConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_count;
    using detail::parse_double;
    if (key == "profile") {
        if (value == "toy")
            cfg = toy_profile();
        else if (value == "large")
            cfg = large_profile();
        else
            throw InvalidInput("unknown profile '" + value + "'");
    } else if (key == "seed") {
        cfg.train.seed = parse_count(value);
        cfg.sync_seed();
    } else if (key == "data.n_domains")
        cfg.gen.n_domains = parse_count(value);
    else if (key == "data.base_amplitude")
        cfg.gen.base_amplitude = parse_double(value);
    else if (key == "data.semantic_flaw_amplitude")
        cfg.gen.semantic_flaw_amplitude = parse_double(value);
    else if (key == "data.artifact_amplitude")
        cfg.gen.artifact_amplitude = parse_double(value);
    else if (key == "data.noise_std")
        cfg.gen.noise_std = parse_double(value);
    else if (key == "data.amplitude_jitter")
        cfg.gen.amplitude_jitter = parse_double(value);
    else if (key == "data.margin_sigmas")
        cfg.gen.margin_sigmas = parse_double(value);
    else if (key == "data.samples_per_domain")
        cfg.samples_per_domain = parse_count(value);
    else if (key == "data.eval_samples")
        cfg.eval_samples = parse_count(value);
    else if (key == "backbone.image_size") {
        cfg.backbone.image_size = parse_count(value);
        cfg.gen.image_size = cfg.backbone.image_size;
    } else if (key == "backbone.patch_size")
        cfg.backbone.patch_size = parse_count(value);
    else if (key == "backbone.embed_dim")
        cfg.backbone.embed_dim = parse_count(value);
    else if (key == "backbone.n_blocks")
        cfg.backbone.n_blocks = parse_count(value);
    else if (key == "backbone.n_heads")
        cfg.backbone.n_heads = parse_count(value);
    else if (key == "backbone.mlp_ratio")
        cfg.backbone.mlp_ratio = parse_count(value);
    else if (key == "pretrain.epochs")
        cfg.pretrain.epochs = parse_count(value);
    else if (key == "pretrain.lr")
        cfg.pretrain.lr = parse_double(value);
    else if (key == "pretrain.batch_size")
        cfg.pretrain.batch_size = parse_count(value);
    else if (key == "pretrain.threshold")
        cfg.pretrain.accept_threshold = parse_double(value);
    else if (key == "train.lr_stage1")
        cfg.train.lr_stage1 = parse_double(value);
    else if (key == "train.lr_stage2")
        cfg.train.lr_stage2 = parse_double(value);
    else if (key == "train.batch_size")
        cfg.train.batch_size = parse_count(value);
    else if (key == "train.epochs_stage1")
        cfg.epochs_stage1 = parse_count(value);
    else if (key == "train.epochs_stage2")
        cfg.epochs_stage2 = parse_count(value);
    else if (key == "train.r")
        cfg.train.r = parse_count(value);
    else if (key == "train.k_s")
        cfg.train.k_s = parse_count(value);
    else if (key == "train.optim") {
        if (value == "sgd")
            cfg.train.optim = OptimKind::sgd;
        else if (value == "adamw")
            cfg.train.optim = OptimKind::adamw;
        else
            throw InvalidInput("train.optim must be sgd or adamw");
    } else if (key == "train.momentum")
        cfg.train.momentum = parse_double(value);
    else if (key == "train.clip_norm")
        cfg.train.clip_norm = parse_double(value);
    else if (key == "loss.lambda1")
        cfg.train.loss.lambda1 = parse_double(value);
    else if (key == "loss.lambda2")
        cfg.train.loss.lambda2 = parse_double(value);
    else if (key == "loss.lambda3")
        cfg.train.loss.lambda3 = parse_double(value);
    else if (key == "router.hidden")
        cfg.train.router_hidden = parse_count(value);
    else if (key == "router.renormalize")
        cfg.train.router_renormalize = parse_bool(value);
    else if (key == "stage1.include_universal")
        cfg.train.stage1_include_universal = parse_bool(value);
    else if (key == "orth.include_universal")
        cfg.train.orth_include_universal = parse_bool(value);
    else if (key == "adapt.layers") {
        cfg.adapt_layers.clear();
        if (value != "all") {
            std::stringstream ss(value);
            std::string id;
            while (std::getline(ss, id, ','))
                if (!id.empty()) cfg.adapt_layers.push_back(id);
        }
    } else
        throw InvalidInput("unknown config key '" + key + "'");
}

/// Flat key=value file; '#' starts a comment, blank lines ignored.
inline AppConfig load_config_file(const std::string& path, AppConfig base = toy_profile()) {
    std::ifstream is(path);
    if (!is) throw InvalidInput("cannot open config file " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto not_space = [](unsigned char c) { return !std::isspace(c); };
        line.erase(line.begin(), std::find_if(line.begin(), line.end(), not_space));
        line.erase(std::find_if(line.rbegin(), line.rend(), not_space).base(), line.end());
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidInput(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        key.erase(std::find_if(key.rbegin(), key.rend(), not_space).base(), key.end());
        value.erase(value.begin(), std::find_if(value.begin(), value.end(), not_space));
        apply_config_key(base, key, value);
    }
    return base;
}

inline const char* config_key_reference() {
    return
        "profile                       toy | large (applies a preset, resets prior keys)\n"
        "seed                          master seed for data, init, and training\n"
        "data.n_domains                semantic domains (toy 2, large 4)\n"
        "data.base_amplitude           carrier strength\n"
        "data.semantic_flaw_amplitude  phase-distortion cue strength\n"
        "data.artifact_amplitude       checkerboard cue strength\n"
        "data.noise_std                per-pixel Gaussian noise\n"
        "data.amplitude_jitter         relative per-sample carrier jitter\n"
        "data.margin_sigmas            required carrier/noise separation margin\n"
        "data.samples_per_domain       stage-1 stream length per expert\n"
        "data.eval_samples             held-out evaluation set size\n"
        "backbone.image_size           square image edge (= data image size)\n"
        "backbone.patch_size           ViT patch edge\n"
        "backbone.embed_dim            token embedding width\n"
        "backbone.n_blocks             transformer blocks\n"
        "backbone.n_heads              attention heads\n"
        "backbone.mlp_ratio            MLP hidden = ratio * embed_dim\n"
        "pretrain.epochs | pretrain.lr | pretrain.batch_size | pretrain.threshold\n"
        "train.lr_stage1 | train.lr_stage2 | train.batch_size\n"
        "train.epochs_stage1 | train.epochs_stage2\n"
        "train.r                       residual (trainable) rank\n"
        "train.k_s                     routed semantic experts per input\n"
        "train.optim                   sgd | adamw\n"
        "train.momentum | train.clip_norm\n"
        "loss.lambda1 | loss.lambda2 | loss.lambda3\n"
        "router.hidden                 gating MLP hidden width\n"
        "router.renormalize            renormalize gates over the selected set\n"
        "stage1.include_universal      compose the universal expert during stage 1\n"
        "orth.include_universal        universal expert counts as a preceding basis\n"
        "adapt.layers                  'all' or comma list like layer0.q,layer1.v\n";
}

}  // namespace omoe
