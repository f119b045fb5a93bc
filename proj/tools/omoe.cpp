// Command-line surface for the orthogonal mixture-of-experts detector:
// dataset generation, backbone pretraining, weight decomposition, the two
// training stages, and evaluation / inspection utilities.
//
// Exit codes: 0 success, 2 invalid input or config, 3 numerical failure,
// 4 checkpoint error.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "omoe/checkpoint.hpp"
#include "omoe/config.hpp"
#include "omoe/eval.hpp"
#include "omoe/synthdata.hpp"
#include "omoe/trainer.hpp"

namespace {

using json = nlohmann::json;
using namespace omoe;

struct GlobalArgs {
    std::string config_path;
    std::string checkpoint = "model.omoe";
    std::int64_t seed = -1;  // -1: keep config seed
};

AppConfig resolve_config(const GlobalArgs& g) {
    AppConfig cfg = g.config_path.empty() ? toy_profile() : load_config_file(g.config_path);
    if (g.seed >= 0) {
        cfg.train.seed = static_cast<std::uint64_t>(g.seed);
        cfg.sync_seed();
    }
    return cfg;
}

std::vector<SyntheticSample> stage2_stream(const SyntheticGenerator& gen, const AppConfig& cfg) {
    Rng rng = derived_rng(cfg.train.seed, kSeedStage2Stream);
    return gen.mixed_stream(cfg.samples_per_domain * cfg.gen.n_domains, 0.5, rng);
}

json domain_report_json(const DomainReport& d) {
    return json{{"n_real", d.n_real},
                {"n_fake", d.n_fake},
                {"real_accuracy", d.real_accuracy},
                {"fake_accuracy", d.fake_accuracy},
                {"overall_accuracy", d.overall_accuracy},
                {"average_precision", d.ap}};
}

json report_json(const EvalReport& rep) {
    json domains = json::array();
    for (const auto& d : rep.domains) domains.push_back(domain_report_json(d));
    json confusion = json::array();
    for (std::size_t r = 0; r < rep.domain_confusion.rows(); ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < rep.domain_confusion.cols(); ++c)
            row.push_back(rep.domain_confusion.at(r, c));
        confusion.push_back(row);
    }
    return json{{"overall_accuracy", rep.overall_accuracy},
                {"real_accuracy", rep.real_accuracy},
                {"fake_accuracy", rep.fake_accuracy},
                {"mean_accuracy", rep.mean_accuracy},
                {"mean_average_precision", rep.mean_ap},
                {"routing_accuracy", rep.routing_accuracy},
                {"domains", domains},
                {"domain_confusion", confusion}};
}

FakeMode parse_fake_mode(const std::string& s) {
    if (s == "semantic") return FakeMode::semantic;
    if (s == "artifact") return FakeMode::artifact;
    if (s == "both") return FakeMode::both;
    throw InvalidInput("unknown fake mode '" + s + "'");
}

std::vector<SyntheticSample> eval_stream(const SyntheticGenerator& gen, const AppConfig& cfg,
                                         const std::string& fake_mode,
                                         const std::vector<std::size_t>& domains) {
    Rng rng = derived_rng(cfg.train.seed, kSeedEvalStream);
    if (fake_mode == "mixed") {
        if (domains.empty()) return gen.mixed_stream(cfg.eval_samples, 0.5, rng);
        return gen.mode_stream(domains, cfg.eval_samples, 0.5, FakeMode::both, rng);
    }
    std::vector<std::size_t> doms = domains;
    if (doms.empty())
        for (std::size_t d = 0; d < cfg.gen.n_domains; ++d) doms.push_back(d);
    return gen.mode_stream(doms, cfg.eval_samples, 0.5, parse_fake_mode(fake_mode), rng);
}

void write_report(const json& j, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << j.dump() << "\n";
    } else {
        std::ofstream os(out_path, std::ios::trunc);
        if (!os) throw InvalidInput("cannot open " + out_path);
        os << j.dump() << "\n";
    }
}

int run(int argc, char** argv) {
    CLI::App app{"Orthogonal mixture-of-experts adaptation on synthetic forgery data"};
    app.require_subcommand(1);
    app.footer(std::string("Config keys (key=value file given via --config):\n") +
               config_key_reference());

    GlobalArgs g;
    app.add_option("--config", g.config_path, "key=value config file")->check(CLI::ExistingFile);
    app.add_option("--checkpoint", g.checkpoint, "checkpoint path (default model.omoe)");
    app.add_option("--seed", g.seed, "override the config seed");

    // gen-data
    auto* gen_cmd = app.add_subcommand("gen-data", "dump a labeled dataset + labels CSV");
    std::string gen_out = "dataset.omoe", gen_labels = "labels.csv", gen_mode = "mixed";
    std::size_t gen_n = 1000;
    double gen_real_frac = 0.5;
    gen_cmd->add_option("--out", gen_out, "tensor container output path");
    gen_cmd->add_option("--labels", gen_labels, "labels CSV output path");
    gen_cmd->add_option("--n", gen_n, "sample count");
    gen_cmd->add_option("--real-frac", gen_real_frac, "fraction of real samples");
    gen_cmd->add_option("--fake-mode", gen_mode, "mixed | semantic | artifact | both");

    // pretrain
    auto* pre_cmd = app.add_subcommand("pretrain", "train the backbone on domain classification");

    // decompose
    auto* dec_cmd =
        app.add_subcommand("decompose", "split attention weights and seed the expert pool");

    // train-expert
    auto* te_cmd = app.add_subcommand("train-expert", "stage 1: specialize one expert");
    int te_index = -1;
    bool te_universal = false;
    std::string te_log;
    te_cmd->add_option("--index", te_index, "semantic expert index");
    te_cmd->add_flag("--universal", te_universal, "train the universal artifact expert");
    te_cmd->add_option("--log", te_log, "training-loss CSV path");

    // train-router
    auto* tr_cmd = app.add_subcommand("train-router", "stage 2: train router and head");
    std::string tr_log;
    tr_cmd->add_option("--log", tr_log, "training-loss CSV path");

    // eval
    auto* ev_cmd = app.add_subcommand("eval", "evaluate a trained checkpoint");
    std::string ev_mode = "full", ev_fake_mode = "mixed", ev_out;
    int ev_expert = 0;
    std::vector<std::size_t> ev_domains;
    ev_cmd->add_option("--mode", ev_mode, "full | universal-only | no-universal | expert-only");
    ev_cmd->add_option("--index", ev_expert, "expert index for --mode expert-only");
    ev_cmd->add_option("--fake-mode", ev_fake_mode, "mixed | semantic | artifact | both");
    ev_cmd->add_option("--domains", ev_domains, "restrict eval to these domains");
    ev_cmd->add_option("--out", ev_out, "write the JSON report here instead of stdout");

    // inspect-routing
    auto* ir_cmd = app.add_subcommand("inspect-routing", "per-sample routing table as CSV");
    std::size_t ir_n = 64;
    std::string ir_out;
    ir_cmd->add_option("--n", ir_n, "sample count");
    ir_cmd->add_option("--out", ir_out, "CSV path (default stdout)");

    // perturb-eval
    auto* pe_cmd = app.add_subcommand("perturb-eval", "evaluate under blur or extra noise");
    double pe_blur = 0.0, pe_noise = 0.0;
    std::string pe_out;
    pe_cmd->add_option("--blur-sigma", pe_blur, "Gaussian blur sigma");
    pe_cmd->add_option("--noise-std", pe_noise, "additive Gaussian noise std");
    pe_cmd->add_option("--out", pe_out, "write the JSON report here instead of stdout");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();
    CLI11_PARSE(app, argc, argv);

    AppConfig cfg = resolve_config(g);
    SyntheticGenerator gen(cfg.gen);

    if (gen_cmd->parsed()) {
        Rng rng = derived_rng(cfg.train.seed, kSeedEvalStream + 100);
        std::vector<SyntheticSample> data;
        if (gen_mode == "mixed")
            data = gen.mixed_stream(gen_n, gen_real_frac, rng);
        else {
            std::vector<std::size_t> doms;
            for (std::size_t d = 0; d < cfg.gen.n_domains; ++d) doms.push_back(d);
            data = gen.mode_stream(doms, gen_n, gen_real_frac, parse_fake_mode(gen_mode), rng);
        }
        ParamStore store;
        Matrix images(data.size(), cfg.gen.image_size * cfg.gen.image_size);
        for (std::size_t i = 0; i < data.size(); ++i)
            for (std::size_t k = 0; k < data[i].image.size(); ++k)
                images.at(i, k) = data[i].image[k];
        store.set("data.images", images);
        store.set("data.image_size", Matrix(1, 1, static_cast<double>(cfg.gen.image_size)));
        save_checkpoint(gen_out, store);
        std::ofstream labels(gen_labels, std::ios::trunc);
        if (!labels) throw InvalidInput("cannot open " + gen_labels);
        labels << "index,domain,label,fake_mode\n";
        for (std::size_t i = 0; i < data.size(); ++i)
            labels << i << ',' << data[i].domain << ',' << (data[i].fake ? "fake" : "real") << ','
                   << fake_mode_name(data[i].mode) << '\n';
        std::cout << "wrote " << data.size() << " samples to " << gen_out << " and " << gen_labels
                  << "\n";
        return 0;
    }

    if (pre_cmd->parsed()) {
        Rng tr = derived_rng(cfg.train.seed, kSeedPretrainData);
        Rng ho = derived_rng(cfg.train.seed, kSeedPretrainHoldout);
        auto train = gen.mixed_stream(cfg.samples_per_domain * cfg.gen.n_domains / 2, 0.5, tr);
        auto hold = gen.mixed_stream(cfg.eval_samples / 2, 0.5, ho);
        auto res = pretrain_backbone(train, hold, cfg.gen.n_domains, cfg.backbone, cfg.pretrain);
        ModelState model;
        model.bcfg = cfg.backbone;
        model.n_semantic = cfg.gen.n_domains;
        model.r = cfg.train.r;
        model.k_s = cfg.train.k_s;
        model.router_hidden = cfg.train.router_hidden;
        model.adapted = cfg.adapt_layers;
        if (model.adapted.empty()) model.adapted = all_attn_layer_ids(cfg.backbone);
        model.store = std::move(res.params);
        save_model(model, g.checkpoint);
        std::cout << json{{"holdout_domain_accuracy", res.holdout_accuracy},
                          {"checkpoint", g.checkpoint}}
                         .dump()
                  << "\n";
        return 0;
    }

    // every remaining command operates on an existing checkpoint
    ModelState model = load_model(g.checkpoint);

    if (dec_cmd->parsed()) {
        if (!cfg.adapt_layers.empty()) model.adapted = cfg.adapt_layers;
        setup_decomposition(model, cfg.train);
        save_model(model, g.checkpoint);
        std::cout << json{{"adapted_layers", model.adapted},
                          {"r", model.r},
                          {"k_s", model.k_s},
                          {"checkpoint", g.checkpoint}}
                         .dump()
                  << "\n";
        return 0;
    }

    if (te_cmd->parsed()) {
        if (te_universal == (te_index >= 0))
            throw InvalidInput("train-expert needs exactly one of --universal or --index");
        TrainConfig tc = cfg.train;
        tc.epochs_per_stage = cfg.epochs_stage1;
        std::vector<SyntheticSample> stream;
        int expert = kUniversalExpert;
        if (te_universal) {
            Rng rng = derived_rng(cfg.train.seed, kSeedUniversalStream);
            auto pairs = gen.purified_pairs(cfg.samples_per_domain / 2, rng);
            for (auto& [real, fake] : pairs) {
                stream.push_back(std::move(real));
                stream.push_back(std::move(fake));
            }
        } else {
            expert = te_index;
            Rng rng = derived_rng(cfg.train.seed,
                                  kSeedDomainStreamBase + static_cast<std::uint64_t>(te_index));
            stream = gen.domain_stream(static_cast<std::size_t>(te_index),
                                       cfg.samples_per_domain, 0.5, true, rng);
        }
        auto records = train_stage1(model, stream, expert, tc);
        if (!te_log.empty()) write_training_log(te_log, records);
        save_model(model, g.checkpoint);
        std::cout << json{{"expert", te_universal ? json("universal") : json(te_index)},
                          {"steps", records.size()},
                          {"final_cls", records.back().l_cls},
                          {"final_orth", records.back().l_orth},
                          {"checkpoint", g.checkpoint}}
                         .dump()
                  << "\n";
        return 0;
    }

    if (tr_cmd->parsed()) {
        TrainConfig tc = cfg.train;
        tc.epochs_per_stage = cfg.epochs_stage2;
        auto stream = stage2_stream(gen, cfg);
        std::vector<int> y_e;
        y_e.reserve(stream.size());
        for (const auto& s : stream) y_e.push_back(static_cast<int>(s.domain));
        auto records = train_stage2(model, stream, y_e, tc);
        if (!tr_log.empty()) write_training_log(tr_log, records);
        save_model(model, g.checkpoint);
        std::cout << json{{"steps", records.size()},
                          {"final_cls", records.back().l_cls},
                          {"final_gating", records.back().l_gating},
                          {"final_balance", records.back().l_balance},
                          {"checkpoint", g.checkpoint}}
                         .dump()
                  << "\n";
        return 0;
    }

    if (ev_cmd->parsed()) {
        EvalOptions opt;
        if (ev_mode == "full")
            opt.mode = ComposeMode::full;
        else if (ev_mode == "universal-only")
            opt.mode = ComposeMode::universal_only;
        else if (ev_mode == "no-universal")
            opt.mode = ComposeMode::no_universal;
        else if (ev_mode == "expert-only") {
            opt.mode = ComposeMode::expert_only;
            opt.expert_index = ev_expert;
        } else
            throw InvalidInput("unknown eval mode '" + ev_mode + "'");
        auto data = eval_stream(gen, cfg, ev_fake_mode, ev_domains);
        auto rep = evaluate(model, data, model.k_s, opt);
        json j = report_json(rep);
        j["mode"] = ev_mode;
        j["fake_mode"] = ev_fake_mode;
        write_report(j, ev_out);
        return 0;
    }

    if (ir_cmd->parsed()) {
        Rng rng = derived_rng(cfg.train.seed, kSeedEvalStream);
        auto data = gen.mixed_stream(ir_n, 0.5, rng);
        if (ir_out.empty()) {
            inspect_routing(model, data, model.k_s, std::cout);
        } else {
            std::ofstream os(ir_out, std::ios::trunc);
            if (!os) throw InvalidInput("cannot open " + ir_out);
            inspect_routing(model, data, model.k_s, os);
        }
        return 0;
    }

    if (pe_cmd->parsed()) {
        auto data = eval_stream(gen, cfg, "mixed", {});
        PerturbOptions popt;
        popt.blur_sigma = pe_blur;
        popt.noise_std = pe_noise;
        auto rep = perturb_eval(model, data, model.k_s, popt);
        json j = report_json(rep);
        j["blur_sigma"] = pe_blur;
        j["noise_std"] = pe_noise;
        write_report(j, pe_out);
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const omoe::CorruptCheckpoint& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const omoe::IncompleteCheckpoint& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const omoe::NumericalFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const omoe::PretrainDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
