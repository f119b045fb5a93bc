#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "omoe/backbone.hpp"
#include "omoe/decomp.hpp"
#include "omoe/errors.hpp"
#include "omoe/losses.hpp"
#include "omoe/router.hpp"
#include "omoe/synthdata.hpp"
#include "omoe/trainer.hpp"

namespace omoe {

/// Ranking AP with analytic tie handling: within a tied-score block the
/// expected precision over all orderings of the block is used, so an
/// uninformative constant scorer converges to the positive prevalence.
/// Positives are ranked by descending score; AP is the mean precision at
/// each positive.
inline double average_precision(std::vector<std::pair<double, int>> scored) {
    std::size_t n_pos = 0;
    for (const auto& [s, y] : scored) n_pos += y ? 1 : 0;
    if (scored.empty() || n_pos == 0) return 0.0;
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    double total = 0.0;
    double q = 0.0;  // positives before the current block
    std::size_t a = 1;  // 1-based rank of the block start
    std::size_t i = 0;
    while (i < scored.size()) {
        std::size_t j = i;
        std::size_t p = 0;
        while (j < scored.size() && scored[j].first == scored[i].first) {
            p += scored[j].second ? 1 : 0;
            ++j;
        }
        const std::size_t g = j - i;
        if (p > 0) {
            const double pd = static_cast<double>(p), gd = static_cast<double>(g);
            for (std::size_t k = 1; k <= g; ++k) {
                const double expected_before =
                    g > 1 ? (static_cast<double>(k - 1)) * (pd - 1.0) / (gd - 1.0) : 0.0;
                total += (pd / gd) * (q + 1.0 + expected_before) /
                         static_cast<double>(a + k - 1);
            }
        }
        q += static_cast<double>(p);
        a += g;
        i = j;
    }
    return total / static_cast<double>(n_pos);
}

enum class ComposeMode { full, universal_only, no_universal, expert_only };

inline const char* compose_mode_name(ComposeMode m) {
    switch (m) {
        case ComposeMode::full: return "full";
        case ComposeMode::universal_only: return "universal-only";
        case ComposeMode::no_universal: return "no-universal";
        case ComposeMode::expert_only: return "expert-only";
    }
    return "?";
}

struct EvalOptions {
    ComposeMode mode = ComposeMode::full;
    int expert_index = 0;        // for expert_only
    bool renormalize = false;    // ablation: renormalize gates over the selection
};

struct DomainReport {
    std::size_t n_real = 0, n_fake = 0;
    double real_accuracy = 0.0;
    double fake_accuracy = 0.0;
    double overall_accuracy = 0.0;
    double ap = 0.0;
};

struct EvalReport {
    std::vector<DomainReport> domains;
    double overall_accuracy = 0.0;
    double real_accuracy = 0.0;
    double fake_accuracy = 0.0;
    double mean_accuracy = 0.0;  // mean of per-domain overall
    double mean_ap = 0.0;
    double routing_accuracy = 0.0;  // router argmax vs the domain label
    Matrix domain_confusion;        // rows: true domain, cols: routed domain
};

struct SampleVerdict {
    std::size_t index = 0;
    std::size_t domain = 0;
    bool fake = false;
    FakeMode mode = FakeMode::none;
    RouterOutput routing;
    double fake_score = 0.0;
    bool correct = false;
};

namespace detail {

inline std::map<std::string, Matrix> composed_overrides(const ModelState& m,
                                                        const RouterOutput& routing,
                                                        const EvalOptions& opt) {
    RouterOutput gates = routing;
    if (opt.renormalize && !gates.selected.empty()) {
        double sum = 0.0;
        for (std::size_t idx : gates.selected) sum += gates.gates[idx];
        if (sum > 0.0)
            for (std::size_t idx : gates.selected) gates.gates[idx] /= sum;
    }
    std::map<std::string, Matrix> overrides;
    for (const auto& layer_id : m.adapted) {
        const auto d = decomp_view(m.store, layer_id);
        Matrix w = d.w_principal;
        switch (opt.mode) {
            case ComposeMode::full:
                w = compose_weight(d, pool_view(m.store, layer_id, m.n_semantic), gates);
                break;
            case ComposeMode::universal_only:
                w += expert_view(m.store, layer_id, kUniversalExpert).weight();
                break;
            case ComposeMode::no_universal: {
                const auto pool = pool_view(m.store, layer_id, m.n_semantic);
                for (std::size_t idx : gates.selected) {
                    const Matrix wi = pool.semantic[idx].weight();
                    const double g = gates.gates[idx];
                    for (std::size_t k = 0; k < w.size(); ++k) w[k] += g * wi[k];
                }
                break;
            }
            case ComposeMode::expert_only:
                w += expert_view(m.store, layer_id, opt.expert_index).weight();
                break;
        }
        overrides[layer_id_to_weight_name(layer_id)] = std::move(w);
    }
    return overrides;
}

}  // namespace detail

/// Route and classify one sample against the trained system.
inline SampleVerdict judge_sample(const ModelState& m, const SyntheticSample& s, std::size_t k_s,
                                  const EvalOptions& opt = {}) {
    SampleVerdict v;
    v.domain = s.domain;
    v.fake = s.fake;
    v.mode = s.mode;
    Matrix frozen_feat = encode(s.image, m.bcfg, m.store);
    v.routing = route(frozen_feat, router_view(m.store), k_s);
    auto overrides = detail::composed_overrides(m, v.routing, opt);
    Matrix feat = encode(s.image, m.bcfg, m.store, &overrides);
    Matrix logits = classify(feat, m.store.at("head.weight"), m.store.at("head.bias"));
    // fake probability through the row softmax
    const double mx = std::max(logits.at(0, 0), logits.at(0, 1));
    const double e0 = std::exp(logits.at(0, 0) - mx), e1 = std::exp(logits.at(0, 1) - mx);
    v.fake_score = e1 / (e0 + e1);
    v.correct = (v.fake_score > 0.5) == s.fake;
    return v;
}

inline EvalReport evaluate(const ModelState& m, const std::vector<SyntheticSample>& data,
                           std::size_t k_s, const EvalOptions& opt = {}) {
    if (data.empty()) throw InvalidInput("evaluate on empty dataset");
    std::size_t n_domains = 0;
    for (const auto& s : data) n_domains = std::max(n_domains, s.domain + 1);
    n_domains = std::max(n_domains, m.n_semantic);

    EvalReport rep;
    rep.domains.resize(n_domains);
    rep.domain_confusion = Matrix(n_domains, m.n_semantic);
    std::vector<std::vector<std::pair<double, int>>> scored(n_domains);
    std::size_t hits = 0, real_hits = 0, fake_hits = 0, n_real = 0, n_fake = 0, route_hits = 0;
    std::vector<std::size_t> domain_hits(n_domains, 0), domain_n(n_domains, 0);

    for (const auto& s : data) {
        const SampleVerdict v = judge_sample(m, s, k_s, opt);
        auto& d = rep.domains[s.domain];
        scored[s.domain].push_back({v.fake_score, s.fake ? 1 : 0});
        hits += v.correct;
        domain_hits[s.domain] += v.correct;
        ++domain_n[s.domain];
        if (s.fake) {
            ++n_fake;
            ++d.n_fake;
            fake_hits += v.correct;
            d.fake_accuracy += v.correct;
        } else {
            ++n_real;
            ++d.n_real;
            real_hits += v.correct;
            d.real_accuracy += v.correct;
        }
        const std::size_t routed = argmax_index(v.routing.logits);
        rep.domain_confusion.at(s.domain, routed) += 1.0;
        route_hits += routed == s.domain ? 1 : 0;
    }

    double acc_sum = 0.0, ap_sum = 0.0;
    std::size_t ap_domains = 0;
    for (std::size_t d = 0; d < n_domains; ++d) {
        auto& dr = rep.domains[d];
        dr.real_accuracy = dr.n_real ? dr.real_accuracy / static_cast<double>(dr.n_real) : 0.0;
        dr.fake_accuracy = dr.n_fake ? dr.fake_accuracy / static_cast<double>(dr.n_fake) : 0.0;
        dr.overall_accuracy =
            domain_n[d] ? static_cast<double>(domain_hits[d]) / static_cast<double>(domain_n[d])
                        : 0.0;
        dr.ap = average_precision(scored[d]);
        if (domain_n[d]) {
            acc_sum += dr.overall_accuracy;
            if (dr.n_fake) {
                ap_sum += dr.ap;
                ++ap_domains;
            }
        }
    }
    const std::size_t active_domains =
        static_cast<std::size_t>(std::count_if(domain_n.begin(), domain_n.end(),
                                               [](std::size_t n) { return n > 0; }));
    rep.overall_accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
    rep.real_accuracy = n_real ? static_cast<double>(real_hits) / static_cast<double>(n_real) : 0.0;
    rep.fake_accuracy = n_fake ? static_cast<double>(fake_hits) / static_cast<double>(n_fake) : 0.0;
    rep.mean_accuracy = active_domains ? acc_sum / static_cast<double>(active_domains) : 0.0;
    rep.mean_ap = ap_domains ? ap_sum / static_cast<double>(ap_domains) : 0.0;
    rep.routing_accuracy = static_cast<double>(route_hits) / static_cast<double>(data.size());
    return rep;
}

/// Per-sample routing table as CSV; gates echo route() exactly.
inline void inspect_routing(const ModelState& m, const std::vector<SyntheticSample>& data,
                            std::size_t k_s, std::ostream& os) {
    os << "index,domain,y_e,fake,fake_mode";
    for (std::size_t e = 0; e < m.n_semantic; ++e) os << ",gate" << e;
    os << ",selected,argmax,routed_correct\n";
    os << std::setprecision(17);
    const GatingNet net = router_view(m.store);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& s = data[i];
        Matrix feat = encode(s.image, m.bcfg, m.store);
        RouterOutput r = route(feat, net, k_s);
        os << i << ',' << s.domain << ',' << s.domain << ',' << (s.fake ? 1 : 0) << ','
           << fake_mode_name(s.mode);
        for (double g : r.gates) os << ',' << g;
        os << ',';
        for (std::size_t k = 0; k < r.selected.size(); ++k)
            os << (k ? ";" : "") << r.selected[k];
        const std::size_t arg = argmax_index(r.logits);
        os << ',' << arg << ',' << (arg == s.domain ? 1 : 0) << '\n';
    }
}

/// Separable Gaussian blur, kernel radius ceil(3 sigma), reflect padding
/// (mirror without repeating the edge pixel). sigma = 0 returns the input
/// untouched.
inline Matrix gaussian_blur(const Matrix& img, double sigma) {
    if (sigma < 0.0) throw InvalidInput("blur sigma must be nonnegative");
    if (sigma == 0.0) return img;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * (k * k) / (sigma * sigma));
        sum += kernel[k + radius];
    }
    for (double& w : kernel) w /= sum;

    const int n = static_cast<int>(img.rows());
    auto reflect = [n](int i) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i;
            if (i >= n) i = 2 * n - 2 - i;
        }
        return i;
    };
    Matrix tmp(img.rows(), img.cols());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k)
                acc += kernel[k + radius] * img.at(i, reflect(j + k));
            tmp.at(i, j) = acc;
        }
    Matrix out(img.rows(), img.cols());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k)
                acc += kernel[k + radius] * tmp.at(reflect(i + k), j);
            out.at(i, j) = acc;
        }
    return out;
}

struct PerturbOptions {
    double blur_sigma = 0.0;
    double noise_std = 0.0;
    std::uint64_t noise_seed = 99;
};

/// Robustness probe: blur and/or extra noise applied to a dataset copy, then
/// the standard evaluation. Zero-strength settings reproduce the clean
/// report exactly.
inline EvalReport perturb_eval(const ModelState& m, const std::vector<SyntheticSample>& data,
                               std::size_t k_s, const PerturbOptions& popt,
                               const EvalOptions& opt = {}) {
    if (popt.blur_sigma < 0.0 || popt.noise_std < 0.0)
        throw InvalidInput("perturbation strength must be nonnegative");
    if (popt.blur_sigma == 0.0 && popt.noise_std == 0.0) return evaluate(m, data, k_s, opt);
    std::vector<SyntheticSample> perturbed = data;
    Rng rng = derived_rng(popt.noise_seed, 0xbbb);
    for (auto& s : perturbed) {
        if (popt.blur_sigma > 0.0) s.image = gaussian_blur(s.image, popt.blur_sigma);
        if (popt.noise_std > 0.0) {
            for (std::size_t i = 0; i < s.image.size(); ++i) {
                double v = s.image[i] + popt.noise_std * rng.normal();
                s.image[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            }
        }
    }
    return evaluate(m, perturbed, k_s, opt);
}

}  // namespace omoe
