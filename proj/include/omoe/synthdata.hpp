#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/matrix.hpp"
#include "omoe/rng.hpp"

namespace omoe {

enum class FakeMode { none, semantic, artifact, both };

inline const char* fake_mode_name(FakeMode m) {
    switch (m) {
        case FakeMode::none: return "none";
        case FakeMode::semantic: return "semantic";
        case FakeMode::artifact: return "artifact";
        case FakeMode::both: return "both";
    }
    return "?";
}

struct SyntheticSample {
    Matrix image;  // image_size x image_size, values in [0,1]
    std::size_t domain = 0;
    bool fake = false;
    FakeMode mode = FakeMode::none;
};

/// Synthetic forgery-detection generator. Every sample carries a
/// domain-indexed low-frequency sinusoid; fakes add either a phase
/// distortion of that carrier (the quadrature component, domain-specific)
/// or a fixed global checkerboard (content-agnostic), or both. All cue
/// patterns are exactly orthogonal to each other on the pixel grid.
struct GeneratorConfig {
    std::size_t n_domains = 2;
    std::size_t image_size = 16;
    double base_amplitude = 0.16;        // carrier strength
    double semantic_flaw_amplitude = 0.11;  // quadrature (phase-distortion) strength
    double artifact_amplitude = 0.10;    // checkerboard strength
    double noise_std = 0.05;
    double amplitude_jitter = 0.25;      // relative carrier jitter per sample
    double margin_sigmas = 6.0;          // required carrier-to-noise separation
    std::uint64_t seed = 7;
};

namespace detail {

// Integer frequency pairs; all distinct, none at the checkerboard's
// Nyquist mode, so the templates form an orthogonal family.
inline std::pair<int, int> domain_freq(std::size_t domain) {
    static const std::pair<int, int> freqs[] = {{1, 0}, {0, 1}, {1, 1}, {2, 1},
                                                {2, 0}, {0, 2}, {2, 2}, {1, 2}};
    return freqs[domain % 8];
}

}  // namespace detail

/// Deterministic value-semantics generator; owns nothing but the config.
class SyntheticGenerator {
public:
    explicit SyntheticGenerator(const GeneratorConfig& cfg) : cfg_(cfg) {
        if (cfg.n_domains < 1 || cfg.n_domains > 8)
            throw InvalidInput("n_domains must be in [1,8]");
        if (cfg.image_size < 4) throw InvalidInput("image_size too small");
        if (cfg.base_amplitude < 0 || cfg.semantic_flaw_amplitude < 0 ||
            cfg.artifact_amplitude < 0 || cfg.noise_std < 0)
            throw InvalidInput("amplitudes must be nonnegative");
        build_templates();
        check_orthogonality();
        check_margin();
    }

    const GeneratorConfig& config() const { return cfg_; }
    const Matrix& carrier(std::size_t domain) const { return carriers_[domain]; }
    const Matrix& quadrature(std::size_t domain) const { return quadratures_[domain]; }
    const Matrix& checkerboard() const { return checker_; }

    /// One sample. The rng stream consumption is identical for every
    /// fake_mode (jitter draw, then one noise draw per pixel), so samples
    /// drawn from the same stream state differ only by the planted cues.
    SyntheticSample sample(std::size_t domain, FakeMode mode, Rng& rng) const {
        if (domain >= cfg_.n_domains) throw InvalidInput("domain out of range");
        SyntheticSample s;
        s.domain = domain;
        s.mode = mode;
        s.fake = mode != FakeMode::none;
        s.image = raw_image(domain, mode, rng);
        clamp01(s.image);
        return s;
    }

    /// Pre-clamp pixel field; used by tests for exact cue arithmetic.
    Matrix raw_image(std::size_t domain, FakeMode mode, Rng& rng) const {
        const std::size_t n = cfg_.image_size;
        const double jitter = 1.0 + cfg_.amplitude_jitter * (2.0 * rng.uniform() - 1.0);
        const bool semantic = mode == FakeMode::semantic || mode == FakeMode::both;
        const bool artifact = mode == FakeMode::artifact || mode == FakeMode::both;
        Matrix img(n, n);
        const Matrix& t = carriers_[domain];
        const Matrix& q = quadratures_[domain];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double v = 0.5 + jitter * cfg_.base_amplitude * t.at(i, j);
                if (semantic) v += cfg_.semantic_flaw_amplitude * q.at(i, j);
                if (artifact) v += cfg_.artifact_amplitude * checker_.at(i, j);
                v += cfg_.noise_std * rng.normal();
                img.at(i, j) = v;
            }
        return img;
    }

    /// Real/artifact-fake pairs sharing the exact carrier realization and
    /// noise field; the two images differ only on the checkerboard.
    std::vector<std::pair<SyntheticSample, SyntheticSample>> purified_pairs(std::size_t n,
                                                                            Rng& rng) const {
        std::vector<std::pair<SyntheticSample, SyntheticSample>> out;
        out.reserve(n);
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t domain = rng.below(cfg_.n_domains);
            Matrix base = raw_image(domain, FakeMode::none, rng);
            SyntheticSample real{base, domain, false, FakeMode::none};
            SyntheticSample fake{base, domain, true, FakeMode::artifact};
            for (std::size_t i = 0; i < fake.image.size(); ++i)
                fake.image[i] += cfg_.artifact_amplitude * checker_[i];
            clamp01(real.image);
            clamp01(fake.image);
            out.emplace_back(std::move(real), std::move(fake));
        }
        return out;
    }

    /// Hard-sampling stream: every sample from one domain; fakes carry the
    /// semantic cue, plus the artifact cue when semantic_only is false.
    std::vector<SyntheticSample> domain_stream(std::size_t domain, std::size_t n,
                                               double real_frac, bool semantic_only,
                                               Rng& rng) const {
        if (domain >= cfg_.n_domains) throw InvalidInput("domain out of range");
        if (real_frac < 0.0 || real_frac > 1.0) throw InvalidInput("real_frac outside [0,1]");
        std::vector<SyntheticSample> out;
        out.reserve(n);
        for (std::size_t k = 0; k < n; ++k) {
            const bool fake = rng.uniform() >= real_frac;
            const FakeMode mode =
                !fake ? FakeMode::none : (semantic_only ? FakeMode::semantic : FakeMode::both);
            out.push_back(sample(domain, mode, rng));
        }
        return out;
    }

    /// All-domain stream with mixed fake modes; the Stage-2 and evaluation
    /// diet. Fakes split evenly between semantic, artifact and both.
    std::vector<SyntheticSample> mixed_stream(std::size_t n, double real_frac, Rng& rng) const {
        std::vector<SyntheticSample> out;
        out.reserve(n);
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t domain = rng.below(cfg_.n_domains);
            const bool fake = rng.uniform() >= real_frac;
            FakeMode mode = FakeMode::none;
            if (fake) {
                const auto pick = rng.below(3);
                mode = pick == 0 ? FakeMode::semantic
                                 : (pick == 1 ? FakeMode::artifact : FakeMode::both);
            }
            out.push_back(sample(domain, mode, rng));
        }
        return out;
    }

    /// Single-mode stream over chosen domains; evaluation subsets.
    std::vector<SyntheticSample> mode_stream(const std::vector<std::size_t>& domains,
                                             std::size_t n, double real_frac, FakeMode fake_mode,
                                             Rng& rng) const {
        if (domains.empty()) throw InvalidInput("no domains given");
        std::vector<SyntheticSample> out;
        out.reserve(n);
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t domain = domains[rng.below(domains.size())];
            const bool fake = rng.uniform() >= real_frac;
            out.push_back(sample(domain, fake ? fake_mode : FakeMode::none, rng));
        }
        return out;
    }

private:
    void build_templates() {
        const std::size_t n = cfg_.image_size;
        const double two_pi = 2.0 * 3.14159265358979323846;
        carriers_.clear();
        quadratures_.clear();
        for (std::size_t d = 0; d < cfg_.n_domains; ++d) {
            auto [fu, fv] = detail::domain_freq(d);
            Matrix t(n, n), q(n, n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double phase =
                        two_pi * (fu * static_cast<double>(i) + fv * static_cast<double>(j)) /
                        static_cast<double>(n);
                    t.at(i, j) = std::sin(phase);
                    q.at(i, j) = std::cos(phase);
                }
            carriers_.push_back(std::move(t));
            quadratures_.push_back(std::move(q));
        }
        checker_ = Matrix(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) checker_.at(i, j) = ((i + j) % 2 == 0) ? 1.0 : -1.0;
    }

    // Decoupling by construction: the artifact pattern has zero inner
    // product with every domain template (and its quadrature).
    void check_orthogonality() const {
        auto ip = [](const Matrix& a, const Matrix& b) {
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
            return s;
        };
        for (std::size_t d = 0; d < cfg_.n_domains; ++d) {
            if (std::abs(ip(carriers_[d], checker_)) > 1e-9 ||
                std::abs(ip(quadratures_[d], checker_)) > 1e-9)
                throw InvalidInput("artifact cue not orthogonal to domain templates");
            for (std::size_t e = d + 1; e < cfg_.n_domains; ++e)
                if (std::abs(ip(carriers_[d], carriers_[e])) > 1e-9)
                    throw InvalidInput("domain templates not mutually orthogonal");
        }
    }

    // Matched-filter margin: the weakest carrier response must clear the
    // per-filter noise by margin_sigmas standard deviations, which keeps
    // the domains linearly separable at the configured noise level.
    void check_margin() const {
        if (cfg_.noise_std == 0.0) return;
        for (std::size_t d = 0; d < cfg_.n_domains; ++d) {
            const double tn = frobenius_norm(carriers_[d]);
            const double weakest = (1.0 - cfg_.amplitude_jitter) * cfg_.base_amplitude * tn;
            if (weakest < cfg_.margin_sigmas * cfg_.noise_std)
                throw InvalidInput("carrier margin below " + std::to_string(cfg_.margin_sigmas) +
                                   " noise sigmas; domains may not be separable");
        }
    }

    static void clamp01(Matrix& img) {
        for (std::size_t i = 0; i < img.size(); ++i)
            img[i] = img[i] < 0.0 ? 0.0 : (img[i] > 1.0 ? 1.0 : img[i]);
    }

    GeneratorConfig cfg_;
    std::vector<Matrix> carriers_;
    std::vector<Matrix> quadratures_;
    Matrix checker_;
};

}  // namespace omoe
