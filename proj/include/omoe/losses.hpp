#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "omoe/decomp.hpp"
#include "omoe/errors.hpp"
#include "omoe/matrix.hpp"
#include "omoe/router.hpp"

namespace omoe {

struct LossConfig {
    double lambda1 = 0.01;  // orthogonality weight
    double lambda2 = 0.1;   // gating supervision weight
    double lambda3 = 0.1;   // load-balancing weight

    void validate() const {
        if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
            throw InvalidInput("loss weights must be nonnegative");
    }
};

// Mean cross-entropy over rows of a logit matrix, log-sum-exp form.
inline double cross_entropy_mean_value(const Matrix& logits, const std::vector<int>& labels) {
    if (labels.size() != logits.rows()) throw InvalidInput("label count != batch size");
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= logits.cols())
            throw InvalidInput("label out of range");
        double mx = logits.at(r, 0);
        for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits.at(r, c));
        double lse = 0.0;
        for (std::size_t c = 0; c < logits.cols(); ++c) lse += std::exp(logits.at(r, c) - mx);
        total += mx + std::log(lse) - logits.at(r, static_cast<std::size_t>(y));
    }
    return total / static_cast<double>(logits.rows());
}

/// Real/fake classification loss over (batch x 2) logits, labels in {0,1}.
inline double loss_cls(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.cols() != 2) throw InvalidInput("classification logits must have 2 columns");
    return cross_entropy_mean_value(logits, labels);
}

/// Routing supervision loss over (batch x n_semantic) logits against the
/// ground-truth expert labels.
inline double loss_gating(const Matrix& router_logits, const std::vector<int>& expert_labels) {
    return cross_entropy_mean_value(router_logits, expert_labels);
}

inline double orth_pair_term(const Matrix& ua, const Matrix& ub) {
    if (ua.rows() != ub.rows()) throw InvalidInput("orthogonality basis row mismatch");
    Matrix g = matmul_tn(ua, ub);
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * g[i];
    return s;
}

/// Orthogonality constraint of an active expert against every previously
/// frozen basis: the principal singular-vector blocks, plus (for semantic
/// experts) the universal expert and all lower-indexed semantic experts.
/// Each term is |Ua^T Uj|_F^2 + |Va^T Vj|_F^2.
inline double loss_orth(const Expert& active, const ExpertPool& pool, const Matrix& principal_u,
                        const Matrix& principal_v, bool include_universal = true) {
    double total = orth_pair_term(active.u, principal_u) + orth_pair_term(active.v, principal_v);
    if (active.kind == ExpertKind::semantic) {
        if (include_universal)
            total += orth_pair_term(active.u, pool.universal.u) +
                     orth_pair_term(active.v, pool.universal.v);
        for (std::size_t j = 0; j < active.index; ++j)
            total += orth_pair_term(active.u, pool.semantic[j].u) +
                     orth_pair_term(active.v, pool.semantic[j].v);
    }
    return total;
}

/// Load-balancing regularizer: n_semantic * sum_i F_i * P_i. F is an argmax
/// count and is treated as a constant by the trainer; only P carries
/// gradient.
inline double loss_balance(const BatchRoutingStats& stats) {
    if (stats.f.size() != stats.p.size()) throw InvalidInput("routing stats size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < stats.f.size(); ++i) s += stats.f[i] * stats.p[i];
    return static_cast<double>(stats.f.size()) * s;
}

inline double stage1_objective(double cls, double orth, const LossConfig& cfg) {
    return cls + cfg.lambda1 * orth;
}

inline double stage2_objective(double cls, double gating, double balance, const LossConfig& cfg) {
    return cls + cfg.lambda2 * gating + cfg.lambda3 * balance;
}

}  // namespace omoe
