#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/matrix.hpp"
#include "omoe/router.hpp"
#include "omoe/svd.hpp"

namespace omoe {

// Dense product u * diag(sigma) * v^T: columns of u scaled by sigma first,
// then the nt-matmul accumulates over k in ascending order. This order is
// part of the composition contract (the brute-force oracle mirrors it).
inline Matrix low_rank_product(const Matrix& u, const std::vector<double>& sigma,
                               const Matrix& v) {
    Matrix us = u;
    for (std::size_t r = 0; r < us.rows(); ++r)
        for (std::size_t c = 0; c < us.cols(); ++c) us.at(r, c) *= sigma[c];
    return matmul_nt(us, v);
}

/// A pretrained matrix split into a frozen principal part (top triplets of
/// the spectrum) and the residual basis (bottom r triplets) that seeds the
/// expert pool. principal_u / principal_v are kept for the orthogonality
/// constraint.
struct WeightDecomposition {
    Matrix w_principal;
    Matrix principal_u;
    Matrix principal_v;
    Matrix resid_u;
    std::vector<double> resid_sigma;
    Matrix resid_v;
    std::size_t r = 0;
    std::string layer_id;
};

enum class ExpertKind { semantic, universal };

/// One trainable low-rank factor triple. Rank of weight() is at most r by
/// construction regardless of training.
struct Expert {
    Matrix u;
    std::vector<double> sigma;
    Matrix v;
    ExpertKind kind = ExpertKind::semantic;
    std::size_t index = 0;  // meaningful for semantic experts
    bool trainable = false;

    Matrix weight() const { return low_rank_product(u, sigma, v); }
};

struct ExpertPool {
    std::vector<Expert> semantic;
    Expert universal;

    std::size_t n_semantic() const { return semantic.size(); }
};

inline WeightDecomposition decompose(const Matrix& w, std::size_t r,
                                     const std::string& layer_id = "") {
    const std::size_t m = std::min(w.rows(), w.cols());
    if (r < 1 || r >= m)
        throw InvalidRank("residual rank " + std::to_string(r) + " must be in [1, " +
                          std::to_string(m) + ")");
    if (!w.all_finite()) throw InvalidInput("decompose: non-finite weight");

    SvdResult s = svd(w);
    const std::size_t p = m - r;  // principal triplet count

    WeightDecomposition d;
    d.r = r;
    d.layer_id = layer_id;
    d.principal_u = Matrix(w.rows(), p);
    d.principal_v = Matrix(w.cols(), p);
    std::vector<double> principal_sigma(p);
    for (std::size_t c = 0; c < p; ++c) {
        principal_sigma[c] = s.sigma[c];
        for (std::size_t i = 0; i < w.rows(); ++i) d.principal_u.at(i, c) = s.u.at(i, c);
        for (std::size_t i = 0; i < w.cols(); ++i) d.principal_v.at(i, c) = s.v.at(i, c);
    }
    d.w_principal = low_rank_product(d.principal_u, principal_sigma, d.principal_v);

    d.resid_u = Matrix(w.rows(), r);
    d.resid_v = Matrix(w.cols(), r);
    d.resid_sigma.assign(r, 0.0);
    for (std::size_t c = 0; c < r; ++c) {
        d.resid_sigma[c] = s.sigma[p + c];
        for (std::size_t i = 0; i < w.rows(); ++i) d.resid_u.at(i, c) = s.u.at(i, p + c);
        for (std::size_t i = 0; i < w.cols(); ++i) d.resid_v.at(i, c) = s.v.at(i, p + c);
    }

    Matrix sum = d.w_principal + low_rank_product(d.resid_u, d.resid_sigma, d.resid_v);
    if (rel_frobenius_error(sum, w) > 1e-6 && frobenius_norm(w) > 0.0)
        throw NumericalFailure("decomposition does not reconstruct the input");
    return d;
}

/// Every expert starts as an independent copy of the residual triple, so a
/// composition with one fresh expert reproduces the original weight exactly.
/// All experts are non-trainable until a trainer activates one.
inline ExpertPool init_pool(const WeightDecomposition& d, std::size_t n_semantic) {
    if (n_semantic < 1) throw InvalidInput("init_pool needs at least one semantic expert");
    ExpertPool pool;
    pool.universal = Expert{d.resid_u, d.resid_sigma, d.resid_v, ExpertKind::universal, 0, false};
    pool.semantic.reserve(n_semantic);
    for (std::size_t i = 0; i < n_semantic; ++i)
        pool.semantic.push_back(
            Expert{d.resid_u, d.resid_sigma, d.resid_v, ExpertKind::semantic, i, false});
    return pool;
}

/// W_F = W_M + W_{R,U} + sum_{i in S} g_i * W_{R,i}.
///
/// Summation order (bitwise contract): start from w_principal, add the
/// universal expert's dense weight entrywise, then add g_i * W_i for each
/// selected index in the order given by gates.selected. Gate values are the
/// full-softmax outputs; no renormalization over the selected set.
inline Matrix compose_weight(const WeightDecomposition& d, const ExpertPool& pool,
                             const RouterOutput& gates) {
    for (std::size_t idx : gates.selected)
        if (idx >= pool.n_semantic())
            throw InvalidExpertIndex("selected expert " + std::to_string(idx) + " of " +
                                     std::to_string(pool.n_semantic()));
    Matrix w = d.w_principal;
    w += pool.universal.weight();
    for (std::size_t idx : gates.selected) {
        const Matrix wi = pool.semantic[idx].weight();
        const double g = gates.gates[idx];
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += g * wi[i];
    }
    return w;
}

/// Stage-1 composition: frozen principal plus the single active expert.
/// Other experts and the router contribute nothing.
inline Matrix compose_stage1(const WeightDecomposition& d, const Expert& active) {
    return d.w_principal + active.weight();
}

}  // namespace omoe
