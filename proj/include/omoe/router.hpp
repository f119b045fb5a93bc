#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/matrix.hpp"
#include "omoe/rng.hpp"
#include "omoe/tape.hpp"

namespace omoe {

/// Two-layer gating MLP mapping a frozen pooled feature to one logit per
/// semantic expert. A single instance routes for every adapted layer.
struct GatingNet {
    Matrix layer1;  // hidden x embed_dim
    Matrix bias1;   // 1 x hidden
    Matrix layer2;  // n_semantic x hidden
    Matrix bias2;   // 1 x n_semantic

    std::size_t n_semantic() const { return layer2.rows(); }
    std::size_t hidden() const { return layer1.rows(); }
    std::size_t embed_dim() const { return layer1.cols(); }

    static GatingNet init(std::size_t n_semantic, std::size_t embed_dim, std::size_t hidden,
                          Rng& rng) {
        GatingNet net;
        net.layer1 = rng.gaussian_matrix(hidden, embed_dim, 0.2);
        net.bias1 = Matrix(1, hidden);
        net.layer2 = rng.gaussian_matrix(n_semantic, hidden, 0.2);
        net.bias2 = Matrix(1, n_semantic);
        return net;
    }
};

struct RouterOutput {
    std::vector<double> logits;         // z_x
    std::vector<double> gates;          // full softmax of the logits
    std::vector<std::size_t> selected;  // top-k_s indices, descending gate, ties to lower index
};

/// Batch routing statistics feeding the load-balancing loss: f[i] is the
/// fraction of inputs whose argmax logit lands on expert i, p[i] the mean
/// gate probability of expert i.
struct BatchRoutingStats {
    std::vector<double> f;
    std::vector<double> p;
    std::size_t batch_size = 0;
};

inline std::vector<double> softmax(const std::vector<double>& z) {
    const double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> out(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - mx);
        sum += out[i];
    }
    for (double& g : out) g /= sum;
    return out;
}

inline std::vector<std::size_t> top_k_indices(const std::vector<double>& gates, std::size_t k) {
    std::vector<std::size_t> idx(gates.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return gates[a] > gates[b];  // stable: ties keep the lower index first
    });
    idx.resize(k);
    return idx;
}

inline std::vector<double> router_logits(const Matrix& feature, const GatingNet& net) {
    if (feature.rows() != 1 || feature.cols() != net.embed_dim())
        throw InvalidInput("router feature dimension mismatch");
    Matrix h = matmul_nt(feature, net.layer1);
    for (std::size_t c = 0; c < h.cols(); ++c)
        h.at(0, c) = Tape::gelu_fwd(h.at(0, c) + net.bias1.at(0, c));
    Matrix z = matmul_nt(h, net.layer2);
    std::vector<double> out(net.n_semantic());
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = z.at(0, c) + net.bias2.at(0, c);
    return out;
}

inline RouterOutput route(const Matrix& feature, const GatingNet& net, std::size_t k_s) {
    if (k_s < 1 || k_s > net.n_semantic())
        throw InvalidTopK("k_s = " + std::to_string(k_s) + " with " +
                          std::to_string(net.n_semantic()) + " semantic experts");
    RouterOutput out;
    out.logits = router_logits(feature, net);
    out.gates = softmax(out.logits);
    out.selected = top_k_indices(out.gates, k_s);
    return out;
}

inline RouterOutput route_batch_one(const std::vector<double>& logits, std::size_t k_s) {
    RouterOutput out;
    out.logits = logits;
    out.gates = softmax(logits);
    out.selected = top_k_indices(out.gates, k_s);
    return out;
}

inline std::size_t argmax_index(const std::vector<double>& v) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[arg]) arg = i;
    return arg;
}

inline std::pair<std::vector<RouterOutput>, BatchRoutingStats> route_batch(
    const std::vector<Matrix>& features, const GatingNet& net, std::size_t k_s) {
    if (features.empty()) throw InvalidInput("route_batch on empty batch");
    std::vector<RouterOutput> outs;
    outs.reserve(features.size());
    BatchRoutingStats stats;
    stats.batch_size = features.size();
    stats.f.assign(net.n_semantic(), 0.0);
    stats.p.assign(net.n_semantic(), 0.0);
    for (const Matrix& f : features) {
        outs.push_back(route(f, net, k_s));
        const RouterOutput& r = outs.back();
        stats.f[argmax_index(r.logits)] += 1.0;
        for (std::size_t i = 0; i < r.gates.size(); ++i) stats.p[i] += r.gates[i];
    }
    const double inv = 1.0 / static_cast<double>(features.size());
    for (double& x : stats.f) x *= inv;
    for (double& x : stats.p) x *= inv;
    return {std::move(outs), std::move(stats)};
}

/// Tape-side router forward used during Stage 2. The caller owns the
/// parameter vars; the returned var is the logit row (1 x n_semantic).
inline Tape::Var route_on_tape(Tape& t, Tape::Var feature, Tape::Var layer1, Tape::Var bias1,
                               Tape::Var layer2, Tape::Var bias2) {
    auto h = t.gelu(t.add_rowvec(t.matmul_nt(feature, layer1), bias1));
    return t.add_rowvec(t.matmul_nt(h, layer2), bias2);
}

}  // namespace omoe
