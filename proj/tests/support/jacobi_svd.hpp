#pragma once

// Slow one-sided Jacobi SVD, written independently of omoe/svd.hpp so the
// two can cross-check each other. Orthogonalizes column pairs with plane
// rotations until every pair is numerically orthogonal.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "omoe/matrix.hpp"

namespace oracle {

struct JacobiSvd {
    omoe::Matrix u;
    std::vector<double> sigma;
    omoe::Matrix v;
};

inline JacobiSvd jacobi_svd_tall(const omoe::Matrix& input) {
    const std::size_t m = input.rows(), n = input.cols();
    omoe::Matrix a = input;
    omoe::Matrix v = omoe::Matrix::identity(n);

    const double tol = 1e-14;
    for (int sweep = 0; sweep < 120; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    app += a.at(i, p) * a.at(i, p);
                    aqq += a.at(i, q) * a.at(i, q);
                    apq += a.at(i, p) * a.at(i, q);
                }
                if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t =
                    (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double ap = a.at(i, p), aq = a.at(i, q);
                    a.at(i, p) = c * ap - s * aq;
                    a.at(i, q) = s * ap + c * aq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v.at(i, p), vq = v.at(i, q);
                    v.at(i, p) = c * vp - s * vq;
                    v.at(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }

    JacobiSvd r;
    r.sigma.assign(n, 0.0);
    r.u = omoe::Matrix(m, n);
    r.v = omoe::Matrix(n, n);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += a.at(i, j) * a.at(i, j);
        norms[j] = std::sqrt(s);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    for (std::size_t col = 0; col < n; ++col) {
        const std::size_t src = order[col];
        r.sigma[col] = norms[src];
        for (std::size_t i = 0; i < n; ++i) r.v.at(i, col) = v.at(i, src);
        if (norms[src] > 0.0) {
            for (std::size_t i = 0; i < m; ++i) r.u.at(i, col) = a.at(i, src) / norms[src];
        }
    }

    // Complete u columns for zero singular values by Gram-Schmidt against
    // the standard basis, so orthonormality holds even for rank-deficient input.
    for (std::size_t col = 0; col < n; ++col) {
        if (r.sigma[col] > 0.0) continue;
        for (std::size_t e = 0; e < m; ++e) {
            std::vector<double> cand(m, 0.0);
            cand[e] = 1.0;
            // Unfilled zero columns contribute a zero dot, so projecting
            // against every column is safe.
            for (std::size_t j = 0; j < n; ++j) {
                double dot = 0.0;
                for (std::size_t i = 0; i < m; ++i) dot += cand[i] * r.u.at(i, j);
                for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * r.u.at(i, j);
            }
            double nrm = 0.0;
            for (double x : cand) nrm += x * x;
            nrm = std::sqrt(nrm);
            if (nrm > 1e-6) {
                for (std::size_t i = 0; i < m; ++i) r.u.at(i, col) = cand[i] / nrm;
                break;
            }
        }
    }
    return r;
}

inline JacobiSvd jacobi_svd(const omoe::Matrix& input) {
    if (input.rows() >= input.cols()) return jacobi_svd_tall(input);
    JacobiSvd t = jacobi_svd_tall(omoe::transpose(input));
    JacobiSvd r;
    r.sigma = t.sigma;
    r.u = t.v;
    r.v = t.u;
    return r;
}

}  // namespace oracle
