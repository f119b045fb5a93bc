#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/matrix.hpp"

namespace omoe {

/// Thin SVD of an O x I matrix: u (O x m) and v (I x m) with orthonormal
/// columns, sigma the m = min(O, I) singular values in descending order.
struct SvdResult {
    Matrix u;
    std::vector<double> sigma;
    Matrix v;

    Matrix reconstruct() const {
        Matrix us = u;
        for (std::size_t r = 0; r < us.rows(); ++r)
            for (std::size_t c = 0; c < us.cols(); ++c) us.at(r, c) *= sigma[c];
        return matmul_nt(us, v);
    }
};

namespace detail {

inline double sign_of(double a, double b) { return b >= 0.0 ? std::abs(a) : -std::abs(a); }

// Golub-Reinsch: Householder bidiagonalization followed by implicit-shift QR
// on the bidiagonal. Requires rows >= cols; u is written in place of a.
inline void golub_reinsch(Matrix& u, std::vector<double>& w, Matrix& v, int max_sweeps = 40) {
    const int m = static_cast<int>(u.rows());
    const int n = static_cast<int>(u.cols());
    w.assign(n, 0.0);
    v = Matrix(n, n);
    std::vector<double> rv1(n, 0.0);
    const double eps = std::numeric_limits<double>::epsilon();

    double g = 0.0, scale = 0.0, anorm = 0.0;
    int l = 0;
    for (int i = 0; i < n; ++i) {
        l = i + 2;
        rv1[i] = scale * g;
        g = scale = 0.0;
        double s = 0.0;
        if (i < m) {
            for (int k = i; k < m; ++k) scale += std::abs(u.at(k, i));
            if (scale != 0.0) {
                for (int k = i; k < m; ++k) {
                    u.at(k, i) /= scale;
                    s += u.at(k, i) * u.at(k, i);
                }
                double f = u.at(i, i);
                g = -sign_of(std::sqrt(s), f);
                const double h = f * g - s;
                u.at(i, i) = f - g;
                for (int j = l - 1; j < n; ++j) {
                    s = 0.0;
                    for (int k = i; k < m; ++k) s += u.at(k, i) * u.at(k, j);
                    f = s / h;
                    for (int k = i; k < m; ++k) u.at(k, j) += f * u.at(k, i);
                }
                for (int k = i; k < m; ++k) u.at(k, i) *= scale;
            }
        }
        w[i] = scale * g;
        g = s = scale = 0.0;
        if (i + 1 <= m && i + 1 != n) {
            for (int k = l - 1; k < n; ++k) scale += std::abs(u.at(i, k));
            if (scale != 0.0) {
                for (int k = l - 1; k < n; ++k) {
                    u.at(i, k) /= scale;
                    s += u.at(i, k) * u.at(i, k);
                }
                double f = u.at(i, l - 1);
                g = -sign_of(std::sqrt(s), f);
                const double h = f * g - s;
                u.at(i, l - 1) = f - g;
                for (int k = l - 1; k < n; ++k) rv1[k] = u.at(i, k) / h;
                for (int j = l - 1; j < m; ++j) {
                    s = 0.0;
                    for (int k = l - 1; k < n; ++k) s += u.at(j, k) * u.at(i, k);
                    for (int k = l - 1; k < n; ++k) u.at(j, k) += s * rv1[k];
                }
                for (int k = l - 1; k < n; ++k) u.at(i, k) *= scale;
            }
        }
        anorm = std::max(anorm, std::abs(w[i]) + std::abs(rv1[i]));
    }

    // Accumulate right-hand transformations.
    for (int i = n - 1; i >= 0; --i) {
        if (i < n - 1) {
            if (g != 0.0) {
                for (int j = l; j < n; ++j) v.at(j, i) = (u.at(i, j) / u.at(i, l)) / g;
                for (int j = l; j < n; ++j) {
                    double s = 0.0;
                    for (int k = l; k < n; ++k) s += u.at(i, k) * v.at(k, j);
                    for (int k = l; k < n; ++k) v.at(k, j) += s * v.at(k, i);
                }
            }
            for (int j = l; j < n; ++j) v.at(i, j) = v.at(j, i) = 0.0;
        }
        v.at(i, i) = 1.0;
        g = rv1[i];
        l = i;
    }

    // Accumulate left-hand transformations.
    for (int i = std::min(m, n) - 1; i >= 0; --i) {
        l = i + 1;
        g = w[i];
        for (int j = l; j < n; ++j) u.at(i, j) = 0.0;
        if (g != 0.0) {
            g = 1.0 / g;
            for (int j = l; j < n; ++j) {
                double s = 0.0;
                for (int k = l; k < m; ++k) s += u.at(k, i) * u.at(k, j);
                const double f = (s / u.at(i, i)) * g;
                for (int k = i; k < m; ++k) u.at(k, j) += f * u.at(k, i);
            }
            for (int j = i; j < m; ++j) u.at(j, i) *= g;
        } else {
            for (int j = i; j < m; ++j) u.at(j, i) = 0.0;
        }
        ++u.at(i, i);
    }

    // Diagonalize the bidiagonal form.
    for (int k = n - 1; k >= 0; --k) {
        for (int its = 0;; ++its) {
            bool flag = true;
            int nm = 0;
            for (l = k; l >= 0; --l) {
                nm = l - 1;
                if (l == 0 || std::abs(rv1[l]) <= eps * anorm) {
                    flag = false;
                    break;
                }
                if (std::abs(w[nm]) <= eps * anorm) break;
            }
            if (flag) {
                double c = 0.0, s = 1.0;
                for (int i = l; i < k + 1; ++i) {
                    double f = s * rv1[i];
                    rv1[i] = c * rv1[i];
                    if (std::abs(f) <= eps * anorm) break;
                    g = w[i];
                    double h = std::hypot(f, g);
                    w[i] = h;
                    h = 1.0 / h;
                    c = g * h;
                    s = -f * h;
                    for (int j = 0; j < m; ++j) {
                        const double y = u.at(j, nm);
                        const double z = u.at(j, i);
                        u.at(j, nm) = y * c + z * s;
                        u.at(j, i) = z * c - y * s;
                    }
                }
            }
            double z = w[k];
            if (l == k) {
                if (z < 0.0) {
                    w[k] = -z;
                    for (int j = 0; j < n; ++j) v.at(j, k) = -v.at(j, k);
                }
                break;
            }
            if (its == max_sweeps)
                throw NumericalFailure("svd did not converge within " + std::to_string(max_sweeps) +
                                       " sweeps");
            double x = w[l];
            nm = k - 1;
            double y = w[nm];
            g = rv1[nm];
            double h = rv1[k];
            double f = ((y - z) * (y + z) + (g - h) * (g + h)) / (2.0 * h * y);
            g = std::hypot(f, 1.0);
            f = ((x - z) * (x + z) + h * ((y / (f + sign_of(g, f))) - h)) / x;
            double c = 1.0, s = 1.0;
            for (int j = l; j <= nm; ++j) {
                const int i = j + 1;
                g = rv1[i];
                y = w[i];
                h = s * g;
                g = c * g;
                z = std::hypot(f, h);
                rv1[j] = z;
                c = f / z;
                s = h / z;
                f = x * c + g * s;
                g = g * c - x * s;
                h = y * s;
                y *= c;
                for (int jj = 0; jj < n; ++jj) {
                    x = v.at(jj, j);
                    z = v.at(jj, i);
                    v.at(jj, j) = x * c + z * s;
                    v.at(jj, i) = z * c - x * s;
                }
                z = std::hypot(f, h);
                w[j] = z;
                if (z != 0.0) {
                    z = 1.0 / z;
                    c = f * z;
                    s = h * z;
                }
                f = c * g + s * y;
                x = c * y - s * g;
                for (int jj = 0; jj < m; ++jj) {
                    y = u.at(jj, j);
                    z = u.at(jj, i);
                    u.at(jj, j) = y * c + z * s;
                    u.at(jj, i) = z * c - y * s;
                }
            }
            rv1[l] = 0.0;
            rv1[k] = f;
            w[k] = x;
        }
    }
}

// Descending order, stable among exact ties; then the sign convention:
// the largest-magnitude entry of each u column is made nonnegative (first
// occurrence wins on magnitude ties) by flipping the u and v columns together.
inline void order_and_fix_signs(Matrix& u, std::vector<double>& sigma, Matrix& v) {
    const std::size_t m = sigma.size();
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(),
                     [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    Matrix u2(u.rows(), m), v2(v.rows(), m);
    std::vector<double> s2(m);
    for (std::size_t c = 0; c < m; ++c) {
        const std::size_t src = perm[c];
        s2[c] = sigma[src];
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t r = 0; r < u.rows(); ++r) {
            const double a = std::abs(u.at(r, src));
            if (a > best) {
                best = a;
                arg = r;
            }
        }
        const double flip = u.at(arg, src) < 0.0 ? -1.0 : 1.0;
        for (std::size_t r = 0; r < u.rows(); ++r) u2.at(r, c) = flip * u.at(r, src);
        for (std::size_t r = 0; r < v.rows(); ++r) v2.at(r, c) = flip * v.at(r, src);
    }
    u = std::move(u2);
    sigma = std::move(s2);
    v = std::move(v2);
}

}  // namespace detail

inline SvdResult svd(const Matrix& a) {
    if (a.rows() == 0 || a.cols() == 0) throw InvalidInput("svd of empty matrix");
    if (!a.all_finite()) throw InvalidInput("svd input has non-finite entries");

    const bool wide = a.rows() < a.cols();
    SvdResult r;
    if (wide) {
        Matrix at = transpose(a);
        detail::golub_reinsch(at, r.sigma, r.v);
        // a = (at)^T = (u_t s v_t^T)^T, so u <- v_t and v <- u_t.
        r.u = std::move(r.v);
        r.v = std::move(at);
    } else {
        r.u = a;
        detail::golub_reinsch(r.u, r.sigma, r.v);
    }
    detail::order_and_fix_signs(r.u, r.sigma, r.v);
    return r;
}

}  // namespace omoe
