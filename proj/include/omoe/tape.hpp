#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/matrix.hpp"

namespace omoe {

/// Reverse-mode tape over Matrix-valued nodes. Node creation order is a
/// topological order (ops only reference earlier nodes), so the backward
/// pass is a single reverse scan that pushes exactly one adjoint
/// contribution per use of each operand.
///
/// Single-threaded per training step by contract; a fresh tape is built
/// every step and dropped afterwards.
class Tape {
public:
    struct Var {
        std::size_t id = static_cast<std::size_t>(-1);
        bool valid() const { return id != static_cast<std::size_t>(-1); }
    };

    Var parameter(Matrix v) { return push(std::move(v), true, true, {}); }
    Var constant(Matrix v) { return push(std::move(v), false, false, {}); }
    Var scalar_constant(double v) { return constant(Matrix(1, 1, v)); }

    const Matrix& value(Var x) const { return nodes_[x.id].value; }
    double scalar(Var x) const { return nodes_[x.id].value[0]; }

    const Matrix& grad(Var x) const {
        if (x.id >= nodes_.size() || !nodes_[x.id].is_parameter)
            throw UnknownParameter("node is not a registered parameter of this tape");
        return nodes_[x.id].adjoint;
    }

    // ---- arithmetic ----

    Var add(Var a, Var b) {
        Matrix out = value(a) + value(b);
        return push(std::move(out), needs(a) || needs(b), false, [this, a, b](const Matrix& d) {
            accumulate(a, d);
            accumulate(b, d);
        });
    }

    Var sub(Var a, Var b) {
        Matrix out = value(a) - value(b);
        return push(std::move(out), needs(a) || needs(b), false, [this, a, b](const Matrix& d) {
            accumulate(a, d);
            Matrix nd = -1.0 * d;
            accumulate(b, nd);
        });
    }

    // out[r,c] = a[r,c] + bias[0,c]; bias is a 1 x cols row vector.
    Var add_rowvec(Var a, Var bias) {
        const Matrix& av = value(a);
        const Matrix& bv = value(bias);
        if (bv.rows() != 1 || bv.cols() != av.cols()) throw InvalidInput("add_rowvec shape");
        Matrix out = av;
        for (std::size_t r = 0; r < out.rows(); ++r)
            for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += bv.at(0, c);
        return push(std::move(out), needs(a) || needs(bias), false,
                    [this, a, bias](const Matrix& d) {
                        accumulate(a, d);
                        Matrix db(1, d.cols());
                        for (std::size_t r = 0; r < d.rows(); ++r)
                            for (std::size_t c = 0; c < d.cols(); ++c) db.at(0, c) += d.at(r, c);
                        accumulate(bias, db);
                    });
    }

    Var scale(Var a, double s) {
        Matrix out = s * value(a);
        return push(std::move(out), needs(a), false, [this, a, s](const Matrix& d) {
            Matrix da = s * d;
            accumulate(a, da);
        });
    }

    // out = s * a with s a 1x1 node (the gate-weighted expert path).
    Var scale_by(Var a, Var s) {
        const double sv = scalar(s);
        Matrix out = sv * value(a);
        return push(std::move(out), needs(a) || needs(s), false,
                    [this, a, s, sv](const Matrix& d) {
                        Matrix da = sv * d;
                        accumulate(a, da);
                        const Matrix& av = value(a);
                        double ds = 0.0;
                        for (std::size_t i = 0; i < av.size(); ++i) ds += d[i] * av[i];
                        Matrix dsm(1, 1, ds);
                        accumulate(s, dsm);
                    });
    }

    Var hadamard(Var a, Var b) {
        const Matrix& av = value(a);
        const Matrix& bv = value(b);
        if (!av.same_shape(bv)) throw InvalidInput("hadamard shape");
        Matrix out = av;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
        return push(std::move(out), needs(a) || needs(b), false, [this, a, b](const Matrix& d) {
            const Matrix& av2 = value(a);
            const Matrix& bv2 = value(b);
            Matrix da = d, db = d;
            for (std::size_t i = 0; i < d.size(); ++i) {
                da[i] *= bv2[i];
                db[i] *= av2[i];
            }
            accumulate(a, da);
            accumulate(b, db);
        });
    }

    // Column c of a scaled by s[c]; s is 1 x cols. Builds u * diag(sigma).
    Var scale_cols(Var a, Var s) {
        const Matrix& av = value(a);
        const Matrix& sv = value(s);
        if (sv.rows() != 1 || sv.cols() != av.cols()) throw InvalidInput("scale_cols shape");
        Matrix out = av;
        for (std::size_t r = 0; r < out.rows(); ++r)
            for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) *= sv.at(0, c);
        return push(std::move(out), needs(a) || needs(s), false, [this, a, s](const Matrix& d) {
            const Matrix& av2 = value(a);
            const Matrix& sv2 = value(s);
            Matrix da = d;
            Matrix ds(1, d.cols());
            for (std::size_t r = 0; r < d.rows(); ++r)
                for (std::size_t c = 0; c < d.cols(); ++c) {
                    da.at(r, c) *= sv2.at(0, c);
                    ds.at(0, c) += d.at(r, c) * av2.at(r, c);
                }
            accumulate(a, da);
            accumulate(s, ds);
        });
    }

    // ---- matrix products ----

    Var matmul(Var a, Var b) {
        Matrix out = omoe::matmul(value(a), value(b));
        return push(std::move(out), needs(a) || needs(b), false, [this, a, b](const Matrix& d) {
            Matrix da = omoe::matmul_nt(d, value(b));
            Matrix db = omoe::matmul_tn(value(a), d);
            accumulate(a, da);
            accumulate(b, db);
        });
    }

    // a * b^T
    Var matmul_nt(Var a, Var b) {
        Matrix out = omoe::matmul_nt(value(a), value(b));
        return push(std::move(out), needs(a) || needs(b), false, [this, a, b](const Matrix& d) {
            Matrix da = omoe::matmul(d, value(b));
            Matrix db = omoe::matmul_tn(d, value(a));
            accumulate(a, da);
            accumulate(b, db);
        });
    }

    // a^T * b
    Var matmul_tn(Var a, Var b) {
        Matrix out = omoe::matmul_tn(value(a), value(b));
        return push(std::move(out), needs(a) || needs(b), false, [this, a, b](const Matrix& d) {
            Matrix da = omoe::matmul_nt(value(b), d);
            Matrix db = omoe::matmul(value(a), d);
            accumulate(a, da);
            accumulate(b, db);
        });
    }

    Var transpose(Var a) {
        Matrix out = omoe::transpose(value(a));
        return push(std::move(out), needs(a), false, [this, a](const Matrix& d) {
            Matrix da = omoe::transpose(d);
            accumulate(a, da);
        });
    }

    // ---- nonlinearities ----

    Var relu(Var a) {
        Matrix out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
        return push(std::move(out), needs(a), false, [this, a](const Matrix& d) {
            const Matrix& av = value(a);
            Matrix da = d;
            for (std::size_t i = 0; i < d.size(); ++i)
                if (av[i] <= 0.0) da[i] = 0.0;
            accumulate(a, da);
        });
    }

    // Exact GELU: x * Phi(x) with Phi the standard normal CDF.
    Var gelu(Var a) {
        const Matrix& av = value(a);
        Matrix out = av;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_fwd(av[i]);
        return push(std::move(out), needs(a), false, [this, a](const Matrix& d) {
            const Matrix& av2 = value(a);
            Matrix da = d;
            for (std::size_t i = 0; i < d.size(); ++i) da[i] *= gelu_grad(av2[i]);
            accumulate(a, da);
        });
    }

    // Elementwise reciprocal.
    Var inv(Var a) {
        const Matrix& av = value(a);
        Matrix out = av;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / out[i];
        return push(std::move(out), needs(a), false, [this, a](const Matrix& d) {
            const Matrix& av2 = value(a);
            Matrix da = d;
            for (std::size_t i = 0; i < d.size(); ++i) da[i] *= -1.0 / (av2[i] * av2[i]);
            accumulate(a, da);
        });
    }

    Var log(Var a) {
        const Matrix& av = value(a);
        Matrix out = av;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
        return push(std::move(out), needs(a), false, [this, a](const Matrix& d) {
            const Matrix& av2 = value(a);
            Matrix da = d;
            for (std::size_t i = 0; i < d.size(); ++i) da[i] /= av2[i];
            accumulate(a, da);
        });
    }

    // Row-wise softmax with max subtraction.
    Var softmax_rows(Var a) {
        const Matrix& av = value(a);
        Matrix out = av;
        for (std::size_t r = 0; r < out.rows(); ++r) {
            double mx = out.at(r, 0);
            for (std::size_t c = 1; c < out.cols(); ++c) mx = std::max(mx, out.at(r, c));
            double sum = 0.0;
            for (std::size_t c = 0; c < out.cols(); ++c) {
                out.at(r, c) = std::exp(out.at(r, c) - mx);
                sum += out.at(r, c);
            }
            for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) /= sum;
        }
        Var res = push(std::move(out), needs(a), false, {});
        nodes_[res.id].backward = [this, a, res](const Matrix& d) {
            const Matrix& y = value(res);
            Matrix da(d.rows(), d.cols());
            for (std::size_t r = 0; r < d.rows(); ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < d.cols(); ++c) dot += d.at(r, c) * y.at(r, c);
                for (std::size_t c = 0; c < d.cols(); ++c)
                    da.at(r, c) = y.at(r, c) * (d.at(r, c) - dot);
            }
            accumulate(a, da);
        };
        return res;
    }

    // Row-wise layer norm with learned gain/shift (1 x cols each).
    Var layernorm_rows(Var a, Var gamma, Var beta, double eps = 1e-5) {
        const Matrix& av = value(a);
        const Matrix& gv = value(gamma);
        const Matrix& bv = value(beta);
        if (gv.rows() != 1 || gv.cols() != av.cols() || bv.rows() != 1 || bv.cols() != av.cols())
            throw InvalidInput("layernorm parameter shape");
        const std::size_t n = av.cols();
        Matrix xhat(av.rows(), n);
        Matrix inv_std(av.rows(), 1);
        Matrix out(av.rows(), n);
        for (std::size_t r = 0; r < av.rows(); ++r) {
            double mean = 0.0;
            for (std::size_t c = 0; c < n; ++c) mean += av.at(r, c);
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                const double dcv = av.at(r, c) - mean;
                var += dcv * dcv;
            }
            var /= static_cast<double>(n);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std.at(r, 0) = is;
            for (std::size_t c = 0; c < n; ++c) {
                xhat.at(r, c) = (av.at(r, c) - mean) * is;
                out.at(r, c) = gv.at(0, c) * xhat.at(r, c) + bv.at(0, c);
            }
        }
        const bool ng = needs(a) || needs(gamma) || needs(beta);
        Var res = push(std::move(out), ng, false, {});
        auto xh = std::make_shared<Matrix>(std::move(xhat));
        auto istd = std::make_shared<Matrix>(std::move(inv_std));
        nodes_[res.id].backward = [this, a, gamma, beta, xh, istd](const Matrix& d) {
            const Matrix& gv2 = value(gamma);
            const std::size_t n2 = d.cols();
            Matrix dgamma(1, n2), dbeta(1, n2), da(d.rows(), n2);
            for (std::size_t r = 0; r < d.rows(); ++r) {
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (std::size_t c = 0; c < n2; ++c) {
                    const double dy = d.at(r, c);
                    dgamma.at(0, c) += dy * xh->at(r, c);
                    dbeta.at(0, c) += dy;
                    const double dxhat = dy * gv2.at(0, c);
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xh->at(r, c);
                }
                mean_dxhat /= static_cast<double>(n2);
                mean_dxhat_xhat /= static_cast<double>(n2);
                for (std::size_t c = 0; c < n2; ++c) {
                    const double dxhat = d.at(r, c) * gv2.at(0, c);
                    da.at(r, c) =
                        istd->at(r, 0) * (dxhat - mean_dxhat - xh->at(r, c) * mean_dxhat_xhat);
                }
            }
            accumulate(a, da);
            accumulate(gamma, dgamma);
            accumulate(beta, dbeta);
        };
        return res;
    }

    // ---- shape ops ----

    Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
        const Matrix& av = value(a);
        if (c1 > av.cols() || c0 >= c1) throw InvalidInput("slice_cols range");
        Matrix out(av.rows(), c1 - c0);
        for (std::size_t r = 0; r < av.rows(); ++r)
            for (std::size_t c = c0; c < c1; ++c) out.at(r, c - c0) = av.at(r, c);
        return push(std::move(out), needs(a), false, [this, a, c0](const Matrix& d) {
            const Matrix& av2 = value(a);
            Matrix da(av2.rows(), av2.cols());
            for (std::size_t r = 0; r < d.rows(); ++r)
                for (std::size_t c = 0; c < d.cols(); ++c) da.at(r, c0 + c) = d.at(r, c);
            accumulate(a, da);
        });
    }

    Var concat_cols(Var a, Var b) {
        const Matrix& av = value(a);
        const Matrix& bv = value(b);
        if (av.rows() != bv.rows()) throw InvalidInput("concat_cols rows");
        Matrix out(av.rows(), av.cols() + bv.cols());
        for (std::size_t r = 0; r < av.rows(); ++r) {
            for (std::size_t c = 0; c < av.cols(); ++c) out.at(r, c) = av.at(r, c);
            for (std::size_t c = 0; c < bv.cols(); ++c) out.at(r, av.cols() + c) = bv.at(r, c);
        }
        return push(std::move(out), needs(a) || needs(b), false, [this, a, b](const Matrix& d) {
            const Matrix& av2 = value(a);
            const Matrix& bv2 = value(b);
            Matrix da(av2.rows(), av2.cols()), db(bv2.rows(), bv2.cols());
            for (std::size_t r = 0; r < d.rows(); ++r) {
                for (std::size_t c = 0; c < av2.cols(); ++c) da.at(r, c) = d.at(r, c);
                for (std::size_t c = 0; c < bv2.cols(); ++c) db.at(r, c) = d.at(r, av2.cols() + c);
            }
            accumulate(a, da);
            accumulate(b, db);
        });
    }

    // ---- reductions ----

    Var sum_all(Var a) {
        double s = 0.0;
        const Matrix& av = value(a);
        for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
        return push(Matrix(1, 1, s), needs(a), false, [this, a](const Matrix& d) {
            const Matrix& av2 = value(a);
            Matrix da(av2.rows(), av2.cols(), d[0]);
            accumulate(a, da);
        });
    }

    Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(value(a).size())); }

    // Mean over rows: (R x C) -> (1 x C). Token pooling.
    Var mean_rows(Var a) {
        const Matrix& av = value(a);
        Matrix out(1, av.cols());
        for (std::size_t r = 0; r < av.rows(); ++r)
            for (std::size_t c = 0; c < av.cols(); ++c) out.at(0, c) += av.at(r, c);
        const double inv = 1.0 / static_cast<double>(av.rows());
        for (std::size_t c = 0; c < av.cols(); ++c) out.at(0, c) *= inv;
        return push(std::move(out), needs(a), false, [this, a, inv](const Matrix& d) {
            const Matrix& av2 = value(a);
            Matrix da(av2.rows(), av2.cols());
            for (std::size_t r = 0; r < av2.rows(); ++r)
                for (std::size_t c = 0; c < av2.cols(); ++c) da.at(r, c) = d.at(0, c) * inv;
            accumulate(a, da);
        });
    }

    // Sum of squared entries -> 1x1. Frobenius norm squared.
    Var sum_sq(Var a) {
        const Matrix& av = value(a);
        double s = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * av[i];
        return push(Matrix(1, 1, s), needs(a), false, [this, a](const Matrix& d) {
            const Matrix& av2 = value(a);
            Matrix da = av2;
            for (std::size_t i = 0; i < da.size(); ++i) da[i] *= 2.0 * d[0];
            accumulate(a, da);
        });
    }

    Var pick(Var a, std::size_t r, std::size_t c) {
        const Matrix& av = value(a);
        if (r >= av.rows() || c >= av.cols()) throw InvalidInput("pick out of range");
        return push(Matrix(1, 1, av.at(r, c)), needs(a), false, [this, a, r, c](const Matrix& d) {
            const Matrix& av2 = value(a);
            Matrix da(av2.rows(), av2.cols());
            da.at(r, c) = d[0];
            accumulate(a, da);
        });
    }

    // Mean cross-entropy of row-wise logits against integer labels,
    // computed through log-sum-exp; gradient is (softmax - onehot) / batch.
    Var cross_entropy_mean(Var logits, const std::vector<int>& labels) {
        const Matrix& lv = value(logits);
        if (labels.size() != lv.rows()) throw InvalidInput("label count != batch");
        for (int y : labels)
            if (y < 0 || static_cast<std::size_t>(y) >= lv.cols())
                throw InvalidInput("label out of range");
        const double invb = 1.0 / static_cast<double>(lv.rows());
        double total = 0.0;
        Matrix probs(lv.rows(), lv.cols());
        for (std::size_t r = 0; r < lv.rows(); ++r) {
            double mx = lv.at(r, 0);
            for (std::size_t c = 1; c < lv.cols(); ++c) mx = std::max(mx, lv.at(r, c));
            double lse = 0.0;
            for (std::size_t c = 0; c < lv.cols(); ++c) lse += std::exp(lv.at(r, c) - mx);
            lse = mx + std::log(lse);
            total += lse - lv.at(r, static_cast<std::size_t>(labels[r]));
            for (std::size_t c = 0; c < lv.cols(); ++c)
                probs.at(r, c) = std::exp(lv.at(r, c) - lse);
        }
        auto p = std::make_shared<Matrix>(std::move(probs));
        return push(Matrix(1, 1, total * invb), needs(logits), false,
                    [this, logits, labels, p, invb](const Matrix& d) {
                        Matrix da = *p;
                        for (std::size_t r = 0; r < da.rows(); ++r)
                            da.at(r, static_cast<std::size_t>(labels[r])) -= 1.0;
                        for (std::size_t i = 0; i < da.size(); ++i) da[i] *= d[0] * invb;
                        accumulate(logits, da);
                    });
    }

    // ---- backward ----

    void backward(Var root) {
        const Matrix& rv = value(root);
        if (rv.rows() != 1 || rv.cols() != 1)
            throw InvalidInput("backward root must be a 1x1 scalar");
        for (auto& n : nodes_)
            if (n.needs_grad) n.adjoint = Matrix(n.value.rows(), n.value.cols());
        if (!nodes_[root.id].needs_grad) return;  // no parameter feeds the root
        nodes_[root.id].adjoint = Matrix(1, 1, 1.0);
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.needs_grad || !n.backward) continue;
            if (i > root.id) continue;  // beyond the requested root
            n.backward(n.adjoint);
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

    static double gelu_fwd(double x) {
        return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
    }
    static double gelu_grad(double x) {
        const double phi = std::exp(-0.5 * x * x) * 0.3989422804014326779;  // pdf
        return 0.5 * (1.0 + std::erf(x * 0.70710678118654752440)) + x * phi;
    }

private:
    struct Node {
        Matrix value;
        Matrix adjoint;
        std::function<void(const Matrix&)> backward;
        bool needs_grad = false;
        bool is_parameter = false;
    };

    bool needs(Var x) const { return nodes_[x.id].needs_grad; }

    void accumulate(Var x, const Matrix& d) {
        Node& n = nodes_[x.id];
        if (!n.needs_grad) return;
        n.adjoint += d;
    }

    Var push(Matrix v, bool needs_grad, bool is_param, std::function<void(const Matrix&)> bw) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs_grad;
        n.is_parameter = is_param;
        n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

}  // namespace omoe
