#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/matrix.hpp"
#include "omoe/tape.hpp"

namespace omoe {

/// Ordered name -> Matrix store for every learnable or frozen tensor in the
/// system. Iteration order is insertion order, which keeps checkpoint
/// layouts and checksum walks deterministic.
class ParamStore {
public:
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Matrix& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw UnknownParameter(name);
        return items_[it->second].second;
    }

    const Matrix& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw UnknownParameter(name);
        return items_[it->second].second;
    }

    void set(const std::string& name, Matrix value) {
        auto it = index_.find(name);
        if (it == index_.end()) {
            index_[name] = items_.size();
            items_.emplace_back(name, std::move(value));
        } else {
            items_[it->second].second = std::move(value);
        }
    }

    const std::vector<std::pair<std::string, Matrix>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

    std::vector<std::string> names_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& [name, m] : items_)
            if (name.rfind(prefix, 0) == 0) out.push_back(name);
        return out;
    }

    std::map<std::string, std::uint64_t> checksums() const {
        std::map<std::string, std::uint64_t> out;
        for (const auto& [name, m] : items_) out[name] = fnv1a_checksum(m);
        return out;
    }

    std::uint64_t combined_checksum(const std::vector<std::string>& names) const {
        std::uint64_t h = 1469598103934665603ULL;
        for (const auto& n : names) h = fnv1a_combine(h, fnv1a_checksum(at(n)));
        return h;
    }

private:
    std::vector<std::pair<std::string, Matrix>> items_;
    std::map<std::string, std::size_t> index_;
};

/// Binds a subset of store entries onto a tape as parameters and collects
/// their gradients after backward. Anything not bound explicitly enters the
/// tape as a constant.
class TapeBinding {
public:
    TapeBinding(Tape& tape, ParamStore& store) : tape_(tape), store_(store) {}

    Tape::Var param(const std::string& name) {
        auto v = tape_.parameter(store_.at(name));
        bound_.emplace_back(name, v);
        return v;
    }

    Tape::Var constant(const std::string& name) { return tape_.constant(store_.at(name)); }

    std::vector<std::pair<std::string, Matrix>> gradients() const {
        std::vector<std::pair<std::string, Matrix>> out;
        out.reserve(bound_.size());
        for (const auto& [name, var] : bound_) out.emplace_back(name, tape_.grad(var));
        return out;
    }

    const std::vector<std::pair<std::string, Tape::Var>>& bound() const { return bound_; }

private:
    Tape& tape_;
    ParamStore& store_;
    std::vector<std::pair<std::string, Tape::Var>> bound_;
};

enum class OptimKind { sgd, adamw };

struct OptimConfig {
    OptimKind kind = OptimKind::sgd;
    double lr = 1e-2;
    double momentum = 0.9;
    double clip_norm = 1.0;  // global-norm clip; 0 disables
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
};

/// SGD with momentum by default; AdamW available behind the same step call.
/// Gradients are clipped to a global norm before the update.
class Optimizer {
public:
    explicit Optimizer(OptimConfig cfg) : cfg_(cfg) {
        if (cfg.lr <= 0) throw InvalidInput("learning rate must be positive");
    }

    void step(ParamStore& store, std::vector<std::pair<std::string, Matrix>> grads) {
        double sq = 0.0;
        for (const auto& [name, g] : grads)
            for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
        const double norm = std::sqrt(sq);
        double scale = 1.0;
        if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;

        ++t_;
        for (auto& [name, g] : grads) {
            if (scale != 1.0)
                for (std::size_t i = 0; i < g.size(); ++i) g[i] *= scale;
            Matrix& p = store.at(name);
            if (cfg_.kind == OptimKind::sgd) {
                Matrix& v = slot(vel_, name, g);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    v[i] = cfg_.momentum * v[i] + g[i];
                    p[i] -= cfg_.lr * v[i];
                }
            } else {
                Matrix& m = slot(adam_m_, name, g);
                Matrix& v = slot(adam_v_, name, g);
                const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
                const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    m[i] = cfg_.adam_beta1 * m[i] + (1.0 - cfg_.adam_beta1) * g[i];
                    v[i] = cfg_.adam_beta2 * v[i] + (1.0 - cfg_.adam_beta2) * g[i] * g[i];
                    const double mhat = m[i] / bc1;
                    const double vhat = v[i] / bc2;
                    p[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) +
                                       cfg_.weight_decay * p[i]);
                }
            }
        }
    }

private:
    static Matrix& slot(std::map<std::string, Matrix>& buf, const std::string& name,
                        const Matrix& like) {
        auto it = buf.find(name);
        if (it == buf.end()) it = buf.emplace(name, Matrix(like.rows(), like.cols())).first;
        return it->second;
    }

    OptimConfig cfg_;
    std::map<std::string, Matrix> vel_;
    std::map<std::string, Matrix> adam_m_;
    std::map<std::string, Matrix> adam_v_;
    long t_ = 0;
};

}  // namespace omoe
