#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "pgar/errors.hpp"
#include "pgar/model.hpp"

namespace pgar {

enum class OptimizerKind { Sgd, Adam, AdaBound };

inline const char* optimizer_name(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::Sgd: return "sgd";
        case OptimizerKind::Adam: return "adam";
        default: return "adabound";
    }
}

// Base optimizers taking the step size eta_t from outside (the controller).
// step() applies theta <- theta - eta_t * g_t and returns the effective
// search direction g_t: the raw gradient for SGD, the bias-corrected
// preconditioned direction for Adam, and the bound-clipped direction for
// AdaBound. eta_t = 0 leaves parameters bit-identical; moment estimates still
// absorb the gradient. AdaBound's lower bound makes its direction undefined
// at eta_t = 0, so a suppressed AdaBound step reports a zero direction.
class Optimizer {
  public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        // AdaBound bound schedule: final rate 0.1*eta0_base with
        // lower(t) = final*(1 - 1/(gamma_b*t + 1)), upper(t) = final*(1 + 1/(gamma_b*t)).
        double eta0_base = 0.05;
        double gamma_b = 1e-3;
    };

    explicit Optimizer(OptimizerKind kind) : kind_(kind) {}
    Optimizer(OptimizerKind kind, const Options& opts) : kind_(kind), opts_(opts) {}

    OptimizerKind kind() const { return kind_; }
    long step_count() const { return step_count_; }

    Gradients step(Mlp& model, const Gradients& grads, double eta_t) {
        if (!(eta_t >= 0.0)) throw DomainError("optimizer step: eta_t must be >= 0");
        if (!grads.finite()) throw TrainingFault("optimizer step: non-finite gradient");
        ensure_slots(model);
        ++step_count_;

        switch (kind_) {
            case OptimizerKind::Sgd: return sgd_step(model, grads, eta_t);
            case OptimizerKind::Adam: return adam_step(model, grads, eta_t);
            default: return adabound_step(model, grads, eta_t);
        }
    }

  private:
    OptimizerKind kind_;
    Options opts_;
    long step_count_ = 0;
    bool slots_ready_ = false;
    Gradients m_; // first moments (Adam/AdaBound)
    Gradients v_; // second moments

    void ensure_slots(const Mlp& model) {
        if (slots_ready_ || kind_ == OptimizerKind::Sgd) {
            slots_ready_ = true;
            return;
        }
        m_.d_weights.clear();
        m_.d_biases.clear();
        v_.d_weights.clear();
        v_.d_biases.clear();
        for (std::size_t l = 0; l < model.n_layers(); ++l) {
            m_.d_weights.emplace_back(model.weights[l].rows, model.weights[l].cols);
            v_.d_weights.emplace_back(model.weights[l].rows, model.weights[l].cols);
            m_.d_biases.emplace_back(model.biases[l].size(), 0.0);
            v_.d_biases.emplace_back(model.biases[l].size(), 0.0);
        }
        slots_ready_ = true;
    }

    Gradients sgd_step(Mlp& model, const Gradients& grads, double eta_t) {
        if (eta_t > 0.0) {
            for (std::size_t l = 0; l < model.n_layers(); ++l) {
                auto& w = model.weights[l].data;
                const auto& gw = grads.d_weights[l].data;
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta_t * gw[i];
                auto& b = model.biases[l];
                const auto& gb = grads.d_biases[l];
                for (std::size_t i = 0; i < b.size(); ++i) b[i] -= eta_t * gb[i];
            }
        }
        return grads; // g_t = gradient, mu = 1 exactly
    }

    void update_moments(const Gradients& grads) {
        const double b1 = opts_.beta1, b2 = opts_.beta2;
        for (std::size_t l = 0; l < grads.d_weights.size(); ++l) {
            auto& mw = m_.d_weights[l].data;
            auto& vw = v_.d_weights[l].data;
            const auto& gw = grads.d_weights[l].data;
            for (std::size_t i = 0; i < gw.size(); ++i) {
                mw[i] = b1 * mw[i] + (1.0 - b1) * gw[i];
                vw[i] = b2 * vw[i] + (1.0 - b2) * gw[i] * gw[i];
            }
            auto& mb = m_.d_biases[l];
            auto& vb = v_.d_biases[l];
            const auto& gb = grads.d_biases[l];
            for (std::size_t i = 0; i < gb.size(); ++i) {
                mb[i] = b1 * mb[i] + (1.0 - b1) * gb[i];
                vb[i] = b2 * vb[i] + (1.0 - b2) * gb[i] * gb[i];
            }
        }
    }

    Gradients adam_step(Mlp& model, const Gradients& grads, double eta_t) {
        update_moments(grads);
        const double t = static_cast<double>(step_count_);
        const double bc1 = 1.0 - std::pow(opts_.beta1, t);
        const double bc2 = 1.0 - std::pow(opts_.beta2, t);

        Gradients direction = grads; // reuse shape
        for (std::size_t l = 0; l < grads.d_weights.size(); ++l) {
            auto& dw = direction.d_weights[l].data;
            const auto& mw = m_.d_weights[l].data;
            const auto& vw = v_.d_weights[l].data;
            for (std::size_t i = 0; i < dw.size(); ++i) {
                const double m_hat = mw[i] / bc1;
                const double v_hat = vw[i] / bc2;
                dw[i] = m_hat / (std::sqrt(v_hat) + opts_.eps);
            }
            auto& db = direction.d_biases[l];
            const auto& mb = m_.d_biases[l];
            const auto& vb = v_.d_biases[l];
            for (std::size_t i = 0; i < db.size(); ++i) {
                const double m_hat = mb[i] / bc1;
                const double v_hat = vb[i] / bc2;
                db[i] = m_hat / (std::sqrt(v_hat) + opts_.eps);
            }
        }
        if (eta_t > 0.0) apply(model, direction, eta_t);
        return direction;
    }

    Gradients adabound_step(Mlp& model, const Gradients& grads, double eta_t) {
        update_moments(grads);
        const double t = static_cast<double>(step_count_);
        const double bc1 = 1.0 - std::pow(opts_.beta1, t);
        const double bc2 = 1.0 - std::pow(opts_.beta2, t);
        const double final_lr = 0.1 * opts_.eta0_base;
        const double lower = final_lr * (1.0 - 1.0 / (opts_.gamma_b * t + 1.0));
        const double upper = final_lr * (1.0 + 1.0 / (opts_.gamma_b * t));
        const double step_size = eta_t * std::sqrt(bc2) / bc1;

        Gradients direction = grads;
        if (eta_t == 0.0) {
            direction.scale(0.0);
            return direction;
        }
        const double inv_eta = 1.0 / eta_t;
        for (std::size_t l = 0; l < grads.d_weights.size(); ++l) {
            auto& dw = direction.d_weights[l].data;
            const auto& mw = m_.d_weights[l].data;
            const auto& vw = v_.d_weights[l].data;
            for (std::size_t i = 0; i < dw.size(); ++i) {
                const double denom = std::sqrt(vw[i]) + opts_.eps;
                const double eff = std::clamp(step_size / denom, lower, upper);
                dw[i] = eff * mw[i] * inv_eta;
            }
            auto& db = direction.d_biases[l];
            const auto& mb = m_.d_biases[l];
            const auto& vb = v_.d_biases[l];
            for (std::size_t i = 0; i < db.size(); ++i) {
                const double denom = std::sqrt(vb[i]) + opts_.eps;
                const double eff = std::clamp(step_size / denom, lower, upper);
                db[i] = eff * mb[i] * inv_eta;
            }
        }
        apply(model, direction, eta_t);
        return direction;
    }

    static void apply(Mlp& model, const Gradients& direction, double eta_t) {
        for (std::size_t l = 0; l < model.n_layers(); ++l) {
            auto& w = model.weights[l].data;
            const auto& dw = direction.d_weights[l].data;
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta_t * dw[i];
            auto& b = model.biases[l];
            const auto& db = direction.d_biases[l];
            for (std::size_t i = 0; i < b.size(); ++i) b[i] -= eta_t * db[i];
        }
    }
};

} // namespace pgar
