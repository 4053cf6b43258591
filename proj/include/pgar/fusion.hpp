#pragma once

#include <cmath>
#include <string>

#include "pgar/errors.hpp"
#include "pgar/reflexes.hpp"

namespace pgar {

// Convex fusion weights over the three reflex channels. Must sum to 1; each
// channel's marginal influence on the reliability index equals its weight,
// which keeps ablations interpretable. The fusion below is 1-Lipschitz in the
// 1-norm over (I, O, 1-M) under any weights admitted here.
struct FusionWeights {
    double incident;
    double overconfidence;
    double memory;

    FusionWeights() : FusionWeights(0.4, 0.3, 0.3) {}

    FusionWeights(double w_incident, double w_overconfidence, double w_memory)
        : incident(w_incident), overconfidence(w_overconfidence), memory(w_memory) {
        if (!(incident >= 0.0) || !(overconfidence >= 0.0) || !(memory >= 0.0))
            throw ConfigError("fusion weights must be >= 0");
        const double sum = incident + overconfidence + memory;
        if (!(std::abs(sum - 1.0) <= 1e-12))
            throw ConfigError("fusion weights must sum to 1");
    }
};

enum class Mode { Agility, Safety, Nominal };

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::Agility: return "agility";
        case Mode::Safety: return "safety";
        default: return "nominal";
    }
}

// Controller constants. kappa*gamma >= eps_bar is required so the reliability
// penalty term can absorb the assumed perturbation bound.
struct ControllerConfig {
    double eta0 = 0.05;       // base learning rate
    double delta = 0.5;       // modulation exponent, 0 disables modulation
    double kappa = 1.0;       // weight of (1-R) in the Lyapunov value
    double gamma = 0.1;       // assumed unreliability contraction rate
    double eps_bar = 0.005;   // assumed perturbation bound
    double theta_act = 0.5;   // reflex activation threshold (interventions, Agility)
    double theta_safe = 0.9;  // reliability threshold for Safety mode
    FusionWeights weights{};

    void validate() const {
        if (!(eta0 > 0.0) || !std::isfinite(eta0))
            throw ConfigError("controller eta0 must be > 0");
        if (!(delta >= 0.0 && delta <= 1.0))
            throw ConfigError("controller delta must be in [0,1]");
        if (!(kappa > 0.0)) throw ConfigError("controller kappa must be > 0");
        if (!(gamma > 0.0 && gamma <= 1.0))
            throw ConfigError("controller gamma must be in (0,1]");
        if (!(eps_bar >= 0.0)) throw ConfigError("controller eps_bar must be >= 0");
        if (!(theta_act > 0.0 && theta_act <= 1.0))
            throw ConfigError("controller theta_act must be in (0,1]");
        if (!(theta_safe > 0.0 && theta_safe < 1.0))
            throw ConfigError("controller theta_safe must be in (0,1)");
        if (!(kappa * gamma >= eps_bar))
            throw ConfigError("controller requires kappa*gamma >= eps_bar");
    }
};

// Reliability index R = 1 - (w_I*I + w_O*O + w_M*(1-M)). Complement of a
// convex combination of the three failure signals, so R is in [0,1] whenever
// the reflexes are.
inline double fuse(double incident, double overconfidence, double memory,
                   const FusionWeights& w) {
    if (!in_unit_interval(incident)) throw DomainError("fuse: incident must be in [0,1]");
    if (!in_unit_interval(overconfidence))
        throw DomainError("fuse: overconfidence must be in [0,1]");
    if (!in_unit_interval(memory)) throw DomainError("fuse: memory must be in [0,1]");
    const double unreliability = w.incident * incident + w.overconfidence * overconfidence +
                                 w.memory * (1.0 - memory);
    return std::clamp(1.0 - unreliability, 0.0, 1.0);
}

// Multiplicative control law eta = eta0 * R^delta. delta = 0 recovers the
// unmodulated base rate exactly (0^0 treated as 1).
inline double learning_rate(double reliability, const ControllerConfig& cfg) {
    if (!in_unit_interval(reliability))
        throw DomainError("learning_rate: reliability must be in [0,1]");
    if (cfg.delta == 0.0) return cfg.eta0;
    return cfg.eta0 * std::pow(reliability, cfg.delta);
}

// Behavioural regime for one step. Agility (active incident) takes precedence
// over Safety (high steady reliability); everything else is Nominal.
inline Mode classify_mode(double reliability, double incident, const ControllerConfig& cfg) {
    if (!in_unit_interval(reliability))
        throw DomainError("classify_mode: reliability must be in [0,1]");
    if (!in_unit_interval(incident))
        throw DomainError("classify_mode: incident must be in [0,1]");
    if (incident >= cfg.theta_act) return Mode::Agility;
    if (reliability >= cfg.theta_safe) return Mode::Safety;
    return Mode::Nominal;
}

// Maximum admissible next unreliability under the assumed contraction:
// (1 - R_next) <= (1-gamma)(1-R) + eps_bar. The stability monitor reports how
// often empirical reflex dynamics exceed this.
inline double contraction_bound(double reliability, const ControllerConfig& cfg) {
    if (!in_unit_interval(reliability))
        throw DomainError("contraction_bound: reliability must be in [0,1]");
    return (1.0 - cfg.gamma) * (1.0 - reliability) + cfg.eps_bar;
}

} // namespace pgar
