#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pgar/errors.hpp"
#include "pgar/fusion.hpp"

namespace pgar {

// Lyapunov value V = L + kappa*(1 - R). Bounded below by 0 for admissible
// inputs.
inline double lyapunov(double loss, double reliability, double kappa) {
    if (!(loss >= 0.0)) throw DomainError("lyapunov: loss must be >= 0");
    if (!in_unit_interval(reliability))
        throw DomainError("lyapunov: reliability must be in [0,1]");
    if (!(kappa > 0.0)) throw DomainError("lyapunov: kappa must be > 0");
    return loss + kappa * (1.0 - reliability);
}

struct DescentVerdict {
    double v = 0.0;        // V at this step
    double delta_v = 0.0;  // V - V_prev; 0 on the first step
    bool violated = false; // delta_v > tol (never on the first step)
};

// Per-run descent ledger: counts Lyapunov ascent violations against a
// tolerance and accumulates the summability partial sum  sum R^delta*|grad|^2,
// whose tail must vanish on converged runs.
class LyapunovLedger {
  public:
    explicit LyapunovLedger(double tol = 1e-9) : tol_(tol) {
        if (!(tol >= 0.0)) throw DomainError("LyapunovLedger: tol must be >= 0");
    }

    DescentVerdict record_step(double loss, double reliability, double grad_norm,
                               double kappa, double delta) {
        if (!std::isfinite(loss) || !std::isfinite(reliability) || !std::isfinite(grad_norm))
            throw AuditError("record_step: non-finite input");
        if (!(grad_norm >= 0.0)) throw AuditError("record_step: grad_norm must be >= 0");

        DescentVerdict verdict;
        verdict.v = lyapunov(loss, reliability, kappa);
        if (v_prev_) {
            verdict.delta_v = verdict.v - *v_prev_;
            verdict.violated = verdict.delta_v > tol_;
            if (verdict.violated) ++violations_;
            if (!max_delta_v_ || verdict.delta_v > *max_delta_v_)
                max_delta_v_ = verdict.delta_v;
        }
        v_prev_ = verdict.v;

        // 0^delta = 0 for delta > 0, and R^0 = 1 when modulation is disabled.
        const double weight = (delta == 0.0) ? 1.0 : std::pow(reliability, delta);
        summability_partial_ += weight * grad_norm * grad_norm;
        ++steps_;
        return verdict;
    }

    std::size_t violations() const { return violations_; }
    std::optional<double> max_delta_v() const { return max_delta_v_; }
    double summability_partial() const { return summability_partial_; }
    double tol() const { return tol_; }
    std::size_t steps() const { return steps_; }

  private:
    std::optional<double> v_prev_;
    std::optional<double> max_delta_v_;
    std::size_t violations_ = 0;
    double summability_partial_ = 0.0;
    double tol_;
    std::size_t steps_ = 0;
};

// Step-size condition (L/2)*eta0^2*G^2 <= (1/2)*eta0*mu*r_lower^delta,
// i.e. eta0 <= mu*r_lower^delta / (L*G^2). Boundary equality is admissible.
inline bool stepsize_condition(double eta0, double l_smooth, double g_bound, double mu,
                               double r_lower, double delta) {
    if (!(eta0 > 0.0) || !(l_smooth > 0.0) || !(g_bound > 0.0) || !(mu > 0.0))
        throw DomainError("stepsize_condition: parameters must be > 0");
    if (!(r_lower > 0.0 && r_lower <= 1.0))
        throw DomainError("stepsize_condition: r_lower must be in (0,1]");
    if (!(delta >= 0.0 && delta <= 1.0))
        throw DomainError("stepsize_condition: delta must be in [0,1]");
    const double lhs = 0.5 * l_smooth * eta0 * eta0 * g_bound * g_bound;
    const double rhs = 0.5 * eta0 * mu * std::pow(r_lower, delta);
    return lhs <= rhs;
}

struct AlignmentDiag {
    std::optional<double> mu_hat; // <grad, direction> / |grad|^2; absent when |grad| = 0
    double g_norm = 0.0;          // |direction|
};

// Empirical alignment between the loss gradient and the optimizer's applied
// search direction. mu_hat >= mu for all steps is what the descent argument
// assumes of the base optimizer.
inline AlignmentDiag alignment_diagnostics(std::span<const double> grad,
                                           std::span<const double> direction) {
    if (grad.size() != direction.size())
        throw DomainError("alignment_diagnostics: vector length mismatch");
    double dot = 0.0, g2 = 0.0, d2 = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        dot += grad[i] * direction[i];
        g2 += grad[i] * grad[i];
        d2 += direction[i] * direction[i];
    }
    AlignmentDiag diag;
    diag.g_norm = std::sqrt(d2);
    if (g2 > 0.0) diag.mu_hat = dot / g2;
    return diag;
}

// Worst-case observed values for the assumptions the descent argument makes:
// minimum alignment (mu), maximum direction norm (G), maximum secant
// smoothness ratio (L) and minimum reliability (r_lower). Reporting only.
struct AssumptionReport {
    std::optional<double> mu_hat;      // min over steps
    double g_norm = 0.0;               // max over steps
    std::optional<double> l_smooth_est;// max secant ratio |grad_t - grad_{t-1}| / |theta_t - theta_{t-1}|
    double r_lower_observed = 1.0;     // min over steps

    void absorb_alignment(const AlignmentDiag& diag) {
        if (diag.mu_hat && (!mu_hat || *diag.mu_hat < *mu_hat)) mu_hat = diag.mu_hat;
        if (diag.g_norm > g_norm) g_norm = diag.g_norm;
    }

    void absorb_reliability(double reliability) {
        if (reliability < r_lower_observed) r_lower_observed = reliability;
    }

    void absorb_secant(double grad_delta_norm, double param_delta_norm) {
        if (param_delta_norm <= 1e-12) return;
        const double est = grad_delta_norm / param_delta_norm;
        if (!l_smooth_est || est > *l_smooth_est) l_smooth_est = est;
    }
};

// Counts how often the observed reliability dynamics exceed the assumed
// contraction envelope (1-R_next) <= (1-gamma)(1-R) + eps_bar. Reported,
// never enforced: the theorem assumes the contraction, real reflexes may not
// satisfy it.
class ContractionAudit {
  public:
    void record(double reliability, const ControllerConfig& cfg) {
        if (prev_) {
            ++transitions_;
            const double bound = contraction_bound(*prev_, cfg);
            if ((1.0 - reliability) > bound + 1e-12) ++exceeded_;
        }
        prev_ = reliability;
    }

    std::size_t transitions() const { return transitions_; }
    std::size_t exceeded() const { return exceeded_; }

    double exceed_fraction() const {
        if (transitions_ == 0) return 0.0;
        return static_cast<double>(exceeded_) / static_cast<double>(transitions_);
    }

  private:
    std::optional<double> prev_;
    std::size_t transitions_ = 0;
    std::size_t exceeded_ = 0;
};

} // namespace pgar
