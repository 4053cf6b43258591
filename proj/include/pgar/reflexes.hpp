#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "pgar/errors.hpp"

namespace pgar {

inline constexpr double kEpsNum = 1e-8;

// One training observation per optimization step, as seen by the reflexes.
struct StepObservation {
    std::size_t step = 0;
    double loss = 0.0;             // mean batch loss
    double mean_confidence = 0.0;  // batch mean of max softmax probability
    double batch_accuracy = 0.0;
    double grad_norm = 0.0;        // Euclidean norm of the batch gradient

    void validate() const {
        if (!std::isfinite(loss) || loss < 0.0)
            throw InvalidObservation("observation loss must be finite and >= 0");
        if (!in_unit_interval(mean_confidence))
            throw InvalidObservation("observation mean_confidence must be in [0,1]");
        if (!in_unit_interval(batch_accuracy))
            throw InvalidObservation("observation batch_accuracy must be in [0,1]");
        if (!std::isfinite(grad_norm) || grad_norm < 0.0)
            throw InvalidObservation("observation grad_norm must be finite and >= 0");
    }
};

// Fixed-capacity ring of (confidence, accuracy) pairs for the calibration gap.
class CalibWindow {
  public:
    explicit CalibWindow(std::size_t capacity) : capacity_(capacity) {}

    void push(double confidence, double accuracy) {
        if (entries_.size() < capacity_) {
            entries_.push_back({confidence, accuracy});
        } else {
            entries_[head_] = {confidence, accuracy};
            head_ = (head_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return entries_.empty(); }

    double mean_confidence() const {
        double s = 0.0;
        for (const auto& e : entries_) s += e.confidence;
        return s / static_cast<double>(entries_.size());
    }

    double mean_accuracy() const {
        double s = 0.0;
        for (const auto& e : entries_) s += e.accuracy;
        return s / static_cast<double>(entries_.size());
    }

  private:
    struct Entry {
        double confidence;
        double accuracy;
    };
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<Entry> entries_;
};

// Tunable reflex constants, all exposed through the harness configuration.
struct ReflexParams {
    double ema_decay = 0.9;     // beta for the |loss delta| EMA
    std::size_t calib_window = 50;
    double memory_init = 0.5;   // neutral start for the recovery credit
    double rho_up = 0.02;       // credit restored per calm step
    double rho_down = 0.1;      // credit eroded per full-incident step

    void validate() const {
        if (!(ema_decay > 0.0 && ema_decay < 1.0))
            throw ConfigError("reflex ema_decay must be in (0,1)");
        if (calib_window < 1)
            throw ConfigError("reflex calib_window must be >= 1");
        if (!in_unit_interval(memory_init))
            throw ConfigError("reflex memory_init must be in [0,1]");
        if (!(rho_up > 0.0 && rho_up <= 1.0))
            throw ConfigError("reflex rho_up must be in (0,1]");
        if (!(rho_down > 0.0 && rho_down <= 1.0))
            throw ConfigError("reflex rho_down must be in (0,1]");
    }
};

// Streaming estimator state behind the three reflexes. Owned by one run.
//
// Invariants kept by the update operations:
//   recovery_credit stays in [0,1], ema_abs_delta stays >= 0, and the
//   calibration window never exceeds its capacity.
struct ReflexEstimatorState {
    std::optional<double> prev_loss;  // absent before the first step
    double ema_abs_delta = 0.0;
    double ema_decay = 0.9;
    CalibWindow calib_window;
    double recovery_credit = 0.5;
    double rho_up = 0.02;
    double rho_down = 0.1;

    ReflexEstimatorState() : calib_window(50) {}

    explicit ReflexEstimatorState(const ReflexParams& p)
        : ema_decay(p.ema_decay),
          calib_window(p.calib_window),
          recovery_credit(p.memory_init),
          rho_up(p.rho_up),
          rho_down(p.rho_down) {}
};

// Incident reflex: reacts to positive loss jumps, normalized by the recent
// |loss delta| scale and squashed with x/(1+x) so the output is in [0,1).
// Returns 0 on the first observed step and whenever loss is non-increasing.
inline double incident_reflex(ReflexEstimatorState& state, double loss) {
    if (!std::isfinite(loss))
        throw InvalidObservation("incident_reflex: loss must be finite");
    if (!state.prev_loss) {
        state.prev_loss = loss;
        return 0.0;
    }
    const double rise = std::max(0.0, loss - *state.prev_loss);
    const double x = rise / (state.ema_abs_delta + kEpsNum);
    const double incident = x / (1.0 + x);
    const double abs_delta = std::abs(loss - *state.prev_loss);
    state.ema_abs_delta =
        state.ema_decay * state.ema_abs_delta + (1.0 - state.ema_decay) * abs_delta;
    state.prev_loss = loss;
    return incident;
}

// Overconfidence reflex: one-sided windowed gap between mean confidence and
// mean accuracy. Underconfidence yields 0.
inline double overconfidence_reflex(ReflexEstimatorState& state, double mean_confidence,
                                    double batch_accuracy) {
    if (!in_unit_interval(mean_confidence))
        throw InvalidObservation("overconfidence_reflex: mean_confidence must be in [0,1]");
    if (!in_unit_interval(batch_accuracy))
        throw InvalidObservation("overconfidence_reflex: batch_accuracy must be in [0,1]");
    state.calib_window.push(mean_confidence, batch_accuracy);
    const double gap = state.calib_window.mean_confidence() - state.calib_window.mean_accuracy();
    return std::clamp(gap, 0.0, 1.0);
}

// Memory reflex: bounded recovery-credit integrator. Calm steps restore the
// credit at rho_up, incident steps erode it at rho_down.
inline double memory_reflex(ReflexEstimatorState& state, double incident) {
    if (!in_unit_interval(incident))
        throw DomainError("memory_reflex: incident must be in [0,1]");
    const double next = state.recovery_credit + state.rho_up * (1.0 - incident) -
                        state.rho_down * incident;
    state.recovery_credit = std::clamp(next, 0.0, 1.0);
    return state.recovery_credit;
}

// Reflex triple for one step.
struct ReflexSignals {
    double incident = 0.0;
    double overconfidence = 0.0;
    double memory = 0.0;
};

// Runs all three reflexes on one observation, in the fixed order
// incident -> overconfidence -> memory (memory consumes the incident value).
inline ReflexSignals observe(ReflexEstimatorState& state, const StepObservation& obs) {
    obs.validate();
    ReflexSignals s;
    s.incident = incident_reflex(state, obs.loss);
    s.overconfidence = overconfidence_reflex(state, obs.mean_confidence, obs.batch_accuracy);
    s.memory = memory_reflex(state, s.incident);
    return s;
}

} // namespace pgar
