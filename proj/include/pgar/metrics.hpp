#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pgar/errors.hpp"
#include "pgar/matrix.hpp"
#include "pgar/reflexes.hpp"

namespace pgar {

// Metric knobs, all exposed through the harness configuration.
struct MetricsParams {
    std::size_t ece_bins = 15;
    std::size_t var_window = 25;       // rolling loss-variance window
    std::size_t sustain = 10;          // steps the variance must stay in band
    std::size_t composure_window = 25; // early/late R-variance windows

    void validate() const {
        if (ece_bins < 1) throw ConfigError("metrics ece_bins must be >= 1");
        if (var_window < 1) throw ConfigError("metrics var_window must be >= 1");
        if (sustain < 1) throw ConfigError("metrics sustain must be >= 1");
        if (composure_window < 1) throw ConfigError("metrics composure_window must be >= 1");
    }
};

// Expected calibration error over equal-width confidence bins:
// sum over bins of (|bin|/N) * |acc(bin) - conf(bin)|. Confidence exactly 1.0
// falls in the last bin.
inline double ece(std::span<const double> confidences, const std::vector<bool>& corrects,
                  std::size_t n_bins) {
    if (confidences.empty()) throw DomainError("ece: empty input");
    if (confidences.size() != corrects.size())
        throw DomainError("ece: confidences and corrects must have equal length");
    if (n_bins < 1) throw DomainError("ece: n_bins must be >= 1");
    for (const double c : confidences)
        if (!in_unit_interval(c)) throw DomainError("ece: confidence outside [0,1]");

    std::vector<double> conf_sum(n_bins, 0.0);
    std::vector<double> acc_sum(n_bins, 0.0);
    std::vector<std::size_t> count(n_bins, 0);
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        std::size_t bin = static_cast<std::size_t>(confidences[i] * static_cast<double>(n_bins));
        if (bin >= n_bins) bin = n_bins - 1;
        conf_sum[bin] += confidences[i];
        acc_sum[bin] += corrects[i] ? 1.0 : 0.0;
        ++count[bin];
    }
    double total = 0.0;
    const double n = static_cast<double>(confidences.size());
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (count[b] == 0) continue;
        const double cb = static_cast<double>(count[b]);
        total += (cb / n) * std::abs(acc_sum[b] / cb - conf_sum[b] / cb);
    }
    return total;
}

// Mean multiclass Brier score: mean over samples of sum_k (p_k - onehot_k)^2.
inline double brier(const Matrix& probabilities, std::span<const std::size_t> labels) {
    if (probabilities.rows != labels.size())
        throw DomainError("brier: row count does not match label count");
    if (probabilities.rows == 0) throw DomainError("brier: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < probabilities.rows; ++i) {
        if (labels[i] >= probabilities.cols) throw DomainError("brier: label out of range");
        double row_sum = 0.0;
        for (std::size_t j = 0; j < probabilities.cols; ++j) row_sum += probabilities(i, j);
        if (std::abs(row_sum - 1.0) > 1e-6)
            throw DomainError("brier: probability row does not sum to 1");
        double s = 0.0;
        for (std::size_t j = 0; j < probabilities.cols; ++j) {
            const double target = (j == labels[i]) ? 1.0 : 0.0;
            const double d = probabilities(i, j) - target;
            s += d * d;
        }
        total += s;
    }
    return total / static_cast<double>(probabilities.rows);
}

// Rolling population variance with a backward-looking window; indices before
// a full window use the partial prefix, so the series is defined from step 0.
inline std::vector<double> rolling_variance(std::span<const double> values, std::size_t window) {
    if (window < 1) throw DomainError("rolling_variance: window must be >= 1");
    std::vector<double> out(values.size(), 0.0);
    for (std::size_t t = 0; t < values.size(); ++t) {
        const std::size_t begin = t + 1 >= window ? t + 1 - window : 0;
        const std::size_t n = t - begin + 1;
        double mean = 0.0;
        for (std::size_t i = begin; i <= t; ++i) mean += values[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = begin; i <= t; ++i) {
            const double d = values[i] - mean;
            var += d * d;
        }
        out[t] = var / static_cast<double>(n);
    }
    return out;
}

// Scan core shared by recovery_time: first step after perturb_step whose
// rolling variance stays within +-5% of `reference` for `sustain` consecutive
// steps, expressed as an offset from perturb_step.
inline std::optional<std::size_t> recovery_scan(std::span<const double> variance_series,
                                                std::size_t perturb_step, double reference,
                                                std::size_t sustain) {
    if (sustain < 1) throw DomainError("recovery_scan: sustain must be >= 1");
    const double lo = reference - 0.05 * reference;
    const double hi = reference + 0.05 * reference;
    for (std::size_t t = perturb_step + 1; t + sustain <= variance_series.size(); ++t) {
        bool ok = true;
        for (std::size_t s = t; s < t + sustain; ++s) {
            if (variance_series[s] < lo || variance_series[s] > hi) {
                ok = false;
                break;
            }
        }
        if (ok) return t - perturb_step;
    }
    return std::nullopt;
}

// Recovery time tau_rec: steps after the perturbation until the rolling loss
// variance re-enters +-5% of its pre-perturbation mean and stays there for
// `sustain` steps. Reference = mean rolling variance over the w_var steps
// before the perturbation. Absent if the trace never recovers.
inline std::optional<std::size_t> recovery_time(std::span<const double> loss_trace,
                                                std::size_t perturb_step, std::size_t w_var,
                                                std::size_t sustain) {
    if (w_var < 1) throw DomainError("recovery_time: w_var must be >= 1");
    if (perturb_step < w_var)
        throw DomainError("recovery_time: insufficient pre-perturbation history");
    if (perturb_step >= loss_trace.size())
        throw DomainError("recovery_time: perturb_step beyond trace");
    const auto variance = rolling_variance(loss_trace, w_var);
    double reference = 0.0;
    for (std::size_t t = perturb_step - w_var; t < perturb_step; ++t) reference += variance[t];
    reference /= static_cast<double>(w_var);
    return recovery_scan(variance, perturb_step, reference, sustain);
}

// Reflex activations (incident or overconfidence at/above theta_act) per epoch.
inline double intervention_frequency(std::span<const double> incident_trace,
                                     std::span<const double> overconf_trace, double theta_act,
                                     std::size_t steps_per_epoch) {
    if (steps_per_epoch < 1)
        throw DomainError("intervention_frequency: steps_per_epoch must be >= 1");
    if (incident_trace.size() != overconf_trace.size())
        throw DomainError("intervention_frequency: trace length mismatch");
    if (incident_trace.empty()) return 0.0;
    std::size_t activations = 0;
    for (std::size_t t = 0; t < incident_trace.size(); ++t)
        if (incident_trace[t] >= theta_act || overconf_trace[t] >= theta_act) ++activations;
    const double epochs =
        static_cast<double>(incident_trace.size()) / static_cast<double>(steps_per_epoch);
    return static_cast<double>(activations) / epochs;
}

namespace detail {
inline double window_variance(std::span<const double> v) {
    double mean = 0.0;
    for (const double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (const double x : v) var += (x - mean) * (x - mean);
    return var / static_cast<double>(v.size());
}
} // namespace detail

// Composure: variance of R over the final window divided by variance over the
// initial window (plus a numeric floor). Values below 1 mean the reliability
// index settled.
inline double composure(std::span<const double> r_trace, std::size_t window) {
    if (window < 1) throw DomainError("composure: window must be >= 1");
    if (r_trace.size() < 2 * window)
        throw DomainError("composure: trace shorter than two windows");
    const double early = detail::window_variance(r_trace.subspan(0, window));
    const double late = detail::window_variance(r_trace.subspan(r_trace.size() - window, window));
    return late / (early + kEpsNum);
}

// Signed percentage deviation 100 * (variant - reference) / reference.
inline double delta_metric(double m_variant, double m_reference) {
    if (m_reference == 0.0) throw DomainError("delta_metric: zero reference");
    return 100.0 * (m_variant - m_reference) / m_reference;
}

// One run's evaluation summary. tau_rec is absent when no perturbation was
// configured (or the run never recovered); composure is absent when the trace
// is shorter than two composure windows.
struct MetricsSummary {
    double accuracy = 0.0;
    double ece = 0.0;
    double brier = 0.0;
    double loss_variance = 0.0; // mean rolling variance of the loss over the run
    std::optional<std::size_t> tau_rec;
    bool recovered = false;     // distinguishes "no perturbation" from "never recovered"
    bool perturbed = false;
    double intervention_freq = 0.0;
    std::optional<double> composure;
};

} // namespace pgar
