#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "pgar/errors.hpp"
#include "pgar/experiment.hpp"
#include "pgar/metrics.hpp"
#include "pgar/trace.hpp"

namespace pgar {

enum class PlotKind { CalibrationCurve, ReliabilityTrajectory, MaturityCurve, AgilitySafety };

inline PlotKind plot_kind_from_string(const std::string& s) {
    if (s == "calibration_curve") return PlotKind::CalibrationCurve;
    if (s == "reliability_trajectory") return PlotKind::ReliabilityTrajectory;
    if (s == "maturity_curve") return PlotKind::MaturityCurve;
    if (s == "agility_safety") return PlotKind::AgilitySafety;
    throw DomainError("unknown plot kind: " + s);
}

struct PlotOptions {
    std::size_t bins = 15;           // calibration_curve
    std::size_t steps_per_epoch = 0; // maturity_curve; required > 0
};

namespace detail {

inline void emit_calibration_curve(std::ostream& out, const std::vector<EvalSample>& samples,
                                   std::size_t bins) {
    if (bins < 1) throw DomainError("calibration_curve: bins must be >= 1");
    if (samples.empty()) throw DomainError("calibration_curve: no evaluation samples");
    std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
    std::vector<std::size_t> count(bins, 0);
    for (const auto& s : samples) {
        std::size_t b = static_cast<std::size_t>(s.confidence * static_cast<double>(bins));
        if (b >= bins) b = bins - 1;
        conf_sum[b] += s.confidence;
        acc_sum[b] += s.correct ? 1.0 : 0.0;
        ++count[b];
    }
    out << "bin,mean_confidence,accuracy,count\n";
    for (std::size_t b = 0; b < bins; ++b) {
        const double n = static_cast<double>(count[b]);
        out << b << ',' << format_double(count[b] ? conf_sum[b] / n : 0.0) << ','
            << format_double(count[b] ? acc_sum[b] / n : 0.0) << ',' << count[b] << '\n';
    }
}

inline void emit_reliability_trajectory(std::ostream& out,
                                        const std::vector<TraceRecord>& trace) {
    out << "step,R,eta\n";
    for (const auto& r : trace)
        out << r.step << ',' << format_double(r.reliability) << ',' << format_double(r.eta)
            << '\n';
}

inline void emit_maturity_curve(std::ostream& out, const std::vector<TraceRecord>& trace,
                                std::size_t steps_per_epoch) {
    if (steps_per_epoch < 1)
        throw DomainError("maturity_curve: steps_per_epoch must be >= 1");
    const std::size_t epochs = trace.size() / steps_per_epoch; // complete epochs only
    out << "epoch,r_variance,interventions\n";
    for (std::size_t e = 0; e < epochs; ++e) {
        double mean = 0.0;
        std::size_t interventions = 0;
        for (std::size_t t = e * steps_per_epoch; t < (e + 1) * steps_per_epoch; ++t) {
            mean += trace[t].reliability;
            if (trace[t].activated) ++interventions;
        }
        mean /= static_cast<double>(steps_per_epoch);
        double var = 0.0;
        for (std::size_t t = e * steps_per_epoch; t < (e + 1) * steps_per_epoch; ++t) {
            const double d = trace[t].reliability - mean;
            var += d * d;
        }
        var /= static_cast<double>(steps_per_epoch);
        out << e << ',' << format_double(var) << ',' << interventions << '\n';
    }
}

inline void emit_agility_safety(std::ostream& out, const std::vector<TraceRecord>& trace) {
    out << "step,mode,I,R\n";
    for (const auto& r : trace)
        out << r.step << ',' << mode_name(r.mode) << ',' << format_double(r.incident) << ','
            << format_double(r.reliability) << '\n';
}

} // namespace detail

// Emits figure-ready CSV data from a completed run. calibration_curve needs
// the per-sample eval data, maturity_curve needs steps_per_epoch; the other
// kinds use the trace alone.
inline void emit_plot_data(PlotKind kind, const std::vector<TraceRecord>& trace,
                           const std::vector<EvalSample>& eval_samples, const PlotOptions& opts,
                           std::ostream& out) {
    switch (kind) {
        case PlotKind::CalibrationCurve:
            detail::emit_calibration_curve(out, eval_samples, opts.bins);
            return;
        case PlotKind::ReliabilityTrajectory:
            detail::emit_reliability_trajectory(out, trace);
            return;
        case PlotKind::MaturityCurve:
            detail::emit_maturity_curve(out, trace, opts.steps_per_epoch);
            return;
        case PlotKind::AgilitySafety:
            detail::emit_agility_safety(out, trace);
            return;
    }
    throw DomainError("unknown plot kind");
}

} // namespace pgar
