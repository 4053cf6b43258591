#pragma once

#include <charconv>
#include <cstddef>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pgar/errors.hpp"
#include "pgar/fusion.hpp"

namespace pgar {

// One row per optimization step. Column order is part of the trace format and
// must not change: step,loss,I,O,M,R,eta,V,delta_V,mode,activated,grad_norm,mu_hat
struct TraceRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double incident = 0.0;
    double overconfidence = 0.0;
    double memory = 0.0;
    double reliability = 0.0;
    double eta = 0.0;
    double v = 0.0;
    double delta_v = 0.0;
    Mode mode = Mode::Nominal;
    bool activated = false;
    double grad_norm = 0.0;
    std::optional<double> mu_hat; // absent when the gradient norm is zero
};

inline constexpr std::string_view kTraceHeader =
    "step,loss,I,O,M,R,eta,V,delta_V,mode,activated,grad_norm,mu_hat";

// Shortest round-trip decimal form; deterministic for identical doubles.
inline std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline void write_trace_row(std::ostream& out, const TraceRecord& r) {
    out << r.step << ',' << format_double(r.loss) << ',' << format_double(r.incident) << ','
        << format_double(r.overconfidence) << ',' << format_double(r.memory) << ','
        << format_double(r.reliability) << ',' << format_double(r.eta) << ','
        << format_double(r.v) << ',' << format_double(r.delta_v) << ',' << mode_name(r.mode)
        << ',' << (r.activated ? '1' : '0') << ',' << format_double(r.grad_norm) << ',';
    if (r.mu_hat) out << format_double(*r.mu_hat);
    out << '\n';
}

inline void write_trace(std::ostream& out, const std::vector<TraceRecord>& trace) {
    out << kTraceHeader << '\n';
    for (const auto& r : trace) write_trace_row(out, r);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    for (const char c : line) {
        if (c == ',') {
            fields.push_back(field);
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    fields.push_back(field);
    return fields;
}

inline double parse_double_field(const std::string& s, const char* what) {
    double value = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw FormatError(std::string("trace: bad numeric field '") + what + "': " + s);
    return value;
}

inline Mode parse_mode(const std::string& s) {
    if (s == "agility") return Mode::Agility;
    if (s == "safety") return Mode::Safety;
    if (s == "nominal") return Mode::Nominal;
    throw FormatError("trace: unknown mode: " + s);
}

} // namespace detail

inline std::vector<TraceRecord> read_trace(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("trace: empty file");
    if (line != kTraceHeader) throw FormatError("trace: unexpected header: " + line);
    std::vector<TraceRecord> trace;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 13) throw FormatError("trace: wrong field count in row: " + line);
        TraceRecord r;
        r.step = static_cast<std::size_t>(detail::parse_double_field(f[0], "step"));
        r.loss = detail::parse_double_field(f[1], "loss");
        r.incident = detail::parse_double_field(f[2], "I");
        r.overconfidence = detail::parse_double_field(f[3], "O");
        r.memory = detail::parse_double_field(f[4], "M");
        r.reliability = detail::parse_double_field(f[5], "R");
        r.eta = detail::parse_double_field(f[6], "eta");
        r.v = detail::parse_double_field(f[7], "V");
        r.delta_v = detail::parse_double_field(f[8], "delta_V");
        r.mode = detail::parse_mode(f[9]);
        r.activated = f[10] == "1";
        r.grad_norm = detail::parse_double_field(f[11], "grad_norm");
        if (!f[12].empty()) r.mu_hat = detail::parse_double_field(f[12], "mu_hat");
        trace.push_back(r);
    }
    return trace;
}

inline std::vector<TraceRecord> read_trace_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("trace: cannot open " + path);
    return read_trace(in);
}

} // namespace pgar
