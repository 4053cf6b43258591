#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgar/dataset.hpp"
#include "pgar/errors.hpp"
#include "pgar/fusion.hpp"
#include "pgar/metrics.hpp"
#include "pgar/optimizer.hpp"
#include "pgar/reflexes.hpp"

namespace pgar {

using json = nlohmann::ordered_json;

// Ablation variants: NoX removes reflex channel X from the fusion and
// renormalizes the remaining weights to sum 1; PlainBaseline bypasses the
// modulation path entirely (eta = eta0 at every step). Reflexes are always
// computed and logged.
enum class Ablation { Full, NoIncident, NoOverconfidence, NoMemory, PlainBaseline };

inline const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::Full: return "full";
        case Ablation::NoIncident: return "no_incident";
        case Ablation::NoOverconfidence: return "no_overconfidence";
        case Ablation::NoMemory: return "no_memory";
        default: return "plain_baseline";
    }
}

inline Ablation ablation_from_string(const std::string& s) {
    if (s == "full") return Ablation::Full;
    if (s == "no_incident") return Ablation::NoIncident;
    if (s == "no_overconfidence") return Ablation::NoOverconfidence;
    if (s == "no_memory") return Ablation::NoMemory;
    if (s == "plain_baseline") return Ablation::PlainBaseline;
    throw ConfigError("unknown ablation: " + s);
}

struct DatasetConfig {
    enum class Type { Blobs, Idx };
    Type type = Type::Blobs;

    // blobs
    std::size_t n = 600;
    std::size_t d = 2;
    std::size_t n_classes = 3;
    double spread = 1.0;
    std::optional<std::uint64_t> seed; // fixed data seed; derived from the run seed if absent
    std::optional<std::size_t> eval_n; // held-out eval size; defaults to n

    // idx
    std::string images;
    std::string labels;
    std::string test_images;
    std::string test_labels;
    std::size_t limit = 0; // keep first N training samples; 0 = all
};

struct ExperimentConfig {
    DatasetConfig dataset;
    std::optional<std::vector<std::size_t>> hidden; // default depends on dataset type
    OptimizerKind optimizer = OptimizerKind::Adam;
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    bool reshuffle = true; // false keeps one fixed batch partition across epochs
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    ControllerConfig controller;
    ReflexParams reflexes;
    double descent_tol = 1e-9;
    MetricsParams metrics;
    Ablation ablation = Ablation::Full;
    std::optional<PerturbationSpec> perturbation;
    std::string output_dir = "out";

    std::vector<std::size_t> hidden_dims() const {
        if (hidden) return *hidden;
        return dataset.type == DatasetConfig::Type::Idx ? std::vector<std::size_t>{64}
                                                        : std::vector<std::size_t>{32};
    }

    void validate() const {
        controller.validate();
        reflexes.validate();
        metrics.validate();
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(descent_tol >= 0.0)) throw ConfigError("stability descent_tol must be >= 0");
        if (seeds.empty()) throw ConfigError("seeds must not be empty");
        if (hidden)
            for (const std::size_t h : *hidden)
                if (h < 1) throw ConfigError("model hidden widths must be >= 1");
        if (dataset.type == DatasetConfig::Type::Blobs) {
            if (dataset.n_classes < 2) throw ConfigError("dataset n_classes must be >= 2");
            if (dataset.n < 1) throw ConfigError("dataset n must be >= 1");
            if (dataset.d < 1) throw ConfigError("dataset d must be >= 1");
            if (!(dataset.spread >= 0.0)) throw ConfigError("dataset spread must be >= 0");
        } else {
            if (dataset.images.empty()) throw ConfigError("dataset images path is required");
            if (dataset.labels.empty()) throw ConfigError("dataset labels path is required");
            if (dataset.test_images.empty() != dataset.test_labels.empty())
                throw ConfigError("dataset test_images and test_labels must be given together");
        }
        if (perturbation) perturbation->validate();
    }
};

namespace detail {

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                       const std::string& ctx) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known) throw ConfigError("unknown key '" + item.key() + "' in " + ctx);
    }
}

inline double get_double(const json& obj, const char* key, double fallback,
                         const std::string& ctx) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number()) throw ConfigError(ctx + "." + key + " must be a number");
    return v.get<double>();
}

inline std::size_t get_size(const json& obj, const char* key, std::size_t fallback,
                            const std::string& ctx) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ConfigError(ctx + "." + key + " must be a non-negative integer");
    return static_cast<std::size_t>(v.get<long long>());
}

inline std::string get_string(const json& obj, const char* key, const std::string& fallback,
                              const std::string& ctx) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_string()) throw ConfigError(ctx + "." + key + " must be a string");
    return v.get<std::string>();
}

inline DatasetConfig parse_dataset(const json& obj) {
    DatasetConfig ds;
    check_keys(obj,
               {"type", "n", "d", "n_classes", "spread", "seed", "eval_n", "images", "labels",
                "test_images", "test_labels", "limit"},
               "dataset");
    const std::string type = get_string(obj, "type", "blobs", "dataset");
    if (type == "blobs") {
        ds.type = DatasetConfig::Type::Blobs;
    } else if (type == "idx") {
        ds.type = DatasetConfig::Type::Idx;
    } else {
        throw ConfigError("dataset.type must be 'blobs' or 'idx'");
    }
    ds.n = get_size(obj, "n", ds.n, "dataset");
    ds.d = get_size(obj, "d", ds.d, "dataset");
    ds.n_classes = get_size(obj, "n_classes", ds.n_classes, "dataset");
    ds.spread = get_double(obj, "spread", ds.spread, "dataset");
    if (obj.contains("seed")) ds.seed = get_size(obj, "seed", 0, "dataset");
    if (obj.contains("eval_n")) ds.eval_n = get_size(obj, "eval_n", 0, "dataset");
    ds.images = get_string(obj, "images", "", "dataset");
    ds.labels = get_string(obj, "labels", "", "dataset");
    ds.test_images = get_string(obj, "test_images", "", "dataset");
    ds.test_labels = get_string(obj, "test_labels", "", "dataset");
    ds.limit = get_size(obj, "limit", 0, "dataset");
    return ds;
}

inline FusionWeights parse_weights(const json& obj) {
    check_keys(obj, {"incident", "overconfidence", "memory"}, "controller.weights");
    const double wi = get_double(obj, "incident", 0.4, "controller.weights");
    const double wo = get_double(obj, "overconfidence", 0.3, "controller.weights");
    const double wm = get_double(obj, "memory", 0.3, "controller.weights");
    return FusionWeights(wi, wo, wm); // construction validates the sum
}

inline ControllerConfig parse_controller(const json& obj) {
    ControllerConfig c;
    check_keys(obj,
               {"eta0", "delta", "kappa", "gamma", "eps_bar", "theta_act", "theta_safe",
                "weights"},
               "controller");
    c.eta0 = get_double(obj, "eta0", c.eta0, "controller");
    c.delta = get_double(obj, "delta", c.delta, "controller");
    c.kappa = get_double(obj, "kappa", c.kappa, "controller");
    c.gamma = get_double(obj, "gamma", c.gamma, "controller");
    c.eps_bar = get_double(obj, "eps_bar", c.eps_bar, "controller");
    c.theta_act = get_double(obj, "theta_act", c.theta_act, "controller");
    c.theta_safe = get_double(obj, "theta_safe", c.theta_safe, "controller");
    if (obj.contains("weights")) c.weights = parse_weights(obj.at("weights"));
    return c;
}

inline ReflexParams parse_reflexes(const json& obj) {
    ReflexParams r;
    check_keys(obj, {"ema_decay", "calib_window", "memory_init", "rho_up", "rho_down"},
               "reflexes");
    r.ema_decay = get_double(obj, "ema_decay", r.ema_decay, "reflexes");
    r.calib_window = get_size(obj, "calib_window", r.calib_window, "reflexes");
    r.memory_init = get_double(obj, "memory_init", r.memory_init, "reflexes");
    r.rho_up = get_double(obj, "rho_up", r.rho_up, "reflexes");
    r.rho_down = get_double(obj, "rho_down", r.rho_down, "reflexes");
    return r;
}

inline MetricsParams parse_metrics(const json& obj) {
    MetricsParams m;
    check_keys(obj, {"ece_bins", "var_window", "sustain", "composure_window"}, "metrics");
    m.ece_bins = get_size(obj, "ece_bins", m.ece_bins, "metrics");
    m.var_window = get_size(obj, "var_window", m.var_window, "metrics");
    m.sustain = get_size(obj, "sustain", m.sustain, "metrics");
    m.composure_window = get_size(obj, "composure_window", m.composure_window, "metrics");
    return m;
}

inline PerturbationSpec parse_perturbation(const json& obj) {
    PerturbationSpec p;
    check_keys(obj, {"kind", "at_step", "p", "scale", "duration", "sigma"}, "perturbation");
    const std::string kind = get_string(obj, "kind", "", "perturbation");
    if (kind == "label_noise") {
        p.kind = PerturbationSpec::Kind::LabelNoise;
        if (!obj.contains("p")) throw ConfigError("perturbation.p is required for label_noise");
        if (obj.contains("scale") || obj.contains("duration") || obj.contains("sigma"))
            throw ConfigError("perturbation: field not valid for label_noise");
    } else if (kind == "gradient_spike") {
        p.kind = PerturbationSpec::Kind::GradientSpike;
        if (!obj.contains("scale"))
            throw ConfigError("perturbation.scale is required for gradient_spike");
        if (obj.contains("p") || obj.contains("sigma"))
            throw ConfigError("perturbation: field not valid for gradient_spike");
    } else if (kind == "input_noise") {
        p.kind = PerturbationSpec::Kind::InputNoise;
        if (!obj.contains("sigma"))
            throw ConfigError("perturbation.sigma is required for input_noise");
        if (obj.contains("p") || obj.contains("scale") || obj.contains("duration"))
            throw ConfigError("perturbation: field not valid for input_noise");
    } else {
        throw ConfigError("perturbation.kind must be label_noise, gradient_spike or input_noise");
    }
    if (!obj.contains("at_step")) throw ConfigError("perturbation.at_step is required");
    p.at_step = get_size(obj, "at_step", 0, "perturbation");
    p.p = get_double(obj, "p", p.p, "perturbation");
    p.scale = get_double(obj, "scale", p.scale, "perturbation");
    p.duration = get_size(obj, "duration", p.duration, "perturbation");
    p.sigma = get_double(obj, "sigma", p.sigma, "perturbation");
    p.validate();
    return p;
}

} // namespace detail

// Parses an experiment configuration document. Unknown keys are rejected at
// every level; absent keys fall back to the documented defaults, so {} is the
// full-default blobs configuration.
inline ExperimentConfig parse_config_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
    detail::check_keys(doc,
                       {"dataset", "model", "optimizer", "epochs", "batch_size", "reshuffle",
                        "seed", "seeds", "controller", "reflexes", "stability", "metrics",
                        "ablation", "perturbation", "output_dir"},
                       "config");
    ExperimentConfig cfg;
    if (doc.contains("dataset")) cfg.dataset = detail::parse_dataset(doc.at("dataset"));
    if (doc.contains("model")) {
        const auto& m = doc.at("model");
        detail::check_keys(m, {"hidden"}, "model");
        if (m.contains("hidden")) {
            const auto& h = m.at("hidden");
            if (!h.is_array()) throw ConfigError("model.hidden must be an array of widths");
            std::vector<std::size_t> widths;
            for (const auto& v : h) {
                if (!v.is_number_integer() || v.get<long long>() < 1)
                    throw ConfigError("model.hidden entries must be positive integers");
                widths.push_back(static_cast<std::size_t>(v.get<long long>()));
            }
            cfg.hidden = widths;
        }
    }
    if (doc.contains("optimizer")) {
        const std::string name = detail::get_string(doc, "optimizer", "adam", "config");
        if (name == "sgd")
            cfg.optimizer = OptimizerKind::Sgd;
        else if (name == "adam")
            cfg.optimizer = OptimizerKind::Adam;
        else if (name == "adabound")
            cfg.optimizer = OptimizerKind::AdaBound;
        else
            throw ConfigError("optimizer must be sgd, adam or adabound");
    }
    cfg.epochs = detail::get_size(doc, "epochs", cfg.epochs, "config");
    cfg.batch_size = detail::get_size(doc, "batch_size", cfg.batch_size, "config");
    if (doc.contains("reshuffle")) {
        if (!doc.at("reshuffle").is_boolean()) throw ConfigError("reshuffle must be a boolean");
        cfg.reshuffle = doc.at("reshuffle").get<bool>();
    }
    cfg.seed = detail::get_size(doc, "seed", cfg.seed, "config");
    if (doc.contains("seeds")) {
        const auto& s = doc.at("seeds");
        if (!s.is_array() || s.empty()) throw ConfigError("seeds must be a non-empty array");
        cfg.seeds.clear();
        for (const auto& v : s) {
            if (!v.is_number_integer() || v.get<long long>() < 0)
                throw ConfigError("seeds entries must be non-negative integers");
            cfg.seeds.push_back(static_cast<std::uint64_t>(v.get<long long>()));
        }
    }
    if (doc.contains("controller")) cfg.controller = detail::parse_controller(doc.at("controller"));
    if (doc.contains("reflexes")) cfg.reflexes = detail::parse_reflexes(doc.at("reflexes"));
    if (doc.contains("stability")) {
        const auto& s = doc.at("stability");
        detail::check_keys(s, {"descent_tol"}, "stability");
        cfg.descent_tol = detail::get_double(s, "descent_tol", cfg.descent_tol, "stability");
    }
    if (doc.contains("metrics")) cfg.metrics = detail::parse_metrics(doc.at("metrics"));
    if (doc.contains("ablation"))
        cfg.ablation = ablation_from_string(detail::get_string(doc, "ablation", "full", "config"));
    if (doc.contains("perturbation") && !doc.at("perturbation").is_null())
        cfg.perturbation = detail::parse_perturbation(doc.at("perturbation"));
    cfg.output_dir = detail::get_string(doc, "output_dir", cfg.output_dir, "config");
    cfg.validate();
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config_json(doc);
}

// Effective fusion weights under an ablation: the removed channel's weight is
// zeroed and the remaining weights are renormalized to sum 1.
inline FusionWeights effective_weights(const FusionWeights& w, Ablation ablation) {
    double wi = w.incident, wo = w.overconfidence, wm = w.memory;
    switch (ablation) {
        case Ablation::NoIncident: wi = 0.0; break;
        case Ablation::NoOverconfidence: wo = 0.0; break;
        case Ablation::NoMemory: wm = 0.0; break;
        default: return w;
    }
    const double sum = wi + wo + wm;
    if (sum <= 0.0) throw ConfigError("ablation removes all fusion weight");
    return FusionWeights(wi / sum, wo / sum, wm / sum);
}

} // namespace pgar
