#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "pgar/config.hpp"
#include "pgar/dataset.hpp"
#include "pgar/errors.hpp"
#include "pgar/fusion.hpp"
#include "pgar/metrics.hpp"
#include "pgar/model.hpp"
#include "pgar/optimizer.hpp"
#include "pgar/reflexes.hpp"
#include "pgar/stability.hpp"
#include "pgar/trace.hpp"

namespace pgar {

// Per-sample evaluation outcome, kept for calibration curves.
struct EvalSample {
    double confidence = 0.0;
    bool correct = false;
};

struct StabilityReport {
    std::size_t violations = 0;
    std::optional<double> max_delta_v;
    double summability_partial = 0.0;
    double descent_tol = 0.0;
    double contraction_exceed_fraction = 0.0;
    AssumptionReport assumptions;
};

struct RunResult {
    std::vector<TraceRecord> trace;
    MetricsSummary summary;
    StabilityReport stability;
    std::vector<EvalSample> eval_samples;
    std::size_t steps_per_epoch = 0;
    std::size_t total_steps = 0;
    std::size_t eval_size = 0;
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::Full;
    OptimizerKind optimizer = OptimizerKind::Adam;
    bool faulted = false;
    std::string fault_reason;
    std::size_t fault_step = 0;
};

namespace detail {

struct BatchStats {
    double mean_confidence = 0.0;
    double accuracy = 0.0;
};

inline BatchStats batch_stats(const ForwardCache& cache, std::span<const std::size_t> labels) {
    BatchStats s;
    const Matrix& p = cache.probs;
    for (std::size_t i = 0; i < p.rows; ++i) {
        std::size_t arg = 0;
        double best = p(i, 0);
        for (std::size_t j = 1; j < p.cols; ++j) {
            if (p(i, j) > best) {
                best = p(i, j);
                arg = j;
            }
        }
        s.mean_confidence += best;
        if (arg == labels[i]) s.accuracy += 1.0;
    }
    s.mean_confidence /= static_cast<double>(p.rows);
    s.accuracy /= static_cast<double>(p.rows);
    return s;
}

inline double vec_delta_norm(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline Dataset build_train_dataset(const ExperimentConfig& cfg, std::uint64_t data_seed) {
    if (cfg.dataset.type == DatasetConfig::Type::Blobs)
        return make_blobs(data_seed, cfg.dataset.n, cfg.dataset.d, cfg.dataset.n_classes,
                          cfg.dataset.spread);
    return load_idx(cfg.dataset.images, cfg.dataset.labels, cfg.dataset.limit);
}

inline Dataset build_eval_dataset(const ExperimentConfig& cfg, std::uint64_t data_seed,
                                  const Dataset& train) {
    if (cfg.dataset.type == DatasetConfig::Type::Blobs) {
        const std::size_t n = cfg.dataset.eval_n.value_or(cfg.dataset.n);
        return make_blobs(derive_seed(data_seed, "eval"), n, cfg.dataset.d,
                          cfg.dataset.n_classes, cfg.dataset.spread);
    }
    if (!cfg.dataset.test_images.empty())
        return load_idx(cfg.dataset.test_images, cfg.dataset.test_labels);
    return train; // no held-out split available
}

} // namespace detail

// Executes one seeded run of the supervisory loop:
// forward/backward -> reflexes -> fusion -> learning rate -> optimizer step ->
// stability audit -> trace row. Deterministic per (config, seed). A training
// fault (non-finite loss, gradient or parameter) stops the loop; the partial
// trace is kept and the result is marked faulted.
inline RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.validate();

    RunResult result;
    result.seed = seed;
    result.ablation = cfg.ablation;
    result.optimizer = cfg.optimizer;

    const std::uint64_t data_seed = cfg.dataset.seed.value_or(derive_seed(seed, "data"));
    Dataset train = detail::build_train_dataset(cfg, data_seed);
    Dataset eval = detail::build_eval_dataset(cfg, data_seed, train);
    if (train.size() == 0) throw ConfigError("training dataset is empty");
    if (eval.size() == 0) throw ConfigError("evaluation dataset is empty");
    const std::size_t n_classes = std::max(train.n_classes, eval.n_classes);
    train.n_classes = eval.n_classes = n_classes;
    train.validate();
    eval.validate();

    Rng init_rng(derive_seed(seed, "init"));
    Mlp model = make_mlp(train.dim(), cfg.hidden_dims(), n_classes, init_rng);

    Optimizer::Options opt_opts;
    opt_opts.eta0_base = cfg.controller.eta0;
    Optimizer optimizer(cfg.optimizer, opt_opts);

    Rng shuffle_rng(derive_seed(seed, "shuffle"));
    Rng perturb_rng(derive_seed(seed, "perturb"));

    const std::size_t batch = std::min(cfg.batch_size, train.size());
    result.steps_per_epoch = std::max<std::size_t>(1, train.size() / batch);
    result.total_steps = cfg.epochs * result.steps_per_epoch;

    if (cfg.perturbation && cfg.perturbation->at_step >= result.total_steps)
        throw ConfigError("perturbation.at_step is beyond the run length");

    const FusionWeights weights = effective_weights(cfg.controller.weights, cfg.ablation);
    const bool plain = cfg.ablation == Ablation::PlainBaseline;

    ReflexEstimatorState reflex_state(cfg.reflexes);
    LyapunovLedger ledger(cfg.descent_tol);
    ContractionAudit contraction;
    AssumptionReport assumptions;

    std::vector<double> prev_flat_grad;
    std::vector<double> prev_flat_params = flatten_params(model);

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    Matrix batch_inputs(batch, train.dim());
    std::vector<std::size_t> batch_labels(batch);

    std::size_t step = 0;
    try {
        for (std::size_t epoch = 0; epoch < cfg.epochs && !result.faulted; ++epoch) {
            if (epoch == 0 || cfg.reshuffle) shuffle_rng.shuffle(order);
            for (std::size_t b = 0; b < result.steps_per_epoch; ++b, ++step) {
                if (cfg.perturbation && cfg.perturbation->at_step == step) {
                    switch (cfg.perturbation->kind) {
                        case PerturbationSpec::Kind::LabelNoise:
                            apply_label_noise(train, cfg.perturbation->p, perturb_rng);
                            break;
                        case PerturbationSpec::Kind::InputNoise:
                            apply_input_noise(train, cfg.perturbation->sigma, perturb_rng);
                            break;
                        case PerturbationSpec::Kind::GradientSpike:
                            break; // applied per step below
                    }
                }

                for (std::size_t i = 0; i < batch; ++i) {
                    const std::size_t idx = order[b * batch + i];
                    batch_labels[i] = train.labels[idx];
                    for (std::size_t j = 0; j < train.dim(); ++j)
                        batch_inputs(i, j) = train.inputs(idx, j);
                }

                ForwardCache cache = forward(model, batch_inputs);
                BackwardResult back = backward(model, cache, batch_labels);
                if (!std::isfinite(back.loss))
                    throw TrainingFault("non-finite loss");

                if (cfg.perturbation && cfg.perturbation->spikes_at(step))
                    back.grads.scale(cfg.perturbation->scale);
                const double grad_norm = back.grads.norm();
                if (!std::isfinite(grad_norm)) throw TrainingFault("non-finite gradient");

                const detail::BatchStats stats = detail::batch_stats(cache, batch_labels);

                StepObservation obs;
                obs.step = step;
                obs.loss = back.loss;
                obs.mean_confidence = stats.mean_confidence;
                obs.batch_accuracy = stats.accuracy;
                obs.grad_norm = grad_norm;
                const ReflexSignals signals = observe(reflex_state, obs);

                const double reliability =
                    fuse(signals.incident, signals.overconfidence, signals.memory, weights);
                const double eta =
                    plain ? cfg.controller.eta0 : learning_rate(reliability, cfg.controller);
                const Mode mode = classify_mode(reliability, signals.incident, cfg.controller);

                const Gradients direction = optimizer.step(model, back.grads, eta);
                if (!model.finite()) throw TrainingFault("non-finite parameters");

                const std::vector<double> flat_grad = back.grads.flatten();
                const std::vector<double> flat_dir = direction.flatten();
                const AlignmentDiag align = alignment_diagnostics(flat_grad, flat_dir);
                assumptions.absorb_alignment(align);
                assumptions.absorb_reliability(reliability);

                const std::vector<double> flat_params = flatten_params(model);
                if (!prev_flat_grad.empty())
                    assumptions.absorb_secant(detail::vec_delta_norm(flat_grad, prev_flat_grad),
                                              detail::vec_delta_norm(flat_params,
                                                                     prev_flat_params));
                prev_flat_grad = flat_grad;
                prev_flat_params = flat_params;

                const DescentVerdict verdict = ledger.record_step(
                    back.loss, reliability, grad_norm, cfg.controller.kappa, cfg.controller.delta);
                contraction.record(reliability, cfg.controller);

                TraceRecord rec;
                rec.step = step;
                rec.loss = back.loss;
                rec.incident = signals.incident;
                rec.overconfidence = signals.overconfidence;
                rec.memory = signals.memory;
                rec.reliability = reliability;
                rec.eta = eta;
                rec.v = verdict.v;
                rec.delta_v = verdict.delta_v;
                rec.mode = mode;
                rec.activated = signals.incident >= cfg.controller.theta_act ||
                                signals.overconfidence >= cfg.controller.theta_act;
                rec.grad_norm = grad_norm;
                rec.mu_hat = align.mu_hat;
                result.trace.push_back(rec);
            }
        }
    } catch (const TrainingFault& fault) {
        result.faulted = true;
        result.fault_reason = fault.what();
        result.fault_step = step;
    }

    result.stability.violations = ledger.violations();
    result.stability.max_delta_v = ledger.max_delta_v();
    result.stability.summability_partial = ledger.summability_partial();
    result.stability.descent_tol = ledger.tol();
    result.stability.contraction_exceed_fraction = contraction.exceed_fraction();
    result.stability.assumptions = assumptions;

    if (result.faulted) return result;

    // Held-out evaluation pass. A model that stayed finite during training
    // can still overflow here; that is a training fault, not a metric error.
    result.eval_size = eval.size();
    std::vector<double> confidences;
    std::vector<bool> corrects;
    Matrix eval_probs(eval.size(), n_classes);
    std::size_t hits = 0;
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < eval.size(); start += chunk) {
        const std::size_t m = std::min(chunk, eval.size() - start);
        Matrix block(m, eval.dim());
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < eval.dim(); ++j)
                block(i, j) = eval.inputs(start + i, j);
        const ForwardCache cache = forward(model, block);
        if (!all_finite(cache.probs)) {
            result.faulted = true;
            result.fault_reason = "non-finite evaluation probabilities";
            result.fault_step = step;
            result.eval_samples.clear();
            return result;
        }
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t arg = 0;
            double best = cache.probs(i, 0);
            for (std::size_t j = 0; j < n_classes; ++j) {
                eval_probs(start + i, j) = cache.probs(i, j);
                if (cache.probs(i, j) > best) {
                    best = cache.probs(i, j);
                    arg = j;
                }
            }
            const bool correct = arg == eval.labels[start + i];
            if (correct) ++hits;
            confidences.push_back(best);
            corrects.push_back(correct);
            result.eval_samples.push_back({best, correct});
        }
    }

    MetricsSummary& summary = result.summary;
    summary.accuracy = static_cast<double>(hits) / static_cast<double>(eval.size());
    summary.ece = ece(confidences, corrects, cfg.metrics.ece_bins);
    summary.brier = brier(eval_probs, eval.labels);

    std::vector<double> losses, incidents, overconfs, reliabilities;
    losses.reserve(result.trace.size());
    for (const auto& r : result.trace) {
        losses.push_back(r.loss);
        incidents.push_back(r.incident);
        overconfs.push_back(r.overconfidence);
        reliabilities.push_back(r.reliability);
    }

    const auto rollvar = rolling_variance(losses, cfg.metrics.var_window);
    double var_sum = 0.0;
    for (const double v : rollvar) var_sum += v;
    summary.loss_variance = rollvar.empty() ? 0.0 : var_sum / static_cast<double>(rollvar.size());

    if (cfg.perturbation) {
        summary.perturbed = true;
        // tau_rec needs var_window steps of pre-perturbation history; without
        // them the metric is undefined and stays absent.
        if (cfg.perturbation->at_step >= cfg.metrics.var_window)
            summary.tau_rec = recovery_time(losses, cfg.perturbation->at_step,
                                            cfg.metrics.var_window, cfg.metrics.sustain);
        summary.recovered = summary.tau_rec.has_value();
    }

    summary.intervention_freq = intervention_frequency(incidents, overconfs,
                                                       cfg.controller.theta_act,
                                                       result.steps_per_epoch);
    if (reliabilities.size() >= 2 * cfg.metrics.composure_window)
        summary.composure = composure(reliabilities, cfg.metrics.composure_window);

    return result;
}

inline RunResult run_experiment(const ExperimentConfig& cfg) {
    return run_experiment(cfg, cfg.seed);
}

// ---- run artifacts -------------------------------------------------------

inline json metrics_to_json(const RunResult& r) {
    json doc;
    if (!r.faulted) {
        json summary;
        summary["accuracy"] = r.summary.accuracy;
        summary["ece"] = r.summary.ece;
        summary["brier"] = r.summary.brier;
        summary["loss_variance"] = r.summary.loss_variance;
        if (r.summary.tau_rec) summary["tau_rec"] = *r.summary.tau_rec;
        summary["intervention_freq"] = r.summary.intervention_freq;
        if (r.summary.composure) summary["composure"] = *r.summary.composure;
        doc["summary"] = summary;
    }

    json stability;
    stability["violations"] = r.stability.violations;
    if (r.stability.max_delta_v) stability["max_delta_v"] = *r.stability.max_delta_v;
    stability["summability_partial"] = r.stability.summability_partial;
    stability["descent_tol"] = r.stability.descent_tol;
    stability["contraction_exceed_fraction"] = r.stability.contraction_exceed_fraction;
    json assumptions;
    if (r.stability.assumptions.mu_hat) assumptions["mu_hat"] = *r.stability.assumptions.mu_hat;
    assumptions["g_norm"] = r.stability.assumptions.g_norm;
    if (r.stability.assumptions.l_smooth_est)
        assumptions["l_smooth_est"] = *r.stability.assumptions.l_smooth_est;
    assumptions["r_lower_observed"] = r.stability.assumptions.r_lower_observed;
    stability["assumptions"] = assumptions;
    doc["stability"] = stability;

    json run;
    run["seed"] = r.seed;
    run["ablation"] = ablation_name(r.ablation);
    run["optimizer"] = optimizer_name(r.optimizer);
    run["steps_per_epoch"] = r.steps_per_epoch;
    run["total_steps"] = r.total_steps;
    run["eval_size"] = r.eval_size;
    run["faulted"] = r.faulted;
    doc["run"] = run;

    if (r.faulted) {
        json fault;
        fault["step"] = r.fault_step;
        fault["reason"] = r.fault_reason;
        doc["fault"] = fault;
    }
    return doc;
}

inline void write_eval_samples(std::ostream& out, const std::vector<EvalSample>& samples) {
    out << "confidence,correct\n";
    for (const auto& s : samples)
        out << format_double(s.confidence) << ',' << (s.correct ? '1' : '0') << '\n';
}

inline std::vector<EvalSample> read_eval_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("eval: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "confidence,correct")
        throw FormatError("eval: unexpected header in " + path);
    std::vector<EvalSample> samples;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 2) throw FormatError("eval: wrong field count in row: " + line);
        samples.push_back({detail::parse_double_field(f[0], "confidence"), f[1] == "1"});
    }
    return samples;
}

// Writes trace.csv, metrics.json and eval.csv into `dir`.
inline void write_run_outputs(const RunResult& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "trace.csv", std::ios::binary);
        if (!out) throw FormatError("cannot write " + (dir / "trace.csv").string());
        write_trace(out, r.trace);
    }
    {
        std::ofstream out(dir / "metrics.json", std::ios::binary);
        if (!out) throw FormatError("cannot write " + (dir / "metrics.json").string());
        out << metrics_to_json(r).dump(2) << '\n';
    }
    if (!r.faulted) {
        std::ofstream out(dir / "eval.csv", std::ios::binary);
        if (!out) throw FormatError("cannot write " + (dir / "eval.csv").string());
        write_eval_samples(out, r.eval_samples);
    }
}

// ---- ablation study ------------------------------------------------------

struct AblationRow {
    Ablation variant = Ablation::Full;
    bool faulted = false;
    std::size_t runs = 0;
    std::size_t recovered_runs = 0;
    double loss_variance = 0.0; // seed means
    double ece = 0.0;
    std::optional<double> tau_rec; // censored mean; absent without perturbation
    std::optional<double> d_loss_variance;
    std::optional<double> d_ece;
    std::optional<double> d_tau_rec;
};

struct AblationTable {
    std::vector<AblationRow> rows; // Full, NoIncident, NoOverconfidence, NoMemory, PlainBaseline
};

// Runs the five-variant ablation protocol over the given seeds and computes
// the delta table against the Full row. tau_rec aggregation censors
// unrecovered runs at (total_steps - at_step). A faulted sub-run marks its
// row faulted; the other rows still complete.
inline AblationTable run_ablation(const ExperimentConfig& base,
                                  const std::vector<std::uint64_t>& seeds,
                                  std::vector<RunResult>* all_runs = nullptr) {
    if (seeds.empty()) throw ConfigError("run_ablation: at least one seed required");
    const Ablation variants[] = {Ablation::Full, Ablation::NoIncident,
                                 Ablation::NoOverconfidence, Ablation::NoMemory,
                                 Ablation::PlainBaseline};
    AblationTable table;
    for (const Ablation variant : variants) {
        ExperimentConfig cfg = base;
        cfg.ablation = variant;
        AblationRow row;
        row.variant = variant;
        double loss_var_sum = 0.0, ece_sum = 0.0, tau_sum = 0.0;
        bool any_perturbed = false;
        for (const std::uint64_t seed : seeds) {
            RunResult r = run_experiment(cfg, seed);
            if (all_runs) all_runs->push_back(r);
            if (r.faulted) {
                row.faulted = true;
                continue;
            }
            ++row.runs;
            loss_var_sum += r.summary.loss_variance;
            ece_sum += r.summary.ece;
            if (r.summary.perturbed) {
                any_perturbed = true;
                const std::size_t horizon = r.total_steps - cfg.perturbation->at_step;
                tau_sum += static_cast<double>(r.summary.tau_rec.value_or(horizon));
                if (r.summary.recovered) ++row.recovered_runs;
            }
        }
        if (row.runs > 0) {
            const double n = static_cast<double>(row.runs);
            row.loss_variance = loss_var_sum / n;
            row.ece = ece_sum / n;
            if (any_perturbed) row.tau_rec = tau_sum / n;
        }
        table.rows.push_back(row);
    }

    const AblationRow& full = table.rows.front();
    for (AblationRow& row : table.rows) {
        if (row.faulted || full.faulted || row.runs == 0) continue;
        if (full.loss_variance != 0.0)
            row.d_loss_variance = delta_metric(row.loss_variance, full.loss_variance);
        if (full.ece != 0.0) row.d_ece = delta_metric(row.ece, full.ece);
        if (row.tau_rec && full.tau_rec && *full.tau_rec != 0.0)
            row.d_tau_rec = delta_metric(*row.tau_rec, *full.tau_rec);
    }
    return table;
}

inline void write_ablation_csv(std::ostream& out, const AblationTable& table) {
    out << "variant,loss_variance,ece,tau_rec,recovered_runs,runs,"
           "delta_loss_variance_pct,delta_ece_pct,delta_tau_rec_pct,faulted\n";
    for (const auto& row : table.rows) {
        out << ablation_name(row.variant) << ',';
        if (row.runs > 0) out << format_double(row.loss_variance);
        out << ',';
        if (row.runs > 0) out << format_double(row.ece);
        out << ',';
        if (row.tau_rec) out << format_double(*row.tau_rec);
        out << ',' << row.recovered_runs << ',' << row.runs << ',';
        if (row.d_loss_variance) out << format_double(*row.d_loss_variance);
        out << ',';
        if (row.d_ece) out << format_double(*row.d_ece);
        out << ',';
        if (row.d_tau_rec) out << format_double(*row.d_tau_rec);
        out << ',' << (row.faulted ? '1' : '0') << '\n';
    }
}

inline json ablation_to_json(const AblationTable& table) {
    json rows = json::array();
    for (const auto& row : table.rows) {
        json r;
        r["variant"] = ablation_name(row.variant);
        r["faulted"] = row.faulted;
        r["runs"] = row.runs;
        if (row.runs > 0) {
            r["loss_variance"] = row.loss_variance;
            r["ece"] = row.ece;
        }
        if (row.tau_rec) {
            r["tau_rec"] = *row.tau_rec;
            r["recovered_runs"] = row.recovered_runs;
        }
        if (row.d_loss_variance) r["delta_loss_variance_pct"] = *row.d_loss_variance;
        if (row.d_ece) r["delta_ece_pct"] = *row.d_ece;
        if (row.d_tau_rec) r["delta_tau_rec_pct"] = *row.d_tau_rec;
        rows.push_back(r);
    }
    json doc;
    doc["rows"] = rows;
    return doc;
}

} // namespace pgar
