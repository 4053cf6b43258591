#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pgar/pgar.hpp"

using namespace pgar;
namespace fs = std::filesystem;

namespace {

// Small blobs config that trains in well under a second.
ExperimentConfig small_blobs_config() {
    ExperimentConfig cfg;
    cfg.dataset.n = 120;
    cfg.dataset.d = 2;
    cfg.dataset.n_classes = 3;
    cfg.dataset.spread = 1.0;
    cfg.batch_size = 30;
    cfg.epochs = 10;
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.controller.eta0 = 0.1;
    return cfg;
}

// IDX fixture with all-zero inputs and a single class: the model's class-0
// bias grows monotonically, so the reflexes report (0, 0, 1) at every step
// (with memory started at 1) and the reliability index stays exactly 1.
void write_degenerate_idx(const fs::path& dir) {
    fs::create_directories(dir);
    std::vector<unsigned char> img;
    auto push32 = [&img](std::uint32_t x) {
        img.push_back(static_cast<unsigned char>((x >> 24) & 0xFF));
        img.push_back(static_cast<unsigned char>((x >> 16) & 0xFF));
        img.push_back(static_cast<unsigned char>((x >> 8) & 0xFF));
        img.push_back(static_cast<unsigned char>(x & 0xFF));
    };
    push32(0x00000803);
    push32(16); // 16 images
    push32(2);
    push32(2);
    img.insert(img.end(), 16 * 4, 0); // all-zero pixels
    std::ofstream(dir / "images", std::ios::binary)
        .write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));

    std::vector<unsigned char> lab;
    auto push32l = [&lab](std::uint32_t x) {
        lab.push_back(static_cast<unsigned char>((x >> 24) & 0xFF));
        lab.push_back(static_cast<unsigned char>((x >> 16) & 0xFF));
        lab.push_back(static_cast<unsigned char>((x >> 8) & 0xFF));
        lab.push_back(static_cast<unsigned char>(x & 0xFF));
    };
    push32l(0x00000801);
    push32l(16);
    lab.insert(lab.end(), 16, 0); // all class 0
    std::ofstream(dir / "labels", std::ios::binary)
        .write(reinterpret_cast<const char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
}

std::string trace_to_string(const std::vector<TraceRecord>& trace) {
    std::ostringstream out;
    write_trace(out, trace);
    return out.str();
}

} // namespace

TEST_CASE("empty config object yields the full-default blobs configuration") {
    const ExperimentConfig cfg = parse_config_json(json::object());
    CHECK(cfg.dataset.type == DatasetConfig::Type::Blobs);
    CHECK(cfg.dataset.n == 600);
    CHECK(cfg.dataset.d == 2);
    CHECK(cfg.dataset.n_classes == 3);
    CHECK(cfg.optimizer == OptimizerKind::Adam);
    CHECK(cfg.ablation == Ablation::Full);
    CHECK(cfg.batch_size == 64);
    CHECK(cfg.controller.eta0 == 0.05);
    CHECK(cfg.controller.delta == 0.5);
    CHECK(cfg.controller.weights.incident == 0.4);
    CHECK(cfg.controller.weights.overconfidence == 0.3);
    CHECK(cfg.controller.weights.memory == 0.3);
    CHECK(cfg.reflexes.ema_decay == 0.9);
    CHECK(cfg.reflexes.calib_window == 50);
    CHECK(cfg.reflexes.memory_init == 0.5);
    CHECK(cfg.metrics.ece_bins == 15);
    CHECK(cfg.metrics.var_window == 25);
    CHECK(cfg.metrics.sustain == 10);
    CHECK(cfg.hidden_dims() == std::vector<std::size_t>{32});
    CHECK_FALSE(cfg.perturbation.has_value());
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
}

TEST_CASE("config rejects unknown keys with the offending name") {
    try {
        parse_config_json(json::parse(R"({"optimzer": "adam"})"));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("optimzer") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config_json(json::parse(R"({"controller": {"eta_0": 0.1}})")),
                    ConfigError);
}

TEST_CASE("config rejects fusion weights that do not sum to 1") {
    const auto doc = json::parse(
        R"({"controller": {"weights": {"incident": 0.5, "overconfidence": 0.5, "memory": 0.5}}})");
    try {
        parse_config_json(doc);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("sum to 1") != std::string::npos);
    }
}

TEST_CASE("config rejects delta outside [0,1]") {
    CHECK_THROWS_AS(parse_config_json(json::parse(R"({"controller": {"delta": 1.5}})")),
                    ConfigError);
}

TEST_CASE("config validates perturbation fields per kind") {
    CHECK_THROWS_AS(
        parse_config_json(json::parse(R"({"perturbation": {"kind": "gradient_spike"}})")),
        ConfigError); // scale missing
    CHECK_THROWS_AS(
        parse_config_json(json::parse(
            R"({"perturbation": {"kind": "label_noise", "p": 0.5, "scale": 2.0, "at_step": 5}})")),
        ConfigError); // scale not valid for label_noise
    CHECK_THROWS_AS(
        parse_config_json(json::parse(
            R"({"perturbation": {"kind": "gradient_spike", "scale": 0.5, "at_step": 5}})")),
        ConfigError); // scale below 1
    CHECK_NOTHROW(parse_config_json(json::parse(
        R"({"perturbation": {"kind": "gradient_spike", "scale": 8.0, "at_step": 5}})")));
}

TEST_CASE("config file parsing reports missing files and bad JSON") {
    CHECK_THROWS_AS(parse_config("/nonexistent/config.json"), ConfigError);
    const fs::path dir = fs::temp_directory_path() / "pgar_cfg";
    fs::create_directories(dir);
    std::ofstream(dir / "broken.json") << "{ not json";
    CHECK_THROWS_AS(parse_config((dir / "broken.json").string()), ConfigError);
}

TEST_CASE("trace golden bytes and round-trip") {
    std::vector<TraceRecord> trace(2);
    trace[0].step = 0;
    trace[0].loss = 0.5;
    trace[0].incident = 0.0;
    trace[0].overconfidence = 0.25;
    trace[0].memory = 1.0;
    trace[0].reliability = 0.875;
    trace[0].eta = 0.05;
    trace[0].v = 0.625;
    trace[0].delta_v = 0.0;
    trace[0].mode = Mode::Nominal;
    trace[0].activated = false;
    trace[0].grad_norm = 2.0;
    trace[0].mu_hat = 1.0;
    trace[1].step = 1;
    trace[1].loss = 0.75;
    trace[1].incident = 0.5;
    trace[1].overconfidence = 0.0;
    trace[1].memory = 0.5;
    trace[1].reliability = 0.5;
    trace[1].eta = 0.035;
    trace[1].v = 1.25;
    trace[1].delta_v = 0.625;
    trace[1].mode = Mode::Agility;
    trace[1].activated = true;
    trace[1].grad_norm = 0.0;
    trace[1].mu_hat = std::nullopt;

    const std::string expected =
        "step,loss,I,O,M,R,eta,V,delta_V,mode,activated,grad_norm,mu_hat\n"
        "0,0.5,0,0.25,1,0.875,0.05,0.625,0,nominal,0,2,1\n"
        "1,0.75,0.5,0,0.5,0.5,0.035,1.25,0.625,agility,1,0,\n";
    CHECK(trace_to_string(trace) == expected);

    std::istringstream in(expected);
    const auto parsed = read_trace(in);
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].loss == 0.5);
    CHECK(parsed[0].mu_hat == 1.0);
    CHECK(parsed[1].mode == Mode::Agility);
    CHECK_FALSE(parsed[1].mu_hat.has_value());
    CHECK(trace_to_string(parsed) == expected);
}

TEST_CASE("trace reader rejects malformed input") {
    std::istringstream empty("");
    CHECK_THROWS_AS(read_trace(empty), FormatError);
    std::istringstream bad_header("step,loss\n");
    CHECK_THROWS_AS(read_trace(bad_header), FormatError);
    std::istringstream bad_row(std::string(kTraceHeader) + "\n1,2,3\n");
    CHECK_THROWS_AS(read_trace(bad_row), FormatError);
}

TEST_CASE("plain baseline pins eta to eta0 at every step") {
    ExperimentConfig cfg = small_blobs_config();
    cfg.ablation = Ablation::PlainBaseline;
    const RunResult r = run_experiment(cfg, 1);
    REQUIRE_FALSE(r.faulted);
    REQUIRE(r.trace.size() == r.total_steps);
    for (const auto& rec : r.trace) CHECK(rec.eta == cfg.controller.eta0);
}

TEST_CASE("degenerate single-class run keeps reflexes at (0,0,1) and R at 1") {
    const fs::path dir = fs::temp_directory_path() / "pgar_degenerate_idx";
    write_degenerate_idx(dir);

    ExperimentConfig cfg;
    cfg.dataset.type = DatasetConfig::Type::Idx;
    cfg.dataset.images = (dir / "images").string();
    cfg.dataset.labels = (dir / "labels").string();
    cfg.hidden = std::vector<std::size_t>{4};
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.epochs = 30;
    cfg.batch_size = 8;
    cfg.reflexes.memory_init = 1.0;
    cfg.controller.eta0 = 0.05;

    const RunResult r = run_experiment(cfg, 3);
    REQUIRE_FALSE(r.faulted);
    REQUIRE_FALSE(r.trace.empty());
    for (const auto& rec : r.trace) {
        CHECK(rec.incident == 0.0);
        CHECK(rec.overconfidence == 0.0);
        CHECK(rec.memory == 1.0);
        CHECK(rec.reliability == 1.0);
        CHECK(rec.eta == cfg.controller.eta0);
    }
    // constant-R run: every maturity row reports zero R-variance
    PlotOptions opts;
    opts.steps_per_epoch = r.steps_per_epoch;
    std::ostringstream out;
    emit_plot_data(PlotKind::MaturityCurve, r.trace, {}, opts, out);
    std::istringstream lines(out.str());
    std::string line;
    std::getline(lines, line); // header
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
        ++rows;
        CHECK(line.find(",0,") != std::string::npos); // r_variance column is 0
    }
    CHECK(rows == cfg.epochs);
}

TEST_CASE("sgd runs log mu_hat exactly 1 at every step") {
    ExperimentConfig cfg = small_blobs_config();
    cfg.perturbation = PerturbationSpec{};
    cfg.perturbation->kind = PerturbationSpec::Kind::GradientSpike;
    cfg.perturbation->at_step = 12;
    cfg.perturbation->scale = 5.0;
    cfg.perturbation->duration = 4;
    const RunResult r = run_experiment(cfg, 6);
    REQUIRE_FALSE(r.faulted);
    for (const auto& rec : r.trace) {
        REQUIRE(rec.mu_hat.has_value());
        CHECK(*rec.mu_hat == 1.0);
    }
    REQUIRE(r.stability.assumptions.mu_hat.has_value());
    CHECK(*r.stability.assumptions.mu_hat == 1.0);
}

TEST_CASE("identical config and seed give byte-identical artifacts") {
    ExperimentConfig cfg = small_blobs_config();
    cfg.perturbation = PerturbationSpec{};
    cfg.perturbation->kind = PerturbationSpec::Kind::GradientSpike;
    cfg.perturbation->at_step = 10;
    cfg.perturbation->scale = 4.0;
    cfg.perturbation->duration = 3;

    const RunResult a = run_experiment(cfg, 7);
    const RunResult b = run_experiment(cfg, 7);
    CHECK(trace_to_string(a.trace) == trace_to_string(b.trace));
    CHECK(metrics_to_json(a).dump(2) == metrics_to_json(b).dump(2));

    const RunResult c = run_experiment(cfg, 8);
    CHECK(trace_to_string(a.trace) != trace_to_string(c.trace));
}

TEST_CASE("ablation weight renormalization") {
    SUBCASE("no_memory fuses only incident and overconfidence") {
        const FusionWeights w = effective_weights(FusionWeights(0.4, 0.3, 0.3),
                                                  Ablation::NoMemory);
        CHECK(w.incident == doctest::Approx(0.4 / 0.7).epsilon(1e-12));
        CHECK(w.overconfidence == doctest::Approx(0.3 / 0.7).epsilon(1e-12));
        CHECK(w.memory == 0.0);
    }
    SUBCASE("degenerate removal rejected") {
        CHECK_THROWS_AS(effective_weights(FusionWeights(0.0, 0.0, 1.0), Ablation::NoMemory),
                        ConfigError);
    }
    SUBCASE("run under no_memory matches the two-channel fusion formula") {
        ExperimentConfig cfg = small_blobs_config();
        cfg.ablation = Ablation::NoMemory;
        const RunResult r = run_experiment(cfg, 2);
        REQUIRE_FALSE(r.faulted);
        const double wi = 0.4 / 0.7, wo = 0.3 / 0.7;
        for (const auto& rec : r.trace) {
            const double expected = 1.0 - (wi * rec.incident + wo * rec.overconfidence);
            CHECK(rec.reliability == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("run_ablation emits the five-row delta table with Full at zero") {
    ExperimentConfig cfg = small_blobs_config();
    cfg.epochs = 5;
    const AblationTable table = run_ablation(cfg, {1, 2});
    REQUIRE(table.rows.size() == 5);
    CHECK(table.rows[0].variant == Ablation::Full);
    CHECK(table.rows[1].variant == Ablation::NoIncident);
    CHECK(table.rows[2].variant == Ablation::NoOverconfidence);
    CHECK(table.rows[3].variant == Ablation::NoMemory);
    CHECK(table.rows[4].variant == Ablation::PlainBaseline);
    REQUIRE(table.rows[0].d_loss_variance.has_value());
    CHECK(*table.rows[0].d_loss_variance == 0.0);
    REQUIRE(table.rows[0].d_ece.has_value());
    CHECK(*table.rows[0].d_ece == 0.0);
    CHECK_FALSE(table.rows[0].tau_rec.has_value()); // no perturbation configured
    for (const auto& row : table.rows) {
        CHECK_FALSE(row.faulted);
        CHECK(row.runs == 2);
    }

    std::ostringstream csv;
    write_ablation_csv(csv, table);
    std::istringstream lines(csv.str());
    std::string line;
    std::size_t n_lines = 0;
    while (std::getline(lines, line)) ++n_lines;
    CHECK(n_lines == 6); // header + 5 rows
}

TEST_CASE("a diverging run faults and keeps its partial trace") {
    ExperimentConfig cfg = small_blobs_config();
    cfg.controller.eta0 = 1e12; // guaranteed blow-up under sgd
    cfg.epochs = 5;
    const RunResult r = run_experiment(cfg, 1);
    CHECK(r.faulted);
    CHECK_FALSE(r.fault_reason.empty());
    CHECK(r.trace.size() < r.total_steps);

    const AblationTable table = run_ablation(cfg, {1});
    REQUIRE(table.rows.size() == 5);
    for (const auto& row : table.rows) CHECK(row.faulted);
}

TEST_CASE("perturbation beyond the run length is a config error") {
    ExperimentConfig cfg = small_blobs_config();
    cfg.perturbation = PerturbationSpec{};
    cfg.perturbation->kind = PerturbationSpec::Kind::GradientSpike;
    cfg.perturbation->scale = 2.0;
    cfg.perturbation->at_step = 1000000;
    CHECK_THROWS_AS(run_experiment(cfg, 1), ConfigError);
}

TEST_CASE("plot data emission") {
    ExperimentConfig cfg = small_blobs_config();
    const RunResult r = run_experiment(cfg, 4);
    REQUIRE_FALSE(r.faulted);

    SUBCASE("calibration bins partition the eval set") {
        PlotOptions opts;
        opts.bins = 15;
        std::ostringstream out;
        emit_plot_data(PlotKind::CalibrationCurve, r.trace, r.eval_samples, opts, out);
        std::istringstream lines(out.str());
        std::string line;
        std::getline(lines, line);
        CHECK(line == "bin,mean_confidence,accuracy,count");
        std::size_t total = 0, rows = 0;
        while (std::getline(lines, line)) {
            ++rows;
            const auto pos = line.rfind(',');
            total += static_cast<std::size_t>(std::stoul(line.substr(pos + 1)));
        }
        CHECK(rows == 15);
        CHECK(total == r.eval_size);
    }
    SUBCASE("maturity curve has one row per epoch") {
        PlotOptions opts;
        opts.steps_per_epoch = r.steps_per_epoch;
        std::ostringstream out;
        emit_plot_data(PlotKind::MaturityCurve, r.trace, {}, opts, out);
        std::istringstream lines(out.str());
        std::string line;
        std::size_t rows = 0;
        std::getline(lines, line);
        while (std::getline(lines, line)) ++rows;
        CHECK(rows == cfg.epochs);
    }
    SUBCASE("trajectory kinds carry one row per step") {
        std::ostringstream out;
        emit_plot_data(PlotKind::ReliabilityTrajectory, r.trace, {}, {}, out);
        std::istringstream lines(out.str());
        std::string line;
        std::size_t rows = 0;
        std::getline(lines, line);
        while (std::getline(lines, line)) ++rows;
        CHECK(rows == r.trace.size());

        std::ostringstream out2;
        emit_plot_data(PlotKind::AgilitySafety, r.trace, {}, {}, out2);
        CHECK(out2.str().rfind("step,mode,I,R\n", 0) == 0);
    }
    SUBCASE("unknown plot kind rejected") {
        CHECK_THROWS_AS(plot_kind_from_string("histogram"), DomainError);
    }
    SUBCASE("maturity curve requires steps_per_epoch") {
        std::ostringstream out;
        CHECK_THROWS_AS(emit_plot_data(PlotKind::MaturityCurve, r.trace, {}, {}, out),
                        DomainError);
    }
}

TEST_CASE("eval samples round-trip through eval.csv") {
    ExperimentConfig cfg = small_blobs_config();
    cfg.epochs = 3;
    const RunResult r = run_experiment(cfg, 9);
    REQUIRE_FALSE(r.faulted);

    const fs::path dir = fs::temp_directory_path() / "pgar_eval_roundtrip";
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "eval.csv", std::ios::binary);
        write_eval_samples(out, r.eval_samples);
    }
    const auto parsed = read_eval_file((dir / "eval.csv").string());
    REQUIRE(parsed.size() == r.eval_samples.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        CHECK(parsed[i].confidence == r.eval_samples[i].confidence);
        CHECK(parsed[i].correct == r.eval_samples[i].correct);
    }
}

TEST_CASE("write_run_outputs produces the three run artifacts") {
    ExperimentConfig cfg = small_blobs_config();
    cfg.epochs = 2;
    const RunResult r = run_experiment(cfg, 5);
    const fs::path dir = fs::temp_directory_path() / "pgar_run_outputs";
    fs::remove_all(dir);
    write_run_outputs(r, dir);
    CHECK(fs::exists(dir / "trace.csv"));
    CHECK(fs::exists(dir / "metrics.json"));
    CHECK(fs::exists(dir / "eval.csv"));

    const auto reread = read_trace_file((dir / "trace.csv").string());
    CHECK(reread.size() == r.trace.size());

    std::ifstream in(dir / "metrics.json");
    const auto doc = json::parse(in);
    CHECK(doc.contains("summary"));
    CHECK(doc["summary"].contains("accuracy"));
    CHECK(doc["summary"].contains("ece"));
    CHECK(doc["summary"].contains("brier"));
    CHECK(doc["summary"].contains("loss_variance"));
    CHECK(doc["summary"].contains("intervention_freq"));
    CHECK_FALSE(doc["summary"].contains("tau_rec")); // no perturbation configured
    CHECK(doc["stability"].contains("violations"));
    CHECK(doc["stability"]["assumptions"].contains("r_lower_observed"));
    CHECK(doc["run"]["steps_per_epoch"] == r.steps_per_epoch);
}
