#include <doctest.h>

#include <cmath>
#include <vector>

#include "pgar/rng.hpp"
#include "pgar/stability.hpp"

using namespace pgar;

TEST_CASE("lyapunov value") {
    CHECK(lyapunov(0.5, 1.0, 1.0) == 0.5);
    CHECK(lyapunov(0.0, 0.0, 2.0) == 2.0);
    CHECK(lyapunov(0.3, 0.75, 2.0) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK_THROWS_AS(lyapunov(-0.1, 0.5, 1.0), DomainError);
    CHECK_THROWS_AS(lyapunov(0.1, 1.5, 1.0), DomainError);
    CHECK_THROWS_AS(lyapunov(0.1, 0.5, 0.0), DomainError);
}

TEST_CASE("descent ledger flags ascent above tolerance") {
    LyapunovLedger ledger(0.0);
    // R held at 1 and kappa = 1 make V equal the loss.
    auto v1 = ledger.record_step(1.0, 1.0, 0.0, 1.0, 0.5);
    CHECK_FALSE(v1.violated); // first step cannot violate
    CHECK(v1.v == 1.0);
    auto v2 = ledger.record_step(0.9, 1.0, 0.0, 1.0, 0.5);
    CHECK_FALSE(v2.violated);
    auto v3 = ledger.record_step(0.95, 1.0, 0.0, 1.0, 0.5);
    CHECK(v3.violated);
    CHECK(v3.delta_v == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(ledger.violations() == 1);
    CHECK(ledger.max_delta_v().has_value());
    CHECK(*ledger.max_delta_v() == doctest::Approx(0.05).epsilon(1e-9));
}

TEST_CASE("summability accumulator") {
    SUBCASE("R = 0 contributes nothing for delta > 0") {
        LyapunovLedger ledger;
        ledger.record_step(1.0, 0.0, 10.0, 1.0, 0.5);
        CHECK(ledger.summability_partial() == 0.0);
    }
    SUBCASE("delta = 0 accumulates the raw squared gradient norm") {
        LyapunovLedger ledger;
        ledger.record_step(1.0, 0.0, 3.0, 1.0, 0.0);
        CHECK(ledger.summability_partial() == 9.0);
    }
    SUBCASE("monotone non-decreasing") {
        LyapunovLedger ledger;
        Rng rng(3);
        double prev = 0.0;
        for (int t = 0; t < 200; ++t) {
            ledger.record_step(rng.uniform(), rng.uniform(), rng.uniform(), 1.0, 0.5);
            CHECK(ledger.summability_partial() >= prev);
            prev = ledger.summability_partial();
        }
    }
}

TEST_CASE("descent ledger rejects non-finite inputs") {
    LyapunovLedger ledger;
    CHECK_THROWS_AS(ledger.record_step(std::nan(""), 0.5, 1.0, 1.0, 0.5), AuditError);
    CHECK_THROWS_AS(ledger.record_step(1.0, 0.5, INFINITY, 1.0, 0.5), AuditError);
}

TEST_CASE("step-size condition") {
    SUBCASE("unit constants admit eta0 <= 1") {
        CHECK(stepsize_condition(0.5, 1.0, 1.0, 1.0, 1.0, 0.5));
        CHECK(stepsize_condition(1.0, 1.0, 1.0, 1.0, 1.0, 0.5)); // boundary inclusive
        CHECK_FALSE(stepsize_condition(1.0001, 1.0, 1.0, 1.0, 1.0, 0.5));
    }
    SUBCASE("tiny eta0 always satisfies") {
        CHECK(stepsize_condition(1e-12, 7.0, 11.0, 0.3, 0.2, 1.0));
    }
    SUBCASE("boundary equality is admissible") {
        const double mu = 0.8, r = 0.5, d = 0.5, l = 2.0, g = 3.0;
        const double eta0 = mu * std::pow(r, d) / (l * g * g);
        CHECK(stepsize_condition(eta0, l, g, mu, r, d));
    }
    SUBCASE("domain checks") {
        CHECK_THROWS_AS(stepsize_condition(0.0, 1.0, 1.0, 1.0, 1.0, 0.5), DomainError);
        CHECK_THROWS_AS(stepsize_condition(0.1, 1.0, 1.0, 1.0, 1.5, 0.5), DomainError);
        CHECK_THROWS_AS(stepsize_condition(0.1, 1.0, 1.0, 1.0, 1.0, 1.5), DomainError);
    }
}

TEST_CASE("alignment diagnostics") {
    SUBCASE("self-alignment gives mu_hat = 1") {
        const std::vector<double> g = {1.0, -2.0, 3.0};
        const auto d = alignment_diagnostics(g, g);
        REQUIRE(d.mu_hat.has_value());
        CHECK(*d.mu_hat == 1.0);
    }
    SUBCASE("anti-alignment gives mu_hat = -1") {
        const std::vector<double> g = {1.0, -2.0, 3.0};
        std::vector<double> neg = g;
        for (double& x : neg) x = -x;
        const auto d = alignment_diagnostics(g, neg);
        REQUIRE(d.mu_hat.has_value());
        CHECK(*d.mu_hat == doctest::Approx(-1.0).epsilon(1e-15));
    }
    SUBCASE("hand case grad=(3,4), direction=(3,0)") {
        const std::vector<double> g = {3.0, 4.0};
        const std::vector<double> dir = {3.0, 0.0};
        const auto d = alignment_diagnostics(g, dir);
        REQUIRE(d.mu_hat.has_value());
        CHECK(*d.mu_hat == doctest::Approx(0.36).epsilon(1e-15));
        CHECK(d.g_norm == doctest::Approx(3.0).epsilon(1e-15));
    }
    SUBCASE("zero gradient leaves mu_hat absent") {
        const std::vector<double> g = {0.0, 0.0};
        const std::vector<double> dir = {1.0, 1.0};
        const auto d = alignment_diagnostics(g, dir);
        CHECK_FALSE(d.mu_hat.has_value());
    }
    SUBCASE("length mismatch rejected") {
        const std::vector<double> g = {1.0, 2.0};
        const std::vector<double> dir = {1.0};
        CHECK_THROWS_AS(alignment_diagnostics(g, dir), DomainError);
    }
}

// Quadratic task L(theta) = 0.5*|theta|^2 with plain gradient steps. With R
// held at 1 the Lyapunov value is the loss itself and descent must hold to
// numerical precision.
TEST_CASE("quadratic task with R = 1: V equals L and never ascends") {
    Rng rng(11);
    std::vector<double> theta(16);
    for (double& x : theta) x = rng.normal();

    LyapunovLedger ledger(1e-12);
    const double eta = 0.05;
    for (int t = 0; t < 2000; ++t) {
        double loss = 0.0;
        for (const double x : theta) loss += 0.5 * x * x;
        double gnorm2 = 0.0;
        for (const double x : theta) gnorm2 += x * x;
        const auto verdict = ledger.record_step(loss, 1.0, std::sqrt(gnorm2), 1.0, 0.5);
        CHECK(verdict.v == loss); // kappa*(1-R) term vanishes
        for (double& x : theta) x -= eta * x;
    }
    CHECK(ledger.violations() == 0);
}

// Scripted reliability satisfying the contraction exactly: the unreliability
// u = 1-R follows u' = (1-gamma)*u, so no step may exceed the bound and the
// Lyapunov value must still descend.
TEST_CASE("quadratic task with scripted contraction-compliant R: zero violations") {
    ControllerConfig cfg;
    cfg.eta0 = 0.1;
    cfg.delta = 0.5;
    cfg.kappa = 1.0;
    cfg.gamma = 0.1;
    cfg.eps_bar = 0.0;
    cfg.validate();

    Rng rng(17);
    std::vector<double> theta(16);
    for (double& x : theta) x = rng.normal();

    LyapunovLedger ledger(1e-9);
    ContractionAudit audit;
    double u = 0.7; // 1 - R_0
    for (int t = 0; t < 2000; ++t) {
        const double reliability = 1.0 - u;
        double loss = 0.0;
        for (const double x : theta) loss += 0.5 * x * x;
        double gnorm2 = 0.0;
        for (const double x : theta) gnorm2 += x * x;
        ledger.record_step(loss, reliability, std::sqrt(gnorm2), cfg.kappa, cfg.delta);
        audit.record(reliability, cfg);
        const double eta = learning_rate(reliability, cfg);
        for (double& x : theta) x -= eta * x;
        u *= 1.0 - cfg.gamma;
    }
    CHECK(ledger.violations() == 0);
    CHECK(audit.exceeded() == 0);
}

TEST_CASE("contraction audit counts band violations") {
    ControllerConfig cfg;
    cfg.gamma = 0.5;
    cfg.eps_bar = 0.0;
    cfg.kappa = 1.0;
    ContractionAudit audit;
    audit.record(0.5, cfg); // u = 0.5; bound for next: 0.25
    audit.record(0.8, cfg); // u = 0.2 <= 0.25, ok; next bound: 0.1
    audit.record(0.5, cfg); // u = 0.5 > 0.1, exceeded
    CHECK(audit.transitions() == 2);
    CHECK(audit.exceeded() == 1);
    CHECK(audit.exceed_fraction() == doctest::Approx(0.5));
}

TEST_CASE("assumption report tracks worst cases") {
    AssumptionReport rep;
    rep.absorb_reliability(0.9);
    rep.absorb_reliability(0.4);
    rep.absorb_reliability(0.6);
    CHECK(rep.r_lower_observed == 0.4);

    AlignmentDiag d1;
    d1.mu_hat = 0.9;
    d1.g_norm = 2.0;
    AlignmentDiag d2;
    d2.mu_hat = 0.3;
    d2.g_norm = 1.0;
    rep.absorb_alignment(d1);
    rep.absorb_alignment(d2);
    REQUIRE(rep.mu_hat.has_value());
    CHECK(*rep.mu_hat == 0.3);
    CHECK(rep.g_norm == 2.0);

    rep.absorb_secant(2.0, 1.0);
    rep.absorb_secant(1.0, 4.0);
    REQUIRE(rep.l_smooth_est.has_value());
    CHECK(*rep.l_smooth_est == 2.0);
    rep.absorb_secant(1.0, 0.0); // zero displacement skipped
    CHECK(*rep.l_smooth_est == 2.0);
}
