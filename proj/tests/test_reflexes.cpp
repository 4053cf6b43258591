#include <doctest.h>

#include <cmath>
#include <vector>

#include "pgar/reflexes.hpp"
#include "pgar/rng.hpp"

using namespace pgar;

TEST_CASE("incident reflex returns 0 on the first observed step") {
    ReflexEstimatorState state;
    CHECK(incident_reflex(state, 3.7) == 0.0);
    CHECK(state.prev_loss == 3.7);
}

TEST_CASE("incident reflex is 0 when loss is non-increasing") {
    ReflexEstimatorState state;
    incident_reflex(state, 1.0);
    CHECK(incident_reflex(state, 0.8) == 0.0);
    CHECK(incident_reflex(state, 0.8) == 0.0);
    CHECK(incident_reflex(state, 0.1) == 0.0);
}

TEST_CASE("incident reflex squashes the normalized positive loss delta") {
    // prev=1.0, loss=1.5, ema=0.5: x = 0.5/(0.5 + 1e-8), I = x/(1+x) ~ 0.5
    ReflexEstimatorState state;
    state.prev_loss = 1.0;
    state.ema_abs_delta = 0.5;
    const double incident = incident_reflex(state, 1.5);
    CHECK(incident == doctest::Approx(0.5).epsilon(1e-7));
    // update order: ema uses the old value, then absorbs |delta| = 0.5
    CHECK(state.ema_abs_delta == doctest::Approx(0.9 * 0.5 + 0.1 * 0.5).epsilon(1e-12));
    CHECK(state.prev_loss == 1.5);
}

TEST_CASE("incident reflex rejects non-finite loss") {
    ReflexEstimatorState state;
    CHECK_THROWS_AS(incident_reflex(state, std::nan("")), InvalidObservation);
    CHECK_THROWS_AS(incident_reflex(state, INFINITY), InvalidObservation);
}

TEST_CASE("overconfidence reflex is the one-sided windowed calibration gap") {
    ReflexEstimatorState state;
    SUBCASE("confidence equals accuracy -> 0") {
        for (int i = 0; i < 10; ++i) CHECK(overconfidence_reflex(state, 0.7, 0.7) == 0.0);
    }
    SUBCASE("fully wrong and fully confident -> 1") {
        double o = 0.0;
        for (int i = 0; i < 5; ++i) o = overconfidence_reflex(state, 1.0, 0.0);
        CHECK(o == 1.0);
    }
    SUBCASE("window means 0.9 confidence vs 0.6 accuracy -> 0.3") {
        overconfidence_reflex(state, 0.8, 0.5);
        const double o = overconfidence_reflex(state, 1.0, 0.7);
        CHECK(o == doctest::Approx(0.3).epsilon(1e-12));
    }
    SUBCASE("underconfidence yields 0") {
        CHECK(overconfidence_reflex(state, 0.2, 0.9) == 0.0);
    }
    SUBCASE("out-of-range inputs rejected") {
        CHECK_THROWS_AS(overconfidence_reflex(state, 1.2, 0.5), InvalidObservation);
        CHECK_THROWS_AS(overconfidence_reflex(state, 0.5, -0.1), InvalidObservation);
        CHECK_THROWS_AS(overconfidence_reflex(state, std::nan(""), 0.5), InvalidObservation);
    }
}

TEST_CASE("overconfidence window evicts oldest entries at capacity") {
    ReflexParams params;
    params.calib_window = 3;
    ReflexEstimatorState state(params);
    overconfidence_reflex(state, 1.0, 0.0); // will be evicted
    overconfidence_reflex(state, 0.5, 0.5);
    overconfidence_reflex(state, 0.5, 0.5);
    const double o = overconfidence_reflex(state, 0.5, 0.5);
    CHECK(state.calib_window.size() == 3);
    CHECK(o == 0.0); // the (1.0, 0.0) entry is gone
}

TEST_CASE("overconfidence reflex is invariant to window order") {
    std::vector<std::pair<double, double>> entries = {
        {0.9, 0.4}, {0.2, 0.8}, {0.7, 0.7}, {1.0, 0.1}, {0.55, 0.5}};
    ReflexEstimatorState a, b;
    for (const auto& [c, acc] : entries) overconfidence_reflex(a, c, acc);
    for (auto it = entries.rbegin(); it != entries.rend(); ++it)
        overconfidence_reflex(b, it->first, it->second);
    const double oa = a.calib_window.mean_confidence() - a.calib_window.mean_accuracy();
    const double ob = b.calib_window.mean_confidence() - b.calib_window.mean_accuracy();
    CHECK(oa == doctest::Approx(ob).epsilon(1e-12));
}

TEST_CASE("memory reflex integrates recovery credit") {
    SUBCASE("hand update: M=0.5, rho_up=0.02, rho_down=0.1, incident=0.5 -> 0.46") {
        ReflexEstimatorState state;
        state.recovery_credit = 0.5;
        CHECK(memory_reflex(state, 0.5) == doctest::Approx(0.46).epsilon(1e-12));
    }
    SUBCASE("calm steps saturate at 1") {
        ReflexEstimatorState state;
        double m = 0.0, prev = 0.0;
        for (int i = 0; i < 200; ++i) {
            m = memory_reflex(state, 0.0);
            CHECK(m >= prev);
            prev = m;
        }
        CHECK(m == 1.0);
    }
    SUBCASE("full incidents drain to 0") {
        ReflexEstimatorState state;
        double m = 1.0, prev = 1.0;
        state.recovery_credit = 1.0;
        for (int i = 0; i < 200; ++i) {
            m = memory_reflex(state, 1.0);
            CHECK(m <= prev);
            prev = m;
        }
        CHECK(m == 0.0);
    }
    SUBCASE("incident outside [0,1] rejected") {
        ReflexEstimatorState state;
        CHECK_THROWS_AS(memory_reflex(state, 1.5), DomainError);
        CHECK_THROWS_AS(memory_reflex(state, -0.1), DomainError);
    }
}

TEST_CASE("all reflex outputs stay in [0,1] on random observation streams") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        ReflexEstimatorState state;
        for (int t = 0; t < 500; ++t) {
            StepObservation obs;
            obs.step = static_cast<std::size_t>(t);
            obs.loss = std::abs(10.0 * rng.normal());
            obs.mean_confidence = rng.uniform();
            obs.batch_accuracy = rng.uniform();
            obs.grad_norm = std::abs(rng.normal());
            const ReflexSignals s = observe(state, obs);
            CHECK(in_unit_interval(s.incident));
            CHECK(s.incident < 1.0); // squash is strictly below 1
            CHECK(in_unit_interval(s.overconfidence));
            CHECK(in_unit_interval(s.memory));
        }
    }
}

TEST_CASE("identical observation streams produce identical reflex sequences") {
    Rng rng(7);
    std::vector<StepObservation> stream;
    for (int t = 0; t < 300; ++t) {
        StepObservation obs;
        obs.step = static_cast<std::size_t>(t);
        obs.loss = std::abs(rng.normal()) + 0.01;
        obs.mean_confidence = rng.uniform();
        obs.batch_accuracy = rng.uniform();
        obs.grad_norm = 1.0;
        stream.push_back(obs);
    }
    ReflexEstimatorState a, b;
    for (const auto& obs : stream) {
        const ReflexSignals sa = observe(a, obs);
        const ReflexSignals sb = observe(b, obs);
        CHECK(sa.incident == sb.incident);
        CHECK(sa.overconfidence == sb.overconfidence);
        CHECK(sa.memory == sb.memory);
    }
}
