#include <cmath>

#include "doctest.h"
#include "tolins/experts.hpp"

using namespace tolins;
using namespace tolins::simenv;
using namespace tolins::experts;
using tolins::geometry::WorkpieceSpec;

namespace {

Observation obs_of(double x, double y, double th, double z) {
    Observation o;
    o.v = {x, y, th, z, 0, 0, 0, 0};
    return o;
}

} // namespace

TEST_SUITE("experts") {

TEST_CASE("safe expert saturates toward the hole and holds altitude") {
    ExpertConfig cfg;
    const auto a = safe_expert(obs_of(1.0, 0.0, 0.0, 2.0), cfg);
    CHECK(a.ux == doctest::Approx(-cfg.gain));  // gain * error, below saturation
    CHECK(a.uy == 0.0);
    CHECK(a.uz == 0.0);
    ExpertConfig hot = cfg;
    hot.gain = 5.0;
    const auto b = safe_expert(obs_of(1.0, 0.0, 0.0, 2.0), hot);
    CHECK(b.ux == doctest::Approx(-2.5));  // saturated
    CHECK(b.uz == 0.0);
}

TEST_CASE("safe expert descends once inside the deadbands") {
    ExpertConfig cfg;
    const auto a = safe_expert(obs_of(0.01, -0.02, 0.001, 2.0), cfg);
    CHECK(a.uz == doctest::Approx(-2.5));
    CHECK(std::abs(a.ux) < 0.1);
    CHECK(std::abs(a.uy) < 0.1);
}

TEST_CASE("safe expert descends only when laterally aligned") {
    ExpertConfig cfg;
    Rng rng(17);
    for (int i = 0; i < 1000; ++i) {
        const auto o = obs_of(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-0.05, 0.05),
                              rng.uniform(0, 2));
        const auto a = safe_expert(o, cfg);
        if (a.uz < 0.0) {
            CHECK(std::abs(o.v[0]) <= cfg.deadband_xy);
            CHECK(std::abs(o.v[1]) <= cfg.deadband_xy);
            CHECK(std::abs(o.v[2]) <= cfg.deadband_theta);
        }
    }
}

TEST_CASE("efficient expert uses the sign rule at full speed") {
    ExpertConfig cfg;
    const auto a = efficient_expert(obs_of(1.0, -1.0, 0.02, 2.0), cfg);
    CHECK(a.ux == doctest::Approx(-2.5));
    CHECK(a.uy == doctest::Approx(2.5));
    CHECK(a.utheta == doctest::Approx(-0.1));
    CHECK(a.uz == doctest::Approx(-2.5));
}

TEST_CASE("expert outputs stay within the velocity limits") {
    ExpertConfig cfg;
    Rng rng(23);
    for (int i = 0; i < 2000; ++i) {
        const auto o = obs_of(rng.normal(0, 2), rng.normal(0, 2), rng.normal(0, 0.1),
                              rng.uniform(-2, 2));
        for (const auto a : {safe_expert(o, cfg), efficient_expert(o, cfg)}) {
            CHECK(std::abs(a.ux) <= cfg.a_max[0]);
            CHECK(std::abs(a.uy) <= cfg.a_max[1]);
            CHECK(std::abs(a.utheta) <= cfg.a_max[2]);
            CHECK(std::abs(a.uz) <= cfg.a_max[3]);
        }
    }
}

TEST_CASE("both experts always succeed without measurement noise") {
    const auto spec = WorkpieceSpec::circle_grid(2, 2, 0.3, 0.5, 7.62, 2.54);
    const auto none = geometry::DefectParams::none(spec);
    EnvConfig env;
    env.noise_std = {0, 0, 0, 0};
    ExpertConfig cfg;
    for (int i = 0; i < 50; ++i) {
        const auto ts = rollout(env, spec, none,
                                [&](const Observation& o) { return safe_expert(o, cfg); },
                                {0, 0, 0}, Rng::mix(500, i));
        CHECK(ts.success);
        CHECK(ts.collisions == 0);
        const auto te = rollout(env, spec, none,
                                [&](const Observation& o) { return efficient_expert(o, cfg); },
                                {0, 0, 0}, Rng::mix(600, i));
        CHECK(te.success);
    }
}

TEST_CASE("safe expert full episode from a far corner is collision-free") {
    const auto spec = WorkpieceSpec::circle_grid(2, 2, 0.3, 0.5, 7.62, 2.54);
    const auto none = geometry::DefectParams::none(spec);
    EnvConfig env;
    env.init_range = {1.5, 1.5, 1.5, 1.5, 0.03, 0.03, 2.0, 2.0};
    ExpertConfig cfg;
    const auto t = rollout(env, spec, none,
                           [&](const Observation& o) { return safe_expert(o, cfg); }, {0, 0, 0},
                           1234u);
    CHECK(t.success);
    CHECK(t.collisions == 0);
}

TEST_CASE("efficient expert collides more and finishes faster than the safe expert") {
    const auto spec = WorkpieceSpec::circle_grid(2, 2, 0.3, 0.5, 7.62, 2.54);
    const auto none = geometry::DefectParams::none(spec);
    EnvConfig env;
    ExpertConfig cfg;
    double safe_steps = 0, safe_colls = 0, eff_steps = 0, eff_colls = 0;
    const int n = 300;
    for (int i = 0; i < n; ++i) {
        const auto ts = rollout(env, spec, none,
                                [&](const Observation& o) { return safe_expert(o, cfg); },
                                {0, 0, 0}, Rng::mix(1000, i));
        const auto te = rollout(env, spec, none,
                                [&](const Observation& o) { return efficient_expert(o, cfg); },
                                {0, 0, 0}, Rng::mix(1000, i));
        safe_steps += ts.length();
        safe_colls += ts.collisions;
        eff_steps += te.length();
        eff_colls += te.collisions;
    }
    CHECK(eff_colls / n > safe_colls / n);
    CHECK(eff_steps / n < safe_steps / n);
}

} // TEST_SUITE
