#include <cmath>

#include "doctest.h"
#include "tolins/simenv.hpp"

using namespace tolins;
using namespace tolins::simenv;
using tolins::geometry::WorkpieceSpec;

namespace {

WorkpieceSpec grid22() { return WorkpieceSpec::circle_grid(2, 2, 0.3, 0.5, 7.62, 2.54); }

EnvConfig quiet_config() {
    EnvConfig cfg;
    cfg.noise_std = {0.0, 0.0, 0.0, 0.0};
    return cfg;
}

} // namespace

TEST_SUITE("simenv") {

TEST_CASE("degenerate init range resets to the point") {
    EnvConfig cfg;
    cfg.init_range = {0.5, 0.5, -0.25, -0.25, 0.01, 0.01, 1.5, 1.5};
    const EnvState s = reset(cfg, 42u);
    CHECK(s.x == 0.5);
    CHECK(s.y == -0.25);
    CHECK(s.theta == 0.01);
    CHECK(s.z == 1.5);
    CHECK(s.fx == 0);
    CHECK(s.fz == 0);
}

TEST_CASE("reset is deterministic and rejects bad ranges") {
    EnvConfig cfg;
    const EnvState a = reset(cfg, 7u), b = reset(cfg, 7u);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    CHECK(a.theta == b.theta);
    EnvConfig bad;
    bad.init_range.z_lo = -1.0;
    CHECK_THROWS(reset(bad, 1u));
}

TEST_CASE("reset samples uniformly over the range") {
    EnvConfig cfg;
    double mx = 0.0, my = 0.0;
    const int n = 10000;
    Rng rng(100);
    for (int i = 0; i < n; ++i) {
        const EnvState s = reset(cfg, rng.next_u64());
        mx += s.x;
        my += s.y;
    }
    mx /= n;
    my /= n;
    // U(-2,2): sd = 4/sqrt(12); three standard errors of the mean
    const double se3 = 3.0 * (4.0 / std::sqrt(12.0)) / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mx) < se3);
    CHECK(std::abs(my) < se3);
}

TEST_CASE("collision-free lateral move integrates exactly") {
    const auto spec = grid22();
    const auto none = geometry::DefectParams::none(spec);
    EnvConfig cfg;
    EnvState s;
    s.x = 1.0;
    s.z = 2.0;
    Action a;
    a.ux = -2.5;
    const auto res = step(cfg, spec, none, s, a, 1);
    CHECK(res.next.x == doctest::Approx(0.375));
    CHECK(!res.collided);
    CHECK(res.reward == 0.0);
    CHECK(!res.done);
}

TEST_CASE("action clamping and finiteness") {
    const auto spec = grid22();
    const auto none = geometry::DefectParams::none(spec);
    EnvConfig cfg;
    EnvState s;
    s.z = 2.0;
    Action a;
    a.ux = 100.0;  // clamped to 2.5
    const auto res = step(cfg, spec, none, s, a, 1);
    CHECK(res.next.x == doctest::Approx(0.625));
    Action bad;
    bad.uy = std::nan("");
    CHECK_THROWS(step(cfg, spec, none, s, bad, 1));
}

TEST_CASE("success reward follows the step index") {
    const auto spec = grid22();
    const auto none = geometry::DefectParams::none(spec);
    EnvConfig cfg;
    cfg.z_insert = 2.0;
    EnvState s;  // aligned, just above the success depth
    s.z = -1.5;
    Action a;
    a.uz = -2.5;  // descends 0.625 -> z = -2.125 <= -2
    const auto res = step(cfg, spec, none, s, a, 20);
    CHECK(res.success);
    CHECK(res.done);
    CHECK(res.reward == doctest::Approx(50.0));  // c (1 - 20/40)
}

TEST_CASE("descending onto the board outside tolerance lands and stops") {
    const auto spec = grid22();
    const auto none = geometry::DefectParams::none(spec);
    EnvConfig cfg;
    EnvState s;
    s.x = 1.0;  // outside the 0.2 mm tolerance
    s.z = 0.3;
    Action a;
    a.ux = -2.5;
    a.uz = -2.5;
    a.utheta = 0.05;
    const auto res = step(cfg, spec, none, s, a, 1);
    CHECK(res.collided);
    CHECK(res.next.z == 0.0);
    CHECK(res.next.fz == 1);
    CHECK(res.reward == doctest::Approx(-1.0));
    // the pose freezes where the pins touched down
    const double t_c = 0.3 / 0.625;
    CHECK(res.next.x == doctest::Approx(1.0 - t_c * 0.625));
    CHECK(res.next.theta == doctest::Approx(t_c * 0.05 * 0.25));

    // pressing again while misaligned keeps it pinned and penalized
    const auto res2 = step(cfg, spec, none, res.next, a, 2);
    CHECK(res2.collided);
    CHECK(res2.next.fz == 1);
    CHECK(res2.next.x == res.next.x);
    CHECK(res2.reward == doctest::Approx(-1.0));

    // lifting frees the lateral motion
    Action lift;
    lift.ux = -2.5;
    lift.uz = 1.0;
    const auto res3 = step(cfg, spec, none, res.next, lift, 2);
    CHECK(!res3.collided);
    CHECK(res3.next.x == doctest::Approx(res.next.x - 0.625));
}

TEST_CASE("wall contact below the surface freezes the pose and flags the axis") {
    const auto spec = grid22();
    const auto none = geometry::DefectParams::none(spec);
    EnvConfig cfg;
    EnvState s;
    s.x = 0.1;
    s.z = -0.5;  // inside the holes
    Action a;
    a.ux = 2.5;  // pushes out through the +x wall at 0.2
    const auto res = step(cfg, spec, none, s, a, 1);
    CHECK(res.collided);
    CHECK(res.next.fx == 1);
    CHECK(res.next.fz == 0);
    CHECK(res.next.x == doctest::Approx(0.2).epsilon(0.05));
    CHECK(res.next.z == doctest::Approx(-0.5));  // frozen with the rest of the pose
    CHECK(geometry::contains(spec, none, res.next.pose()));
}

TEST_CASE("zero policy runs to the horizon with zero return") {
    const auto spec = grid22();
    const auto none = geometry::DefectParams::none(spec);
    EnvConfig cfg;
    const auto traj = rollout(cfg, spec, none, [](const Observation&) { return Action{}; },
                              {0, 0, 0}, 5u);
    CHECK(traj.length() == cfg.k_max);
    CHECK(traj.total_reward == 0.0);
    CHECK(!traj.success);
    CHECK(traj.collisions == 0);
}

TEST_CASE("rollouts are deterministic byte-for-byte") {
    const auto spec = grid22();
    const auto none = geometry::DefectParams::none(spec);
    EnvConfig cfg;
    const PolicyFn noisy_policy = [](const Observation& o) {
        Action a;
        a.ux = -o.v[0];
        a.uy = -o.v[1];
        a.utheta = -o.v[2];
        a.uz = -1.0;
        return a;
    };
    const auto t1 = rollout(cfg, spec, none, noisy_policy, {0, 0, 0}, 77u);
    const auto t2 = rollout(cfg, spec, none, noisy_policy, {0, 0, 0}, 77u);
    CHECK(t1.to_csv() == t2.to_csv());
    const auto t3 = rollout(cfg, spec, none, noisy_policy, {0, 0, 0}, 78u);
    CHECK(t1.to_csv() != t3.to_csv());
}

TEST_CASE("observation shifting and noise") {
    EnvConfig cfg = quiet_config();
    EnvState s;
    s.x = 0.1;
    s.y = -0.2;
    s.theta = 0.01;
    s.z = 1.0;
    Rng rng(3);
    const auto o = observe(s, {0.1, 0.0, 0.0}, cfg, rng);
    CHECK(o.v[0] == doctest::Approx(0.0));
    CHECK(o.v[1] == doctest::Approx(-0.2));
    CHECK(o.v[2] == doctest::Approx(0.01));
    CHECK(o.v[3] == doctest::Approx(1.0));

    // per-axis sample std over many draws close to the configured values
    EnvConfig noisy;
    Rng rng2(4);
    const int n = 100000;
    double sx = 0.0, sx2 = 0.0, sth2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto ob = observe(s, {0, 0, 0}, noisy, rng2);
        const double dx = ob.v[0] - s.x;
        sx += dx;
        sx2 += dx * dx;
        const double dth = ob.v[2] - s.theta;
        sth2 += dth * dth;
    }
    const double std_x = std::sqrt(sx2 / n - (sx / n) * (sx / n));
    CHECK(std_x == doctest::Approx(0.1).epsilon(0.02));
    CHECK(sth2 == 0.0);
}

TEST_CASE("per-step displacement bounds and force-flag consistency") {
    Rng rng(2027);
    const auto spec = grid22();
    const auto none = geometry::DefectParams::none(spec);
    EnvConfig cfg;
    int steps_done = 0;
    while (steps_done < 10000) {
        EnvState s;
        s.x = rng.uniform(-1.0, 1.0);
        s.y = rng.uniform(-1.0, 1.0);
        s.theta = rng.uniform(-0.1, 0.1);
        s.z = rng.uniform(-1.5, 2.0);
        if (s.z < 0.0 && !geometry::contains(spec, none, s.pose())) continue;  // unreachable
        Action a{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(-0.2, 0.2),
                 rng.uniform(-3.0, 3.0)};
        const auto res = step(cfg, spec, none, s, a, 1 + (steps_done % cfg.k_max));
        ++steps_done;
        CHECK(std::abs(res.next.x - s.x) <= cfg.a_max[0] * cfg.dt + 1e-9);
        CHECK(std::abs(res.next.y - s.y) <= cfg.a_max[1] * cfg.dt + 1e-9);
        CHECK(std::abs(res.next.theta - s.theta) <= cfg.a_max[2] * cfg.dt + 1e-9);
        CHECK(std::abs(res.next.z - s.z) <= cfg.a_max[3] * cfg.dt + 1e-9);
        // tolerance never violated below the surface
        if (res.next.z < 0.0) CHECK(geometry::contains(spec, none, res.next.pose()));
        // collided iff some contact flag is set
        const bool flagged =
            res.next.fx != 0 || res.next.fy != 0 || res.next.qtheta != 0 || res.next.fz != 0;
        CHECK(res.collided == flagged);
        // reward cases
        if (res.success)
            CHECK(res.reward > 0.0);
        else
            CHECK((res.reward == 0.0 || res.reward == -1.0));
    }
}

TEST_CASE("episode return stays within bounds") {
    Rng rng(55);
    const auto spec = grid22();
    const auto none = geometry::DefectParams::none(spec);
    EnvConfig cfg;
    for (int e = 0; e < 30; ++e) {
        const std::uint64_t seed = rng.next_u64();
        const auto traj = rollout(cfg, spec, none,
                                  [&](const Observation& o) {
                                      Action a;
                                      a.ux = -2.0 * o.v[0];
                                      a.uy = -2.0 * o.v[1];
                                      a.utheta = -2.0 * o.v[2];
                                      a.uz = -2.5;
                                      return a;
                                  },
                                  {0, 0, 0}, seed);
        CHECK(traj.total_reward >= -cfg.k_max);
        CHECK(traj.total_reward <= cfg.c);
    }
}

} // TEST_SUITE
