#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "tolins/geometry.hpp"

using namespace tolins;
using namespace tolins::geometry;

namespace {

// dense-grid reference for theta_sup: walk up from zero in 1e-4 steps until
// containment first fails
double theta_sup_dense(const WorkpieceSpec& spec, const DefectParams& defects, double x, double y,
                       double theta_max = 0.6) {
    if (!contains(spec, defects, {x, y, 0.0})) return 0.0;
    const double h = 1e-4;
    double last = 0.0;
    for (double th = h; th <= theta_max + 0.5 * h; th += h) {
        if (!contains(spec, defects, {x, y, th})) return last;
        last = th;
    }
    return theta_max;
}

WorkpieceSpec study_pair() {
    // two pins 5 mm apart on the x axis
    return WorkpieceSpec::circle_grid(1, 2, 0.3, 0.5, 7.62, 5.0);
}

} // namespace

TEST_SUITE("geometry") {

TEST_CASE("pin layout is a centered grid") {
    const auto spec = study_pair();
    const auto pins = pin_positions(spec, DefectParams::none(spec));
    REQUIRE(pins.size() == 2);
    CHECK(pins[0].x == doctest::Approx(-2.5));
    CHECK(pins[0].y == doctest::Approx(0.0));
    CHECK(pins[1].x == doctest::Approx(2.5));
    CHECK(pins[1].y == doctest::Approx(0.0));

    const auto poly = WorkpieceSpec::polygon(4, 1.5, 1.65);
    const auto single = pin_positions(poly, DefectParams::none(poly));
    REQUIRE(single.size() == 1);
    CHECK(single[0].x == 0.0);
    CHECK(single[0].y == 0.0);

    const auto grid22 = WorkpieceSpec::circle_grid(2, 2, 0.3, 0.5, 7.62, 2.54);
    auto pts = pin_positions(grid22, DefectParams::none(grid22));
    REQUIRE(pts.size() == 4);
    for (const auto& p : pts) {
        CHECK(std::abs(p.x) == doctest::Approx(1.27));
        CHECK(std::abs(p.y) == doctest::Approx(3.81));
    }
    // all four sign combinations present
    int quadrants = 0;
    for (const auto& p : pts) quadrants |= 1 << ((p.x > 0 ? 1 : 0) | (p.y > 0 ? 2 : 0));
    CHECK(quadrants == 0xF);
}

TEST_CASE("pin offsets shift positions and length mismatch throws") {
    const auto spec = study_pair();
    DefectParams d = DefectParams::none(spec);
    d.offsets[1] = {0.1, -0.05};
    const auto pins = pin_positions(spec, d);
    CHECK(pins[1].x == doctest::Approx(2.6));
    CHECK(pins[1].y == doctest::Approx(-0.05));
    DefectParams bad;
    bad.offsets.resize(1);
    CHECK_THROWS_AS(pin_positions(spec, bad), std::invalid_argument);
}

TEST_CASE("spec validation") {
    CHECK_THROWS(WorkpieceSpec::circle_grid(1, 1, 0.5, 0.3, 1, 1));
    CHECK_THROWS(WorkpieceSpec::polygon(7, 1.0, 1.2));
    CHECK_THROWS(WorkpieceSpec::polygon(4, 1.2, 1.0));
    WorkpieceSpec multi_poly = WorkpieceSpec::polygon(4, 1.0, 1.2);
    multi_poly.rows = 2;
    CHECK_THROWS(multi_poly.validate());
}

TEST_CASE("containment for single circle pin") {
    const auto spec = WorkpieceSpec::circle_grid(1, 1, 0.3, 0.5, 1, 1);
    const auto none = DefectParams::none(spec);
    CHECK(contains(spec, none, {0.1, 0.1, 0.0}));       // offset 0.141 <= 0.2
    CHECK(!contains(spec, none, {0.15, 0.15, 0.0}));    // offset 0.212 > 0.2
    CHECK(contains(spec, none, {0.2, 0.0, 0.0}));       // boundary counts as contained
    CHECK(contains(spec, none, {0.0, 0.0, 0.59}));      // rotation about own axis is free
}

TEST_CASE("containment under rotation of a pin pair") {
    const auto spec = study_pair();
    const auto none = DefectParams::none(spec);
    // displacement of each pin is 5 sin(theta/2)
    CHECK(contains(spec, none, {0.0, 0.0, 0.05}));   // approx 0.125 <= 0.2
    CHECK(!contains(spec, none, {0.0, 0.0, 0.09}));  // approx 0.225 > 0.2
}

TEST_CASE("square pin in square hole rotation matches vertex oracle") {
    const auto spec = WorkpieceSpec::polygon(4, 1.5, 1.65);
    const auto none = DefectParams::none(spec);
    // reference: explicit vertex-in-hole test over a fine theta grid
    const auto vertex_ok = [&](double th) {
        const double rh = 1.65, rp = 1.5;
        for (int i = 0; i < 4; ++i) {
            const double a = 2.0 * M_PI * i / 4 + th;
            const double vx = rp * std::cos(a), vy = rp * std::sin(a);
            // square hole with vertices at angle 0: |x|+|y| <= rh for the
            // diamond orientation... the hole vertices are at angles 0, 90,
            // 180, 270 so its edges satisfy |x| + |y| <= rh
            if (std::abs(vx) + std::abs(vy) > rh + 1e-12) return false;
        }
        return true;
    };
    for (double th : {0.0, 0.05, 0.1, 0.15, 0.2, 0.3}) {
        CAPTURE(th);
        CHECK(contains(spec, none, {0.0, 0.0, th}) == vertex_ok(th));
    }
}

TEST_CASE("theta_sup basics") {
    const auto spec = study_pair();
    const auto none = DefectParams::none(spec);
    // far outside every hole
    CHECK(theta_sup(spec, none, 1.0, 1.0) == 0.0);
    // centered single pin never binds in rotation
    const auto one = WorkpieceSpec::circle_grid(1, 1, 0.3, 0.5, 1, 1);
    CHECK(theta_sup(one, DefectParams::none(one), 0.0, 0.0) == doctest::Approx(0.6));
    // analytic: 2 asin(clearance / interval) at the center
    const double expect = 2.0 * std::asin(0.2 / 5.0);
    CHECK(theta_sup(spec, none, 0.0, 0.0) == doctest::Approx(expect).epsilon(0.01));
}

TEST_CASE("theta_sup agrees with dense scanning") {
    Rng rng(7);
    const auto spec22 = WorkpieceSpec::circle_grid(2, 2, 0.3, 0.5, 2.5, 2.5);
    const auto none = DefectParams::none(spec22);
    for (int i = 0; i < 25; ++i) {
        const double x = rng.uniform(-0.3, 0.3);
        const double y = rng.uniform(-0.3, 0.3);
        const double fast = theta_sup(spec22, none, x, y);
        const double dense = theta_sup_dense(spec22, none, x, y);
        CAPTURE(x);
        CAPTURE(y);
        CHECK(std::abs(fast - dense) <= 2e-4);
    }
    const auto poly = WorkpieceSpec::polygon(5, 1.5, 1.65);
    const auto pnone = DefectParams::none(poly);
    for (int i = 0; i < 10; ++i) {
        const double x = rng.uniform(-0.1, 0.1);
        const double y = rng.uniform(-0.1, 0.1);
        CHECK(std::abs(theta_sup(poly, pnone, x, y) - theta_sup_dense(poly, pnone, x, y)) <= 2e-4);
    }
}

TEST_CASE("theta_sup positive iff contained at zero") {
    Rng rng(11);
    const auto spec = WorkpieceSpec::circle_grid(2, 2, 0.3, 0.5, 2.5, 2.5);
    const auto none = DefectParams::none(spec);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.uniform(-0.5, 0.5), y = rng.uniform(-0.5, 0.5);
        const bool inside = contains(spec, none, {x, y, 0.0});
        CHECK((theta_sup(spec, none, x, y) > 0.0) == inside);
    }
}

TEST_CASE("tolerance map of infeasible spec is all zero") {
    // feasible nowhere inside the window if we pull the window far away is not
    // expressible, so use defects that make the pins collide for every pose
    const auto spec = study_pair();
    DefectParams d = DefectParams::none(spec);
    d.offsets[0] = {0.5, 0.0};
    d.offsets[1] = {-0.5, 0.0};  // pins pulled together by 1 mm: no feasible pose
    const auto map = render_tolerance(spec, d, 1.0);
    CHECK(map.max_value() == 0.0);
}

TEST_CASE("tolerance map of the four-pin workpiece") {
    const auto spec = WorkpieceSpec::circle_grid(2, 2, 0.3, 0.5, 2.5, 2.5);
    const auto none = DefectParams::none(spec);
    const auto map = render_tolerance(spec, none, 1.0);
    // positive plateau around the center
    CHECK(map.at(14, 14) > 0.0);
    CHECK(map.at(13, 13) > 0.0);
    // infeasible at the window corners
    CHECK(map.at(0, 0) == 0.0);
    CHECK(map.at(27, 27) == 0.0);
    // the map of explicit zero defects equals the nominal map exactly
    const auto map2 = render_tolerance(spec, DefectParams::none(spec), 1.0);
    CHECK(map.grid == map2.grid);
    // point symmetry of symmetric layouts
    for (int i = 0; i < 28; ++i)
        for (int j = 0; j < 28; ++j)
            CHECK(map.at(i, j) == doctest::Approx(map.at(27 - i, 27 - j)).epsilon(1e-12));
}

TEST_CASE("tolerance map file round-trip") {
    const auto spec = study_pair();
    const auto map = render_tolerance(spec, DefectParams::none(spec), 1.0);
    const std::string path = (std::filesystem::temp_directory_path() / "t.tolmap").string();
    map.save(path);
    const auto back = ToleranceMap::load(path);
    CHECK(back.window_half_width == doctest::Approx(1.0));
    // entries are stored with six decimal places
    for (int i = 0; i < 28; ++i)
        for (int j = 0; j < 28; ++j)
            CHECK(std::abs(back.at(i, j) - map.at(i, j)) <= 6e-7);
    std::filesystem::remove(path);
}

TEST_CASE("monte carlo oracle finds clear violations") {
    Rng rng(3);
    const auto spec = WorkpieceSpec::circle_grid(1, 1, 0.3, 0.5, 1, 1);
    const auto none = DefectParams::none(spec);
    // violating by ~0.05 mm
    CHECK(!mc_contains_oracle(spec, none, {0.25, 0.0, 0.0}, 10000, rng));
    // contained pose: sound for any sample count
    CHECK(mc_contains_oracle(spec, none, {0.1, 0.0, 0.0}, 10, rng));
    CHECK(mc_contains_oracle(spec, none, {0.1, 0.0, 0.0}, 10000, rng));
}

TEST_CASE("containment agrees with the sampling oracle away from the boundary") {
    // smaller version of the acceptance sweep
    Rng rng(12345);
    int tested = 0;
    while (tested < 600) {
        WorkpieceSpec spec;
        if (rng.uniform() < 0.5) {
            const double rp = rng.uniform(0.2, 0.45);
            const double rh = rng.uniform(rp + 0.1, 0.6);
            spec = WorkpieceSpec::circle_grid(rng.uniform_int(1, 2), rng.uniform_int(1, 3), rp, rh,
                                              rng.uniform(2.0, 8.0), rng.uniform(2.0, 8.0));
        } else {
            const double rp = rng.uniform(1.0, 1.6);
            spec = WorkpieceSpec::polygon(rng.uniform_int(3, 6), rp, rp * rng.uniform(1.03, 1.12));
        }
        DefectParams d = DefectParams::none(spec);
        for (auto& o : d.offsets) o = {rng.normal(0.0, 0.03), rng.normal(0.0, 0.03)};
        const PlanarPose pose{rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                              rng.uniform(-0.15, 0.15)};
        const double margin = containment_margin(spec, d, pose);
        if (std::abs(margin) < 0.02) continue;
        ++tested;
        const int n = margin < 0.0 ? static_cast<int>(2e4) : 200;
        CAPTURE(spec.describe());
        CHECK(contains(spec, d, pose) == mc_contains_oracle(spec, d, pose, n, rng));
    }
}

TEST_CASE("radial monotonicity of nominal circle containment") {
    Rng rng(9);
    const auto spec = WorkpieceSpec::circle_grid(2, 2, 0.3, 0.5, 2.5, 2.5);
    const auto none = DefectParams::none(spec);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.uniform(-0.5, 0.5), y = rng.uniform(-0.5, 0.5);
        if (!contains(spec, none, {x, y, 0.0})) {
            for (double lam : {1.1, 1.5, 2.0})
                CHECK(!contains(spec, none, {lam * x, lam * y, 0.0}));
        }
    }
}

} // TEST_SUITE
