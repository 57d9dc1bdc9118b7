#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tolins/geometry.hpp"
#include "tolins/rng.hpp"

namespace tolins::simenv {

using geometry::DefectParams;
using geometry::PlanarPose;
using geometry::WorkpieceSpec;

struct InitRange {
    double x_lo = -2.0, x_hi = 2.0;      // mm
    double y_lo = -2.0, y_hi = 2.0;      // mm
    double theta_lo = -0.2, theta_hi = 0.2;    // rad
    double z_lo = 4.5, z_hi = 4.5;       // mm, must stay above the board
};

struct EnvConfig {
    double dt = 0.25;                           // s
    std::array<double, 4> a_max{2.5, 2.5, 0.1, 2.5};  // [mm/s, mm/s, rad/s, mm/s]
    int k_max = 40;
    double c = 100.0;                           // success reward weight
    std::array<double, 4> noise_std{0.1, 0.1, 0.0, 0.1};  // measurement, [x y theta z]
    InitRange init_range;
    double z_insert = 10.0;                     // mm, success depth
    double collision_bisection_tol = 1e-3;      // mm

    void validate() const;
};

// s = [x, y, theta, z, F_x, F_y, q_theta, F_z]; the contact flags are
// nonzero only on steps where a collision occurred.
struct EnvState {
    double x = 0.0, y = 0.0, theta = 0.0, z = 0.0;
    int fx = 0, fy = 0, qtheta = 0, fz = 0;

    PlanarPose pose() const { return {x, y, theta}; }
};

struct Action {
    double ux = 0.0, uy = 0.0, utheta = 0.0, uz = 0.0;  // velocities

    std::array<double, 4> as_array() const { return {ux, uy, utheta, uz}; }
    static Action from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
};

// shifted measurement: [x^-x*, y^-y*, th^-th*, z^, F_x, F_y, q_theta, F_z]
struct Observation {
    std::array<double, 8> v{};
};

struct StepResult {
    EnvState next;
    double reward = 0.0;
    bool collided = false;
    bool done = false;
    bool success = false;
    int step_index = 0;
};

// Uniform draw from the init range; contact flags zero.
EnvState reset(const EnvConfig& cfg, Rng& rng);
EnvState reset(const EnvConfig& cfg, std::uint64_t seed);

// One discrete-time step. The commanded velocity is clamped to +-a_max, the
// pose sweeps linearly toward s + a*dt and stops at the first collision:
//  - landing on the board outside the tolerance stops the descent at z = 0
//    (F_z) while the in-plane motion keeps sliding on the surface;
//  - exiting the tolerance below the surface freezes the pose at the wall
//    (per-axis contact flags on the blocked components).
// step_index is the 1-based index of this step within the episode.
StepResult step(const EnvConfig& cfg, const WorkpieceSpec& spec, const DefectParams& defects,
                const EnvState& state, const Action& action, int step_index);

Observation observe(const EnvState& state, const PlanarPose& target, const EnvConfig& cfg,
                    Rng& rng);

using PolicyFn = std::function<Action(const Observation&)>;

struct TrajectoryStep {
    EnvState state;  // post-step state
    Observation obs;  // observation the action was computed from
    Action action;
    double reward = 0.0;
    bool collided = false;
};

struct Trajectory {
    std::vector<TrajectoryStep> steps;
    bool success = false;
    double total_reward = 0.0;  // undiscounted return
    int collisions = 0;

    int length() const { return static_cast<int>(steps.size()); }
    std::string to_csv() const;
};

Trajectory rollout(const EnvConfig& cfg, const WorkpieceSpec& spec, const DefectParams& defects,
                   const PolicyFn& policy, const PlanarPose& target, std::uint64_t seed);

} // namespace tolins::simenv
