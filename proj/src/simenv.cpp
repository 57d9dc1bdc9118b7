#include "tolins/simenv.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tolins::simenv {

namespace {

constexpr double kSurfaceEps = 1e-12;

// below the board surface and outside the tolerance set
bool penetrates(const WorkpieceSpec& spec, const DefectParams& defects, double x, double y,
                double theta, double z) {
    if (z >= -kSurfaceEps) return false;
    return !geometry::contains(spec, defects, PlanarPose{x, y, theta});
}

double workpiece_radius(const WorkpieceSpec& spec, const DefectParams& defects) {
    double r = 0.0;
    for (const auto& p : geometry::pin_positions(spec, defects))
        r = std::max(r, std::hypot(p.x, p.y));
    if (spec.family == geometry::Family::CircleGrid)
        r += spec.pin_radius;
    else
        r += spec.pin_circumradius;
    return r;
}

int sgn(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

} // namespace

void EnvConfig::validate() const {
    if (dt <= 0.0) throw std::invalid_argument("env: dt must be positive");
    if (k_max < 1) throw std::invalid_argument("env: k_max must be >= 1");
    if (z_insert <= 0.0) throw std::invalid_argument("env: z_insert must be positive");
    for (double a : a_max)
        if (a <= 0.0) throw std::invalid_argument("env: a_max must be strictly positive");
    if (init_range.z_lo <= 0.0)
        throw std::invalid_argument("env: init range must keep z above the board");
    if (init_range.x_lo > init_range.x_hi || init_range.y_lo > init_range.y_hi ||
        init_range.theta_lo > init_range.theta_hi || init_range.z_lo > init_range.z_hi)
        throw std::invalid_argument("env: malformed init range");
}

EnvState reset(const EnvConfig& cfg, Rng& rng) {
    cfg.validate();
    EnvState s;
    s.x = rng.uniform(cfg.init_range.x_lo, cfg.init_range.x_hi);
    s.y = rng.uniform(cfg.init_range.y_lo, cfg.init_range.y_hi);
    s.theta = rng.uniform(cfg.init_range.theta_lo, cfg.init_range.theta_hi);
    s.z = rng.uniform(cfg.init_range.z_lo, cfg.init_range.z_hi);
    return s;
}

EnvState reset(const EnvConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    return reset(cfg, rng);
}

StepResult step(const EnvConfig& cfg, const WorkpieceSpec& spec, const DefectParams& defects,
                const EnvState& s, const Action& action, int step_index) {
    const auto raw = action.as_array();
    for (double v : raw)
        if (!std::isfinite(v)) throw std::invalid_argument("step: non-finite action");

    std::array<double, 4> u{};
    for (int i = 0; i < 4; ++i) u[static_cast<std::size_t>(i)] =
        std::clamp(raw[static_cast<std::size_t>(i)], -cfg.a_max[static_cast<std::size_t>(i)],
                   cfg.a_max[static_cast<std::size_t>(i)]);

    StepResult out;
    out.step_index = step_index;

    EnvState n = s;  // current pose while sweeping
    n.fx = n.fy = n.qtheta = n.fz = 0;
    // remaining displacement per axis [x y theta z]
    std::array<double, 4> rem{u[0] * cfg.dt, u[1] * cfg.dt, u[2] * cfg.dt, u[3] * cfg.dt};

    const double radius = workpiece_radius(spec, defects);
    const auto in_plane_ok = [&](double x, double y, double th) {
        return geometry::contains(spec, defects, PlanarPose{x, y, th});
    };

    // Event-driven sweep. Pressing on the board outside the tolerance pins z
    // to the surface while the workpiece keeps sliding (and drops in if the
    // slide reaches the holes); a wall contact below the surface stops the
    // motion at the first collision point for the rest of the step.
    for (int guard = 0; guard < 8; ++guard) {
        const double moving =
            std::abs(rem[0]) + std::abs(rem[1]) + std::abs(rem[2]) + std::abs(rem[3]);
        if (moving < 1e-15) break;

        // descending onto the surface from above, outside the tolerance
        if (n.z > kSurfaceEps && rem[3] < 0.0 && n.z + rem[3] < 0.0) {
            const double t_c = n.z / -rem[3];
            const double cx = n.x + t_c * rem[0], cy = n.y + t_c * rem[1],
                         cth = n.theta + t_c * rem[2];
            if (!in_plane_ok(cx, cy, cth)) {
                n.x = cx;
                n.y = cy;
                n.theta = cth;
                n.z = 0.0;
                n.fz = 1;
                out.collided = true;
                for (auto& r : rem) r *= (1.0 - t_c);
                continue;
            }
        }

        // Pressed flat on the board: the workpiece stays put for the rest of
        // the step and comes free again once the downward push stops.
        if (std::abs(n.z) <= kSurfaceEps && rem[3] < 0.0 && !in_plane_ok(n.x, n.y, n.theta)) {
            n.z = 0.0;
            n.fz = 1;
            out.collided = true;
            break;
        }

        // free sweep until the first penetration below the surface
        const auto ok = [&](double t) {
            const double z = n.z + t * rem[3];
            if (z >= -kSurfaceEps) return true;
            return in_plane_ok(n.x + t * rem[0], n.y + t * rem[1], n.theta + t * rem[2]);
        };
        double t_stop = 1.0;
        bool hit = false;
        if (!ok(0.0)) {
            // only reachable through hand-constructed states; block in place
            t_stop = 0.0;
            hit = true;
        } else {
            constexpr int kScan = 64;
            double lo = 0.0;
            for (int g = 1; g <= kScan; ++g) {
                const double t = static_cast<double>(g) / kScan;
                if (!ok(t)) {
                    double hi = t;
                    const double disp = std::max({std::abs(rem[0]), std::abs(rem[1]),
                                                  std::abs(rem[2]) * radius, std::abs(rem[3])});
                    const double t_tol =
                        disp > 0.0 ? std::max(1e-9, cfg.collision_bisection_tol / disp) : 1e-9;
                    while (hi - lo > t_tol) {
                        const double mid = 0.5 * (lo + hi);
                        (ok(mid) ? lo : hi) = mid;
                    }
                    t_stop = lo;
                    hit = true;
                    break;
                }
                lo = t;
            }
        }

        n.x += t_stop * rem[0];
        n.y += t_stop * rem[1];
        n.theta += t_stop * rem[2];
        n.z += t_stop * rem[3];
        if (!hit) break;
        out.collided = true;
        for (auto& r : rem) r *= (1.0 - t_stop);

        // Contact flags on the blocked components: advancing a single axis by
        // its remaining displacement from the contact pose violates the
        // tolerance.
        bool any_blocked = false;
        if (std::abs(rem[0]) > 1e-12 && !in_plane_ok(n.x + rem[0], n.y, n.theta)) {
            n.fx = sgn(rem[0]);
            any_blocked = true;
        }
        if (std::abs(rem[1]) > 1e-12 && !in_plane_ok(n.x, n.y + rem[1], n.theta)) {
            n.fy = sgn(rem[1]);
            any_blocked = true;
        }
        if (std::abs(rem[2]) > 1e-12 && !in_plane_ok(n.x, n.y, n.theta + rem[2])) {
            n.qtheta = sgn(rem[2]);
            any_blocked = true;
        }
        if (!any_blocked) {
            // joint motion blocked without a single responsible axis;
            // attribute it to the largest remaining in-plane component
            const double ax = std::abs(rem[0]), ay = std::abs(rem[1]),
                         ath = std::abs(rem[2]) * radius;
            if (ax >= ay && ax >= ath && ax > 1e-12)
                n.fx = sgn(rem[0]);
            else if (ay >= ath && ay > 1e-12)
                n.fy = sgn(rem[1]);
            else if (ath > 1e-12)
                n.qtheta = sgn(rem[2]);
            else
                n.fz = 1;
        }
        break;  // the workpiece stays at the first collision point
    }

    out.success = n.z <= -cfg.z_insert &&
                  geometry::contains(spec, defects, PlanarPose{n.x, n.y, n.theta});
    out.done = out.success || step_index >= cfg.k_max;
    if (out.success)
        out.reward = cfg.c * (1.0 - static_cast<double>(step_index) / cfg.k_max);
    else if (out.collided)
        out.reward = -1.0;
    out.next = n;
    return out;
}

Observation observe(const EnvState& s, const PlanarPose& target, const EnvConfig& cfg, Rng& rng) {
    // the four pose noises are always drawn so the stream layout does not
    // depend on the noise configuration
    const double nx = rng.normal(), ny = rng.normal(), nth = rng.normal(), nz = rng.normal();
    Observation o;
    o.v[0] = s.x + cfg.noise_std[0] * nx - target.x;
    o.v[1] = s.y + cfg.noise_std[1] * ny - target.y;
    o.v[2] = s.theta + cfg.noise_std[2] * nth - target.theta;
    o.v[3] = s.z + cfg.noise_std[3] * nz;
    o.v[4] = s.fx;
    o.v[5] = s.fy;
    o.v[6] = s.qtheta;
    o.v[7] = s.fz;
    return o;
}

Trajectory rollout(const EnvConfig& cfg, const WorkpieceSpec& spec, const DefectParams& defects,
                   const PolicyFn& policy, const PlanarPose& target, std::uint64_t seed) {
    Rng rng(seed);
    EnvState state = reset(cfg, rng);
    Trajectory traj;
    traj.steps.reserve(static_cast<std::size_t>(cfg.k_max));
    for (int k = 1; k <= cfg.k_max; ++k) {
        const Observation obs = observe(state, target, cfg, rng);
        const Action a = policy(obs);
        const StepResult res = step(cfg, spec, defects, state, a, k);
        traj.steps.push_back({res.next, obs, a, res.reward, res.collided});
        traj.total_reward += res.reward;
        traj.collisions += res.collided ? 1 : 0;
        state = res.next;
        if (res.done) {
            traj.success = res.success;
            break;
        }
    }
    return traj;
}

std::string Trajectory::to_csv() const {
    std::ostringstream os;
    os << "step,x,y,theta,z,Fx,Fy,qtheta,Fz,ux,uy,utheta,uz,reward,collided\n";
    char buf[256];
    int k = 1;
    for (const auto& st : steps) {
        std::snprintf(buf, sizeof(buf),
                      "%d,%.6f,%.6f,%.6f,%.6f,%d,%d,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%d\n", k,
                      st.state.x, st.state.y, st.state.theta, st.state.z, st.state.fx, st.state.fy,
                      st.state.qtheta, st.state.fz, st.action.ux, st.action.uy, st.action.utheta,
                      st.action.uz, st.reward, st.collided ? 1 : 0);
        os << buf;
        ++k;
    }
    return os.str();
}

} // namespace tolins::simenv
