#include "tolins/experts.hpp"

#include <algorithm>
#include <cmath>

namespace tolins::experts {

namespace {

double clamp_to(double v, double lim) { return std::clamp(v, -lim, lim); }

} // namespace

simenv::Action safe_expert(const simenv::Observation& obs, const ExpertConfig& cfg) {
    const double ex = obs.v[0], ey = obs.v[1], eth = obs.v[2];
    simenv::Action a;
    a.ux = clamp_to(-cfg.gain * ex, cfg.a_max[0]);
    a.uy = clamp_to(-cfg.gain * ey, cfg.a_max[1]);
    a.utheta = clamp_to(-cfg.gain * eth, cfg.a_max[2]);
    const bool aligned = std::abs(ex) <= cfg.deadband_xy && std::abs(ey) <= cfg.deadband_xy &&
                         std::abs(eth) <= cfg.deadband_theta;
    a.uz = aligned ? -cfg.a_max[3] : 0.0;
    return a;
}

simenv::Action efficient_expert(const simenv::Observation& obs, const ExpertConfig& cfg) {
    simenv::Action a;
    a.ux = clamp_to(-cfg.efficient_gain * obs.v[0], cfg.a_max[0]);
    a.uy = clamp_to(-cfg.efficient_gain * obs.v[1], cfg.a_max[1]);
    a.utheta = clamp_to(-cfg.efficient_gain * obs.v[2], cfg.a_max[2]);
    a.uz = -cfg.a_max[3];
    return a;
}

} // namespace tolins::experts
