#pragma once

#include "tolins/simenv.hpp"

namespace tolins::experts {

// Both demonstrators act on the shifted measurement only. The gains and
// deadbands are tuned against the default environment so the safe expert
// produces the align-then-descend behavior and a mid-range success rate.
struct ExpertConfig {
    double deadband_xy = 0.19;      // mm, descend gate on |x|, |y|
    double deadband_theta = 0.01;   // rad
    double gain = 0.9;              // 1/s, proportional pose correction
    // saturated almost everywhere; must stay below 2/dt so the zero-noise
    // closed loop converges instead of limit-cycling
    double efficient_gain = 6.0;
    std::array<double, 4> a_max{2.5, 2.5, 0.1, 2.5};
};

// Aligns in the plane first and descends only while the measured pose error
// is inside the deadbands.
simenv::Action safe_expert(const simenv::Observation& obs, const ExpertConfig& cfg);

// Full speed toward the hole on every axis at once, descending the whole
// time; the correction only comes off saturation in the last fraction of a
// millimeter.
simenv::Action efficient_expert(const simenv::Observation& obs, const ExpertConfig& cfg);

} // namespace tolins::experts
