#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "tolins/geometry.hpp"

namespace tolins::inference {

using geometry::DefectParams;
using geometry::PlanarPose;
using geometry::WorkpieceSpec;

struct InsertionRecord {
    PlanarPose pose;      // observed insertion pose
    bool success = false;
};

// Gaussian prior over per-pin horizontal offsets. Either isotropic with
// per-coordinate deviation sigma_d, or a full covariance over the 2n offset
// coordinates (row-major), validated by Cholesky.
struct DefectPrior {
    int pin_count = 1;
    double sigma_d = 0.1;          // mm, used when Sigma is empty
    std::vector<double> Sigma;     // optional (2n)x(2n)

    static DefectPrior isotropic(int pins, double sd) { return {pins, sd, {}}; }
    int dim() const { return 2 * pin_count; }
    // lower-triangular factor; throws on non-PSD Sigma
    std::vector<double> cholesky() const;
};

struct ParticleSet {
    std::vector<DefectParams> particles;
    std::vector<double> weights;

    double weight_sum() const;
    void normalize();  // throws when all weights are zero
};

ParticleSet sample_prior(const WorkpieceSpec& spec, const DefectPrior& prior, int n,
                         std::uint64_t seed);

// Deterministic 0/1 likelihood of one insertion outcome under a candidate
// defect: 1 when the recorded outcome matches what the geometry implies at
// the given (true) pose.
int likelihood(const InsertionRecord& record, const WorkpieceSpec& spec,
               const DefectParams& particle);

// Reweights the particles with the record history. Measurement noise over
// the recorded poses is marginalized by Monte Carlo with n_noise_samples
// joint draws shared across particles; zero noise (or 1 sample with zero
// std) reduces to exact indicator products. Returns false when every
// particle weight vanished (history inconsistent with the prior).
bool posterior(const std::vector<InsertionRecord>& records, const WorkpieceSpec& spec,
               ParticleSet& particles, const std::array<double, 3>& noise_std,
               int n_noise_samples, std::uint64_t seed);

// Weighted fraction of particles that admit insertion at the goal pose.
double expected_success(const PlanarPose& goal, const WorkpieceSpec& spec,
                        const ParticleSet& particles);

struct GoalSearchBox {
    double xy = 0.5;     // +- mm
    double theta = 0.1;  // +- rad
};

struct InferenceConfig {
    int n_particles = 500;
    int n_noise_samples = 20;
    std::array<double, 3> noise_std{0.0, 0.0, 0.0};  // over recorded poses
    GoalSearchBox box;
    int cma_generations = 60;
    int cma_lambda = 8;
    int cma_restarts = 2;
    double discard_threshold = 0.05;  // g_min
    int max_attempts = 10;
};

struct GoalResult {
    PlanarPose goal;
    double g = 0.0;
};

// Posterior once, then CMA-ES over the goal box maximizing the expected
// success against the fixed reweighted particle set. The nominal goal is
// always considered as a candidate. Returns nullopt when the posterior is
// degenerate.
std::optional<GoalResult> optimal_goal(const std::vector<InsertionRecord>& records,
                                       const WorkpieceSpec& spec, const DefectPrior& prior,
                                       const InferenceConfig& cfg, std::uint64_t seed);

inline bool should_discard(double g_star, const InferenceConfig& cfg) {
    return g_star < cfg.discard_threshold;
}

// One insertion attempt toward a goal: the realized outcome plus the pose
// that enters the history.
struct AttemptOutcome {
    bool success = false;
    PlanarPose recorded_pose;
    double episode_reward = 0.0;
    int episode_steps = 0;
    int episode_collisions = 0;
};

using AttemptFn = std::function<AttemptOutcome(const PlanarPose& goal, int attempt_index)>;

struct AttemptLoopResult {
    bool success = false;
    bool discarded = false;
    int attempts = 0;
    std::vector<InsertionRecord> history;
    std::vector<AttemptOutcome> outcomes;
    PlanarPose final_goal;
    double final_g = 1.0;
};

// Attempts toward the current goal (nominal first); each failure extends the
// history, reweights the particles and re-optimizes the goal, until success,
// discard, or the attempt budget runs out.
AttemptLoopResult attempt_loop(const AttemptFn& attempt, const WorkpieceSpec& spec,
                               const DefectPrior& prior, const InferenceConfig& cfg,
                               std::uint64_t seed);

// Perfect control and measurement: the workpiece teleports to the goal and
// the outcome is the exact containment test against the true defects.
AttemptFn idealized_attempt(const WorkpieceSpec& spec, const DefectParams& true_defects);

// Bisects the per-coordinate defect deviation until the fraction of sampled
// workpieces insertable at the nominal goal hits the target.
double calibrate_sigma_d(const WorkpieceSpec& spec, int n_samples, double target_fraction,
                         double tolerance, std::uint64_t seed);

} // namespace tolins::inference
