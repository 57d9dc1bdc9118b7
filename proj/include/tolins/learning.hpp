#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tolins/approx.hpp"
#include "tolins/simenv.hpp"

namespace tolins::learning {

using approx::ParamVector;
using approx::PolicyParams;
using simenv::Action;
using simenv::DefectParams;
using simenv::EnvConfig;
using simenv::Observation;
using simenv::PlanarPose;
using simenv::WorkpieceSpec;

// One insertion task: workpiece, realized defects, goal pose, and optionally
// the 5-D tolerance embedding used by the adaptation half of the policy.
struct Task {
    WorkpieceSpec spec;
    DefectParams defects;
    PlanarPose target;
    std::optional<std::array<double, 5>> embedding;

    static Task nominal(const WorkpieceSpec& spec) {
        return Task{spec, DefectParams::none(spec), PlanarPose{}, std::nullopt};
    }
};

struct EnvSetup {
    EnvConfig env;
    std::vector<Task> tasks;  // sampled uniformly during training
};

struct DemoTrajectory {
    std::vector<std::pair<Observation, Action>> pairs;
    bool success = false;
    double total_reward = 0.0;
    int collisions = 0;
};

struct DemoSet {
    std::vector<DemoTrajectory> trajectories;
    std::string expert_tag;

    std::size_t pair_count() const;
    void validate() const;
    void save(const std::string& path) const;
    static DemoSet load(const std::string& path);
};

using ExpertFn = simenv::PolicyFn;

DemoSet collect_demos(const EnvSetup& setup, const ExpertFn& expert, const std::string& tag,
                      int n_episodes, std::uint64_t seed);

struct BcConfig {
    int epochs = 200;
    int batch_size = 64;
    double lr = 1e-3;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
};

// Fits the nominal policy to the demo pairs by minimizing the mean squared
// error of normalized actions; returns the parameters with the best
// validation loss and that loss.
struct BcResult {
    PolicyParams policy;
    double best_val_mse = 0.0;
};
BcResult behavior_cloning(const DemoSet& demos, const EnvConfig& env, const BcConfig& cfg);

// Discriminator over (shifted measurement, normalized action) pairs.
struct Discriminator {
    ParamVector params;

    static Discriminator init(std::uint64_t seed);
    double score(const Observation& obs, const Action& act,
                 const std::array<double, 4>& a_max) const;
};

struct DiscUpdateResult {
    double mean_expert_score = 0.0;
    double mean_student_score = 0.0;
};

// Gradient ascent on E_expert[D] - E_student[D]. When stop_below > 0 the
// update stops early once the mean student score drops under it, keeping the
// discriminator inside the informative confusion band.
DiscUpdateResult discriminator_update(Discriminator& d,
                                      const std::vector<std::pair<Observation, Action>>& expert,
                                      const std::vector<std::pair<Observation, Action>>& student,
                                      int steps, double lr, approx::Adam* adam = nullptr,
                                      double stop_below = 0.0);

struct GailConfig {
    double alpha = 0.8;               // reward shaping weight
    int max_iterations = 100;
    int discriminator_period = 5;     // iterations between discriminator refreshes
    int discriminator_steps = 20;     // gradient steps per refresh
    int discriminator_episodes = 10;  // fresh student episodes per refresh
    double discriminator_lr = 1e-3;
    int rollouts_per_fitness = 5;
    int lambda = 0;                   // CMA-ES population; 0 = default
    double sigma_init = 0.015;
    // optional linear annealing of alpha from alpha_start over anneal_iters
    std::optional<double> alpha_start;
    int anneal_iterations = 0;
    // stop when the population reward plateaus while the discriminator
    // confusion sits in the band
    int plateau_window = 15;
    double plateau_tolerance = 0.0;  // 0 disables early stopping
    double confusion_lo = 0.4;
    double confusion_hi = 0.6;
    std::uint64_t seed = 0;
};

enum class WhichParams { Phi1, Phi2 };

struct CurvePoint {
    int iteration = 0;
    double mean_reward = 0.0;
    double reward_std = 0.0;
    double mean_d_student = 0.0;
    double mean_d_expert = 0.0;
    double best_fitness = 0.0;
};

struct GailResult {
    PolicyParams policy;
    std::vector<CurvePoint> curve;
    int iterations_run = 0;
};

std::string curve_to_csv(const std::vector<CurvePoint>& curve);

// One CMA-ES generation per iteration over the selected parameter block.
// Candidate fitness is (1-alpha) * mean_t D + alpha * mean_t r averaged over
// seeded rollouts with common random numbers across candidates.
GailResult rs_gail(const EnvSetup& setup, const PolicyParams& init, const DemoSet& demos,
                   const GailConfig& cfg, WhichParams which, int jobs = 1);

// Builds a policy closure for evaluation; uses the task embedding when the
// policy should run in adaptation mode.
simenv::PolicyFn make_policy(const PolicyParams& params, const EnvConfig& env,
                             const std::optional<std::array<double, 5>>& embedding);

struct CurriculumResult {
    PolicyParams pi_bc;
    PolicyParams pi_n;
    PolicyParams pi_phi;
    std::vector<CurvePoint> phase1_curve;
    std::vector<CurvePoint> phase2_curve;
};

// Phase 1: behavior cloning then RS-GAIL on phi1 over the representative
// task. Phase 2: phi1 frozen, phi2 from zero init, RS-GAIL over the training
// task set with per-task embeddings.
CurriculumResult curriculum(const EnvSetup& phase1, const EnvSetup& phase2, const DemoSet& demos,
                            const BcConfig& bc_cfg, const GailConfig& phase1_cfg,
                            const GailConfig& phase2_cfg, int jobs = 1);

} // namespace tolins::learning
