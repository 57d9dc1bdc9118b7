#include "tolins/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tolins/cmaes.hpp"
#include "tolins/rng.hpp"

namespace tolins::inference {

std::vector<double> DefectPrior::cholesky() const {
    const int d = dim();
    std::vector<double> L(static_cast<std::size_t>(d) * d, 0.0);
    if (Sigma.empty()) {
        for (int i = 0; i < d; ++i)
            L[static_cast<std::size_t>(i) * d + i] = sigma_d;
        return L;
    }
    if (static_cast<int>(Sigma.size()) != d * d)
        throw std::invalid_argument("prior: Sigma dimension mismatch");
    // standard Cholesky with a PSD tolerance; zero diagonal rows are allowed
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            double acc = Sigma[static_cast<std::size_t>(i) * d + j];
            for (int k = 0; k < j; ++k)
                acc -= L[static_cast<std::size_t>(i) * d + k] * L[static_cast<std::size_t>(j) * d + k];
            if (i == j) {
                if (acc < -1e-10) throw std::invalid_argument("prior: Sigma is not PSD");
                L[static_cast<std::size_t>(i) * d + i] = std::sqrt(std::max(0.0, acc));
            } else {
                const double diag = L[static_cast<std::size_t>(j) * d + j];
                L[static_cast<std::size_t>(i) * d + j] = diag > 0.0 ? acc / diag : 0.0;
            }
        }
    }
    return L;
}

double ParticleSet::weight_sum() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
}

void ParticleSet::normalize() {
    const double s = weight_sum();
    if (s <= 0.0) throw std::runtime_error("particles: all weights are zero");
    for (double& w : weights) w /= s;
}

ParticleSet sample_prior(const WorkpieceSpec& spec, const DefectPrior& prior, int n,
                         std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_prior: n must be >= 1");
    if (prior.pin_count != spec.pin_count())
        throw std::invalid_argument("sample_prior: prior pin count mismatch");
    const int d = prior.dim();
    const std::vector<double> L = prior.cholesky();
    Rng rng(Rng::mix(seed, 0x9A17));
    ParticleSet set;
    set.particles.reserve(static_cast<std::size_t>(n));
    set.weights.assign(static_cast<std::size_t>(n), 1.0 / n);
    std::vector<double> z(static_cast<std::size_t>(d));
    for (int k = 0; k < n; ++k) {
        for (double& v : z) v = rng.normal();
        DefectParams defects;
        defects.offsets.resize(static_cast<std::size_t>(spec.pin_count()));
        for (int i = 0; i < d; ++i) {
            double acc = 0.0;
            for (int j = 0; j <= i; ++j) acc += L[static_cast<std::size_t>(i) * d + j] * z[static_cast<std::size_t>(j)];
            auto& off = defects.offsets[static_cast<std::size_t>(i / 2)];
            (i % 2 == 0 ? off.x : off.y) = acc;
        }
        set.particles.push_back(std::move(defects));
    }
    return set;
}

int likelihood(const InsertionRecord& record, const WorkpieceSpec& spec,
               const DefectParams& particle) {
    const bool admits = geometry::contains(spec, particle, record.pose);
    return admits == record.success ? 1 : 0;
}

bool posterior(const std::vector<InsertionRecord>& records, const WorkpieceSpec& spec,
               ParticleSet& particles, const std::array<double, 3>& noise_std,
               int n_noise_samples, std::uint64_t seed) {
    if (records.empty()) return true;
    if (n_noise_samples < 1) throw std::invalid_argument("posterior: n_noise_samples >= 1");
    const bool noiseless = noise_std[0] == 0.0 && noise_std[1] == 0.0 && noise_std[2] == 0.0;
    const int n_draws = noiseless ? 1 : n_noise_samples;

    // joint true-pose draws shared across particles
    Rng rng(Rng::mix(seed, 0xB0));
    std::vector<std::vector<PlanarPose>> draws(static_cast<std::size_t>(n_draws));
    for (auto& draw : draws) {
        draw.reserve(records.size());
        for (const auto& r : records) {
            PlanarPose p = r.pose;
            p.x += noise_std[0] * rng.normal();
            p.y += noise_std[1] * rng.normal();
            p.theta += noise_std[2] * rng.normal();
            draw.push_back(p);
        }
    }

    double total = 0.0;
    for (std::size_t i = 0; i < particles.particles.size(); ++i) {
        double mean_lik = 0.0;
        for (const auto& draw : draws) {
            double prod = 1.0;
            for (std::size_t j = 0; j < records.size(); ++j) {
                InsertionRecord r{draw[j], records[j].success};
                if (likelihood(r, spec, particles.particles[i]) == 0) {
                    prod = 0.0;
                    break;
                }
            }
            mean_lik += prod;
        }
        mean_lik /= static_cast<double>(n_draws);
        particles.weights[i] *= mean_lik;
        total += particles.weights[i];
    }
    return total > 0.0;
}

double expected_success(const PlanarPose& goal, const WorkpieceSpec& spec,
                        const ParticleSet& particles) {
    const double total = particles.weight_sum();
    if (total <= 0.0) throw std::runtime_error("expected_success: degenerate weights");
    double hit = 0.0;
    for (std::size_t i = 0; i < particles.particles.size(); ++i)
        if (geometry::contains(spec, particles.particles[i], goal)) hit += particles.weights[i];
    return hit / total;
}

std::optional<GoalResult> optimal_goal(const std::vector<InsertionRecord>& records,
                                       const WorkpieceSpec& spec, const DefectPrior& prior,
                                       const InferenceConfig& cfg, std::uint64_t seed) {
    ParticleSet particles = sample_prior(spec, prior, cfg.n_particles, Rng::mix(seed, 0xA1));
    if (!posterior(records, spec, particles, cfg.noise_std, cfg.n_noise_samples,
                   Rng::mix(seed, 0xA2)))
        return std::nullopt;

    const auto g_of = [&](const PlanarPose& goal) {
        return expected_success(goal, spec, particles);
    };

    GoalResult best{PlanarPose{}, g_of(PlanarPose{})};  // nominal goal always considered
    for (int restart = 0; restart < cfg.cma_restarts; ++restart) {
        cmaes::CmaConfig cc;
        cc.dimension = 3;
        cc.initial_mean = {0.0, 0.0, 0.0};
        cc.initial_sigma = restart == 0 ? 0.5 * cfg.box.xy : cfg.box.xy;
        cc.lambda = cfg.cma_lambda;
        cc.max_generations = cfg.cma_generations;
        cc.seed = Rng::mix(seed, 0xC0 + static_cast<std::uint64_t>(restart));
        cc.lower = {-cfg.box.xy, -cfg.box.xy, -cfg.box.theta};
        cc.upper = {cfg.box.xy, cfg.box.xy, cfg.box.theta};
        cmaes::Cmaes es(cc);
        while (!es.stop()) {
            const auto& cands = es.ask();
            std::vector<double> fit(cands.size());
            for (std::size_t i = 0; i < cands.size(); ++i)
                fit[i] = g_of(PlanarPose{cands[i][0], cands[i][1], cands[i][2]});
            es.tell(fit);
        }
        if (es.has_best() && es.best_fitness() > best.g) {
            best.g = es.best_fitness();
            best.goal = PlanarPose{es.best_point()[0], es.best_point()[1], es.best_point()[2]};
        }
    }
    return best;
}

AttemptLoopResult attempt_loop(const AttemptFn& attempt, const WorkpieceSpec& spec,
                               const DefectPrior& prior, const InferenceConfig& cfg,
                               std::uint64_t seed) {
    if (cfg.max_attempts < 1) throw std::invalid_argument("attempt_loop: max_attempts >= 1");
    AttemptLoopResult out;
    PlanarPose goal{};  // nominal first
    double g = 1.0;
    for (int k = 1; k <= cfg.max_attempts; ++k) {
        const AttemptOutcome o = attempt(goal, k);
        out.attempts = k;
        out.outcomes.push_back(o);
        out.history.push_back({o.recorded_pose, o.success});
        out.final_goal = goal;
        out.final_g = g;
        if (o.success) {
            out.success = true;
            return out;
        }
        if (k == cfg.max_attempts) break;
        const auto next = optimal_goal(out.history, spec, prior, cfg,
                                       Rng::mix(seed, static_cast<std::uint64_t>(k)));
        if (!next || should_discard(next->g, cfg)) {
            out.discarded = true;
            out.final_g = next ? next->g : 0.0;
            return out;
        }
        goal = next->goal;
        g = next->g;
    }
    return out;
}

AttemptFn idealized_attempt(const WorkpieceSpec& spec, const DefectParams& true_defects) {
    return [spec, true_defects](const PlanarPose& goal, int) {
        AttemptOutcome o;
        o.success = geometry::contains(spec, true_defects, goal);
        o.recorded_pose = goal;  // perfect control and measurement
        return o;
    };
}

double calibrate_sigma_d(const WorkpieceSpec& spec, int n_samples, double target_fraction,
                         double tolerance, std::uint64_t seed) {
    // fixed standard-normal draws scaled by sigma keep the fraction monotone
    Rng rng(Rng::mix(seed, 0xCA11));
    const int d = 2 * spec.pin_count();
    std::vector<std::vector<double>> z(static_cast<std::size_t>(n_samples),
                                       std::vector<double>(static_cast<std::size_t>(d)));
    for (auto& row : z)
        for (double& v : row) v = rng.normal();

    const auto fraction_at = [&](double sigma) {
        int insertable = 0;
        DefectParams defects;
        defects.offsets.resize(static_cast<std::size_t>(spec.pin_count()));
        for (const auto& row : z) {
            for (int i = 0; i < d; ++i) {
                auto& off = defects.offsets[static_cast<std::size_t>(i / 2)];
                (i % 2 == 0 ? off.x : off.y) = sigma * row[static_cast<std::size_t>(i)];
            }
            if (geometry::contains(spec, defects, PlanarPose{})) ++insertable;
        }
        return static_cast<double>(insertable) / n_samples;
    };

    double lo = 1e-4, hi = 1.0;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double f = fraction_at(mid);
        if (std::abs(f - target_fraction) <= tolerance) return mid;
        (f > target_fraction ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace tolins::inference
