#include "tolins/learning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tolins/cmaes.hpp"
#include "tolins/parallel.hpp"

namespace tolins::learning {

std::size_t DemoSet::pair_count() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.pairs.size();
    return n;
}

void DemoSet::validate() const {
    if (trajectories.empty()) throw std::invalid_argument("demos: empty set");
    for (const auto& t : trajectories)
        if (t.pairs.empty()) throw std::invalid_argument("demos: empty trajectory");
}

void DemoSet::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "# DEMOS v1 expert=" << expert_tag << "\n";
    out << "episode,step,o0,o1,o2,o3,o4,o5,o6,o7,ux,uy,utheta,uz\n";
    char buf[400];
    for (std::size_t e = 0; e < trajectories.size(); ++e) {
        const auto& t = trajectories[e];
        for (std::size_t k = 0; k < t.pairs.size(); ++k) {
            const auto& [o, a] = t.pairs[k];
            std::snprintf(buf, sizeof(buf),
                          "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                          e, k, o.v[0], o.v[1], o.v[2], o.v[3], o.v[4], o.v[5], o.v[6], o.v[7],
                          a.ux, a.uy, a.utheta, a.uz);
            out << buf;
        }
    }
}

DemoSet DemoSet::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    std::getline(in, line);
    DemoSet set;
    const auto tag_pos = line.find("expert=");
    if (line.rfind("# DEMOS v1", 0) != 0 || tag_pos == std::string::npos)
        throw std::runtime_error("bad demo file header: " + path);
    set.expert_tag = line.substr(tag_pos + 7);
    std::getline(in, line);  // column header
    std::size_t cur_ep = static_cast<std::size_t>(-1);
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::vector<double> f;
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(std::stod(cell));
        if (f.size() != 14) throw std::runtime_error("bad demo row: " + path);
        const auto ep = static_cast<std::size_t>(f[0]);
        if (first || ep != cur_ep) {
            set.trajectories.emplace_back();
            cur_ep = ep;
            first = false;
        }
        Observation o;
        for (int i = 0; i < 8; ++i)
            o.v[static_cast<std::size_t>(i)] = f[static_cast<std::size_t>(2 + i)];
        set.trajectories.back().pairs.emplace_back(o, Action{f[10], f[11], f[12], f[13]});
    }
    set.validate();
    return set;
}

DemoSet collect_demos(const EnvSetup& setup, const ExpertFn& expert, const std::string& tag,
                      int n_episodes, std::uint64_t seed) {
    if (n_episodes < 1) throw std::invalid_argument("collect_demos: need at least one episode");
    if (setup.tasks.empty()) throw std::invalid_argument("collect_demos: empty task set");
    DemoSet set;
    set.expert_tag = tag;
    Rng task_rng(Rng::mix(seed, 0x7A5C));
    for (int e = 0; e < n_episodes; ++e) {
        const Task& task = setup.tasks[static_cast<std::size_t>(
            setup.tasks.size() == 1
                ? 0
                : task_rng.uniform_int(0, static_cast<int>(setup.tasks.size()) - 1))];
        const auto traj = simenv::rollout(setup.env, task.spec, task.defects, expert, task.target,
                                          Rng::mix(seed, static_cast<std::uint64_t>(e)));
        DemoTrajectory d;
        d.success = traj.success;
        d.total_reward = traj.total_reward;
        d.collisions = traj.collisions;
        d.pairs.reserve(traj.steps.size());
        for (const auto& st : traj.steps) d.pairs.emplace_back(st.obs, st.action);
        set.trajectories.push_back(std::move(d));
    }
    return set;
}

namespace {

// training view of the composite policy output: a_hat = tanh(net(obs)),
// in units of a_max
struct BcData {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> targets;
};

BcData demo_pairs_to_data(const DemoSet& demos, const EnvConfig& env) {
    BcData data;
    for (const auto& t : demos.trajectories)
        for (const auto& [o, a] : t.pairs) {
            std::vector<double> in(8);
            for (std::size_t i = 0; i < 8; ++i) in[i] = o.v[i] / approx::kObsScale[i];
            data.inputs.push_back(std::move(in));
            data.targets.push_back({a.ux / env.a_max[0], a.uy / env.a_max[1],
                                    a.utheta / env.a_max[2], a.uz / env.a_max[3]});
        }
    return data;
}

double bc_mse(const approx::NetSpec& spec, const ParamVector& params,
              const std::vector<std::vector<double>>& inputs,
              const std::vector<std::vector<double>>& targets) {
    approx::MlpWorkspace ws;
    double loss = 0.0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        approx::forward(spec, params, inputs[s], ws);
        for (std::size_t o = 0; o < targets[s].size(); ++o) {
            const double pred = std::tanh(ws.act.back()[o]);
            const double d = pred - targets[s][o];
            loss += d * d;
            ++n;
        }
    }
    return n == 0 ? 0.0 : loss / static_cast<double>(n);
}

} // namespace

BcResult behavior_cloning(const DemoSet& demos, const EnvConfig& env, const BcConfig& cfg) {
    demos.validate();
    const approx::NetSpec spec = approx::nominal_policy_spec();
    BcData data = demo_pairs_to_data(demos, env);
    const std::size_t n = data.inputs.size();

    Rng rng(Rng::mix(cfg.seed, 0xBC));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1],
                  order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    const std::size_t n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(n)));
    const std::size_t n_train = n - n_val;

    std::vector<std::vector<double>> train_in, train_tg, val_in, val_tg;
    for (std::size_t i = 0; i < n; ++i) {
        auto& in = i < n_train ? train_in : val_in;
        auto& tg = i < n_train ? train_tg : val_tg;
        in.push_back(data.inputs[order[i]]);
        tg.push_back(data.targets[order[i]]);
    }

    ParamVector params = approx::init_params(spec, rng);
    approx::Adam adam(params.size(), {.lr = cfg.lr});
    ParamVector best = params;
    double best_val = bc_mse(spec, params, val_in, val_tg);

    std::vector<std::size_t> idx(n_train);
    std::iota(idx.begin(), idx.end(), 0);
    ParamVector grad;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = n_train; i > 1; --i)
            std::swap(idx[i - 1],
                      idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        for (std::size_t start = 0; start < n_train;
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(n_train, start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::vector<double>> bi, bt;
            bi.reserve(end - start);
            bt.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                bi.push_back(train_in[idx[i]]);
                bt.push_back(train_tg[idx[i]]);
            }
            const auto loss = [&bt](const std::vector<std::vector<double>>& outputs,
                                    std::vector<std::vector<double>>& grad_outputs) {
                double l = 0.0;
                std::size_t cnt = 0;
                for (std::size_t s = 0; s < outputs.size(); ++s)
                    for (std::size_t o = 0; o < outputs[s].size(); ++o) {
                        const double pred = std::tanh(outputs[s][o]);
                        const double d = pred - bt[s][o];
                        l += d * d;
                        // chain through the outer tanh
                        grad_outputs[s][o] = 2.0 * d * (1.0 - pred * pred);
                        ++cnt;
                    }
                for (auto& g : grad_outputs)
                    for (auto& v : g) v /= static_cast<double>(cnt);
                return l / static_cast<double>(cnt);
            };
            const double value = gradient(spec, params, bi, loss, grad);
            if (!std::isfinite(value)) throw std::runtime_error("behavior cloning diverged");
            adam.step(params, grad);
        }
        const double val = bc_mse(spec, params, val_in, val_tg);
        if (val < best_val) {
            best_val = val;
            best = params;
        }
    }

    BcResult out;
    out.policy.phi1 = std::move(best);
    Rng zrng(Rng::mix(cfg.seed, 0xF2));
    out.policy.phi2 = approx::init_params(approx::adaptation_policy_spec(), zrng,
                                          /*zero_output_layer=*/true);
    out.best_val_mse = best_val;
    return out;
}

Discriminator Discriminator::init(std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0xD15C));
    Discriminator d;
    d.params = approx::init_params(approx::discriminator_spec(), rng);
    return d;
}

namespace {

std::vector<double> disc_input(const Observation& obs, const Action& act,
                               const std::array<double, 4>& a_max) {
    std::vector<double> in(12);
    for (std::size_t i = 0; i < 8; ++i) in[i] = obs.v[i] / approx::kObsScale[i];
    in[8] = act.ux / a_max[0];
    in[9] = act.uy / a_max[1];
    in[10] = act.utheta / a_max[2];
    in[11] = act.uz / a_max[3];
    return in;
}

} // namespace

double Discriminator::score(const Observation& obs, const Action& act,
                            const std::array<double, 4>& a_max) const {
    static const approx::NetSpec kSpec = approx::discriminator_spec();
    thread_local approx::MlpWorkspace ws;
    approx::forward(kSpec, params, disc_input(obs, act, a_max), ws);
    return ws.act.back()[0];
}

DiscUpdateResult discriminator_update(Discriminator& d,
                                      const std::vector<std::pair<Observation, Action>>& expert,
                                      const std::vector<std::pair<Observation, Action>>& student,
                                      int steps, double lr, approx::Adam* adam, double stop_below) {
    if (expert.empty() || student.empty())
        throw std::invalid_argument("discriminator_update: empty batch");
    static const approx::NetSpec kSpec = approx::discriminator_spec();
    const std::array<double, 4> a_max{2.5, 2.5, 0.1, 2.5};

    std::vector<std::vector<double>> inputs;
    inputs.reserve(expert.size() + student.size());
    for (const auto& [o, a] : expert) inputs.push_back(disc_input(o, a, a_max));
    for (const auto& [o, a] : student) inputs.push_back(disc_input(o, a, a_max));
    const std::size_t ne = expert.size();

    // minimize -(mean_e D - mean_s D)
    const auto loss = [ne](const std::vector<std::vector<double>>& outputs,
                           std::vector<std::vector<double>>& grad_outputs) {
        double me = 0.0, ms = 0.0;
        for (std::size_t i = 0; i < ne; ++i) me += outputs[i][0];
        for (std::size_t i = ne; i < outputs.size(); ++i) ms += outputs[i][0];
        me /= static_cast<double>(ne);
        ms /= static_cast<double>(outputs.size() - ne);
        for (std::size_t i = 0; i < ne; ++i) grad_outputs[i][0] = -1.0 / static_cast<double>(ne);
        for (std::size_t i = ne; i < outputs.size(); ++i)
            grad_outputs[i][0] = 1.0 / static_cast<double>(outputs.size() - ne);
        return ms - me;
    };

    approx::Adam local(d.params.size(), {.lr = lr});
    approx::Adam& opt = adam != nullptr ? *adam : local;
    ParamVector grad;
    for (int s = 0; s < steps; ++s) {
        gradient(kSpec, d.params, inputs, loss, grad);
        opt.step(d.params, grad);
        if (stop_below > 0.0) {
            double ms = 0.0;
            for (const auto& [o, a] : student) ms += d.score(o, a, a_max);
            if (ms / static_cast<double>(student.size()) < stop_below) break;
        }
    }

    DiscUpdateResult res;
    for (const auto& [o, a] : expert) res.mean_expert_score += d.score(o, a, a_max);
    for (const auto& [o, a] : student) res.mean_student_score += d.score(o, a, a_max);
    res.mean_expert_score /= static_cast<double>(expert.size());
    res.mean_student_score /= static_cast<double>(student.size());
    return res;
}

simenv::PolicyFn make_policy(const PolicyParams& params, const EnvConfig& env,
                             const std::optional<std::array<double, 5>>& embedding) {
    return [params, a_max = env.a_max, embedding](const Observation& obs) {
        thread_local approx::MlpWorkspace ws;
        const double* psi = embedding ? embedding->data() : nullptr;
        const auto a = approx::policy_act(params, obs.v, psi, a_max, ws);
        return Action{a[0], a[1], a[2], a[3]};
    };
}

namespace {

struct FitnessStats {
    double fitness = 0.0;
    double mean_reward = 0.0;  // per-episode return
    double mean_d = 0.0;
};

// fitness of one parameter-block candidate: seeded rollouts with common
// random numbers, averaging per-step discriminator score and per-step reward
FitnessStats evaluate_candidate(const EnvSetup& setup, const PolicyParams& base,
                                WhichParams which, const std::vector<double>& block,
                                const Discriminator& disc, double alpha, int n_rollouts,
                                std::uint64_t gen_seed) {
    PolicyParams p = base;
    (which == WhichParams::Phi1 ? p.phi1 : p.phi2) = block;

    FitnessStats st;
    for (int r = 0; r < n_rollouts; ++r) {
        const std::uint64_t ep_seed = Rng::mix(gen_seed, static_cast<std::uint64_t>(r));
        const Task& task = setup.tasks[static_cast<std::size_t>(
            setup.tasks.size() == 1
                ? 0
                : Rng(Rng::mix(gen_seed, 0x7A5C + static_cast<std::uint64_t>(r)))
                      .uniform_int(0, static_cast<int>(setup.tasks.size()) - 1))];
        const auto policy = make_policy(p, setup.env, task.embedding);
        const auto traj =
            simenv::rollout(setup.env, task.spec, task.defects, policy, task.target, ep_seed);
        double d_sum = 0.0, r_sum = 0.0;
        if (alpha < 1.0)
            for (const auto& s : traj.steps) d_sum += disc.score(s.obs, s.action, setup.env.a_max);
        for (const auto& s : traj.steps) r_sum += s.reward;
        const double steps = static_cast<double>(traj.steps.size());
        st.fitness += (1.0 - alpha) * (d_sum / steps) + alpha * (r_sum / steps);
        st.mean_reward += traj.total_reward;
        st.mean_d += d_sum / steps;
    }
    st.fitness /= n_rollouts;
    st.mean_reward /= n_rollouts;
    st.mean_d /= n_rollouts;
    return st;
}

std::vector<std::pair<Observation, Action>> student_pairs(const EnvSetup& setup,
                                                          const PolicyParams& params,
                                                          int episodes, std::uint64_t seed) {
    std::vector<std::pair<Observation, Action>> out;
    for (int e = 0; e < episodes; ++e) {
        const Task& task = setup.tasks[static_cast<std::size_t>(
            setup.tasks.size() == 1
                ? 0
                : Rng(Rng::mix(seed, 0x57 + static_cast<std::uint64_t>(e)))
                      .uniform_int(0, static_cast<int>(setup.tasks.size()) - 1))];
        const auto policy = make_policy(params, setup.env, task.embedding);
        const auto traj = simenv::rollout(setup.env, task.spec, task.defects, policy, task.target,
                                          Rng::mix(seed, static_cast<std::uint64_t>(e)));
        for (const auto& s : traj.steps) out.emplace_back(s.obs, s.action);
    }
    return out;
}

std::vector<std::pair<Observation, Action>> sample_pairs(
    const std::vector<std::pair<Observation, Action>>& all, std::size_t n, Rng& rng) {
    if (all.size() <= n) return all;
    std::vector<std::pair<Observation, Action>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(
            all[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(all.size()) - 1))]);
    return out;
}

} // namespace

std::string curve_to_csv(const std::vector<CurvePoint>& curve) {
    std::ostringstream os;
    os << "iteration,mean_reward,reward_std,mean_D_student,mean_D_expert,best_fitness\n";
    char buf[200];
    for (const auto& p : curve) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", p.iteration,
                      p.mean_reward, p.reward_std, p.mean_d_student, p.mean_d_expert,
                      p.best_fitness);
        os << buf;
    }
    return os.str();
}

GailResult rs_gail(const EnvSetup& setup, const PolicyParams& init, const DemoSet& demos,
                   const GailConfig& cfg, WhichParams which, int jobs) {
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw std::invalid_argument("rs_gail: alpha in [0,1]");
    if (setup.tasks.empty()) throw std::invalid_argument("rs_gail: empty task set");
    if (which == WhichParams::Phi2)
        for (const auto& t : setup.tasks)
            if (!t.embedding)
                throw std::invalid_argument("rs_gail: phi2 training needs embeddings");
    const bool use_disc = cfg.alpha < 1.0;
    if (use_disc) demos.validate();

    std::vector<std::pair<Observation, Action>> expert_pairs;
    for (const auto& t : demos.trajectories)
        for (const auto& p : t.pairs) expert_pairs.push_back(p);

    const std::vector<double>& init_block = which == WhichParams::Phi1 ? init.phi1 : init.phi2;

    cmaes::CmaConfig cma_cfg;
    cma_cfg.dimension = static_cast<int>(init_block.size());
    cma_cfg.initial_mean = init_block;
    cma_cfg.initial_sigma = cfg.sigma_init;
    cma_cfg.lambda = cfg.lambda;
    cma_cfg.max_generations = cfg.max_iterations;
    cma_cfg.seed = Rng::mix(cfg.seed, 0xC3);
    cmaes::Cmaes es(cma_cfg);

    Discriminator disc = Discriminator::init(Rng::mix(cfg.seed, 0xD0));
    approx::Adam disc_adam(disc.params.size(), {.lr = cfg.discriminator_lr});

    GailResult out;
    out.policy = init;
    double last_confusion = 0.5, last_expert_score = 0.5;

    Rng batch_rng(Rng::mix(cfg.seed, 0xBA7C));
    std::vector<double> reward_window;

    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
        const double alpha =
            cfg.alpha_start && iter < cfg.anneal_iterations
                ? *cfg.alpha_start +
                      (cfg.alpha - *cfg.alpha_start) * iter / std::max(1, cfg.anneal_iterations)
                : cfg.alpha;

        if (use_disc && iter % cfg.discriminator_period == 0) {
            PolicyParams mean_policy = init;
            (which == WhichParams::Phi1 ? mean_policy.phi1 : mean_policy.phi2) = es.mean();
            const auto student =
                student_pairs(setup, mean_policy, cfg.discriminator_episodes,
                              Rng::mix(cfg.seed, 0xD100 + static_cast<std::uint64_t>(iter)));
            const std::size_t cap = 1024;
            const auto eb = sample_pairs(expert_pairs, cap, batch_rng);
            const auto sb = sample_pairs(student, cap, batch_rng);
            const auto res = discriminator_update(disc, eb, sb, cfg.discriminator_steps,
                                                  cfg.discriminator_lr, &disc_adam,
                                                  cfg.confusion_lo);
            last_confusion = res.mean_student_score;
            last_expert_score = res.mean_expert_score;
        }

        const auto& candidates = es.ask();
        const std::uint64_t gen_seed =
            Rng::mix(cfg.seed, 0xF17 + static_cast<std::uint64_t>(iter));
        std::vector<FitnessStats> stats(candidates.size());
        parallel_for(static_cast<int>(candidates.size()), jobs, [&](int k) {
            stats[static_cast<std::size_t>(k)] =
                evaluate_candidate(setup, init, which, candidates[static_cast<std::size_t>(k)],
                                   disc, alpha, cfg.rollouts_per_fitness, gen_seed);
        });
        std::vector<double> fitness(candidates.size());
        for (std::size_t k = 0; k < candidates.size(); ++k) {
            if (!std::isfinite(stats[k].fitness))
                throw std::runtime_error("rs_gail: non-finite fitness");
            fitness[k] = stats[k].fitness;
        }
        es.tell(fitness);

        double mr = 0.0, mr2 = 0.0, md = 0.0;
        for (const auto& s : stats) {
            mr += s.mean_reward;
            mr2 += s.mean_reward * s.mean_reward;
            md += s.mean_d;
        }
        mr /= static_cast<double>(stats.size());
        md /= static_cast<double>(stats.size());
        const double var = std::max(0.0, mr2 / static_cast<double>(stats.size()) - mr * mr);
        out.curve.push_back({iter, mr, std::sqrt(var), use_disc ? last_confusion : 0.0,
                             use_disc ? last_expert_score : 0.0, es.best_fitness()});
        out.iterations_run = iter + 1;

        // plateau + confusion stopping rule
        reward_window.push_back(mr);
        if (cfg.plateau_tolerance > 0.0 &&
            static_cast<int>(reward_window.size()) > cfg.plateau_window) {
            const double prev = *std::max_element(reward_window.end() - cfg.plateau_window - 1,
                                                  reward_window.end() - 1);
            const double now = reward_window.back();
            const bool plateaued = now - prev < cfg.plateau_tolerance;
            const bool confused = !use_disc || (last_confusion >= cfg.confusion_lo &&
                                                last_confusion <= cfg.confusion_hi);
            if (plateaued && confused) break;
        }
    }

    // Fitness is noisy, so the best-so-far sample is biased by rollout luck.
    // Re-evaluate the distribution mean and the best sample on a larger
    // common batch and keep the better parameters.
    const std::uint64_t sel_seed = Rng::mix(cfg.seed, 0x5E1EC7);
    const auto refit = [&](const std::vector<double>& block) {
        return evaluate_candidate(setup, init, which, block, disc, cfg.alpha,
                                  std::max(32, cfg.rollouts_per_fitness), sel_seed)
            .fitness;
    };
    const std::vector<double>& mean_block = es.mean();
    const double f_mean = refit(mean_block);
    const double f_best = es.has_best() ? refit(es.best_point()) : -1e300;
    (which == WhichParams::Phi1 ? out.policy.phi1 : out.policy.phi2) =
        f_best > f_mean ? es.best_point() : mean_block;
    return out;
}

CurriculumResult curriculum(const EnvSetup& phase1, const EnvSetup& phase2, const DemoSet& demos,
                            const BcConfig& bc_cfg, const GailConfig& phase1_cfg,
                            const GailConfig& phase2_cfg, int jobs) {
    if (phase2.tasks.empty()) throw std::invalid_argument("curriculum: empty phase-2 task set");
    CurriculumResult out;
    out.pi_bc = behavior_cloning(demos, phase1.env, bc_cfg).policy;

    auto phase1_res = rs_gail(phase1, out.pi_bc, demos, phase1_cfg, WhichParams::Phi1, jobs);
    out.pi_n = phase1_res.policy;
    out.phase1_curve = std::move(phase1_res.curve);

    // phase 2: phi1 frozen, phi2 restarted from zero output
    PolicyParams phase2_init = out.pi_n;
    Rng zrng(Rng::mix(phase2_cfg.seed, 0xF2));
    phase2_init.phi2 = approx::init_params(approx::adaptation_policy_spec(), zrng,
                                           /*zero_output_layer=*/true);
    auto phase2_res = rs_gail(phase2, phase2_init, demos, phase2_cfg, WhichParams::Phi2, jobs);
    out.pi_phi = phase2_res.policy;
    out.phase2_curve = std::move(phase2_res.curve);
    return out;
}

} // namespace tolins::learning
