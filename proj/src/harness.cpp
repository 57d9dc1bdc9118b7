#include "tolins/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "tolins/experts.hpp"
#include "tolins/parallel.hpp"

namespace tolins::harness {

namespace fs = std::filesystem;

namespace {

Metric metric_of(const std::vector<double>& xs) {
    Metric m;
    const double n = static_cast<double>(xs.size());
    for (double x : xs) m.mean += x;
    m.mean /= n;
    double var = 0.0;
    for (double x : xs) var += (x - m.mean) * (x - m.mean);
    var = xs.size() > 1 ? var / (n - 1.0) : 0.0;
    m.stderr_ = std::sqrt(var / n);
    return m;
}

} // namespace

EvalReport evaluate(const PolicyFn& policy, const EnvConfig& env, const Task& task,
                    int n_episodes, std::uint64_t seed, int jobs) {
    if (n_episodes < 2) throw std::invalid_argument("evaluate: need at least two episodes");
    std::vector<double> rew(static_cast<std::size_t>(n_episodes));
    std::vector<double> succ(rew.size()), steps(rew.size()), colls(rew.size());
    parallel_for(n_episodes, jobs, [&](int i) {
        const auto traj = simenv::rollout(env, task.spec, task.defects, policy, task.target,
                                          Rng::mix(seed, static_cast<std::uint64_t>(i)));
        rew[static_cast<std::size_t>(i)] = traj.total_reward;
        succ[static_cast<std::size_t>(i)] = traj.success ? 1.0 : 0.0;
        steps[static_cast<std::size_t>(i)] = traj.length();
        colls[static_cast<std::size_t>(i)] = traj.collisions;
    });
    EvalReport r;
    r.reward = metric_of(rew);
    r.success_rate = metric_of(succ);
    r.steps = metric_of(steps);
    r.collisions = metric_of(colls);
    r.n_episodes = n_episodes;
    return r;
}

std::string EvalReport::csv_header() {
    return "policy,train_env,eval_env,n_episodes,reward,reward_se,success_rate,success_se,"
           "steps,steps_se,collisions,collisions_se\n";
}

std::string EvalReport::to_csv() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%d,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n",
                  policy_tag.c_str(), train_env.c_str(), eval_env.c_str(), n_episodes,
                  reward.mean, reward.stderr_, success_rate.mean, success_rate.stderr_,
                  steps.mean, steps.stderr_, collisions.mean, collisions.stderr_);
    return buf;
}

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "env.k_max",       "env.c",           "env.z_insert",   "env.init_z",
        "env.init_xy",     "env.init_theta",  "demo.episodes",  "bc.epochs",
        "bc.lr",           "gail.alpha",      "gail.alpha_start", "gail.anneal_iterations",
        "gail.iterations", "gail.lambda",     "gail.rollouts",  "gail.sigma",
        "gail.disc_period", "gail.disc_steps", "eval.episodes", "embed.specs",
        "embed.epochs",    "infer.particles", "infer.noise_samples", "infer.attempts",
        "infer.gmin",      "study.samples",   "study.episodes"};
    return keys;
}

} // namespace

void ExperimentConfig::check_key(const std::string& key) {
    if (known_keys().count(key) == 0) throw ConfigError("unknown configuration key: " + key);
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    ExperimentConfig cfg;
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("malformed section at line " + std::to_string(line_no));
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key = value at line " + std::to_string(line_no));
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        const auto trim = [](std::string& s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
        };
        trim(key);
        trim(value);
        if (section.empty()) throw ConfigError("key outside any [experiment] section: " + key);
        check_key(key);
        try {
            cfg.values_[section][key] = std::stod(value);
        } catch (const std::exception&) {
            throw ConfigError("non-numeric value for " + key + " at line " + std::to_string(line_no));
        }
    }
    return cfg;
}

double ExperimentConfig::get(const std::string& experiment, const std::string& key,
                             double fallback) const {
    check_key(key);
    const auto sec = values_.find(experiment);
    if (sec == values_.end()) return fallback;
    const auto it = sec->second.find(key);
    return it == sec->second.end() ? fallback : it->second;
}

int ExperimentConfig::get_int(const std::string& experiment, const std::string& key,
                              int fallback) const {
    return static_cast<int>(std::llround(get(experiment, key, fallback)));
}

void ExperimentConfig::set(const std::string& experiment, const std::string& key, double value) {
    check_key(key);
    values_[experiment][key] = value;
}

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UpstreamError("missing artifact: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    char out[32];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

// ---- workpieces used by the experiment presets ----

geometry::WorkpieceSpec grid_spec(int cols) {
    return geometry::WorkpieceSpec::circle_grid(2, cols, 0.3, 0.5, 7.62, 2.54);
}
geometry::WorkpieceSpec square_spec() { return geometry::WorkpieceSpec::polygon(4, 1.5, 1.65); }
geometry::WorkpieceSpec pentagon_spec() { return geometry::WorkpieceSpec::polygon(5, 1.5, 1.65); }
geometry::WorkpieceSpec hexagon_spec() { return geometry::WorkpieceSpec::polygon(6, 1.2, 1.26); }
// two pins five millimeters apart; the defect-study workpiece
geometry::WorkpieceSpec study_spec() {
    return geometry::WorkpieceSpec::circle_grid(1, 2, 0.3, 0.5, 7.62, 5.0);
}

struct Ctx {
    std::string id;
    RunOptions opts;

    fs::path dir() const { return fs::path(opts.out_dir) / id; }
    fs::path path(const std::string& name) const { return dir() / name; }

    double cfgval(const std::string& key, double fallback) const {
        return opts.config.get(id, key, fallback);
    }
    int cfgint(const std::string& key, int fallback) const {
        return opts.config.get_int(id, key, fallback);
    }

    EnvConfig env() const {
        EnvConfig env;
        env.k_max = cfgint("env.k_max", env.k_max);
        env.c = cfgval("env.c", env.c);
        env.z_insert = cfgval("env.z_insert", env.z_insert);
        const double z0 = cfgval("env.init_z", env.init_range.z_lo);
        env.init_range.z_lo = env.init_range.z_hi = z0;
        const double xy = cfgval("env.init_xy", env.init_range.x_hi);
        env.init_range.x_lo = env.init_range.y_lo = -xy;
        env.init_range.x_hi = env.init_range.y_hi = xy;
        const double th = cfgval("env.init_theta", env.init_range.theta_hi);
        env.init_range.theta_lo = -th;
        env.init_range.theta_hi = th;
        return env;
    }

    std::vector<std::string> artifacts;
    void note(const std::string& name) { artifacts.push_back(name); }
    void write(const std::string& name, const std::string& content) {
        write_text_file(path(name).string(), content);
        note(name);
    }
    void finish() const {
        std::ostringstream manifest;
        for (const auto& a : artifacts) manifest << a << " " << file_hash(path(a).string()) << "\n";
        write_text_file(path("manifest.txt").string(), manifest.str());
    }

    // dependency artifact, verified against the producing experiment's manifest
    std::string require(const std::string& from_id, const std::string& name) const {
        const fs::path p = fs::path(opts.out_dir) / from_id / name;
        const fs::path manifest = fs::path(opts.out_dir) / from_id / "manifest.txt";
        if (!fs::exists(p) || !fs::exists(manifest))
            throw UpstreamError("run " + from_id + " first: missing " + p.string());
        std::ifstream in(manifest);
        std::string n, h;
        while (in >> n >> h)
            if (n == name) {
                if (file_hash(p.string()) != h)
                    throw UpstreamError("stale artifact (hash mismatch): " + p.string());
                return p.string();
            }
        throw UpstreamError("artifact not listed in manifest: " + p.string());
    }
};

learning::GailConfig phase1_gail(const Ctx& ctx, std::uint64_t seed) {
    learning::GailConfig g;
    g.alpha = ctx.cfgval("gail.alpha", 0.8);
    g.max_iterations = ctx.cfgint("gail.iterations", 300);
    g.lambda = ctx.cfgint("gail.lambda", 40);
    g.rollouts_per_fitness = ctx.cfgint("gail.rollouts", 8);
    g.sigma_init = ctx.cfgval("gail.sigma", 0.015);
    g.alpha_start = ctx.cfgval("gail.alpha_start", 0.1);
    g.anneal_iterations = ctx.cfgint("gail.anneal_iterations", 150);
    g.discriminator_period = ctx.cfgint("gail.disc_period", 5);
    g.discriminator_steps = ctx.cfgint("gail.disc_steps", 20);
    g.seed = seed;
    return g;
}

learning::GailConfig phase2_gail(const Ctx& ctx, std::uint64_t seed) {
    learning::GailConfig g;
    g.alpha = ctx.cfgval("gail.alpha", 0.8);
    g.max_iterations = ctx.cfgint("gail.iterations", 800);
    g.lambda = ctx.cfgint("gail.lambda", 48);
    g.rollouts_per_fitness = ctx.cfgint("gail.rollouts", 16);
    g.sigma_init = ctx.cfgval("gail.sigma", 0.01);
    g.discriminator_period = ctx.cfgint("gail.disc_period", 5);
    g.discriminator_steps = ctx.cfgint("gail.disc_steps", 20);
    g.seed = seed;
    return g;
}

void save_policy(const Ctx& ctx, const std::string& stem, const approx::PolicyParams& p) {
    approx::save_net(ctx.path(stem + ".phi1.net").string(), approx::nominal_policy_spec().sizes,
                     p.phi1);
    approx::save_net(ctx.path(stem + ".phi2.net").string(), approx::adaptation_policy_spec().sizes,
                     p.phi2);
    const_cast<Ctx&>(ctx).note(stem + ".phi1.net");
    const_cast<Ctx&>(ctx).note(stem + ".phi2.net");
}

approx::PolicyParams load_policy(const std::string& phi1_path, const std::string& phi2_path) {
    approx::PolicyParams p;
    p.phi1 = approx::load_net(phi1_path, approx::nominal_policy_spec().sizes);
    p.phi2 = approx::load_net(phi2_path, approx::adaptation_policy_spec().sizes);
    return p;
}

void dump_eval(Ctx& ctx, const std::string& name, EvalReport report, const std::string& tag,
               const std::string& train_env, const std::string& eval_env) {
    report.policy_tag = tag;
    report.train_env = train_env;
    report.eval_env = eval_env;
    ctx.write(name, EvalReport::csv_header() + report.to_csv());
}

// a couple of representative trajectories for the figure-style dumps
void dump_trajectories(Ctx& ctx, const PolicyFn& policy, const EnvConfig& env, const Task& task,
                       const std::string& stem) {
    for (int i = 0; i < 3; ++i) {
        const auto traj = simenv::rollout(env, task.spec, task.defects, policy, task.target,
                                          Rng::mix(ctx.opts.seed, 0x77AA + static_cast<std::uint64_t>(i)));
        ctx.write(stem + "_" + std::to_string(i) + ".csv", traj.to_csv());
        std::vector<std::pair<double, double>> path;
        for (const auto& st : traj.steps) path.emplace_back(st.state.x, st.state.y);
        ctx.write(stem + "_" + std::to_string(i) + ".svg",
                  svg_trajectory(path, task.spec, 2.5));
    }
}

void dump_curve(Ctx& ctx, const std::vector<learning::CurvePoint>& curve, const std::string& stem) {
    ctx.write(stem + ".csv", learning::curve_to_csv(curve));
    std::vector<double> xs, ys;
    for (const auto& p : curve) {
        xs.push_back(p.iteration);
        ys.push_back(p.mean_reward);
    }
    ctx.write(stem + ".svg", svg_line_chart(xs, ys, "iteration", "mean reward"));
}

// ---- preset stages ----

struct GroupSpec {
    std::string expert;                 // "safe" | "efficient"
    geometry::WorkpieceSpec train_spec;
    std::string env_tag;
};

GroupSpec group_of(const std::string& id) {
    if (id[0] == 'C' && id[1] == '1') return {"efficient", grid_spec(2), "2x2"};
    if (id[0] == 'C') return {"safe", grid_spec(2), "2x2"};
    return {"safe", square_spec(), "square"};
}

PolicyFn expert_policy(const std::string& which) {
    experts::ExpertConfig ec;
    if (which == "efficient")
        return [ec](const simenv::Observation& o) { return experts::efficient_expert(o, ec); };
    return [ec](const simenv::Observation& o) { return experts::safe_expert(o, ec); };
}

// expert stage: demo collection plus the expert's own evaluation row
void run_expert_stage(Ctx& ctx) {
    const GroupSpec grp = group_of(ctx.id);
    EnvSetup setup;
    setup.env = ctx.env();
    setup.tasks = {Task::nominal(grp.train_spec)};
    const auto expert = expert_policy(grp.expert);
    const int n_demo = ctx.cfgint("demo.episodes", 50);
    const auto demos = learning::collect_demos(setup, expert, grp.expert, n_demo,
                                               Rng::mix(ctx.opts.seed, 0xDE30));
    demos.save(ctx.path("demos.csv").string());
    ctx.note("demos.csv");
    const int n_eval = ctx.cfgint("eval.episodes", 200);
    dump_eval(ctx, "report.csv",
              evaluate(expert, setup.env, setup.tasks[0], n_eval,
                       Rng::mix(ctx.opts.seed, 0xE7A1), ctx.opts.jobs),
              "pi_e_" + grp.expert, grp.env_tag, grp.env_tag);
    dump_trajectories(ctx, expert, setup.env, setup.tasks[0], "trajectory");
    ctx.finish();
}

void run_bc_stage(Ctx& ctx, const std::string& expert_stage_id) {
    const GroupSpec grp = group_of(ctx.id);
    const auto demos = learning::DemoSet::load(ctx.require(expert_stage_id, "demos.csv"));
    EnvSetup setup;
    setup.env = ctx.env();
    setup.tasks = {Task::nominal(grp.train_spec)};
    learning::BcConfig bc;
    bc.epochs = ctx.cfgint("bc.epochs", 200);
    bc.lr = ctx.cfgval("bc.lr", 1e-3);
    bc.seed = Rng::mix(ctx.opts.seed, 0xBC);
    const auto res = learning::behavior_cloning(demos, setup.env, bc);
    save_policy(ctx, "pi_bc", res.policy);
    const auto policy = learning::make_policy(res.policy, setup.env, std::nullopt);
    const int n_eval = ctx.cfgint("eval.episodes", 200);
    dump_eval(ctx, "report.csv",
              evaluate(policy, setup.env, setup.tasks[0], n_eval,
                       Rng::mix(ctx.opts.seed, 0xE7A1), ctx.opts.jobs),
              "pi_bc", grp.env_tag, grp.env_tag);
    std::ostringstream os;
    os << "best_val_mse " << res.best_val_mse << "\n";
    ctx.write("bc_metrics.txt", os.str());
    dump_trajectories(ctx, policy, setup.env, setup.tasks[0], "trajectory");
    ctx.finish();
}

void run_gail_stage(Ctx& ctx, const std::string& expert_stage_id, const std::string& bc_stage_id) {
    const GroupSpec grp = group_of(ctx.id);
    const auto demos = learning::DemoSet::load(ctx.require(expert_stage_id, "demos.csv"));
    const auto init = load_policy(ctx.require(bc_stage_id, "pi_bc.phi1.net"),
                                  ctx.require(bc_stage_id, "pi_bc.phi2.net"));
    EnvSetup setup;
    setup.env = ctx.env();
    setup.tasks = {Task::nominal(grp.train_spec)};
    const auto gcfg = phase1_gail(ctx, Rng::mix(ctx.opts.seed, 0x6A11));
    const auto res = learning::rs_gail(setup, init, demos, gcfg, learning::WhichParams::Phi1,
                                       ctx.opts.jobs);
    save_policy(ctx, "pi_n", res.policy);
    dump_curve(ctx, res.curve, "curve");
    const auto policy = learning::make_policy(res.policy, setup.env, std::nullopt);
    const int n_eval = ctx.cfgint("eval.episodes", 200);
    dump_eval(ctx, "report.csv",
              evaluate(policy, setup.env, setup.tasks[0], n_eval,
                       Rng::mix(ctx.opts.seed, 0xE7A1), ctx.opts.jobs),
              "pi_n", grp.env_tag, grp.env_tag);
    dump_trajectories(ctx, policy, setup.env, setup.tasks[0], "trajectory");
    ctx.finish();
}

void run_embed_stage(Ctx& ctx, geometry::Family family) {
    const int n_specs = ctx.cfgint("embed.specs", 240);
    const int epochs = ctx.cfgint("embed.epochs", 300);
    const auto ds = embedding::generate_dataset(family, n_specs, Rng::mix(ctx.opts.seed, 0xDA7A),
                                                ctx.opts.jobs);
    embedding::AeTrainConfig cfg;
    cfg.epochs = epochs;
    cfg.seed = Rng::mix(ctx.opts.seed, 0xAE);
    const auto res = embedding::train_autoencoder(ds, cfg);
    res.ae.save(ctx.path("ae.net").string());
    ctx.note("ae.net");
    std::ostringstream os;
    os << "heldout_mae " << res.heldout_mae << "\nheldout_rmse " << res.heldout_rmse << "\n";
    ctx.write("metrics.txt", os.str());
    // reconstruction dump of the last dataset entry, for eyeballing
    const auto& map = ds.maps.back();
    const auto recon = res.ae.reconstruct(map);
    std::ostringstream dump;
    for (int i = 0; i < 28; ++i) {
        for (int j = 0; j < 28; ++j)
            dump << map.at(i, j) << (j == 27 ? "" : ",");
        dump << "\n";
    }
    dump << "\n";
    for (int i = 0; i < 28; ++i) {
        for (int j = 0; j < 28; ++j)
            dump << recon[static_cast<std::size_t>(i) * 28 + j] * res.ae.value_scale
                 << (j == 27 ? "" : ",");
        dump << "\n";
    }
    ctx.write("reconstruction.csv", dump.str());
    // embedding export: spec parameters followed by the 5 latent values
    std::ostringstream emb;
    emb << "family,rows,cols,pin,hole,psi0,psi1,psi2,psi3,psi4\n";
    for (std::size_t i = 0; i < std::min<std::size_t>(ds.size(), 50); ++i) {
        const auto& s = ds.specs[i];
        const auto e = res.ae.encode_map(ds.maps[i]);
        emb << (family == geometry::Family::CircleGrid ? "circle" : "polygon") << "," << s.rows
            << "," << s.cols << ","
            << (family == geometry::Family::CircleGrid ? s.pin_radius : s.pin_circumradius) << ","
            << (family == geometry::Family::CircleGrid ? s.hole_radius : s.hole_circumradius);
        for (double v : e.psi) emb << "," << v;
        emb << "\n";
    }
    ctx.write("embeddings.csv", emb.str());
    ctx.finish();
}

void run_eval_stage(Ctx& ctx, const std::string& policy_stage, const std::string& policy_stem,
                    const geometry::WorkpieceSpec& eval_spec, const std::string& eval_tag,
                    const std::string& train_tag, bool with_embedding,
                    const std::string& embed_stage) {
    const auto policy_params = load_policy(ctx.require(policy_stage, policy_stem + ".phi1.net"),
                                           ctx.require(policy_stage, policy_stem + ".phi2.net"));
    const EnvConfig env = ctx.env();
    std::optional<std::array<double, 5>> psi;
    if (with_embedding) {
        const auto ae = embedding::ToleranceAutoencoder::load(ctx.require(embed_stage, "ae.net"));
        psi = embedding::encode(ae, eval_spec).psi;
    }
    const auto policy = learning::make_policy(policy_params, env, psi);
    const Task task = Task::nominal(eval_spec);
    const int n_eval = ctx.cfgint("eval.episodes", 200);
    dump_eval(ctx, "report.csv",
              evaluate(policy, env, task, n_eval, Rng::mix(ctx.opts.seed, 0xE7A1), ctx.opts.jobs),
              with_embedding ? "pi_phi" : "pi_n", train_tag, eval_tag);
    dump_trajectories(ctx, policy, env, task, "trajectory");
    ctx.finish();
}

void run_phase2_stage(Ctx& ctx, const std::string& gail_stage,
                      const std::vector<geometry::WorkpieceSpec>& train_specs,
                      const std::string& train_tag, const geometry::WorkpieceSpec& eval_spec,
                      const std::string& eval_tag, const std::string& expert_stage,
                      const std::string& embed_stage) {
    const auto pi_n = load_policy(ctx.require(gail_stage, "pi_n.phi1.net"),
                                  ctx.require(gail_stage, "pi_n.phi2.net"));
    const auto demos = learning::DemoSet::load(ctx.require(expert_stage, "demos.csv"));
    const auto ae = embedding::ToleranceAutoencoder::load(ctx.require(embed_stage, "ae.net"));

    EnvSetup setup;
    setup.env = ctx.env();
    for (const auto& spec : train_specs) {
        Task t = Task::nominal(spec);
        t.embedding = embedding::encode(ae, spec).psi;
        setup.tasks.push_back(std::move(t));
    }
    // phi2 restarts from zero output
    approx::PolicyParams init = pi_n;
    Rng zrng(Rng::mix(ctx.opts.seed, 0xF2));
    init.phi2 = approx::init_params(approx::adaptation_policy_spec(), zrng, true);

    const auto gcfg = phase2_gail(ctx, Rng::mix(ctx.opts.seed, 0x6A22));
    const auto res = learning::rs_gail(setup, init, demos, gcfg, learning::WhichParams::Phi2,
                                       ctx.opts.jobs);
    save_policy(ctx, "pi_phi", res.policy);
    dump_curve(ctx, res.curve, "curve");

    const auto psi_eval = embedding::encode(ae, eval_spec).psi;
    const auto policy = learning::make_policy(res.policy, setup.env, psi_eval);
    const Task task = Task::nominal(eval_spec);
    const int n_eval = ctx.cfgint("eval.episodes", 200);
    dump_eval(ctx, "report.csv",
              evaluate(policy, setup.env, task, n_eval, Rng::mix(ctx.opts.seed, 0xE7A1),
                       ctx.opts.jobs),
              "pi_phi", train_tag, eval_tag);
    dump_trajectories(ctx, policy, setup.env, task, "trajectory");
    ctx.finish();
}

// defected-workpiece evaluation: pooled insertion episodes with either a
// fixed nominal goal or inference-updated goals
void run_defect_stage(Ctx& ctx, bool with_inference) {
    const auto spec = study_spec();
    const auto policy_params = load_policy(ctx.require("C3.2", "pi_phi.phi1.net"),
                                           ctx.require("C3.2", "pi_phi.phi2.net"));
    const auto ae = embedding::ToleranceAutoencoder::load(ctx.require("embed-circle", "ae.net"));
    const auto psi = embedding::encode(ae, spec).psi;
    const EnvConfig env = ctx.env();

    const double sigma = inference::calibrate_sigma_d(spec, 500, 0.60, 0.02,
                                                      Rng::mix(ctx.opts.seed, 0x51D));
    const auto prior = inference::DefectPrior::isotropic(spec.pin_count(), sigma);

    inference::InferenceConfig icfg;
    icfg.n_particles = ctx.cfgint("infer.particles", 600);
    icfg.n_noise_samples = ctx.cfgint("infer.noise_samples", 20);
    icfg.noise_std = {env.noise_std[0], env.noise_std[1], env.noise_std[2]};
    icfg.max_attempts = ctx.cfgint("infer.attempts", 10);
    icfg.discard_threshold = ctx.cfgval("infer.gmin", 0.01);
    icfg.cma_generations = 70;
    icfg.cma_lambda = 10;
    icfg.cma_restarts = 3;

    const int min_episodes = ctx.cfgint("study.episodes", 200);
    Rng pop_rng(Rng::mix(ctx.opts.seed, 0xDEF));

    std::vector<double> ep_reward, ep_success, ep_steps, ep_collisions;
    std::ostringstream rows;
    rows << "workpiece,attempt,success,reward,steps,collisions,goal_x,goal_y,goal_theta\n";
    int workpiece = 0;
    while (static_cast<int>(ep_reward.size()) < min_episodes) {
        geometry::DefectParams defects;
        defects.offsets.resize(static_cast<std::size_t>(spec.pin_count()));
        for (auto& off : defects.offsets) {
            off.x = sigma * pop_rng.normal();
            off.y = sigma * pop_rng.normal();
        }
        const std::uint64_t wseed = Rng::mix(ctx.opts.seed, 0xEE00 + static_cast<std::uint64_t>(workpiece));

        const auto attempt = [&](const geometry::PlanarPose& goal, int k) {
            const auto policy = learning::make_policy(policy_params, env, psi);
            const auto traj = simenv::rollout(env, spec, defects, policy, goal,
                                              Rng::mix(wseed, static_cast<std::uint64_t>(k)));
            inference::AttemptOutcome o;
            o.success = traj.success;
            o.episode_reward = traj.total_reward;
            o.episode_steps = traj.length();
            o.episode_collisions = traj.collisions;
            // final observed pose, shifted back to absolute coordinates
            const auto& last = traj.steps.back().obs;
            o.recorded_pose = {last.v[0] + goal.x, last.v[1] + goal.y, last.v[2] + goal.theta};
            return o;
        };

        inference::AttemptLoopResult loop;
        if (with_inference) {
            loop = inference::attempt_loop(attempt, spec, prior, icfg, Rng::mix(wseed, 0xA7));
        } else {
            for (int k = 1; k <= icfg.max_attempts; ++k) {
                const auto o = attempt(geometry::PlanarPose{}, k);
                loop.outcomes.push_back(o);
                loop.attempts = k;
                if (o.success) {
                    loop.success = true;
                    break;
                }
            }
        }
        for (std::size_t k = 0; k < loop.outcomes.size(); ++k) {
            const auto& o = loop.outcomes[k];
            ep_reward.push_back(o.episode_reward);
            ep_success.push_back(o.success ? 1.0 : 0.0);
            ep_steps.push_back(o.episode_steps);
            ep_collisions.push_back(o.episode_collisions);
            char buf[256];
            std::snprintf(buf, sizeof(buf), "%d,%zu,%d,%.4f,%d,%d,%.4f,%.4f,%.4f\n", workpiece,
                          k + 1, o.success ? 1 : 0, o.episode_reward, o.episode_steps,
                          o.episode_collisions, loop.final_goal.x, loop.final_goal.y,
                          loop.final_goal.theta);
            rows << buf;
        }
        ++workpiece;
    }

    EvalReport report;
    report.reward = metric_of(ep_reward);
    report.success_rate = metric_of(ep_success);
    report.steps = metric_of(ep_steps);
    report.collisions = metric_of(ep_collisions);
    report.n_episodes = static_cast<int>(ep_reward.size());
    dump_eval(ctx, "report.csv", report, with_inference ? "pi_phi_star" : "pi_phi", "2x2+2x8",
              "2x1-defected");
    ctx.write("episodes.csv", rows.str());
    std::ostringstream meta;
    meta << "sigma_d " << sigma << "\nworkpieces " << workpiece << "\n";
    ctx.write("meta.txt", meta.str());
    ctx.finish();
}

// the numerical defect study with idealized control: inference against the
// random-goal baseline
void run_study_stage(Ctx& ctx) {
    const auto spec = study_spec();
    const int n_samples = ctx.cfgint("study.samples", 500);
    const double sigma = inference::calibrate_sigma_d(spec, n_samples, 0.60, 0.02,
                                                      Rng::mix(ctx.opts.seed, 0x51D));
    const auto prior = inference::DefectPrior::isotropic(spec.pin_count(), sigma);

    inference::InferenceConfig icfg;
    icfg.n_particles = ctx.cfgint("infer.particles", 600);
    icfg.n_noise_samples = 1;
    icfg.noise_std = {0.0, 0.0, 0.0};  // perfect measurement in this study
    icfg.max_attempts = ctx.cfgint("infer.attempts", 10);
    icfg.discard_threshold = ctx.cfgval("infer.gmin", 0.01);
    icfg.cma_generations = 70;
    icfg.cma_lambda = 10;
    icfg.cma_restarts = 3;

    // population
    Rng pop_rng(Rng::mix(ctx.opts.seed, 0xCA11));
    std::vector<geometry::DefectParams> population;
    for (int s = 0; s < n_samples; ++s) {
        geometry::DefectParams d;
        d.offsets.resize(static_cast<std::size_t>(spec.pin_count()));
        for (auto& off : d.offsets) {
            off.x = sigma * pop_rng.normal();
            off.y = sigma * pop_rng.normal();
        }
        population.push_back(std::move(d));
    }

    // pre-defined goal set for the random baseline: 5x5x3 grid over a tight
    // window around the nominal pose
    std::vector<geometry::PlanarPose> goal_set;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            for (int k = 0; k < 3; ++k)
                goal_set.push_back({-0.2 + i * 0.1, -0.2 + j * 0.1, -0.05 + k * 0.05});

    std::ostringstream rows;
    rows << "sample,dx1,dy1,dx2,dy2,infer_success,infer_attempts,infer_discarded,"
            "infer_goal_x,infer_goal_y,infer_goal_theta,infer_g,base_success,base_attempts\n";
    std::vector<int> results(static_cast<std::size_t>(n_samples) * 4);
    std::vector<inference::AttemptLoopResult> loops(static_cast<std::size_t>(n_samples));
    parallel_for(n_samples, ctx.opts.jobs, [&](int s) {
        const auto& defects = population[static_cast<std::size_t>(s)];
        const auto loop = inference::attempt_loop(inference::idealized_attempt(spec, defects),
                                                  spec, prior, icfg,
                                                  Rng::mix(ctx.opts.seed, 0x1F00 + static_cast<std::uint64_t>(s)));
        loops[static_cast<std::size_t>(s)] = loop;
        // baseline: goals drawn uniformly without replacement
        Rng grng(Rng::mix(ctx.opts.seed, 0xBA5E + static_cast<std::uint64_t>(s)));
        std::vector<int> order(goal_set.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(grng.uniform_int(0, static_cast<int>(i) - 1))]);
        int base_succ = 0, base_att = icfg.max_attempts;
        for (int k = 0; k < icfg.max_attempts; ++k)
            if (geometry::contains(spec, defects, goal_set[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])])) {
                base_succ = 1;
                base_att = k + 1;
                break;
            }
        results[static_cast<std::size_t>(s) * 4 + 0] = loop.success ? 1 : 0;
        results[static_cast<std::size_t>(s) * 4 + 1] = loop.attempts;
        results[static_cast<std::size_t>(s) * 4 + 2] = base_succ;
        results[static_cast<std::size_t>(s) * 4 + 3] = base_att;
    });

    int inf_succ = 0, base_succ = 0;
    double inf_att = 0.0, base_att = 0.0;
    int inf_att_n = 0, base_att_n = 0;
    for (int s = 0; s < n_samples; ++s) {
        const auto& loop = loops[static_cast<std::size_t>(s)];
        const auto& d = population[static_cast<std::size_t>(s)];
        char buf[400];
        std::snprintf(buf, sizeof(buf),
                      "%d,%.5f,%.5f,%.5f,%.5f,%d,%d,%d,%.4f,%.4f,%.4f,%.4f,%d,%d\n", s,
                      d.offsets[0].x, d.offsets[0].y, d.offsets[1].x, d.offsets[1].y,
                      results[static_cast<std::size_t>(s) * 4 + 0],
                      results[static_cast<std::size_t>(s) * 4 + 1], loop.discarded ? 1 : 0,
                      loop.final_goal.x, loop.final_goal.y, loop.final_goal.theta, loop.final_g,
                      results[static_cast<std::size_t>(s) * 4 + 2],
                      results[static_cast<std::size_t>(s) * 4 + 3]);
        rows << buf;
        if (results[static_cast<std::size_t>(s) * 4 + 0]) {
            ++inf_succ;
            inf_att += results[static_cast<std::size_t>(s) * 4 + 1];
            ++inf_att_n;
        }
        if (results[static_cast<std::size_t>(s) * 4 + 2]) {
            ++base_succ;
            base_att += results[static_cast<std::size_t>(s) * 4 + 3];
            ++base_att_n;
        }
    }
    ctx.write("study.csv", rows.str());
    std::ostringstream sum;
    sum << "sigma_d " << sigma << "\n";
    sum << "inference_success_rate " << static_cast<double>(inf_succ) / n_samples << "\n";
    sum << "inference_mean_attempts " << (inf_att_n ? inf_att / inf_att_n : 0.0) << "\n";
    sum << "baseline_success_rate " << static_cast<double>(base_succ) / n_samples << "\n";
    sum << "baseline_mean_attempts " << (base_att_n ? base_att / base_att_n : 0.0) << "\n";
    ctx.write("summary.txt", sum.str());
    ctx.finish();
}

} // namespace

std::vector<std::string> experiment_ids() {
    return {"C1.1", "C1.2", "C1.3", "C2.1", "C2.2", "C2.3", "C3.1", "C3.2",
            "C4.1", "C4.2", "P1.1", "P1.2", "P1.3", "P2.1", "P2.2",
            "embed-circle", "embed-polygon", "study-2x1"};
}

bool is_experiment(const std::string& id) {
    const auto ids = experiment_ids();
    return std::find(ids.begin(), ids.end(), id) != ids.end();
}

void run_experiment(const std::string& id, const RunOptions& opts) {
    if (!is_experiment(id)) throw ConfigError("unknown experiment id: " + id);
    Ctx ctx{id, opts, {}};
    fs::create_directories(ctx.dir());

    if (id == "C1.1" || id == "C2.1" || id == "P1.1") return run_expert_stage(ctx);
    if (id == "C1.2") return run_bc_stage(ctx, "C1.1");
    if (id == "C2.2") return run_bc_stage(ctx, "C2.1");
    if (id == "P1.2") return run_bc_stage(ctx, "P1.1");
    if (id == "C1.3") return run_gail_stage(ctx, "C1.1", "C1.2");
    if (id == "C2.3") return run_gail_stage(ctx, "C2.1", "C2.2");
    if (id == "P1.3") return run_gail_stage(ctx, "P1.1", "P1.2");
    if (id == "embed-circle") return run_embed_stage(ctx, geometry::Family::CircleGrid);
    if (id == "embed-polygon") return run_embed_stage(ctx, geometry::Family::RegularPolygon);
    if (id == "C3.1")
        return run_eval_stage(ctx, "C2.3", "pi_n", grid_spec(4), "2x4", "2x2", false, "");
    if (id == "C3.2")
        return run_phase2_stage(ctx, "C2.3", {grid_spec(2), grid_spec(8)}, "2x2+2x8",
                                grid_spec(4), "2x4", "C2.1", "embed-circle");
    if (id == "P2.1")
        return run_eval_stage(ctx, "P1.3", "pi_n", pentagon_spec(), "pentagon", "square", false,
                              "");
    if (id == "P2.2")
        return run_phase2_stage(ctx, "P1.3", {square_spec(), hexagon_spec()}, "square+hexagon",
                                pentagon_spec(), "pentagon", "P1.1", "embed-polygon");
    if (id == "C4.1") return run_defect_stage(ctx, false);
    if (id == "C4.2") return run_defect_stage(ctx, true);
    if (id == "study-2x1") return run_study_stage(ctx);
    throw ConfigError("unhandled experiment id: " + id);
}

// ---- svg ----

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

} // namespace

std::string svg_line_chart(const std::vector<double>& xs, const std::vector<double>& ys,
                           const std::string& x_label, const std::string& y_label) {
    const int w = 640, h = 400, m = 50;
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    if (!xs.empty() && xs.size() == ys.size()) {
        double x0 = xs[0], x1 = xs[0], y0 = ys[0], y1 = ys[0];
        for (std::size_t i = 0; i < xs.size(); ++i) {
            x0 = std::min(x0, xs[i]);
            x1 = std::max(x1, xs[i]);
            y0 = std::min(y0, ys[i]);
            y1 = std::max(y1, ys[i]);
        }
        if (x1 == x0) x1 = x0 + 1;
        if (y1 == y0) y1 = y0 + 1;
        const auto X = [&](double x) { return m + (x - x0) / (x1 - x0) * (w - 2 * m); };
        const auto Y = [&](double y) { return h - m - (y - y0) / (y1 - y0) * (h - 2 * m); };
        os << "<polyline fill='none' stroke='steelblue' stroke-width='1.5' points='";
        for (std::size_t i = 0; i < xs.size(); ++i) os << X(xs[i]) << "," << Y(ys[i]) << " ";
        os << "'/>\n";
        os << "<line x1='" << m << "' y1='" << h - m << "' x2='" << w - m << "' y2='" << h - m
           << "' stroke='black'/>\n";
        os << "<line x1='" << m << "' y1='" << m << "' x2='" << m << "' y2='" << h - m
           << "' stroke='black'/>\n";
        os << "<text x='" << w / 2 << "' y='" << h - 12 << "' font-size='12'>" << x_label
           << "</text>\n";
        os << "<text x='12' y='" << h / 2 << "' font-size='12' transform='rotate(-90 12 "
           << h / 2 << ")'>" << y_label << "</text>\n";
        os << "<text x='" << m << "' y='" << h - m + 16 << "' font-size='10'>" << fmt(x0)
           << "</text>\n";
        os << "<text x='" << w - m << "' y='" << h - m + 16 << "' font-size='10'>" << fmt(x1)
           << "</text>\n";
        os << "<text x='" << m - 4 << "' y='" << h - m << "' font-size='10' text-anchor='end'>"
           << fmt(y0) << "</text>\n";
        os << "<text x='" << m - 4 << "' y='" << m << "' font-size='10' text-anchor='end'>"
           << fmt(y1) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_trajectory(const std::vector<std::pair<double, double>>& path,
                           const geometry::WorkpieceSpec& spec, double view_half_width) {
    const int w = 400, h = 400;
    const auto X = [&](double x) { return (x + view_half_width) / (2 * view_half_width) * w; };
    const auto Y = [&](double y) { return h - (y + view_half_width) / (2 * view_half_width) * h; };
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    // tolerance footprint at zero rotation (circle family only)
    if (spec.family == geometry::Family::CircleGrid) {
        const double r = spec.clearance() / (2 * view_half_width) * w;
        os << "<circle cx='" << X(0) << "' cy='" << Y(0) << "' r='" << r
           << "' fill='none' stroke='seagreen'/>\n";
    }
    os << "<polyline fill='none' stroke='indianred' stroke-width='1.5' points='";
    for (const auto& [x, y] : path) os << X(x) << "," << Y(y) << " ";
    os << "'/>\n";
    if (!path.empty()) {
        os << "<circle cx='" << X(path.front().first) << "' cy='" << Y(path.front().second)
           << "' r='4' fill='black'/>\n";
        os << "<circle cx='" << X(path.back().first) << "' cy='" << Y(path.back().second)
           << "' r='4' fill='steelblue'/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace tolins::harness
