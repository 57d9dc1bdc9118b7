#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tolins/embedding.hpp"
#include "tolins/experts.hpp"
#include "tolins/harness.hpp"
#include "tolins/inference.hpp"
#include "tolins/learning.hpp"
#include "tolins/parallel.hpp"

using namespace tolins;

namespace {

struct Global {
    std::string config_path;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    int jobs = 0;  // 0 -> hardware concurrency

    harness::RunOptions options() const {
        harness::RunOptions o;
        o.out_dir = out_dir;
        o.seed = seed;
        o.jobs = jobs > 0 ? jobs : default_jobs();
        if (!config_path.empty()) o.config = harness::ExperimentConfig::load(config_path);
        return o;
    }
};

geometry::WorkpieceSpec parse_task(const std::string& name) {
    if (name == "square") return geometry::WorkpieceSpec::polygon(4, 1.5, 1.65);
    if (name == "pentagon") return geometry::WorkpieceSpec::polygon(5, 1.5, 1.65);
    if (name == "hexagon") return geometry::WorkpieceSpec::polygon(6, 1.2, 1.26);
    if (name == "triangle") return geometry::WorkpieceSpec::polygon(3, 1.5, 1.65);
    if (name == "study-2x1") return geometry::WorkpieceSpec::circle_grid(1, 2, 0.3, 0.5, 7.62, 5.0);
    // NxM circle grid, e.g. 2x4
    const auto x = name.find('x');
    if (x == std::string::npos)
        throw harness::ConfigError("unknown task: " + name);
    const int rows = std::stoi(name.substr(0, x));
    const int cols = std::stoi(name.substr(x + 1));
    return geometry::WorkpieceSpec::circle_grid(rows, cols, 0.3, 0.5, 7.62, 2.54);
}

simenv::PolicyFn expert_by_name(const std::string& name) {
    experts::ExpertConfig ec;
    if (name == "safe")
        return [ec](const simenv::Observation& o) { return experts::safe_expert(o, ec); };
    if (name == "efficient")
        return [ec](const simenv::Observation& o) { return experts::efficient_expert(o, ec); };
    throw harness::ConfigError("unknown expert: " + name);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tolerance-guided insertion policy toolkit"};
    app.require_subcommand(1);

    Global g;
    app.add_option("--config", g.config_path, "experiment configuration file");
    app.add_option("--seed", g.seed, "master random seed");
    app.add_option("--out", g.out_dir, "output directory");
    app.add_option("--jobs", g.jobs, "worker threads (default: hardware)");

    // tolerance render
    auto* tol = app.add_subcommand("tolerance", "tolerance map utilities");
    auto* tol_render = tol->add_subcommand("render", "rasterize the rotation tolerance surface");
    std::string tr_task = "2x2", tr_out = "map.tolmap";
    double tr_window = 0.0;
    std::vector<double> tr_defects;
    tol_render->add_option("--task", tr_task, "workpiece (e.g. 2x4, square, study-2x1)");
    tol_render->add_option("--window", tr_window, "window half width in mm (0 = family default)");
    tol_render->add_option("--defect", tr_defects, "per-pin offsets dx dy, repeated per pin");
    tol_render->add_option("--file", tr_out, "output path");

    // embed train / encode
    auto* embed = app.add_subcommand("embed", "tolerance autoencoder");
    auto* embed_train = embed->add_subcommand("train", "train an encoder for one family");
    std::string et_family = "circle", et_out = "ae.net";
    int et_specs = 240, et_epochs = 300;
    embed_train->add_option("--family", et_family, "circle or polygon");
    embed_train->add_option("--specs", et_specs, "number of sampled workpieces");
    embed_train->add_option("--epochs", et_epochs, "training epochs");
    embed_train->add_option("--file", et_out, "output checkpoint");
    auto* embed_encode = embed->add_subcommand("encode", "encode a workpiece");
    std::string ee_ae = "ae.net", ee_task = "2x2";
    embed_encode->add_option("--ae", ee_ae, "encoder checkpoint");
    embed_encode->add_option("--task", ee_task, "workpiece to encode");

    // demo collect
    auto* demo = app.add_subcommand("demo", "expert demonstrations");
    auto* demo_collect = demo->add_subcommand("collect", "roll out a scripted expert");
    std::string dc_expert = "safe", dc_task = "2x2", dc_out = "demos.csv";
    int dc_episodes = 50;
    demo_collect->add_option("--expert", dc_expert, "safe or efficient");
    demo_collect->add_option("--task", dc_task, "workpiece");
    demo_collect->add_option("--episodes", dc_episodes, "episode count");
    demo_collect->add_option("--file", dc_out, "output path");

    // train bc / gail / curriculum
    auto* train = app.add_subcommand("train", "policy training");
    auto* train_bc = train->add_subcommand("bc", "behavior cloning");
    std::string tb_demos = "demos.csv", tb_out = "pi_bc";
    int tb_epochs = 200;
    train_bc->add_option("--demos", tb_demos, "demo file");
    train_bc->add_option("--epochs", tb_epochs, "epochs");
    train_bc->add_option("--prefix", tb_out, "checkpoint prefix");
    auto* train_gail = train->add_subcommand("gail", "adversarial imitation with reward shaping");
    std::string tg_demos = "demos.csv", tg_init = "pi_bc", tg_out = "pi_n", tg_task = "2x2";
    int tg_iters = 300;
    train_gail->add_option("--demos", tg_demos, "demo file");
    train_gail->add_option("--init", tg_init, "initial policy prefix");
    train_gail->add_option("--task", tg_task, "training workpiece");
    train_gail->add_option("--iterations", tg_iters, "optimizer iterations");
    train_gail->add_option("--prefix", tg_out, "checkpoint prefix");
    auto* train_cur = train->add_subcommand("curriculum", "both phases via experiment presets");

    // infer study / goal
    auto* infer = app.add_subcommand("infer", "defect inference");
    auto* infer_study = infer->add_subcommand("study", "idealized-control defect study");
    auto* infer_goal = infer->add_subcommand("goal", "goal re-optimization from a history");
    std::string ig_records;
    double ig_sigma = 0.11;
    infer_goal->add_option("--records", ig_records,
                           "history file: lines of x y theta outcome");
    infer_goal->add_option("--sigma", ig_sigma, "prior offset deviation (mm)");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a policy checkpoint");
    std::string ev_prefix = "pi_n", ev_task = "2x2", ev_ae;
    int ev_episodes = 200;
    eval->add_option("--prefix", ev_prefix, "policy checkpoint prefix");
    eval->add_option("--task", ev_task, "evaluation workpiece");
    eval->add_option("--episodes", ev_episodes, "episode count");
    eval->add_option("--ae", ev_ae, "encoder checkpoint (enables the adaptation input)");

    // run <experiment>
    auto* run = app.add_subcommand("run", "run an experiment preset");
    std::string run_id;
    run->add_option("id", run_id, "experiment id (e.g. C2.3, study-2x1)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (tol_render->parsed()) {
            const auto spec = parse_task(tr_task);
            geometry::DefectParams defects = geometry::DefectParams::none(spec);
            if (!tr_defects.empty()) {
                if (tr_defects.size() != static_cast<std::size_t>(2 * spec.pin_count()))
                    throw harness::ConfigError("expected 2 offsets per pin");
                for (int i = 0; i < spec.pin_count(); ++i)
                    defects.offsets[static_cast<std::size_t>(i)] = {tr_defects[static_cast<std::size_t>(2 * i)],
                                                                    tr_defects[static_cast<std::size_t>(2 * i + 1)]};
            }
            const double w = tr_window > 0.0 ? tr_window : geometry::default_window_half_width(spec);
            const auto map = geometry::render_tolerance(spec, defects, w);
            map.save(tr_out);
            std::printf("wrote %s (max %.4f rad)\n", tr_out.c_str(), map.max_value());
        } else if (embed_train->parsed()) {
            const auto family = et_family == "circle" ? geometry::Family::CircleGrid
                                                      : geometry::Family::RegularPolygon;
            const auto ds = embedding::generate_dataset(family, et_specs, g.seed,
                                                        g.options().jobs);
            embedding::AeTrainConfig cfg;
            cfg.epochs = et_epochs;
            cfg.seed = g.seed;
            const auto res = embedding::train_autoencoder(ds, cfg);
            res.ae.save(et_out);
            std::printf("wrote %s (held-out mae %.5f)\n", et_out.c_str(), res.heldout_mae);
        } else if (embed_encode->parsed()) {
            const auto ae = embedding::ToleranceAutoencoder::load(ee_ae);
            const auto e = embedding::encode(ae, parse_task(ee_task));
            std::printf("psi:");
            for (double v : e.psi) std::printf(" %.6f", v);
            std::printf("\n");
        } else if (demo_collect->parsed()) {
            learning::EnvSetup setup;
            setup.tasks = {learning::Task::nominal(parse_task(dc_task))};
            const auto demos = learning::collect_demos(setup, expert_by_name(dc_expert),
                                                       dc_expert, dc_episodes, g.seed);
            demos.save(dc_out);
            std::printf("wrote %s (%zu episodes)\n", dc_out.c_str(), demos.trajectories.size());
        } else if (train_bc->parsed()) {
            const auto demos = learning::DemoSet::load(tb_demos);
            simenv::EnvConfig env;
            learning::BcConfig cfg;
            cfg.epochs = tb_epochs;
            cfg.seed = g.seed;
            const auto res = learning::behavior_cloning(demos, env, cfg);
            approx::save_net(tb_out + ".phi1.net", approx::nominal_policy_spec().sizes,
                             res.policy.phi1);
            approx::save_net(tb_out + ".phi2.net", approx::adaptation_policy_spec().sizes,
                             res.policy.phi2);
            std::printf("wrote %s.phi{1,2}.net (val mse %.5f)\n", tb_out.c_str(), res.best_val_mse);
        } else if (train_gail->parsed()) {
            const auto demos = learning::DemoSet::load(tg_demos);
            approx::PolicyParams init;
            init.phi1 = approx::load_net(tg_init + ".phi1.net", approx::nominal_policy_spec().sizes);
            init.phi2 = approx::load_net(tg_init + ".phi2.net", approx::adaptation_policy_spec().sizes);
            learning::EnvSetup setup;
            setup.tasks = {learning::Task::nominal(parse_task(tg_task))};
            learning::GailConfig cfg;
            cfg.max_iterations = tg_iters;
            cfg.lambda = 40;
            cfg.rollouts_per_fitness = 8;
            cfg.sigma_init = 0.015;
            cfg.alpha_start = 0.1;
            cfg.anneal_iterations = tg_iters / 2;
            cfg.seed = g.seed;
            const auto res = learning::rs_gail(setup, init, demos, cfg,
                                               learning::WhichParams::Phi1, g.options().jobs);
            approx::save_net(tg_out + ".phi1.net", approx::nominal_policy_spec().sizes,
                             res.policy.phi1);
            approx::save_net(tg_out + ".phi2.net", approx::adaptation_policy_spec().sizes,
                             res.policy.phi2);
            std::printf("wrote %s.phi{1,2}.net after %d iterations\n", tg_out.c_str(),
                        res.iterations_run);
        } else if (train_cur->parsed()) {
            // the curriculum is the C2.x + C3.2 preset pipeline
            const auto opts = g.options();
            for (const char* id : {"C2.1", "C2.2", "C2.3", "embed-circle", "C3.2"})
                harness::run_experiment(id, opts);
            std::printf("curriculum artifacts under %s\n", g.out_dir.c_str());
        } else if (infer_study->parsed()) {
            harness::run_experiment("study-2x1", g.options());
            std::printf("study artifacts under %s/study-2x1\n", g.out_dir.c_str());
        } else if (infer_goal->parsed()) {
            const auto spec = parse_task("study-2x1");
            std::ifstream in(ig_records);
            if (!in) throw harness::ConfigError("cannot open records: " + ig_records);
            std::vector<inference::InsertionRecord> records;
            double x, y, th;
            int outcome;
            while (in >> x >> y >> th >> outcome)
                records.push_back({{x, y, th}, outcome != 0});
            const auto prior = inference::DefectPrior::isotropic(spec.pin_count(), ig_sigma);
            inference::InferenceConfig cfg;
            const auto goal = inference::optimal_goal(records, spec, prior, cfg, g.seed);
            if (!goal) {
                std::printf("history inconsistent with the prior\n");
                return 1;
            }
            std::printf("goal %.4f %.4f %.4f  g* %.4f\n", goal->goal.x, goal->goal.y,
                        goal->goal.theta, goal->g);
        } else if (eval->parsed()) {
            approx::PolicyParams p;
            p.phi1 = approx::load_net(ev_prefix + ".phi1.net", approx::nominal_policy_spec().sizes);
            p.phi2 = approx::load_net(ev_prefix + ".phi2.net", approx::adaptation_policy_spec().sizes);
            simenv::EnvConfig env;
            const auto spec = parse_task(ev_task);
            std::optional<std::array<double, 5>> psi;
            if (!ev_ae.empty()) {
                const auto ae = embedding::ToleranceAutoencoder::load(ev_ae);
                psi = embedding::encode(ae, spec).psi;
            }
            const auto policy = learning::make_policy(p, env, psi);
            const auto report = harness::evaluate(policy, env, learning::Task::nominal(spec),
                                                  ev_episodes, g.seed, g.options().jobs);
            std::printf("%s", harness::EvalReport::csv_header().c_str());
            auto row = report;
            row.policy_tag = ev_prefix;
            row.eval_env = ev_task;
            std::printf("%s", row.to_csv().c_str());
        } else if (run->parsed()) {
            harness::run_experiment(run_id, g.options());
            std::printf("artifacts under %s/%s\n", g.out_dir.c_str(), run_id.c_str());
        }
    } catch (const harness::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const harness::UpstreamError& e) {
        std::fprintf(stderr, "upstream artifact error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
