#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <optional>
#include <string>
#include <vector>

#include "tolins/embedding.hpp"
#include "tolins/inference.hpp"
#include "tolins/learning.hpp"

namespace tolins::harness {

using learning::EnvSetup;
using learning::Task;
using simenv::EnvConfig;
using simenv::PolicyFn;

struct Metric {
    double mean = 0.0;
    double stderr_ = 0.0;
};

struct EvalReport {
    Metric reward, success_rate, steps, collisions;
    int n_episodes = 0;
    std::string policy_tag, train_env, eval_env;

    std::string to_csv() const;
    static std::string csv_header();
};

// Seeded batch of rollouts on one task; episode i uses seed mix(seed, i).
EvalReport evaluate(const PolicyFn& policy, const EnvConfig& env, const Task& task,
                    int n_episodes, std::uint64_t seed, int jobs = 1);

// configuration error -> exit code 2; missing/stale upstream artifact -> 3
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UpstreamError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Plain-text experiment configuration: `[experiment]` sections of
// `key = value` lines over a fixed key vocabulary; unknown keys are
// rejected.
class ExperimentConfig {
public:
    static ExperimentConfig load(const std::string& path);
    static ExperimentConfig defaults() { return {}; }

    double get(const std::string& experiment, const std::string& key, double fallback) const;
    int get_int(const std::string& experiment, const std::string& key, int fallback) const;

    void set(const std::string& experiment, const std::string& key, double value);

private:
    static void check_key(const std::string& key);
    std::map<std::string, std::map<std::string, double>> values_;
};

// FNV-1a over the file bytes, hex string; used for the experiment manifests.
std::string file_hash(const std::string& path);

struct RunOptions {
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    int jobs = 1;
    ExperimentConfig config;
};

// Known experiment ids: C1.1-C1.3, C2.1-C2.3, C3.1, C3.2, C4.1, C4.2,
// P1.1-P1.3, P2.1, P2.2, embed-circle, embed-polygon, study-2x1.
std::vector<std::string> experiment_ids();
bool is_experiment(const std::string& id);

// Runs one experiment preset; writes checkpoints, reports, curves and a
// manifest into <out_dir>/<id>/. Dependent presets verify their upstream
// artifacts by hash and throw UpstreamError when missing or stale.
void run_experiment(const std::string& id, const RunOptions& opts);

// tiny SVG helpers for learning curves and top-down trajectories
std::string svg_line_chart(const std::vector<double>& xs, const std::vector<double>& ys,
                           const std::string& x_label, const std::string& y_label);
std::string svg_trajectory(const std::vector<std::pair<double, double>>& path,
                           const geometry::WorkpieceSpec& spec, double view_half_width);

void write_text_file(const std::string& path, const std::string& content);

} // namespace tolins::harness
