#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tolins/rng.hpp"

namespace tolins::cmaes {

struct CmaConfig {
    int dimension = 0;
    std::vector<double> initial_mean;  // empty -> zeros
    double initial_sigma = 0.3;
    int lambda = 0;  // 0 -> 4 + floor(3 ln d)
    int max_generations = 300;
    // stop when the best fitness improved by less than this over the last 20
    // generations (0 disables)
    double fitness_tolerance = 0.0;
    std::uint64_t seed = 0;
    // full covariance gets expensive past a few hundred dimensions; above the
    // threshold only the diagonal is adapted
    int diagonal_threshold = 400;
    std::optional<bool> force_diagonal;
    std::vector<double> lower, upper;  // optional box, candidates clamped
};

// Covariance matrix adaptation evolution strategy, maximization convention.
class Cmaes {
public:
    explicit Cmaes(CmaConfig cfg);

    // Samples lambda candidates from N(mean, sigma^2 C). Deterministic given
    // the seed and generation index.
    const std::vector<std::vector<double>>& ask();
    // Rank-based update; ties are broken by candidate index. A tell() with
    // all-equal fitnesses carries no ranking information and leaves the
    // distribution unchanged.
    void tell(const std::vector<double>& fitness);

    bool stop() const;
    int generation() const { return generation_; }
    int lambda() const { return lambda_; }
    int dimension() const { return dim_; }
    bool diagonal_mode() const { return diagonal_; }
    double sigma() const { return sigma_; }
    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& best_point() const { return best_point_; }
    double best_fitness() const { return best_fitness_; }
    bool has_best() const { return has_best_; }
    // C (without the sigma^2 factor); row-major d*d
    std::vector<double> covariance() const;

private:
    void sample_candidate(std::vector<double>& x, std::vector<double>& z);
    void update_eigensystem();

    CmaConfig cfg_;
    int dim_ = 0;
    int lambda_ = 0;
    int mu_ = 0;
    bool diagonal_ = false;
    std::vector<double> weights_;
    double mu_eff_ = 0.0;
    double c_sigma_ = 0.0, d_sigma_ = 0.0, c_c_ = 0.0, c1_ = 0.0, c_mu_ = 0.0, chi_n_ = 0.0;

    std::vector<double> mean_;
    double sigma_ = 0.0;
    std::vector<double> cov_;       // full: d*d row-major; diagonal: d entries
    std::vector<double> eig_vec_;   // B, full mode only
    std::vector<double> eig_val_;   // D^2 eigenvalues (full) or C diagonal copy
    std::vector<double> p_sigma_, p_c_;
    int generation_ = 0;
    int eigen_generation_ = -1;
    int lazy_gap_ = 1;

    Rng rng_;
    std::vector<std::vector<double>> candidates_;
    std::vector<std::vector<double>> z_samples_;  // the underlying N(0, I) draws
    bool asked_ = false;

    std::vector<double> best_point_;
    double best_fitness_ = 0.0;
    bool has_best_ = false;
    std::vector<double> best_history_;
};

// d*d symmetric eigendecomposition (Householder tridiagonalization + QL with
// implicit shifts). Eigenvalues ascending; eigenvectors in columns of V.
void symmetric_eigen(int d, const std::vector<double>& a, std::vector<double>& eigenvalues,
                     std::vector<double>& eigenvectors);

} // namespace tolins::cmaes
