#include "tolins/cmaes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tolins::cmaes {

namespace {
constexpr double kEigFloor = 1e-12;
constexpr double kEigCeil = 1e12;
} // namespace

// tred2/tql2-style reduction; standard textbook routine.
void symmetric_eigen(int d, const std::vector<double>& a, std::vector<double>& eigenvalues,
                     std::vector<double>& eigenvectors) {
    eigenvectors = a;  // row-major, symmetric in == out ordering
    eigenvalues.assign(static_cast<std::size_t>(d), 0.0);
    std::vector<double> e(static_cast<std::size_t>(d), 0.0);
    auto V = [&](int i, int j) -> double& {
        return eigenvectors[static_cast<std::size_t>(i) * d + j];
    };

    // Householder reduction to tridiagonal form
    for (int i = d - 1; i > 0; --i) {
        int l = i - 1;
        double h = 0.0, scale = 0.0;
        if (l > 0) {
            for (int k = 0; k <= l; ++k) scale += std::abs(V(i, k));
            if (scale == 0.0) {
                e[static_cast<std::size_t>(i)] = V(i, l);
            } else {
                for (int k = 0; k <= l; ++k) {
                    V(i, k) /= scale;
                    h += V(i, k) * V(i, k);
                }
                double f = V(i, l);
                double g = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
                e[static_cast<std::size_t>(i)] = scale * g;
                h -= f * g;
                V(i, l) = f - g;
                f = 0.0;
                for (int j = 0; j <= l; ++j) {
                    V(j, i) = V(i, j) / h;
                    g = 0.0;
                    for (int k = 0; k <= j; ++k) g += V(j, k) * V(i, k);
                    for (int k = j + 1; k <= l; ++k) g += V(k, j) * V(i, k);
                    e[static_cast<std::size_t>(j)] = g / h;
                    f += e[static_cast<std::size_t>(j)] * V(i, j);
                }
                const double hh = f / (h + h);
                for (int j = 0; j <= l; ++j) {
                    f = V(i, j);
                    e[static_cast<std::size_t>(j)] = g = e[static_cast<std::size_t>(j)] - hh * f;
                    for (int k = 0; k <= j; ++k)
                        V(j, k) -= f * e[static_cast<std::size_t>(k)] + g * V(i, k);
                }
            }
        } else {
            e[static_cast<std::size_t>(i)] = V(i, l);
        }
        eigenvalues[static_cast<std::size_t>(i)] = h;
    }
    eigenvalues[0] = 0.0;
    e[0] = 0.0;
    for (int i = 0; i < d; ++i) {
        const int l = i - 1;
        if (eigenvalues[static_cast<std::size_t>(i)] != 0.0) {
            for (int j = 0; j <= l; ++j) {
                double g = 0.0;
                for (int k = 0; k <= l; ++k) g += V(i, k) * V(k, j);
                for (int k = 0; k <= l; ++k) V(k, j) -= g * V(k, i);
            }
        }
        eigenvalues[static_cast<std::size_t>(i)] = V(i, i);
        V(i, i) = 1.0;
        for (int j = 0; j <= l; ++j) V(j, i) = V(i, j) = 0.0;
    }

    // QL with implicit shifts
    for (int i = 1; i < d; ++i) e[static_cast<std::size_t>(i - 1)] = e[static_cast<std::size_t>(i)];
    e[static_cast<std::size_t>(d - 1)] = 0.0;
    for (int l = 0; l < d; ++l) {
        int iter = 0;
        int m;
        do {
            for (m = l; m < d - 1; ++m) {
                const double dd = std::abs(eigenvalues[static_cast<std::size_t>(m)]) +
                                  std::abs(eigenvalues[static_cast<std::size_t>(m + 1)]);
                if (std::abs(e[static_cast<std::size_t>(m)]) <= 1e-300 ||
                    std::abs(e[static_cast<std::size_t>(m)]) <= 2.3e-16 * dd)
                    break;
            }
            if (m != l) {
                if (++iter == 50) break;  // settle for what we have
                double g = (eigenvalues[static_cast<std::size_t>(l + 1)] -
                            eigenvalues[static_cast<std::size_t>(l)]) /
                           (2.0 * e[static_cast<std::size_t>(l)]);
                double r = std::hypot(g, 1.0);
                g = eigenvalues[static_cast<std::size_t>(m)] - eigenvalues[static_cast<std::size_t>(l)] +
                    e[static_cast<std::size_t>(l)] / (g + (g >= 0.0 ? std::abs(r) : -std::abs(r)));
                double s = 1.0, c = 1.0, p = 0.0;
                for (int i = m - 1; i >= l; --i) {
                    double f = s * e[static_cast<std::size_t>(i)];
                    const double b = c * e[static_cast<std::size_t>(i)];
                    r = std::hypot(f, g);
                    e[static_cast<std::size_t>(i + 1)] = r;
                    if (r == 0.0) {
                        eigenvalues[static_cast<std::size_t>(i + 1)] -= p;
                        e[static_cast<std::size_t>(m)] = 0.0;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = eigenvalues[static_cast<std::size_t>(i + 1)] - p;
                    r = (eigenvalues[static_cast<std::size_t>(i)] - g) * s + 2.0 * c * b;
                    p = s * r;
                    eigenvalues[static_cast<std::size_t>(i + 1)] = g + p;
                    g = c * r - b;
                    for (int k = 0; k < d; ++k) {
                        f = V(k, i + 1);
                        V(k, i + 1) = s * V(k, i) + c * f;
                        V(k, i) = c * V(k, i) - s * f;
                    }
                }
                if (r == 0.0 && m - 1 >= l) continue;
                eigenvalues[static_cast<std::size_t>(l)] -= p;
                e[static_cast<std::size_t>(l)] = g;
                e[static_cast<std::size_t>(m)] = 0.0;
            }
        } while (m != l);
    }
}

Cmaes::Cmaes(CmaConfig cfg) : cfg_(std::move(cfg)), rng_(Rng::mix(cfg_.seed, 0xC3A)) {
    dim_ = cfg_.dimension;
    if (dim_ < 1) throw std::invalid_argument("cmaes: dimension must be >= 1");
    if (cfg_.initial_sigma <= 0.0) throw std::invalid_argument("cmaes: sigma must be positive");
    lambda_ = cfg_.lambda > 0 ? cfg_.lambda
                              : 4 + static_cast<int>(std::floor(3.0 * std::log(dim_)));
    if (lambda_ < 4) throw std::invalid_argument("cmaes: lambda must be >= 4");
    mu_ = lambda_ / 2;

    weights_.resize(static_cast<std::size_t>(mu_));
    double wsum = 0.0;
    for (int i = 0; i < mu_; ++i) {
        weights_[static_cast<std::size_t>(i)] = std::log(mu_ + 0.5) - std::log(i + 1.0);
        wsum += weights_[static_cast<std::size_t>(i)];
    }
    double w2 = 0.0;
    for (double& w : weights_) {
        w /= wsum;
        w2 += w * w;
    }
    mu_eff_ = 1.0 / w2;

    const double d = dim_;
    c_sigma_ = (mu_eff_ + 2.0) / (d + mu_eff_ + 5.0);
    d_sigma_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff_ - 1.0) / (d + 1.0)) - 1.0) + c_sigma_;
    c_c_ = (4.0 + mu_eff_ / d) / (d + 4.0 + 2.0 * mu_eff_ / d);
    c1_ = 2.0 / ((d + 1.3) * (d + 1.3) + mu_eff_);
    c_mu_ = std::min(1.0 - c1_, 2.0 * (mu_eff_ - 2.0 + 1.0 / mu_eff_) /
                                    ((d + 2.0) * (d + 2.0) + mu_eff_));
    chi_n_ = std::sqrt(d) * (1.0 - 1.0 / (4.0 * d) + 1.0 / (21.0 * d * d));

    diagonal_ = cfg_.force_diagonal.value_or(dim_ > cfg_.diagonal_threshold);
    if (diagonal_) {
        // separable variant: faster learning on the diagonal
        const double boost = std::min(1.0, (d + 2.0) / 3.0);
        c1_ = std::min(1.0, c1_ * boost);
        c_mu_ = std::min(1.0 - c1_, c_mu_ * boost);
        cov_.assign(static_cast<std::size_t>(dim_), 1.0);
        eig_val_ = cov_;
    } else {
        cov_.assign(static_cast<std::size_t>(dim_) * dim_, 0.0);
        for (int i = 0; i < dim_; ++i) cov_[static_cast<std::size_t>(i) * dim_ + i] = 1.0;
        update_eigensystem();
        lazy_gap_ = std::max(1, static_cast<int>(1.0 / (10.0 * d * (c1_ + c_mu_))));
    }

    mean_ = cfg_.initial_mean.empty() ? std::vector<double>(static_cast<std::size_t>(dim_), 0.0)
                                      : cfg_.initial_mean;
    if (static_cast<int>(mean_.size()) != dim_)
        throw std::invalid_argument("cmaes: initial mean dimension mismatch");
    sigma_ = cfg_.initial_sigma;
    p_sigma_.assign(static_cast<std::size_t>(dim_), 0.0);
    p_c_.assign(static_cast<std::size_t>(dim_), 0.0);

    candidates_.assign(static_cast<std::size_t>(lambda_),
                       std::vector<double>(static_cast<std::size_t>(dim_), 0.0));
    z_samples_ = candidates_;
}

void Cmaes::update_eigensystem() {
    symmetric_eigen(dim_, cov_, eig_val_, eig_vec_);
    for (double& v : eig_val_) v = std::clamp(v, kEigFloor, kEigCeil);
    eigen_generation_ = generation_;
}

void Cmaes::sample_candidate(std::vector<double>& x, std::vector<double>& z) {
    for (double& zi : z) zi = rng_.normal();
    if (diagonal_) {
        for (int i = 0; i < dim_; ++i)
            x[static_cast<std::size_t>(i)] =
                mean_[static_cast<std::size_t>(i)] +
                sigma_ * std::sqrt(cov_[static_cast<std::size_t>(i)]) * z[static_cast<std::size_t>(i)];
    } else {
        // x = m + sigma * B * (sqrt(D) .* z)
        for (int i = 0; i < dim_; ++i) {
            double acc = 0.0;
            for (int j = 0; j < dim_; ++j)
                acc += eig_vec_[static_cast<std::size_t>(i) * dim_ + j] *
                       std::sqrt(eig_val_[static_cast<std::size_t>(j)]) * z[static_cast<std::size_t>(j)];
            x[static_cast<std::size_t>(i)] = mean_[static_cast<std::size_t>(i)] + sigma_ * acc;
        }
    }
    if (!cfg_.lower.empty())
        for (int i = 0; i < dim_; ++i)
            x[static_cast<std::size_t>(i)] = std::max(x[static_cast<std::size_t>(i)],
                                                      cfg_.lower[static_cast<std::size_t>(i)]);
    if (!cfg_.upper.empty())
        for (int i = 0; i < dim_; ++i)
            x[static_cast<std::size_t>(i)] = std::min(x[static_cast<std::size_t>(i)],
                                                      cfg_.upper[static_cast<std::size_t>(i)]);
}

const std::vector<std::vector<double>>& Cmaes::ask() {
    if (asked_) throw std::logic_error("cmaes: ask() called twice without tell()");
    if (!diagonal_ && generation_ - eigen_generation_ >= lazy_gap_) update_eigensystem();
    for (int k = 0; k < lambda_; ++k)
        sample_candidate(candidates_[static_cast<std::size_t>(k)], z_samples_[static_cast<std::size_t>(k)]);
    asked_ = true;
    return candidates_;
}

void Cmaes::tell(const std::vector<double>& fitness) {
    if (!asked_) throw std::logic_error("cmaes: tell() without ask()");
    if (static_cast<int>(fitness.size()) != lambda_)
        throw std::invalid_argument("cmaes: fitness count mismatch");
    for (double f : fitness)
        if (!std::isfinite(f)) throw std::invalid_argument("cmaes: non-finite fitness");
    asked_ = false;

    std::vector<int> order(static_cast<std::size_t>(lambda_));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return fitness[static_cast<std::size_t>(a)] > fitness[static_cast<std::size_t>(b)];
    });

    const int bi = order[0];
    if (!has_best_ || fitness[static_cast<std::size_t>(bi)] > best_fitness_) {
        best_fitness_ = fitness[static_cast<std::size_t>(bi)];
        best_point_ = candidates_[static_cast<std::size_t>(bi)];
        has_best_ = true;
    }
    best_history_.push_back(best_fitness_);

    const bool all_equal =
        std::all_of(fitness.begin(), fitness.end(), [&](double f) { return f == fitness[0]; });
    if (all_equal) {
        ++generation_;
        return;  // no ranking information
    }

    const std::vector<double> old_mean = mean_;
    // mean update and mean displacement in z-space
    std::vector<double> y_w(static_cast<std::size_t>(dim_), 0.0);  // (m' - m) / sigma
    for (int i = 0; i < dim_; ++i) {
        double acc = 0.0;
        for (int k = 0; k < mu_; ++k)
            acc += weights_[static_cast<std::size_t>(k)] *
                   candidates_[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]
                              [static_cast<std::size_t>(i)];
        mean_[static_cast<std::size_t>(i)] = acc;
        y_w[static_cast<std::size_t>(i)] =
            (acc - old_mean[static_cast<std::size_t>(i)]) / sigma_;
    }

    // C^{ -1/2 } * y_w for the sigma path
    std::vector<double> c_inv_y(static_cast<std::size_t>(dim_), 0.0);
    if (diagonal_) {
        for (int i = 0; i < dim_; ++i)
            c_inv_y[static_cast<std::size_t>(i)] =
                y_w[static_cast<std::size_t>(i)] / std::sqrt(cov_[static_cast<std::size_t>(i)]);
    } else {
        // B * D^{-1/2} * B^T * y_w
        std::vector<double> tmp(static_cast<std::size_t>(dim_), 0.0);
        for (int j = 0; j < dim_; ++j) {
            double acc = 0.0;
            for (int i = 0; i < dim_; ++i)
                acc += eig_vec_[static_cast<std::size_t>(i) * dim_ + j] * y_w[static_cast<std::size_t>(i)];
            tmp[static_cast<std::size_t>(j)] = acc / std::sqrt(eig_val_[static_cast<std::size_t>(j)]);
        }
        for (int i = 0; i < dim_; ++i) {
            double acc = 0.0;
            for (int j = 0; j < dim_; ++j)
                acc += eig_vec_[static_cast<std::size_t>(i) * dim_ + j] * tmp[static_cast<std::size_t>(j)];
            c_inv_y[static_cast<std::size_t>(i)] = acc;
        }
    }

    double ps_norm2 = 0.0;
    for (int i = 0; i < dim_; ++i) {
        p_sigma_[static_cast<std::size_t>(i)] =
            (1.0 - c_sigma_) * p_sigma_[static_cast<std::size_t>(i)] +
            std::sqrt(c_sigma_ * (2.0 - c_sigma_) * mu_eff_) * c_inv_y[static_cast<std::size_t>(i)];
        ps_norm2 += p_sigma_[static_cast<std::size_t>(i)] * p_sigma_[static_cast<std::size_t>(i)];
    }
    const double ps_norm = std::sqrt(ps_norm2);

    const double hsig_thresh =
        (1.4 + 2.0 / (dim_ + 1.0)) * chi_n_ *
        std::sqrt(1.0 - std::pow(1.0 - c_sigma_, 2.0 * (generation_ + 1)));
    const double hsig = ps_norm < hsig_thresh ? 1.0 : 0.0;

    for (int i = 0; i < dim_; ++i)
        p_c_[static_cast<std::size_t>(i)] =
            (1.0 - c_c_) * p_c_[static_cast<std::size_t>(i)] +
            hsig * std::sqrt(c_c_ * (2.0 - c_c_) * mu_eff_) * y_w[static_cast<std::size_t>(i)];

    const double delta_hsig = (1.0 - hsig) * c_c_ * (2.0 - c_c_);
    if (diagonal_) {
        for (int i = 0; i < dim_; ++i) {
            double rank_mu = 0.0;
            for (int k = 0; k < mu_; ++k) {
                const double y =
                    (candidates_[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]
                                [static_cast<std::size_t>(i)] -
                     old_mean[static_cast<std::size_t>(i)]) /
                    sigma_;
                rank_mu += weights_[static_cast<std::size_t>(k)] * y * y;
            }
            double& c = cov_[static_cast<std::size_t>(i)];
            c = (1.0 - c1_ - c_mu_) * c +
                c1_ * (p_c_[static_cast<std::size_t>(i)] * p_c_[static_cast<std::size_t>(i)] +
                       delta_hsig * c) +
                c_mu_ * rank_mu;
            c = std::clamp(c, kEigFloor, kEigCeil);
        }
    } else {
        for (int i = 0; i < dim_; ++i)
            for (int j = 0; j <= i; ++j) {
                double rank_mu = 0.0;
                for (int k = 0; k < mu_; ++k) {
                    const auto& cand =
                        candidates_[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
                    const double yi = (cand[static_cast<std::size_t>(i)] -
                                       old_mean[static_cast<std::size_t>(i)]) / sigma_;
                    const double yj = (cand[static_cast<std::size_t>(j)] -
                                       old_mean[static_cast<std::size_t>(j)]) / sigma_;
                    rank_mu += weights_[static_cast<std::size_t>(k)] * yi * yj;
                }
                double& cij = cov_[static_cast<std::size_t>(i) * dim_ + j];
                cij = (1.0 - c1_ - c_mu_) * cij +
                      c1_ * (p_c_[static_cast<std::size_t>(i)] * p_c_[static_cast<std::size_t>(j)] +
                             delta_hsig * cij) +
                      c_mu_ * rank_mu;
                cov_[static_cast<std::size_t>(j) * dim_ + i] = cij;
            }
    }

    sigma_ *= std::exp((c_sigma_ / d_sigma_) * (ps_norm / chi_n_ - 1.0));
    sigma_ = std::clamp(sigma_, 1e-300, 1e300);
    ++generation_;
}

bool Cmaes::stop() const {
    if (generation_ >= cfg_.max_generations) return true;
    if (cfg_.fitness_tolerance > 0.0 && best_history_.size() > 20) {
        const double prev = best_history_[best_history_.size() - 21];
        if (best_fitness_ - prev < cfg_.fitness_tolerance) return true;
    }
    return false;
}

std::vector<double> Cmaes::covariance() const {
    if (!diagonal_) return cov_;
    std::vector<double> full(static_cast<std::size_t>(dim_) * dim_, 0.0);
    for (int i = 0; i < dim_; ++i)
        full[static_cast<std::size_t>(i) * dim_ + i] = cov_[static_cast<std::size_t>(i)];
    return full;
}

} // namespace tolins::cmaes
