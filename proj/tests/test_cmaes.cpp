#include <cmath>

#include "doctest.h"
#include "tolins/cmaes.hpp"

using namespace tolins;
using namespace tolins::cmaes;

namespace {

double sphere(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return -s;
}

double rosenbrock(const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        const double a = v[i + 1] - v[i] * v[i];
        const double b = 1.0 - v[i];
        s += 100.0 * a * a + b * b;
    }
    return -s;
}

double run_to_budget(Cmaes& es, double (*f)(const std::vector<double>&)) {
    while (!es.stop()) {
        const auto& cands = es.ask();
        std::vector<double> fit(cands.size());
        for (std::size_t i = 0; i < cands.size(); ++i) fit[i] = f(cands[i]);
        es.tell(fit);
    }
    return es.best_fitness();
}

} // namespace

TEST_SUITE("cmaes") {

TEST_CASE("tiny sigma keeps candidates at the mean") {
    CmaConfig cfg;
    cfg.dimension = 4;
    cfg.initial_mean = {1.0, -2.0, 0.5, 3.0};
    cfg.initial_sigma = 1e-12;
    cfg.seed = 1;
    Cmaes es(cfg);
    for (const auto& c : es.ask())
        for (int i = 0; i < 4; ++i)
            CHECK(c[static_cast<std::size_t>(i)] ==
                  doctest::Approx(cfg.initial_mean[static_cast<std::size_t>(i)]).epsilon(1e-9));
}

TEST_CASE("same seed gives identical candidate sets") {
    CmaConfig cfg;
    cfg.dimension = 6;
    cfg.seed = 99;
    Cmaes a(cfg), b(cfg);
    const auto& ca = a.ask();
    const auto& cb = b.ask();
    CHECK(ca == cb);
}

TEST_CASE("sample covariance of draws approximates sigma^2 C") {
    CmaConfig cfg;
    cfg.dimension = 3;
    cfg.initial_sigma = 0.7;
    cfg.lambda = 10;
    cfg.seed = 5;
    Cmaes es(cfg);
    // collect draws over many ask/tell rounds with all-equal fitness so the
    // distribution stays fixed
    std::vector<std::vector<double>> draws;
    while (static_cast<int>(draws.size()) < 10000) {
        const auto& c = es.ask();
        draws.insert(draws.end(), c.begin(), c.end());
        es.tell(std::vector<double>(c.size(), 0.0));
    }
    const double expect = cfg.initial_sigma * cfg.initial_sigma;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (const auto& d : draws)
                acc += d[static_cast<std::size_t>(i)] * d[static_cast<std::size_t>(j)];
            acc /= static_cast<double>(draws.size());
            const double want = i == j ? expect : 0.0;
            CHECK(std::abs(acc - want) < 0.05 * expect);
        }
    }
}

TEST_CASE("all-equal fitnesses leave the mean unchanged") {
    CmaConfig cfg;
    cfg.dimension = 5;
    cfg.initial_mean = {1, 2, 3, 4, 5};
    cfg.seed = 2;
    Cmaes es(cfg);
    es.ask();
    es.tell(std::vector<double>(static_cast<std::size_t>(es.lambda()), 7.0));
    CHECK(es.mean() == cfg.initial_mean);
    CHECK(es.sigma() == cfg.initial_sigma);
}

TEST_CASE("best-so-far fitness is non-decreasing") {
    CmaConfig cfg;
    cfg.dimension = 8;
    cfg.initial_mean.assign(8, 1.0);
    cfg.max_generations = 60;
    cfg.seed = 3;
    Cmaes es(cfg);
    double last = -1e300;
    while (!es.stop()) {
        const auto& cands = es.ask();
        std::vector<double> fit(cands.size());
        for (std::size_t i = 0; i < cands.size(); ++i) fit[i] = sphere(cands[i]);
        es.tell(fit);
        CHECK(es.best_fitness() >= last);
        last = es.best_fitness();
    }
}

TEST_CASE("nan fitness is rejected") {
    CmaConfig cfg;
    cfg.dimension = 3;
    cfg.seed = 4;
    Cmaes es(cfg);
    es.ask();
    std::vector<double> fit(static_cast<std::size_t>(es.lambda()), 0.0);
    fit[0] = std::nan("");
    CHECK_THROWS(es.tell(fit));
}

TEST_CASE("sphere dim 10 benchmark") {
    CmaConfig cfg;
    cfg.dimension = 10;
    cfg.initial_mean.assign(10, 0.5);
    cfg.initial_sigma = 0.3;
    cfg.lambda = 10;
    cfg.max_generations = 300;
    cfg.seed = 2024;
    Cmaes es(cfg);
    CHECK(run_to_budget(es, sphere) > -1e-6);
}

TEST_CASE("rosenbrock dim 5 benchmark") {
    CmaConfig cfg;
    cfg.dimension = 5;
    cfg.initial_mean.assign(5, 0.0);
    cfg.initial_sigma = 0.3;
    cfg.lambda = 12;
    cfg.max_generations = 1500;
    cfg.seed = 2024;
    Cmaes es(cfg);
    CHECK(run_to_budget(es, rosenbrock) > -1e-3);
}

TEST_CASE("diagonal mode still solves the sphere") {
    CmaConfig cfg;
    cfg.dimension = 30;
    cfg.initial_mean.assign(30, 0.5);
    cfg.force_diagonal = true;
    cfg.max_generations = 600;
    cfg.seed = 7;
    Cmaes es(cfg);
    CHECK(es.diagonal_mode());
    CHECK(run_to_budget(es, sphere) > -1e-6);
}

TEST_CASE("box clamping keeps candidates inside bounds") {
    CmaConfig cfg;
    cfg.dimension = 2;
    cfg.initial_sigma = 5.0;
    cfg.lower = {-1.0, -1.0};
    cfg.upper = {1.0, 1.0};
    cfg.seed = 8;
    Cmaes es(cfg);
    for (const auto& c : es.ask())
        for (double v : c) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
}

} // TEST_SUITE
