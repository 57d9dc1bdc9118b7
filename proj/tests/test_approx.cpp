#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "tolins/approx.hpp"

using namespace tolins;
using namespace tolins::approx;

namespace {

// independent straight-loop reimplementation of the dense forward pass
std::vector<double> forward_reference(const NetSpec& spec, const std::vector<double>& params,
                                      std::vector<double> x) {
    std::size_t off = 0;
    for (int l = 0; l < spec.num_layers(); ++l) {
        const int in = spec.sizes[static_cast<std::size_t>(l)];
        const int out = spec.sizes[static_cast<std::size_t>(l) + 1];
        std::vector<double> y(static_cast<std::size_t>(out));
        for (int o = 0; o < out; ++o) {
            double z = params[off + static_cast<std::size_t>(in) * out + o];
            for (int i = 0; i < in; ++i)
                z += params[off + static_cast<std::size_t>(o) * in + i] * x[static_cast<std::size_t>(i)];
            if (l + 1 < spec.num_layers())
                z = std::tanh(z);
            else if (spec.output == Activation::Tanh)
                z = std::tanh(z);
            else if (spec.output == Activation::Sigmoid)
                z = 1.0 / (1.0 + std::exp(-z));
            y[static_cast<std::size_t>(o)] = z;
        }
        off += static_cast<std::size_t>(in) * out + out;
        x = std::move(y);
    }
    return x;
}

BatchLossFn mse_loss(const std::vector<std::vector<double>>& targets) {
    return [&targets](const std::vector<std::vector<double>>& outputs,
                      std::vector<std::vector<double>>& grad_outputs) {
        double loss = 0.0;
        for (std::size_t s = 0; s < outputs.size(); ++s)
            for (std::size_t o = 0; o < outputs[s].size(); ++o) {
                const double d = outputs[s][o] - targets[s][o];
                loss += d * d;
                grad_outputs[s][o] = 2.0 * d / static_cast<double>(outputs.size());
            }
        return loss / static_cast<double>(outputs.size());
    };
}

double fd_check_max_rel_err(const NetSpec& spec, const ParamVector& params,
                            const std::vector<std::vector<double>>& inputs,
                            const BatchLossFn& loss) {
    ParamVector grad;
    gradient(spec, params, inputs, loss, grad);
    const double h = 1e-5;
    double worst = 0.0;
    ParamVector p = params;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + h;
        std::vector<std::vector<double>> outs(inputs.size());
        for (std::size_t s = 0; s < inputs.size(); ++s) outs[s] = forward(spec, p, inputs[s]);
        std::vector<std::vector<double>> g(outs.size());
        for (std::size_t s = 0; s < outs.size(); ++s) g[s].assign(outs[s].size(), 0.0);
        const double fp = loss(outs, g);
        p[i] = saved - h;
        for (std::size_t s = 0; s < inputs.size(); ++s) outs[s] = forward(spec, p, inputs[s]);
        const double fm = loss(outs, g);
        p[i] = saved;
        const double fd = (fp - fm) / (2.0 * h);
        const double rel = std::abs(grad[i] - fd) / std::max({std::abs(grad[i]), std::abs(fd), 1e-6});
        worst = std::max(worst, rel);
    }
    return worst;
}

} // namespace

TEST_SUITE("approx") {

TEST_CASE("zero weights give zero tanh output") {
    const NetSpec spec{{3, 5, 2}, Activation::Tanh};
    ParamVector p(static_cast<std::size_t>(spec.param_count()), 0.0);
    const auto y = forward(spec, p, std::vector<double>{1.0, -2.0, 0.5});
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
}

TEST_CASE("identity-configured linear layer echoes input") {
    const NetSpec spec{{3, 3}, Activation::Linear};
    ParamVector p(static_cast<std::size_t>(spec.param_count()), 0.0);
    for (int i = 0; i < 3; ++i) p[static_cast<std::size_t>(i) * 3 + i] = 1.0;
    const std::vector<double> x{0.3, -1.7, 2.2};
    CHECK(forward(spec, p, x) == x);
}

TEST_CASE("forward matches an independent reimplementation") {
    Rng rng(42);
    for (auto spec : {NetSpec{{8, 64, 64, 4}, Activation::Tanh},
                      NetSpec{{13, 32, 4}, Activation::Linear},
                      NetSpec{{12, 64, 1}, Activation::Sigmoid}}) {
        const auto p = init_params(spec, rng);
        for (int t = 0; t < 5; ++t) {
            std::vector<double> x(static_cast<std::size_t>(spec.input_dim()));
            for (auto& v : x) v = rng.normal();
            const auto a = forward(spec, p, x);
            const auto b = forward_reference(spec, p, x);
            for (std::size_t i = 0; i < a.size(); ++i)
                CHECK(std::abs(a[i] - b[i]) < 1e-12);
        }
    }
}

TEST_CASE("flatten and unflatten round-trip") {
    Rng rng(5);
    const NetSpec spec{{4, 7, 3}, Activation::Tanh};
    const auto p = init_params(spec, rng);
    CHECK(flatten(spec, unflatten(spec, p)) == p);
}

TEST_CASE("constant loss yields zero gradient") {
    Rng rng(6);
    const NetSpec spec{{4, 8, 2}, Activation::Tanh};
    const auto p = init_params(spec, rng);
    std::vector<std::vector<double>> inputs{{0.1, 0.2, 0.3, 0.4}, {1, 2, 3, 4}};
    ParamVector grad;
    gradient(spec, p, inputs,
             [](const std::vector<std::vector<double>>&, std::vector<std::vector<double>>&) {
                 return 3.5;  // grad_outputs stay zero
             },
             grad);
    for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("gradients match central finite differences") {
    Rng rng(7);
    for (auto spec : {NetSpec{{5, 12, 3}, Activation::Tanh}, NetSpec{{6, 9, 2}, Activation::Sigmoid},
                      NetSpec{{4, 10, 4}, Activation::Linear}}) {
        const auto p = init_params(spec, rng);
        std::vector<std::vector<double>> inputs(4);
        std::vector<std::vector<double>> targets(4);
        for (auto& x : inputs) {
            x.resize(static_cast<std::size_t>(spec.input_dim()));
            for (auto& v : x) v = rng.normal();
        }
        for (auto& t : targets) {
            t.resize(static_cast<std::size_t>(spec.output_dim()));
            for (auto& v : t) v = rng.uniform(0.1, 0.9);
        }
        CHECK(fd_check_max_rel_err(spec, p, inputs, mse_loss(targets)) < 1e-4);
    }
}

TEST_CASE("linear net squared loss matches the closed-form gradient") {
    // single linear layer, one sample: dL/dW = 2 (Wx + b - t) x^T
    Rng rng(8);
    const NetSpec spec{{3, 2}, Activation::Linear};
    const auto p = init_params(spec, rng);
    const std::vector<double> x{0.5, -1.0, 2.0};
    const std::vector<double> target{0.3, -0.7};
    std::vector<std::vector<double>> targets{target};
    ParamVector grad;
    gradient(spec, p, {x}, mse_loss(targets), grad);
    const auto y = forward(spec, p, x);
    for (std::size_t o = 0; o < 2; ++o) {
        const double r = 2.0 * (y[o] - target[o]);
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(grad[o * 3 + i] == doctest::Approx(r * x[i]).epsilon(1e-12));
        CHECK(grad[6 + o] == doctest::Approx(r).epsilon(1e-12));
    }
}

TEST_CASE("adam reduces a quadratic") {
    ParamVector p{5.0, -3.0};
    Adam adam(2, {.lr = 0.1});
    for (int i = 0; i < 500; ++i) {
        ParamVector g{2.0 * p[0], 2.0 * p[1]};
        adam.step(p, g);
    }
    CHECK(std::abs(p[0]) < 1e-3);
    CHECK(std::abs(p[1]) < 1e-3);
}

TEST_CASE("policy with zero adaptation equals the nominal-only policy") {
    Rng rng(9);
    PolicyParams pol = PolicyParams::init(rng);
    // phi2 has random hidden weights but a zero output layer, as built
    const std::array<double, 4> a_max{2.5, 2.5, 0.1, 2.5};
    MlpWorkspace ws;
    for (int t = 0; t < 50; ++t) {
        std::array<double, 8> obs{};
        for (auto& v : obs) v = rng.normal();
        std::array<double, 5> psi{};
        for (auto& v : psi) v = rng.normal();
        const auto with = policy_act(pol, obs, psi.data(), a_max, ws);
        const auto without = policy_act(pol, obs, nullptr, a_max, ws);
        for (std::size_t i = 0; i < 4; ++i) CHECK(with[i] == without[i]);
    }
}

TEST_CASE("zero policy outputs zero action and saturation bound holds") {
    Rng rng(10);
    PolicyParams zero;
    zero.phi1.assign(static_cast<std::size_t>(nominal_policy_spec().param_count()), 0.0);
    zero.phi2.assign(static_cast<std::size_t>(adaptation_policy_spec().param_count()), 0.0);
    const std::array<double, 4> a_max{2.5, 2.5, 0.1, 2.5};
    MlpWorkspace ws;
    std::array<double, 8> obs{};
    const auto a = policy_act(zero, obs, nullptr, a_max, ws);
    for (double v : a) CHECK(v == 0.0);

    PolicyParams pol = PolicyParams::init(rng);
    for (auto& w : pol.phi2) w = rng.normal(0.0, 2.0);
    for (int t = 0; t < 2000; ++t) {
        std::array<double, 8> o{};
        for (auto& v : o) v = rng.normal(0.0, 3.0);
        std::array<double, 5> psi{};
        for (auto& v : psi) v = rng.normal(0.0, 3.0);
        const auto act = policy_act(pol, o, psi.data(), a_max, ws);
        for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(act[i]) <= a_max[i]);
    }
}

TEST_CASE("net checkpoint round-trip") {
    Rng rng(11);
    const NetSpec spec = nominal_policy_spec();
    const auto p = init_params(spec, rng);
    const std::string path = (std::filesystem::temp_directory_path() / "t.net").string();
    save_net(path, spec.sizes, p);
    const auto back = load_net(path, spec.sizes);
    CHECK(back == p);
    CHECK_THROWS(load_net(path, {1, 2, 3}));
    std::filesystem::remove(path);
}

TEST_CASE("conv forward/backward matches finite differences") {
    Rng rng(12);
    const ConvShape s{.in_c = 2, .in_h = 8, .in_w = 8, .out_c = 3};
    std::vector<double> w(static_cast<std::size_t>(s.weight_count()));
    std::vector<double> b(static_cast<std::size_t>(s.out_c));
    std::vector<double> x(static_cast<std::size_t>(s.in_count()));
    for (auto& v : w) v = rng.normal(0.0, 0.3);
    for (auto& v : b) v = rng.normal(0.0, 0.1);
    for (auto& v : x) v = rng.normal();

    std::vector<double> y(static_cast<std::size_t>(s.out_count()));
    conv2d_forward(s, w, b, x, y);
    // loss = 0.5 sum y^2 -> dy = y
    std::vector<double> dx(x.size(), 0.0), dw(w.size(), 0.0), db(b.size(), 0.0);
    conv2d_backward(s, w, x, y, dx, dw, db);

    const double h = 1e-6;
    auto loss_at = [&](const std::vector<double>& wv, const std::vector<double>& bv,
                       const std::vector<double>& xv) {
        std::vector<double> yy(y.size());
        conv2d_forward(s, wv, bv, xv, yy);
        double l = 0.0;
        for (double v : yy) l += 0.5 * v * v;
        return l;
    };
    Rng pick(13);
    for (int t = 0; t < 30; ++t) {
        const std::size_t i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(w.size()) - 1));
        auto wp = w;
        wp[i] += h;
        auto wm = w;
        wm[i] -= h;
        const double fd = (loss_at(wp, b, x) - loss_at(wm, b, x)) / (2.0 * h);
        CHECK(dw[i] == doctest::Approx(fd).epsilon(1e-4));
    }
    for (int t = 0; t < 20; ++t) {
        const std::size_t i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(x.size()) - 1));
        auto xp = x;
        xp[i] += h;
        auto xm = x;
        xm[i] -= h;
        const double fd = (loss_at(w, b, xp) - loss_at(w, b, xm)) / (2.0 * h);
        CHECK(dx[i] == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("transpose conv is the adjoint of conv") {
    // <conv(x), u> == <x, convT(u)> for zero bias
    Rng rng(14);
    const ConvShape s{.in_c = 1, .in_h = 6, .in_w = 6, .out_c = 2};
    std::vector<double> w(static_cast<std::size_t>(s.weight_count()));
    for (auto& v : w) v = rng.normal();
    std::vector<double> zerob_out(static_cast<std::size_t>(s.out_c), 0.0);
    std::vector<double> zerob_in(static_cast<std::size_t>(s.in_c), 0.0);
    std::vector<double> x(static_cast<std::size_t>(s.in_count()));
    std::vector<double> u(static_cast<std::size_t>(s.out_count()));
    for (auto& v : x) v = rng.normal();
    for (auto& v : u) v = rng.normal();
    std::vector<double> cx(u.size()), ctu(x.size());
    conv2d_forward(s, w, zerob_out, x, cx);
    conv2d_transpose_forward(s, w, zerob_in, u, ctu);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) lhs += cx[i] * u[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ctu[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

} // TEST_SUITE
