#include "tolins/approx.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tolins::approx {

void NetSpec::validate() const {
    if (sizes.size() < 2) throw std::invalid_argument("net: need at least one layer");
    for (int s : sizes)
        if (s <= 0) throw std::invalid_argument("net: layer sizes must be positive");
}

int NetSpec::param_count() const {
    int n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += sizes[l] * sizes[l + 1] + sizes[l + 1];
    return n;
}

std::vector<LayerParams> unflatten(const NetSpec& spec, std::span<const double> params) {
    if (static_cast<int>(params.size()) != spec.param_count())
        throw std::invalid_argument("unflatten: parameter count mismatch");
    std::vector<LayerParams> layers;
    std::size_t off = 0;
    for (int l = 0; l < spec.num_layers(); ++l) {
        const std::size_t nw = static_cast<std::size_t>(spec.sizes[l]) * spec.sizes[l + 1];
        const std::size_t nb = static_cast<std::size_t>(spec.sizes[l + 1]);
        LayerParams lp;
        lp.weights.assign(params.begin() + off, params.begin() + off + nw);
        off += nw;
        lp.bias.assign(params.begin() + off, params.begin() + off + nb);
        off += nb;
        layers.push_back(std::move(lp));
    }
    return layers;
}

ParamVector flatten(const NetSpec& spec, const std::vector<LayerParams>& layers) {
    if (static_cast<int>(layers.size()) != spec.num_layers())
        throw std::invalid_argument("flatten: layer count mismatch");
    ParamVector out;
    out.reserve(static_cast<std::size_t>(spec.param_count()));
    for (const auto& lp : layers) {
        out.insert(out.end(), lp.weights.begin(), lp.weights.end());
        out.insert(out.end(), lp.bias.begin(), lp.bias.end());
    }
    if (static_cast<int>(out.size()) != spec.param_count())
        throw std::invalid_argument("flatten: parameter count mismatch");
    return out;
}

ParamVector init_params(const NetSpec& spec, Rng& rng, bool zero_output_layer) {
    spec.validate();
    ParamVector p(static_cast<std::size_t>(spec.param_count()));
    std::size_t off = 0;
    for (int l = 0; l < spec.num_layers(); ++l) {
        const int in = spec.sizes[l], out = spec.sizes[l + 1];
        const bool zero = zero_output_layer && l + 1 == spec.num_layers();
        const double scale = 1.0 / std::sqrt(static_cast<double>(in));
        for (int i = 0; i < in * out; ++i) p[off++] = zero ? 0.0 : rng.uniform(-scale, scale);
        for (int i = 0; i < out; ++i) p[off++] = 0.0;
    }
    return p;
}

namespace {

double apply_activation(Activation a, double z) {
    switch (a) {
        case Activation::Tanh: return std::tanh(z);
        case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case Activation::Linear: return z;
    }
    return z;
}

// derivative expressed through the activation value
double activation_grad(Activation a, double y) {
    switch (a) {
        case Activation::Tanh: return 1.0 - y * y;
        case Activation::Sigmoid: return y * (1.0 - y);
        case Activation::Linear: return 1.0;
    }
    return 1.0;
}

void ensure_workspace(const NetSpec& spec, MlpWorkspace& ws) {
    const std::size_t n = spec.sizes.size();
    if (ws.act.size() != n) {
        ws.act.resize(n);
        ws.delta.resize(n);
    }
    for (std::size_t l = 0; l < n; ++l) {
        ws.act[l].resize(static_cast<std::size_t>(spec.sizes[l]));
        ws.delta[l].resize(static_cast<std::size_t>(spec.sizes[l]));
    }
}

} // namespace

void forward(const NetSpec& spec, std::span<const double> params, std::span<const double> input,
             MlpWorkspace& ws) {
    if (static_cast<int>(input.size()) != spec.input_dim())
        throw std::invalid_argument("forward: input dimension mismatch");
    if (static_cast<int>(params.size()) != spec.param_count())
        throw std::invalid_argument("forward: parameter count mismatch");
    ensure_workspace(spec, ws);
    std::copy(input.begin(), input.end(), ws.act[0].begin());
    std::size_t off = 0;
    for (int l = 0; l < spec.num_layers(); ++l) {
        const int in = spec.sizes[l], out = spec.sizes[l + 1];
        const Activation a = (l + 1 == spec.num_layers()) ? spec.output : Activation::Tanh;
        const double* w = params.data() + off;
        const double* b = params.data() + off + static_cast<std::size_t>(in) * out;
        const double* x = ws.act[l].data();
        double* y = ws.act[l + 1].data();
        for (int o = 0; o < out; ++o) {
            double z = b[o];
            const double* wr = w + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) z += wr[i] * x[i];
            y[o] = apply_activation(a, z);
        }
        off += static_cast<std::size_t>(in) * out + out;
    }
}

std::vector<double> forward(const NetSpec& spec, std::span<const double> params,
                            std::span<const double> input) {
    MlpWorkspace ws;
    forward(spec, params, input, ws);
    return ws.act.back();
}

void backward(const NetSpec& spec, std::span<const double> params, const MlpWorkspace& ws,
              std::span<const double> dloss_doutput, std::span<double> grad) {
    const int L = spec.num_layers();
    auto& delta = const_cast<MlpWorkspace&>(ws).delta;
    {
        const Activation a = spec.output;
        const auto& y = ws.act[static_cast<std::size_t>(L)];
        for (std::size_t o = 0; o < y.size(); ++o)
            delta[static_cast<std::size_t>(L)][o] = dloss_doutput[o] * activation_grad(a, y[o]);
    }
    // per-layer parameter offsets
    std::vector<std::size_t> offs(static_cast<std::size_t>(L));
    std::size_t off = 0;
    for (int l = 0; l < L; ++l) {
        offs[static_cast<std::size_t>(l)] = off;
        off += static_cast<std::size_t>(spec.sizes[l]) * spec.sizes[l + 1] + spec.sizes[l + 1];
    }
    for (int l = L - 1; l >= 0; --l) {
        const int in = spec.sizes[l], out = spec.sizes[l + 1];
        const std::size_t o0 = offs[static_cast<std::size_t>(l)];
        const double* w = params.data() + o0;
        const double* x = ws.act[static_cast<std::size_t>(l)].data();
        const double* d = delta[static_cast<std::size_t>(l) + 1].data();
        double* gw = grad.data() + o0;
        double* gb = grad.data() + o0 + static_cast<std::size_t>(in) * out;
        for (int o = 0; o < out; ++o) {
            const double dv = d[o];
            double* gwr = gw + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) gwr[i] += dv * x[i];
            gb[o] += dv;
        }
        if (l > 0) {
            auto& dprev = delta[static_cast<std::size_t>(l)];
            std::fill(dprev.begin(), dprev.end(), 0.0);
            for (int o = 0; o < out; ++o) {
                const double dv = d[o];
                const double* wr = w + static_cast<std::size_t>(o) * in;
                for (int i = 0; i < in; ++i) dprev[static_cast<std::size_t>(i)] += dv * wr[i];
            }
            const auto& y = ws.act[static_cast<std::size_t>(l)];
            for (std::size_t i = 0; i < dprev.size(); ++i)
                dprev[i] *= activation_grad(Activation::Tanh, y[i]);
        }
    }
}

double gradient(const NetSpec& spec, std::span<const double> params,
                const std::vector<std::vector<double>>& inputs, const BatchLossFn& loss,
                ParamVector& grad) {
    grad.assign(static_cast<std::size_t>(spec.param_count()), 0.0);
    std::vector<std::vector<double>> outputs(inputs.size());
    std::vector<MlpWorkspace> caches(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        forward(spec, params, inputs[i], caches[i]);
        outputs[i] = caches[i].act.back();
    }
    std::vector<std::vector<double>> grad_out(inputs.size());
    for (auto& g : grad_out) g.assign(static_cast<std::size_t>(spec.output_dim()), 0.0);
    const double value = loss(outputs, grad_out);
    if (!std::isfinite(value)) throw std::runtime_error("gradient: non-finite loss");
    for (std::size_t i = 0; i < inputs.size(); ++i)
        backward(spec, params, caches[i], grad_out[i], grad);
    return value;
}

Adam::Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

void Adam::reset() {
    std::fill(m_.begin(), m_.end(), 0.0);
    std::fill(v_.begin(), v_.end(), 0.0);
    t_ = 0;
}

void Adam::step(ParamVector& params, const ParamVector& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
        throw std::invalid_argument("adam: size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        params[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
}

// ---- convolutions ----

void conv2d_forward(const ConvShape& s, std::span<const double> w, std::span<const double> b,
                    std::span<const double> x, std::span<double> y) {
    const int oh = s.out_h(), ow = s.out_w();
    for (int oc = 0; oc < s.out_c; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = b[static_cast<std::size_t>(oc)];
                for (int ic = 0; ic < s.in_c; ++ic)
                    for (int ky = 0; ky < s.kernel; ++ky) {
                        const int iy = oy * s.stride + ky - s.pad;
                        if (iy < 0 || iy >= s.in_h) continue;
                        for (int kx = 0; kx < s.kernel; ++kx) {
                            const int ix = ox * s.stride + kx - s.pad;
                            if (ix < 0 || ix >= s.in_w) continue;
                            acc += w[((static_cast<std::size_t>(oc) * s.in_c + ic) * s.kernel + ky) *
                                         s.kernel + kx] *
                                   x[(static_cast<std::size_t>(ic) * s.in_h + iy) * s.in_w + ix];
                        }
                    }
                y[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox] = acc;
            }
}

void conv2d_backward(const ConvShape& s, std::span<const double> w, std::span<const double> x,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db) {
    const int oh = s.out_h(), ow = s.out_w();
    for (int oc = 0; oc < s.out_c; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const double g = dy[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
                db[static_cast<std::size_t>(oc)] += g;
                for (int ic = 0; ic < s.in_c; ++ic)
                    for (int ky = 0; ky < s.kernel; ++ky) {
                        const int iy = oy * s.stride + ky - s.pad;
                        if (iy < 0 || iy >= s.in_h) continue;
                        for (int kx = 0; kx < s.kernel; ++kx) {
                            const int ix = ox * s.stride + kx - s.pad;
                            if (ix < 0 || ix >= s.in_w) continue;
                            const std::size_t wi =
                                ((static_cast<std::size_t>(oc) * s.in_c + ic) * s.kernel + ky) *
                                    s.kernel + kx;
                            const std::size_t xi =
                                (static_cast<std::size_t>(ic) * s.in_h + iy) * s.in_w + ix;
                            dw[wi] += g * x[xi];
                            dx[xi] += g * w[wi];
                        }
                    }
            }
}

void conv2d_transpose_forward(const ConvShape& s, std::span<const double> w,
                              std::span<const double> b, std::span<const double> x,
                              std::span<double> y) {
    const int oh = s.out_h(), ow = s.out_w();
    for (int ic = 0; ic < s.in_c; ++ic)
        for (int iy = 0; iy < s.in_h; ++iy)
            for (int ix = 0; ix < s.in_w; ++ix)
                y[(static_cast<std::size_t>(ic) * s.in_h + iy) * s.in_w + ix] =
                    b[static_cast<std::size_t>(ic)];
    for (int oc = 0; oc < s.out_c; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const double v = x[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
                for (int ic = 0; ic < s.in_c; ++ic)
                    for (int ky = 0; ky < s.kernel; ++ky) {
                        const int iy = oy * s.stride + ky - s.pad;
                        if (iy < 0 || iy >= s.in_h) continue;
                        for (int kx = 0; kx < s.kernel; ++kx) {
                            const int ix = ox * s.stride + kx - s.pad;
                            if (ix < 0 || ix >= s.in_w) continue;
                            y[(static_cast<std::size_t>(ic) * s.in_h + iy) * s.in_w + ix] +=
                                v * w[((static_cast<std::size_t>(oc) * s.in_c + ic) * s.kernel + ky) *
                                          s.kernel + kx];
                        }
                    }
            }
}

void conv2d_transpose_backward(const ConvShape& s, std::span<const double> w,
                               std::span<const double> x, std::span<const double> dy,
                               std::span<double> dx, std::span<double> dw, std::span<double> db) {
    const int oh = s.out_h(), ow = s.out_w();
    // db: dy summed over each produced (in_c) channel
    for (int ic = 0; ic < s.in_c; ++ic)
        for (int iy = 0; iy < s.in_h; ++iy)
            for (int ix = 0; ix < s.in_w; ++ix)
                db[static_cast<std::size_t>(ic)] +=
                    dy[(static_cast<std::size_t>(ic) * s.in_h + iy) * s.in_w + ix];
    for (int oc = 0; oc < s.out_c; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const std::size_t xi = (static_cast<std::size_t>(oc) * oh + oy) * ow + ox;
                double acc = 0.0;
                for (int ic = 0; ic < s.in_c; ++ic)
                    for (int ky = 0; ky < s.kernel; ++ky) {
                        const int iy = oy * s.stride + ky - s.pad;
                        if (iy < 0 || iy >= s.in_h) continue;
                        for (int kx = 0; kx < s.kernel; ++kx) {
                            const int ix = ox * s.stride + kx - s.pad;
                            if (ix < 0 || ix >= s.in_w) continue;
                            const std::size_t wi =
                                ((static_cast<std::size_t>(oc) * s.in_c + ic) * s.kernel + ky) *
                                    s.kernel + kx;
                            const std::size_t yi =
                                (static_cast<std::size_t>(ic) * s.in_h + iy) * s.in_w + ix;
                            acc += dy[yi] * w[wi];
                            dw[wi] += dy[yi] * x[xi];
                        }
                    }
                dx[xi] += acc;
            }
}

// ---- policy ----

NetSpec nominal_policy_spec() { return NetSpec{{8, 64, 64, 4}, Activation::Tanh}; }
NetSpec adaptation_policy_spec() { return NetSpec{{13, 32, 4}, Activation::Linear}; }
NetSpec discriminator_spec() { return NetSpec{{12, 64, 1}, Activation::Sigmoid}; }

PolicyParams PolicyParams::init(Rng& rng) {
    PolicyParams p;
    p.phi1 = init_params(nominal_policy_spec(), rng);
    p.phi2 = init_params(adaptation_policy_spec(), rng, /*zero_output_layer=*/true);
    return p;
}

std::array<double, 4> policy_act(const PolicyParams& policy, std::span<const double> obs8,
                                 const double* psi5, const std::array<double, 4>& a_max,
                                 MlpWorkspace& ws) {
    static const NetSpec kNominal = nominal_policy_spec();
    static const NetSpec kAdapt = adaptation_policy_spec();
    std::array<double, 8> scaled{};
    for (std::size_t i = 0; i < 8; ++i) scaled[i] = obs8[i] / kObsScale[i];
    forward(kNominal, policy.phi1, scaled, ws);
    std::array<double, 4> raw{};
    for (int i = 0; i < 4; ++i) raw[static_cast<std::size_t>(i)] = ws.act.back()[static_cast<std::size_t>(i)];
    if (psi5 != nullptr) {
        std::array<double, 13> in{};
        for (std::size_t i = 0; i < 8; ++i) in[i] = scaled[i];
        for (std::size_t i = 0; i < 5; ++i) in[8 + i] = psi5[i];
        forward(kAdapt, policy.phi2, in, ws);
        for (int i = 0; i < 4; ++i) raw[static_cast<std::size_t>(i)] += ws.act.back()[static_cast<std::size_t>(i)];
    }
    std::array<double, 4> a{};
    for (int i = 0; i < 4; ++i)
        a[static_cast<std::size_t>(i)] = a_max[static_cast<std::size_t>(i)] * std::tanh(raw[static_cast<std::size_t>(i)]);
    return a;
}

void save_net(const std::string& path, const std::vector<int>& sizes, const ParamVector& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "NET v1";
    for (int s : sizes) out << " " << s;
    out << "\n";
    static_assert(sizeof(double) == 8);
    out.write(reinterpret_cast<const char*>(params.data()),
              static_cast<std::streamsize>(params.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed: " + path);
}

ParamVector load_net(const std::string& path, const std::vector<int>& expected_sizes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string header;
    std::getline(in, header);
    std::istringstream hs(header);
    std::string tag, ver;
    hs >> tag >> ver;
    if (tag != "NET" || ver != "v1") throw std::runtime_error("bad net header: " + path);
    std::vector<int> sizes;
    int v;
    while (hs >> v) sizes.push_back(v);
    if (!expected_sizes.empty() && sizes != expected_sizes)
        throw std::runtime_error("net architecture mismatch: " + path);
    // remaining bytes are the flat parameters
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % sizeof(double) != 0) throw std::runtime_error("corrupt net file: " + path);
    ParamVector params(bytes.size() / sizeof(double));
    std::memcpy(params.data(), bytes.data(), bytes.size());
    return params;
}

} // namespace tolins::approx
