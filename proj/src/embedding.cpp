#include "tolins/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "tolins/parallel.hpp"
#include "tolins/rng.hpp"

namespace tolins::embedding {

using approx::ConvShape;
using approx::ParamVector;

AeDataset generate_dataset(Family family, int n_specs, std::uint64_t seed, int jobs) {
    if (n_specs < 1) throw std::invalid_argument("generate_dataset: n_specs must be >= 1");
    AeDataset ds;
    ds.family = family;
    Rng rng(Rng::mix(seed, 0xDA7A));
    for (int i = 0; i < n_specs; ++i) {
        if (family == Family::CircleGrid) {
            const int cols = rng.uniform_int(1, 20);
            const double rp = rng.uniform(0.2, 0.45);
            const double rh = rng.uniform(rp + 0.1, 0.6);
            ds.specs.push_back(WorkpieceSpec::circle_grid(2, cols, rp, rh, 7.62, 2.54));
        } else {
            const int sides = rng.uniform_int(3, 6);
            const double rp = rng.uniform(1.0, 1.6);
            const double rh = rp * rng.uniform(1.03, 1.12);
            ds.specs.push_back(WorkpieceSpec::polygon(sides, rp, rh));
        }
    }
    ds.maps.resize(ds.specs.size());
    parallel_for(n_specs, jobs, [&](int i) {
        const auto& spec = ds.specs[static_cast<std::size_t>(i)];
        ds.maps[static_cast<std::size_t>(i)] = geometry::render_tolerance(
            spec, geometry::DefectParams::none(spec), geometry::default_window_half_width(spec));
    });
    return ds;
}

namespace {

// encoder: 1x28x28 -> conv(8, /2) -> tanh -> 8x14x14 -> conv(16, /2) -> tanh
// -> 16x7x7 -> dense -> 5
// decoder: 5 -> dense -> tanh -> 16x7x7 -> convT(8) -> tanh -> 8x14x14
// -> convT(1) -> sigmoid -> 1x28x28
const ConvShape kConv1{.in_c = 1, .in_h = 28, .in_w = 28, .out_c = 8};
const ConvShape kConv2{.in_c = 8, .in_h = 14, .in_w = 14, .out_c = 16};
constexpr int kFlat = 16 * 7 * 7;

struct Layout {
    int c1w, c1b, c2w, c2b, ew, eb, dw, db, t2w, t2b, t1w, t1b;
    int total;
};

Layout layout() {
    Layout L{};
    L.c1w = kConv1.weight_count();
    L.c1b = kConv1.out_c;
    L.c2w = kConv2.weight_count();
    L.c2b = kConv2.out_c;
    L.ew = kFlat * ToleranceAutoencoder::kLatent;
    L.eb = ToleranceAutoencoder::kLatent;
    L.dw = ToleranceAutoencoder::kLatent * kFlat;
    L.db = kFlat;
    L.t2w = kConv2.weight_count();
    L.t2b = kConv2.in_c;
    L.t1w = kConv1.weight_count();
    L.t1b = kConv1.in_c;
    L.total = L.c1w + L.c1b + L.c2w + L.c2b + L.ew + L.eb + L.dw + L.db + L.t2w + L.t2b +
              L.t1w + L.t1b;
    return L;
}

struct Slices {
    std::span<const double> c1w, c1b, c2w, c2b, ew, eb, dw, db, t2w, t2b, t1w, t1b;
};

Slices slice(const ParamVector& p) {
    const Layout L = layout();
    Slices s;
    std::size_t off = 0;
    const auto take = [&](int n) {
        std::span<const double> out(p.data() + off, static_cast<std::size_t>(n));
        off += static_cast<std::size_t>(n);
        return out;
    };
    s.c1w = take(L.c1w);
    s.c1b = take(L.c1b);
    s.c2w = take(L.c2w);
    s.c2b = take(L.c2b);
    s.ew = take(L.ew);
    s.eb = take(L.eb);
    s.dw = take(L.dw);
    s.db = take(L.db);
    s.t2w = take(L.t2w);
    s.t2b = take(L.t2b);
    s.t1w = take(L.t1w);
    s.t1b = take(L.t1b);
    return s;
}

struct MutableSlices {
    std::span<double> c1w, c1b, c2w, c2b, ew, eb, dw, db, t2w, t2b, t1w, t1b;
};

MutableSlices slice(ParamVector& p) {
    const Layout L = layout();
    MutableSlices s;
    std::size_t off = 0;
    const auto take = [&](int n) {
        std::span<double> out(p.data() + off, static_cast<std::size_t>(n));
        off += static_cast<std::size_t>(n);
        return out;
    };
    s.c1w = take(L.c1w);
    s.c1b = take(L.c1b);
    s.c2w = take(L.c2w);
    s.c2b = take(L.c2b);
    s.ew = take(L.ew);
    s.eb = take(L.eb);
    s.dw = take(L.dw);
    s.db = take(L.db);
    s.t2w = take(L.t2w);
    s.t2b = take(L.t2b);
    s.t1w = take(L.t1w);
    s.t1b = take(L.t1b);
    return s;
}

void tanh_inplace(std::span<double> v) {
    for (double& x : v) x = std::tanh(x);
}

// forward activations kept for backprop
struct AeCache {
    std::vector<double> x;        // 784 normalized input
    std::vector<double> h1;       // 8x14x14 post-tanh
    std::vector<double> h2;       // 16x7x7 post-tanh
    std::vector<double> z;        // latent 5
    std::vector<double> d0;       // kFlat post-tanh
    std::vector<double> h3;       // 8x14x14 post-tanh
    std::vector<double> y;        // 784 post-sigmoid
};

void ae_forward(const ParamVector& params, const std::vector<double>& x, AeCache& c) {
    const Slices s = slice(params);
    c.x = x;
    c.h1.assign(static_cast<std::size_t>(kConv1.out_count()), 0.0);
    approx::conv2d_forward(kConv1, s.c1w, s.c1b, c.x, c.h1);
    tanh_inplace(c.h1);
    c.h2.assign(static_cast<std::size_t>(kConv2.out_count()), 0.0);
    approx::conv2d_forward(kConv2, s.c2w, s.c2b, c.h1, c.h2);
    tanh_inplace(c.h2);
    c.z.assign(ToleranceAutoencoder::kLatent, 0.0);
    for (int o = 0; o < ToleranceAutoencoder::kLatent; ++o) {
        double acc = s.eb[static_cast<std::size_t>(o)];
        for (int i = 0; i < kFlat; ++i)
            acc += s.ew[static_cast<std::size_t>(o) * kFlat + i] * c.h2[static_cast<std::size_t>(i)];
        c.z[static_cast<std::size_t>(o)] = acc;
    }
    c.d0.assign(static_cast<std::size_t>(kFlat), 0.0);
    for (int o = 0; o < kFlat; ++o) {
        double acc = s.db[static_cast<std::size_t>(o)];
        for (int i = 0; i < ToleranceAutoencoder::kLatent; ++i)
            acc += s.dw[static_cast<std::size_t>(o) * ToleranceAutoencoder::kLatent + i] *
                   c.z[static_cast<std::size_t>(i)];
        c.d0[static_cast<std::size_t>(o)] = std::tanh(acc);
    }
    c.h3.assign(static_cast<std::size_t>(kConv2.in_count()), 0.0);
    approx::conv2d_transpose_forward(kConv2, s.t2w, s.t2b, c.d0, c.h3);
    tanh_inplace(c.h3);
    c.y.assign(static_cast<std::size_t>(kConv1.in_count()), 0.0);
    approx::conv2d_transpose_forward(kConv1, s.t1w, s.t1b, c.h3, c.y);
    for (double& v : c.y) v = 1.0 / (1.0 + std::exp(-v));
}

// dLoss/dy on input, parameter grads accumulated
void ae_backward(const ParamVector& params, const AeCache& c, std::vector<double> dy,
                 ParamVector& grad) {
    const Slices s = slice(params);
    MutableSlices g = slice(grad);

    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= c.y[i] * (1.0 - c.y[i]);  // sigmoid'
    std::vector<double> dh3(c.h3.size(), 0.0);
    approx::conv2d_transpose_backward(kConv1, s.t1w, c.h3, dy, dh3, g.t1w, g.t1b);
    for (std::size_t i = 0; i < dh3.size(); ++i) dh3[i] *= 1.0 - c.h3[i] * c.h3[i];
    std::vector<double> dd0(c.d0.size(), 0.0);
    approx::conv2d_transpose_backward(kConv2, s.t2w, c.d0, dh3, dd0, g.t2w, g.t2b);
    for (std::size_t i = 0; i < dd0.size(); ++i) dd0[i] *= 1.0 - c.d0[i] * c.d0[i];

    std::vector<double> dz(ToleranceAutoencoder::kLatent, 0.0);
    for (int o = 0; o < kFlat; ++o) {
        const double dv = dd0[static_cast<std::size_t>(o)];
        g.db[static_cast<std::size_t>(o)] += dv;
        for (int i = 0; i < ToleranceAutoencoder::kLatent; ++i) {
            g.dw[static_cast<std::size_t>(o) * ToleranceAutoencoder::kLatent + i] +=
                dv * c.z[static_cast<std::size_t>(i)];
            dz[static_cast<std::size_t>(i)] +=
                dv * s.dw[static_cast<std::size_t>(o) * ToleranceAutoencoder::kLatent + i];
        }
    }
    std::vector<double> dh2(c.h2.size(), 0.0);
    for (int o = 0; o < ToleranceAutoencoder::kLatent; ++o) {
        const double dv = dz[static_cast<std::size_t>(o)];
        g.eb[static_cast<std::size_t>(o)] += dv;
        for (int i = 0; i < kFlat; ++i) {
            g.ew[static_cast<std::size_t>(o) * kFlat + i] += dv * c.h2[static_cast<std::size_t>(i)];
            dh2[static_cast<std::size_t>(i)] += dv * s.ew[static_cast<std::size_t>(o) * kFlat + i];
        }
    }
    for (std::size_t i = 0; i < dh2.size(); ++i) dh2[i] *= 1.0 - c.h2[i] * c.h2[i];
    std::vector<double> dh1(c.h1.size(), 0.0);
    approx::conv2d_backward(kConv2, s.c2w, c.h1, dh2, dh1, g.c2w, g.c2b);
    for (std::size_t i = 0; i < dh1.size(); ++i) dh1[i] *= 1.0 - c.h1[i] * c.h1[i];
    std::vector<double> dx(c.x.size(), 0.0);
    approx::conv2d_backward(kConv1, s.c1w, c.x, dh1, dx, g.c1w, g.c1b);
}

std::vector<double> normalized_input(const ToleranceMap& map, double scale) {
    std::vector<double> x(map.grid.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = map.grid[i] / scale;
    return x;
}

} // namespace

ToleranceAutoencoder::ToleranceAutoencoder() {
    const Layout L = layout();
    params_.assign(static_cast<std::size_t>(L.total), 0.0);
}

int ToleranceAutoencoder::param_count() const { return layout().total; }

Embedding ToleranceAutoencoder::encode_map(const ToleranceMap& map) const {
    AeCache c;
    ae_forward(params_, normalized_input(map, value_scale), c);
    Embedding e;
    for (int i = 0; i < kLatent; ++i) e.psi[static_cast<std::size_t>(i)] = c.z[static_cast<std::size_t>(i)];
    return e;
}

std::vector<double> ToleranceAutoencoder::reconstruct(const ToleranceMap& map) const {
    AeCache c;
    ae_forward(params_, normalized_input(map, value_scale), c);
    return c.y;
}

double ToleranceAutoencoder::batch_gradient(const std::vector<const ToleranceMap*>& batch,
                                            ParamVector& grad) const {
    grad.assign(params_.size(), 0.0);
    double loss = 0.0;
    AeCache c;
    const double denom = static_cast<double>(batch.size()) * 784.0;
    for (const ToleranceMap* map : batch) {
        const auto x = normalized_input(*map, value_scale);
        ae_forward(params_, x, c);
        std::vector<double> dy(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = c.y[i] - x[i];
            loss += d * d / denom;
            dy[i] = 2.0 * d / denom;
        }
        ae_backward(params_, c, std::move(dy), grad);
    }
    return loss;
}

double ToleranceAutoencoder::mean_abs_error(const std::vector<const ToleranceMap*>& batch) const {
    double mae = 0.0;
    AeCache c;
    for (const ToleranceMap* map : batch) {
        const auto x = normalized_input(*map, value_scale);
        ae_forward(params_, x, c);
        for (std::size_t i = 0; i < x.size(); ++i) mae += std::abs(c.y[i] - x[i]);
    }
    return mae / (static_cast<double>(batch.size()) * 784.0);
}

void ToleranceAutoencoder::save(const std::string& path) const {
    // header carries the architecture as integers: family, channels, latent
    std::vector<int> sizes{family_ == Family::CircleGrid ? 0 : 1, kConv1.out_c, kConv2.out_c,
                           kLatent, param_count()};
    approx::save_net(path, sizes, params_);
}

ToleranceAutoencoder ToleranceAutoencoder::load(const std::string& path) {
    ToleranceAutoencoder ae;
    for (int fam : {0, 1}) {
        try {
            std::vector<int> sizes{fam, kConv1.out_c, kConv2.out_c, kLatent, ae.param_count()};
            ae.params_ = approx::load_net(path, sizes);
            ae.family_ = fam == 0 ? Family::CircleGrid : Family::RegularPolygon;
            if (static_cast<int>(ae.params_.size()) != ae.param_count())
                throw std::runtime_error("autoencoder parameter count mismatch: " + path);
            return ae;
        } catch (const std::runtime_error&) {
            if (fam == 1) throw;
        }
    }
    throw std::runtime_error("unreachable");
}

AeTrainResult train_autoencoder(const AeDataset& dataset, const AeTrainConfig& cfg) {
    if (dataset.size() < 20)
        throw std::invalid_argument("train_autoencoder: need at least 20 maps");
    Rng rng(Rng::mix(cfg.seed, 0xAE));

    AeTrainResult out;
    out.ae.family_ = dataset.family;
    // fan-in scaled uniform init per block
    {
        MutableSlices g = slice(out.ae.params());
        const auto init = [&](std::span<double> w, int fan_in) {
            const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& v : w) v = rng.uniform(-s, s);
        };
        init(g.c1w, kConv1.in_c * 9);
        init(g.c2w, kConv2.in_c * 9);
        init(g.ew, kFlat);
        init(g.dw, ToleranceAutoencoder::kLatent);
        init(g.t2w, kConv2.out_c * 9);
        init(g.t1w, kConv1.out_c * 9);
    }

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1],
                  order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    const std::size_t n_val = std::max<std::size_t>(
        2, static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(dataset.size())));
    const std::size_t n_train = dataset.size() - n_val;
    std::vector<const ToleranceMap*> train, val;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        (i < n_train ? train : val).push_back(&dataset.maps[order[i]]);

    approx::Adam adam(out.ae.params().size(), {.lr = cfg.lr});
    ParamVector grad;
    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    ParamVector best = out.ae.params();
    double best_val = out.ae.mean_abs_error(val);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1],
                      idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        for (std::size_t start = 0; start < train.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(train.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const ToleranceMap*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(train[idx[i]]);
            const double loss = out.ae.batch_gradient(batch, grad);
            if (!std::isfinite(loss)) throw std::runtime_error("autoencoder training diverged");
            adam.step(out.ae.params(), grad);
        }
        const double v = out.ae.mean_abs_error(val);
        if (v < best_val) {
            best_val = v;
            best = out.ae.params();
        }
    }
    out.ae.params() = std::move(best);

    // Standardize the latent over the training maps so downstream consumers
    // see O(1) embeddings; the affine change is folded into the encoder and
    // decoder dense layers, leaving reconstructions untouched.
    {
        constexpr int kL = ToleranceAutoencoder::kLatent;
        std::vector<double> mu(kL, 0.0), sd(kL, 0.0);
        std::vector<std::array<double, kL>> zs;
        zs.reserve(train.size());
        for (const ToleranceMap* m : train) {
            const Embedding e = out.ae.encode_map(*m);
            zs.push_back(e.psi);
            for (int i = 0; i < kL; ++i) mu[static_cast<std::size_t>(i)] += e.psi[static_cast<std::size_t>(i)];
        }
        for (double& v : mu) v /= static_cast<double>(zs.size());
        for (const auto& z : zs)
            for (int i = 0; i < kL; ++i) {
                const double d = z[static_cast<std::size_t>(i)] - mu[static_cast<std::size_t>(i)];
                sd[static_cast<std::size_t>(i)] += d * d;
            }
        for (double& v : sd) v = std::max(1e-9, std::sqrt(v / static_cast<double>(zs.size())));
        MutableSlices g = slice(out.ae.params());
        for (int o = 0; o < kL; ++o) {
            for (int i = 0; i < kFlat; ++i)
                g.ew[static_cast<std::size_t>(o) * kFlat + i] /= sd[static_cast<std::size_t>(o)];
            g.eb[static_cast<std::size_t>(o)] =
                (g.eb[static_cast<std::size_t>(o)] - mu[static_cast<std::size_t>(o)]) /
                sd[static_cast<std::size_t>(o)];
        }
        for (int f = 0; f < kFlat; ++f) {
            double shift = 0.0;
            for (int o = 0; o < kL; ++o) {
                double& w = g.dw[static_cast<std::size_t>(f) * kL + o];
                shift += w * mu[static_cast<std::size_t>(o)];
                w *= sd[static_cast<std::size_t>(o)];
            }
            g.db[static_cast<std::size_t>(f)] += shift;
        }
    }
    out.heldout_mae = out.ae.mean_abs_error(val);
    double rmse = 0.0;
    AeCache c;
    for (const ToleranceMap* m : val) {
        const auto x = normalized_input(*m, out.ae.value_scale);
        ae_forward(out.ae.params(), x, c);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = c.y[i] - x[i];
            rmse += d * d;
        }
    }
    out.heldout_rmse = std::sqrt(rmse / (static_cast<double>(val.size()) * 784.0));
    return out;
}

Embedding encode(const ToleranceAutoencoder& ae, const WorkpieceSpec& spec) {
    if (spec.family != ae.family())
        throw std::invalid_argument("encode: workpiece family does not match the encoder");
    const auto map = geometry::render_tolerance(spec, geometry::DefectParams::none(spec),
                                                geometry::default_window_half_width(spec));
    return ae.encode_map(map);
}

} // namespace tolins::embedding
