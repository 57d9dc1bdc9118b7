#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tolins/rng.hpp"

namespace tolins::approx {

enum class Activation { Tanh, Sigmoid, Linear };

// Dense feedforward net description. Hidden layers use tanh; the output layer
// uses `output`. Parameters are stored flat, per layer: weight matrix
// (out x in, row-major) followed by the bias vector.
struct NetSpec {
    std::vector<int> sizes;
    Activation output = Activation::Linear;

    int num_layers() const { return static_cast<int>(sizes.size()) - 1; }
    int input_dim() const { return sizes.front(); }
    int output_dim() const { return sizes.back(); }
    int param_count() const;
    void validate() const;
};

using ParamVector = std::vector<double>;

struct LayerParams {
    std::vector<double> weights;  // out x in, row-major
    std::vector<double> bias;     // out
};

std::vector<LayerParams> unflatten(const NetSpec& spec, std::span<const double> params);
ParamVector flatten(const NetSpec& spec, const std::vector<LayerParams>& layers);

// fan-in scaled uniform init; zero_output_layer zeroes the last layer's
// weights and biases
ParamVector init_params(const NetSpec& spec, Rng& rng, bool zero_output_layer = false);

// Scratch space reused across forward/backward calls to avoid allocation in
// rollout loops.
struct MlpWorkspace {
    std::vector<std::vector<double>> act;    // act[0] = input, act[L] = output
    std::vector<std::vector<double>> delta;  // per-layer backprop buffers
};

void forward(const NetSpec& spec, std::span<const double> params, std::span<const double> input,
             MlpWorkspace& ws);
std::vector<double> forward(const NetSpec& spec, std::span<const double> params,
                            std::span<const double> input);

// Backpropagates dLoss/dOutput through the cached activations in `ws`,
// accumulating parameter gradients into `grad` (same layout as params).
void backward(const NetSpec& spec, std::span<const double> params, const MlpWorkspace& ws,
              std::span<const double> dloss_doutput, std::span<double> grad);

// Batch loss callback: receives all outputs, must return the loss value and
// fill grad_outputs (resized by the caller) with dLoss/dOutput per sample.
using BatchLossFn = std::function<double(const std::vector<std::vector<double>>& outputs,
                                         std::vector<std::vector<double>>& grad_outputs)>;

// Exact reverse-mode gradient of the batch loss; returns the loss value.
double gradient(const NetSpec& spec, std::span<const double> params,
                const std::vector<std::vector<double>>& inputs, const BatchLossFn& loss,
                ParamVector& grad);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Gradient descent with per-parameter adaptive step size.
class Adam {
public:
    Adam(std::size_t n, AdamConfig cfg = {});
    void step(ParamVector& params, const ParamVector& grad);
    void reset();

private:
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    long t_ = 0;
};

// ---- convolution primitives (for the tolerance autoencoder) ----

struct ConvShape {
    int in_c = 1, in_h = 0, in_w = 0;
    int out_c = 1;
    int kernel = 3, stride = 2, pad = 1;

    int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
    int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
    int weight_count() const { return out_c * in_c * kernel * kernel; }
    int in_count() const { return in_c * in_h * in_w; }
    int out_count() const { return out_c * out_h() * out_w(); }
};

// y[out] = conv(x[in]); bias per output channel
void conv2d_forward(const ConvShape& s, std::span<const double> w, std::span<const double> b,
                    std::span<const double> x, std::span<double> y);
// accumulates into dx/dw/db (caller zeroes as needed)
void conv2d_backward(const ConvShape& s, std::span<const double> w, std::span<const double> x,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db);

// Transposed convolution with the same shape: maps the conv's output grid
// back to its input grid (y has in_* dims, x has out_* dims). Bias is per
// produced channel, i.e. in_c entries.
void conv2d_transpose_forward(const ConvShape& s, std::span<const double> w,
                              std::span<const double> b, std::span<const double> x,
                              std::span<double> y);
void conv2d_transpose_backward(const ConvShape& s, std::span<const double> w,
                               std::span<const double> x, std::span<const double> dy,
                               std::span<double> dx, std::span<double> dw, std::span<double> db);

// ---- policy parameterization ----

// Fixed per-component scaling applied to the shifted measurement before any
// network sees it; brings millimeters, radians and contact flags to a common
// order of magnitude.
inline constexpr std::array<double, 8> kObsScale{2.0, 2.0, 0.2, 8.0, 1.0, 1.0, 1.0, 1.0};

// 8-D shifted measurement in, 4 action channels out.
NetSpec nominal_policy_spec();
// [shifted measurement, 5-D task embedding] in; final layer starts at zero so
// the composite initially reproduces the nominal policy.
NetSpec adaptation_policy_spec();
// (shifted measurement, normalized action) in, expert-probability out.
NetSpec discriminator_spec();

struct PolicyParams {
    ParamVector phi1;  // nominal policy
    ParamVector phi2;  // tolerance-guided adaptation

    static PolicyParams init(Rng& rng);
};

// raw = nominal(obs) [+ adaptation(obs, psi)]; action_i = a_max_i * tanh(raw_i)
std::array<double, 4> policy_act(const PolicyParams& policy, std::span<const double> obs8,
                                 const double* psi5, const std::array<double, 4>& a_max,
                                 MlpWorkspace& ws);

// checkpoint io: "NET v1 <sizes...>" header line, then little-endian doubles
void save_net(const std::string& path, const std::vector<int>& sizes, const ParamVector& params);
ParamVector load_net(const std::string& path, const std::vector<int>& expected_sizes);

} // namespace tolins::approx
