#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tolins/approx.hpp"
#include "tolins/geometry.hpp"

namespace tolins::embedding {

using geometry::Family;
using geometry::ToleranceMap;
using geometry::WorkpieceSpec;

struct AeDataset {
    Family family = Family::CircleGrid;
    std::vector<WorkpieceSpec> specs;
    std::vector<ToleranceMap> maps;

    std::size_t size() const { return maps.size(); }
};

struct Embedding {
    std::array<double, 5> psi{};
};

// Random nominal workpieces rendered to tolerance maps. Circle family: two
// rows, 1..20 columns, pin/hole radii drawn with positive clearance. Polygon
// family: 3..6 sides, scaled circumradii.
AeDataset generate_dataset(Family family, int n_specs, std::uint64_t seed, int jobs = 1);

// Tolerance autoencoder: 28x28 -> conv(8) -> conv(16) -> dense 5 -> mirrored
// decoder. Values are normalized by the rotation scan limit before encoding.
class ToleranceAutoencoder {
public:
    static constexpr int kLatent = 5;

    ToleranceAutoencoder();

    Family family() const { return family_; }
    int param_count() const;
    const approx::ParamVector& params() const { return params_; }
    approx::ParamVector& params() { return params_; }

    Embedding encode_map(const ToleranceMap& map) const;
    std::vector<double> reconstruct(const ToleranceMap& map) const;  // 28x28, normalized units

    // mean squared reconstruction error over the batch plus its parameter
    // gradient (accumulated into grad)
    double batch_gradient(const std::vector<const ToleranceMap*>& batch,
                          approx::ParamVector& grad) const;
    double mean_abs_error(const std::vector<const ToleranceMap*>& batch) const;

    void save(const std::string& path) const;
    static ToleranceAutoencoder load(const std::string& path);

    Family family_ = Family::CircleGrid;
    double value_scale = 0.6;  // theta normalization, matches the scan limit

private:
    approx::ParamVector params_;
};

struct AeTrainConfig {
    int epochs = 300;
    int batch_size = 16;
    double lr = 1e-3;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
};

struct AeTrainResult {
    ToleranceAutoencoder ae;
    double heldout_mae = 0.0;   // per-pixel mean absolute error, normalized
    double heldout_rmse = 0.0;
};

AeTrainResult train_autoencoder(const AeDataset& dataset, const AeTrainConfig& cfg);

// render_tolerance followed by the encoder; throws on family mismatch.
Embedding encode(const ToleranceAutoencoder& ae, const WorkpieceSpec& spec);

} // namespace tolins::embedding
