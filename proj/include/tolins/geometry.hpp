#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tolins/rng.hpp"

namespace tolins::geometry {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }

enum class Family { CircleGrid, RegularPolygon };

// Nominal workpiece description. Circle grids have rows*cols pins laid out on
// a grid centered at the origin (columns along x, rows along y); the polygon
// family is a single regular-polygon pin in a matching hole.
struct WorkpieceSpec {
    Family family = Family::CircleGrid;
    int rows = 1;
    int cols = 1;
    double pin_radius = 0.3;        // mm, circle family
    double hole_radius = 0.5;       // mm, circle family
    double pin_circumradius = 1.5;  // mm, polygon family
    double hole_circumradius = 1.65;
    int polygon_sides = 4;
    double row_interval = 7.62;  // mm between rows (y)
    double col_interval = 2.54;  // mm between columns (x)

    int pin_count() const { return rows * cols; }
    // radial clearance for the circle family
    double clearance() const { return hole_radius - pin_radius; }
    void validate() const;  // throws std::invalid_argument

    static WorkpieceSpec circle_grid(int rows, int cols, double pin_r, double hole_r,
                                     double row_iv, double col_iv);
    static WorkpieceSpec polygon(int sides, double pin_cr, double hole_cr);

    std::string describe() const;
};

// Per-pin horizontal translation offsets; all-zero offsets recover the
// nominal workpiece.
struct DefectParams {
    std::vector<Vec2> offsets;

    static DefectParams none(const WorkpieceSpec& spec) {
        return DefectParams{std::vector<Vec2>(static_cast<std::size_t>(spec.pin_count()))};
    }
    bool is_nominal() const {
        for (const auto& o : offsets)
            if (o.x != 0.0 || o.y != 0.0) return false;
        return true;
    }
};

struct PlanarPose {
    double x = 0.0;      // mm
    double y = 0.0;      // mm
    double theta = 0.0;  // rad
};

struct ThetaScanConfig {
    double theta_max = 0.6;  // rad, upper scan limit
    int coarse_points = 64;
    double bisect_tol = 1e-4;  // rad
};

// 28x28 raster of the max feasible rotation over a square (x, y) window.
// Cell (i, j) is centered at (cell_x(j), cell_y(i)); row-major storage,
// row 0 at y = -w + half a cell.
struct ToleranceMap {
    static constexpr int kResolution = 28;

    std::vector<double> grid;  // row-major, kResolution^2 entries, rad
    double window_half_width = 1.0;
    std::string spec_id;

    double at(int i, int j) const { return grid[static_cast<std::size_t>(i) * kResolution + j]; }
    double& at(int i, int j) { return grid[static_cast<std::size_t>(i) * kResolution + j]; }
    double cell_x(int j) const {
        return -window_half_width + (j + 0.5) * (2.0 * window_half_width / kResolution);
    }
    double cell_y(int i) const {
        return -window_half_width + (i + 0.5) * (2.0 * window_half_width / kResolution);
    }
    double max_value() const;

    void save(const std::string& path) const;
    static ToleranceMap load(const std::string& path);
};

// Hole-frame pin centers: nominal grid positions plus per-pin offsets.
// Throws if the offset count does not match the pin count.
std::vector<Vec2> pin_positions(const WorkpieceSpec& spec, const DefectParams& defects);

// Nominal hole centers (the undefected grid).
std::vector<Vec2> hole_positions(const WorkpieceSpec& spec);

// Signed containment margin of the workpiece at `pose`: smallest clearance to
// a hole boundary over all pins (negative when some pin sticks out). The pose
// rotates the pin pattern by theta about the workpiece origin and then
// translates it by (x, y).
double containment_margin(const WorkpieceSpec& spec, const DefectParams& defects,
                          const PlanarPose& pose);

// Whether every pin cross-section fits inside its hole. Boundary contact
// counts as contained.
inline bool contains(const WorkpieceSpec& spec, const DefectParams& defects,
                     const PlanarPose& pose) {
    return containment_margin(spec, defects, pose) >= 0.0;
}

// Largest rotation of the component connected to theta = 0 that keeps the
// workpiece contained at (x, y): coarse scan up to theta_max followed by
// bisection. Returns 0 when containment already fails at theta = 0.
double theta_sup(const WorkpieceSpec& spec, const DefectParams& defects, double x, double y,
                 const ThetaScanConfig& scan = {});

double default_window_half_width(const WorkpieceSpec& spec);

ToleranceMap render_tolerance(const WorkpieceSpec& spec, const DefectParams& defects,
                              double window_half_width, const ThetaScanConfig& scan = {});

// Monte-Carlo containment check: samples points uniformly inside each
// transformed pin cross-section and tests hole membership pointwise.
// Verification-only; poses exactly on the boundary may go either way.
bool mc_contains_oracle(const WorkpieceSpec& spec, const DefectParams& defects,
                        const PlanarPose& pose, int n_samples, Rng& rng);

} // namespace tolins::geometry
