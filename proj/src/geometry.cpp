#include "tolins/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace tolins::geometry {

void WorkpieceSpec::validate() const {
    if (rows < 1 || cols < 1) throw std::invalid_argument("workpiece: rows/cols must be >= 1");
    if (family == Family::CircleGrid) {
        if (pin_radius <= 0.0 || hole_radius <= 0.0)
            throw std::invalid_argument("workpiece: radii must be positive");
        if (pin_radius >= hole_radius)
            throw std::invalid_argument("workpiece: pin radius must be below hole radius");
        if (pin_count() > 1 && (row_interval <= 0.0 || col_interval <= 0.0))
            throw std::invalid_argument("workpiece: grid intervals must be positive");
    } else {
        if (pin_circumradius <= 0.0 || hole_circumradius <= 0.0)
            throw std::invalid_argument("workpiece: circumradii must be positive");
        if (pin_circumradius >= hole_circumradius)
            throw std::invalid_argument("workpiece: pin circumradius must be below hole circumradius");
        if (polygon_sides < 3 || polygon_sides > 6)
            throw std::invalid_argument("workpiece: polygon sides must be in {3,4,5,6}");
        if (rows != 1 || cols != 1)
            throw std::invalid_argument("workpiece: polygon family is single pin only");
    }
}

WorkpieceSpec WorkpieceSpec::circle_grid(int rows, int cols, double pin_r, double hole_r,
                                         double row_iv, double col_iv) {
    WorkpieceSpec s;
    s.family = Family::CircleGrid;
    s.rows = rows;
    s.cols = cols;
    s.pin_radius = pin_r;
    s.hole_radius = hole_r;
    s.row_interval = row_iv;
    s.col_interval = col_iv;
    s.validate();
    return s;
}

WorkpieceSpec WorkpieceSpec::polygon(int sides, double pin_cr, double hole_cr) {
    WorkpieceSpec s;
    s.family = Family::RegularPolygon;
    s.rows = 1;
    s.cols = 1;
    s.polygon_sides = sides;
    s.pin_circumradius = pin_cr;
    s.hole_circumradius = hole_cr;
    s.validate();
    return s;
}

std::string WorkpieceSpec::describe() const {
    std::ostringstream os;
    if (family == Family::CircleGrid) {
        os << "circle " << rows << "x" << cols << " rp=" << pin_radius << " rh=" << hole_radius
           << " riv=" << row_interval << " civ=" << col_interval;
    } else {
        os << "polygon k=" << polygon_sides << " rp=" << pin_circumradius
           << " rh=" << hole_circumradius;
    }
    return os.str();
}

std::vector<Vec2> hole_positions(const WorkpieceSpec& spec) {
    std::vector<Vec2> out;
    out.reserve(static_cast<std::size_t>(spec.pin_count()));
    for (int i = 0; i < spec.rows; ++i) {
        const double y = (i - 0.5 * (spec.rows - 1)) * spec.row_interval;
        for (int j = 0; j < spec.cols; ++j) {
            const double x = (j - 0.5 * (spec.cols - 1)) * spec.col_interval;
            out.push_back({x, y});
        }
    }
    return out;
}

std::vector<Vec2> pin_positions(const WorkpieceSpec& spec, const DefectParams& defects) {
    if (static_cast<int>(defects.offsets.size()) != spec.pin_count())
        throw std::invalid_argument("defects: offset count does not match pin count");
    std::vector<Vec2> out = hole_positions(spec);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + defects.offsets[i];
    return out;
}

namespace {

// regular polygon vertices, counter-clockwise, first vertex at angle 0
std::vector<Vec2> polygon_vertices(int sides, double circumradius, Vec2 center) {
    std::vector<Vec2> v(static_cast<std::size_t>(sides));
    for (int i = 0; i < sides; ++i) {
        const double a = 2.0 * M_PI * i / sides;
        v[static_cast<std::size_t>(i)] = {center.x + circumradius * std::cos(a),
                                          center.y + circumradius * std::sin(a)};
    }
    return v;
}

// smallest inward distance of `p` to the edges of a CCW convex polygon
// (negative when outside)
double polygon_inner_margin(const std::vector<Vec2>& poly, Vec2 p) {
    double m = std::numeric_limits<double>::infinity();
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 a = poly[i];
        const Vec2 b = poly[(i + 1) % n];
        const double ex = b.x - a.x, ey = b.y - a.y;
        const double len = std::sqrt(ex * ex + ey * ey);
        const double cross = ex * (p.y - a.y) - ey * (p.x - a.x);
        m = std::min(m, cross / len);
    }
    return m;
}

bool point_in_polygon(const std::vector<Vec2>& poly, Vec2 p) {
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 a = poly[i];
        const Vec2 b = poly[(i + 1) % n];
        const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if (cross < 0.0) return false;
    }
    return true;
}

} // namespace

double containment_margin(const WorkpieceSpec& spec, const DefectParams& defects,
                          const PlanarPose& pose) {
    const double c = std::cos(pose.theta);
    const double s = std::sin(pose.theta);
    const std::vector<Vec2> pins = pin_positions(spec, defects);
    const std::vector<Vec2> holes = hole_positions(spec);

    double margin = std::numeric_limits<double>::infinity();
    if (spec.family == Family::CircleGrid) {
        const double clear = spec.clearance();
        for (std::size_t i = 0; i < pins.size(); ++i) {
            const Vec2 p = pins[i];
            const double qx = c * p.x - s * p.y + pose.x;
            const double qy = s * p.x + c * p.y + pose.y;
            const double dx = qx - holes[i].x, dy = qy - holes[i].y;
            margin = std::min(margin, clear - std::sqrt(dx * dx + dy * dy));
        }
        return margin;
    }

    // Polygon family: every vertex of the rotated-then-translated pin polygon
    // must lie inside the axis-aligned hole polygon. Pin and hole share the
    // same base orientation (first vertex at angle 0).
    const std::vector<Vec2> hole = polygon_vertices(spec.polygon_sides, spec.hole_circumradius,
                                                    holes[0]);
    const std::vector<Vec2> pin = polygon_vertices(spec.polygon_sides, spec.pin_circumradius,
                                                   pins[0]);
    for (const Vec2& v : pin) {
        const Vec2 w{c * v.x - s * v.y + pose.x, s * v.x + c * v.y + pose.y};
        margin = std::min(margin, polygon_inner_margin(hole, w));
    }
    return margin;
}

double theta_sup(const WorkpieceSpec& spec, const DefectParams& defects, double x, double y,
                 const ThetaScanConfig& scan) {
    const auto feasible = [&](double theta) {
        return contains(spec, defects, PlanarPose{x, y, theta});
    };
    if (!feasible(0.0)) return 0.0;
    const double dtheta = scan.theta_max / (scan.coarse_points - 1);
    double lo = 0.0;
    for (int g = 1; g < scan.coarse_points; ++g) {
        const double theta = g * dtheta;
        if (!feasible(theta)) {
            double hi = theta;
            while (hi - lo > scan.bisect_tol) {
                const double mid = 0.5 * (lo + hi);
                (feasible(mid) ? lo : hi) = mid;
            }
            return lo;
        }
        lo = theta;
    }
    return scan.theta_max;
}

double default_window_half_width(const WorkpieceSpec& spec) {
    return spec.family == Family::CircleGrid ? 1.0 : 0.5;
}

ToleranceMap render_tolerance(const WorkpieceSpec& spec, const DefectParams& defects,
                              double window_half_width, const ThetaScanConfig& scan) {
    if (window_half_width <= 0.0)
        throw std::invalid_argument("render_tolerance: window must be positive");
    ToleranceMap map;
    map.window_half_width = window_half_width;
    map.spec_id = spec.describe();
    map.grid.assign(ToleranceMap::kResolution * ToleranceMap::kResolution, 0.0);
    for (int i = 0; i < ToleranceMap::kResolution; ++i)
        for (int j = 0; j < ToleranceMap::kResolution; ++j)
            map.at(i, j) = theta_sup(spec, defects, map.cell_x(j), map.cell_y(i), scan);
    return map;
}

double ToleranceMap::max_value() const {
    double m = 0.0;
    for (double v : grid) m = std::max(m, v);
    return m;
}

void ToleranceMap::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "TOLMAP v1 " << kResolution << " " << kResolution << " ";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", window_half_width);
    out << buf << "\n";
    for (int i = 0; i < kResolution; ++i) {
        for (int j = 0; j < kResolution; ++j) {
            std::snprintf(buf, sizeof(buf), "%.6f", at(i, j));
            out << buf << (j + 1 == kResolution ? "" : " ");
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

ToleranceMap ToleranceMap::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string tag, ver;
    int rows = 0, cols = 0;
    ToleranceMap map;
    in >> tag >> ver >> rows >> cols >> map.window_half_width;
    if (tag != "TOLMAP" || ver != "v1") throw std::runtime_error("bad tolerance map header: " + path);
    if (rows != kResolution || cols != kResolution)
        throw std::runtime_error("unsupported tolerance map shape: " + path);
    map.grid.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    for (double& v : map.grid) {
        if (!(in >> v)) throw std::runtime_error("truncated tolerance map: " + path);
        if (v < 0.0) throw std::runtime_error("negative tolerance entry: " + path);
    }
    return map;
}

bool mc_contains_oracle(const WorkpieceSpec& spec, const DefectParams& defects,
                        const PlanarPose& pose, int n_samples, Rng& rng) {
    if (n_samples < 1) throw std::invalid_argument("mc_contains_oracle: n_samples must be >= 1");
    const double c = std::cos(pose.theta);
    const double s = std::sin(pose.theta);
    const std::vector<Vec2> pins = pin_positions(spec, defects);
    const std::vector<Vec2> holes = hole_positions(spec);

    if (spec.family == Family::CircleGrid) {
        const double rh2 = spec.hole_radius * spec.hole_radius;
        for (std::size_t i = 0; i < pins.size(); ++i) {
            for (int k = 0; k < n_samples; ++k) {
                const double r = spec.pin_radius * std::sqrt(rng.uniform());
                const double a = 2.0 * M_PI * rng.uniform();
                const double px = pins[i].x + r * std::cos(a);
                const double py = pins[i].y + r * std::sin(a);
                const double qx = c * px - s * py + pose.x - holes[i].x;
                const double qy = s * px + c * py + pose.y - holes[i].y;
                if (qx * qx + qy * qy > rh2) return false;
            }
        }
        return true;
    }

    const std::vector<Vec2> hole = polygon_vertices(spec.polygon_sides, spec.hole_circumradius,
                                                    holes[0]);
    const std::vector<Vec2> pin = polygon_vertices(spec.polygon_sides, spec.pin_circumradius,
                                                   pins[0]);
    const Vec2 centroid = pins[0];
    const int sides = spec.polygon_sides;
    for (int k = 0; k < n_samples; ++k) {
        // regular polygon: fan triangles from the center have equal area
        const int t = rng.uniform_int(0, sides - 1);
        const Vec2 a = centroid;
        const Vec2 b = pin[static_cast<std::size_t>(t)];
        const Vec2 d = pin[static_cast<std::size_t>((t + 1) % sides)];
        const double su = std::sqrt(rng.uniform());
        const double v = rng.uniform();
        const Vec2 p = (1.0 - su) * a + (su * (1.0 - v)) * b + (su * v) * d;
        const Vec2 w{c * p.x - s * p.y + pose.x, s * p.x + c * p.y + pose.y};
        if (!point_in_polygon(hole, w)) return false;
    }
    return true;
}

} // namespace tolins::geometry
