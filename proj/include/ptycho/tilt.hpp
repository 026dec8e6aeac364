#pragma once

// Reflection-geometry data preparation: dark subtraction, threshold masking,
// zeroth-order centering, and resampling of tilted-detector patterns onto the
// regular sample-conjugate frequency grid so transmission and reflection data
// feed the same forward model afterward.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ptycho/model.hpp"
#include "ptycho/parallel.hpp"

namespace ptycho {

struct TiltGeometry {
    double theta = 0;    // incidence angle from the surface normal [rad]
    double distance = 0; // sample-to-camera distance along the specular beam [m]
    Grid det_grid;
    int tilt_axis = 0; // 0: plane of incidence along x (columns), 1: along y (rows)
};

struct ResampleMap {
    Grid in_grid;
    Grid out_grid; // effective perpendicular-camera grid: tilt-axis pitch scaled by cos(theta)
    RArr<double> src_row; // fractional detector pixel per output pixel
    RArr<double> src_col;
    RArr<double> weight; // |det J| of the inverse map, energy-preserving
    MaskArr valid;       // 1 where the ray exists and lands inside the detector
};

inline void validate_geometry(const TiltGeometry& g) {
    if (!(g.theta >= 0.0) || !(g.theta < M_PI / 2))
        throw GeometryError("tilt angle must lie in [0, pi/2)");
    if (!(g.distance > 0)) throw GeometryError("camera distance must be positive");
    if (g.det_grid.nx <= 0 || g.det_grid.ny <= 0 || !(g.det_grid.px > 0) || !(g.det_grid.py > 0))
        throw GeometryError("detector grid must be fully specified");
    if (g.tilt_axis != 0 && g.tilt_axis != 1)
        throw GeometryError("tilt axis must be 0 (x) or 1 (y)");
}

// Detector pixel -> sample-plane frequency, exact in the tilt angle and
// paraxial in the detector coordinates (the far-field propagator's frequency
// convention). With the in-plane direction cosine a_u = u/L, transverse
// a_v = v/L, and Ewald-sphere axial component a_w = sqrt(1 - a_u^2 - a_v^2),
// rotating into the sample frame and subtracting the incident beam leaves
//   a_x = a_u cos(t) + a_w sin(t) - sin(t),   a_y = a_v,
// and the sample frequencies are (a_x, a_y) / lambda. This builds the exact
// inverse of that map from a uniform (a_x, a_y) target grid — pitch
// cos(t) * p_u / L along the tilt direction, unchanged across it — back to
// fractional detector pixels, with the Jacobian determinant of the inverse
// as an energy-preserving intensity weight. The shared 1/lambda scale drops
// out, so one map serves every wavelength.
inline ResampleMap build_tilt_map(const TiltGeometry& geom) {
    validate_geometry(geom);
    const Grid& d = geom.det_grid;
    const double s = std::sin(geom.theta), c = std::cos(geom.theta);
    const double L = geom.distance;
    const bool along_x = geom.tilt_axis == 0;
    const double pu = along_x ? d.px : d.py;
    const double pv = along_x ? d.py : d.px;
    const int nu = along_x ? d.nx : d.ny;
    const int nv = along_x ? d.ny : d.nx;
    const int cu = nu / 2, cv = nv / 2;
    const double dau = c * pu / L; // target pitch along the tilt direction
    const double dav = pv / L;

    ResampleMap map;
    map.in_grid = d;
    map.out_grid = along_x ? make_grid(d.nx, d.ny, c * d.px, d.py)
                           : make_grid(d.nx, d.ny, d.px, c * d.py);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    map.src_row = RArr<double>::Constant(d.ny, d.nx, nan);
    map.src_col = RArr<double>::Constant(d.ny, d.nx, nan);
    map.weight = RArr<double>::Zero(d.ny, d.nx);
    map.valid = MaskArr::Zero(d.ny, d.nx);

    for (int r = 0; r < d.ny; ++r) {
        for (int col = 0; col < d.nx; ++col) {
            const int tu = along_x ? col : r;
            const int tv = along_x ? r : col;
            const double ax = (tu - cu) * dau;
            const double av = (tv - cv) * dav;
            // invert ax = a_u c + sqrt(1 - a_u^2 - a_v^2) s - s for a_u; the
            // minus branch keeps the ray on the physical (axial > 0) sheet
            const double A = ax + s;
            const double disc = 1.0 - av * av - A * A;
            if (disc < 0) continue;
            const double au = A * c - s * std::sqrt(disc);
            if (A - au * c < 0) continue; // would need a negative axial component
            const double iu = cu + au * (L / pu);
            const double iv = cv + av * (L / pv);
            const double sr = along_x ? iv : iu;
            const double sc = along_x ? iu : iv;
            if (!(sr >= 0 && sr <= d.ny - 1 && sc >= 0 && sc <= d.nx - 1)) continue;
            map.src_row(r, col) = sr;
            map.src_col(r, col) = sc;
            map.valid(r, col) = 1;
        }
    }

    // Jacobian by differencing the source coordinates over output indices:
    // central where both neighbors exist, one-sided across edges and invalid
    // neighbors. d(src)/d(out) in pixels per output cell is exactly the
    // source area feeding one target pixel.
    const auto diff1d = [&](const RArr<double>& f, int r, int col, int dr, int dc,
                            double& out) -> bool {
        const int rm = r - dr, cm = col - dc, rp = r + dr, cp = col + dc;
        const bool has_m = rm >= 0 && cm >= 0 && rm < d.ny && cm < d.nx && map.valid(rm, cm);
        const bool has_p = rp >= 0 && cp >= 0 && rp < d.ny && cp < d.nx && map.valid(rp, cp);
        if (has_m && has_p)
            out = 0.5 * (f(rp, cp) - f(rm, cm));
        else if (has_p)
            out = f(rp, cp) - f(r, col);
        else if (has_m)
            out = f(r, col) - f(rm, cm);
        else
            return false;
        return true;
    };
    for (int r = 0; r < d.ny; ++r)
        for (int col = 0; col < d.nx; ++col) {
            if (!map.valid(r, col)) continue;
            double dc_dc = 0, dr_dc = 0, dc_dr = 0, dr_dr = 0;
            const bool ok = diff1d(map.src_col, r, col, 0, 1, dc_dc) &&
                            diff1d(map.src_row, r, col, 0, 1, dr_dc) &&
                            diff1d(map.src_col, r, col, 1, 0, dc_dr) &&
                            diff1d(map.src_row, r, col, 1, 0, dr_dr);
            const double w = std::abs(dc_dc * dr_dr - dc_dr * dr_dc);
            if (!ok || !(w > 0)) {
                map.valid(r, col) = 0;
                map.src_row(r, col) = nan;
                map.src_col(r, col) = nan;
            } else {
                map.weight(r, col) = w;
            }
        }
    return map;
}

// Bilinear interpolation at the map's source coordinates times the Jacobian
// weight. Outputs whose rays are missing, fall outside the detector, or land
// on masked-out source pixels come back as 0 with mask 0.
template <class Real>
std::pair<RArr<Real>, MaskArr> resample_pattern(const RArr<Real>& frame, const ResampleMap& map,
                                                const MaskArr* frame_mask = nullptr) {
    if (int(frame.rows()) != map.in_grid.ny || int(frame.cols()) != map.in_grid.nx)
        throw InvalidArgumentError("frame shape does not match the resample map");
    if (frame_mask &&
        (frame_mask->rows() != frame.rows() || frame_mask->cols() != frame.cols()))
        throw InvalidArgumentError("frame mask shape does not match the frame");

    RArr<Real> out = RArr<Real>::Zero(map.out_grid.ny, map.out_grid.nx);
    MaskArr mask = MaskArr::Zero(map.out_grid.ny, map.out_grid.nx);
    for (int r = 0; r < map.out_grid.ny; ++r)
        for (int col = 0; col < map.out_grid.nx; ++col) {
            if (!map.valid(r, col)) continue;
            const double sr = map.src_row(r, col), sc = map.src_col(r, col);
            const int r0 = int(std::floor(sr)), c0 = int(std::floor(sc));
            const int r1 = std::min(r0 + 1, int(frame.rows()) - 1);
            const int c1 = std::min(c0 + 1, int(frame.cols()) - 1);
            const double tr = sr - r0, tc = sc - c0;
            const double w00 = (1 - tr) * (1 - tc), w01 = (1 - tr) * tc;
            const double w10 = tr * (1 - tc), w11 = tr * tc;
            if (frame_mask) {
                // only neighbors that actually contribute can poison a pixel
                const double eps = 1e-9;
                const bool bad = (w00 > eps && !(*frame_mask)(r0, c0)) ||
                                 (w01 > eps && !(*frame_mask)(r0, c1)) ||
                                 (w10 > eps && !(*frame_mask)(r1, c0)) ||
                                 (w11 > eps && !(*frame_mask)(r1, c1));
                if (bad) continue;
            }
            const double v = w00 * double(frame(r0, c0)) + w01 * double(frame(r0, c1)) +
                             w10 * double(frame(r1, c0)) + w11 * double(frame(r1, c1));
            out(r, col) = Real(v * map.weight(r, col));
            mask(r, col) = 1;
        }
    return {std::move(out), std::move(mask)};
}

// Dark subtraction with counts clamped at zero.
template <class Real>
RArr<Real> subtract_dark(const RArr<Real>& raw, const RArr<Real>& dark) {
    if (raw.rows() != dark.rows() || raw.cols() != dark.cols())
        throw InvalidArgumentError("raw frame and dark frame shapes differ");
    return (raw - dark).max(Real(0));
}

// Validity mask from the saturation/noise thresholds: pixels at or beyond
// either bound are excluded.
template <class Real>
MaskArr threshold_mask(const RArr<Real>& frame, double lo, double hi) {
    MaskArr m(frame.rows(), frame.cols());
    for (Eigen::Index r = 0; r < frame.rows(); ++r)
        for (Eigen::Index c = 0; c < frame.cols(); ++c) {
            const double v = double(frame(r, c));
            m(r, c) = (v > lo && v < hi) ? 1 : 0;
        }
    return m;
}

// Intensity-weighted centroid of the brightest 4-connected region above
// `lo`, rounded to the nearest pixel: (row, col).
template <class Real>
std::pair<int, int> find_zeroth_order(const RArr<Real>& sum_image, double lo) {
    const int ny = int(sum_image.rows()), nx = int(sum_image.cols());
    MaskArr visited = MaskArr::Zero(ny, nx);
    double best_total = 0;
    double best_r = 0, best_c = 0;
    bool found = false;
    std::vector<std::pair<int, int>> stack;
    for (int r = 0; r < ny; ++r)
        for (int c = 0; c < nx; ++c) {
            if (visited(r, c) || !(double(sum_image(r, c)) > lo)) continue;
            double total = 0, wr = 0, wc = 0;
            stack.assign(1, {r, c});
            visited(r, c) = 1;
            while (!stack.empty()) {
                const auto [pr, pc] = stack.back();
                stack.pop_back();
                const double v = double(sum_image(pr, pc));
                total += v;
                wr += v * pr;
                wc += v * pc;
                const int nbr[4][2] = {{pr - 1, pc}, {pr + 1, pc}, {pr, pc - 1}, {pr, pc + 1}};
                for (const auto& n : nbr) {
                    if (n[0] < 0 || n[1] < 0 || n[0] >= ny || n[1] >= nx) continue;
                    if (visited(n[0], n[1]) || !(double(sum_image(n[0], n[1])) > lo)) continue;
                    visited(n[0], n[1]) = 1;
                    stack.push_back({n[0], n[1]});
                }
            }
            if (total > best_total) {
                best_total = total;
                best_r = wr / total;
                best_c = wc / total;
                found = true;
            }
        }
    if (!found)
        throw PreprocessError("zeroth order not found: no pixel above the low threshold");
    return {int(std::lround(best_r)), int(std::lround(best_c))};
}

// Integer shift with zero fill; vacated pixels are marked invalid.
template <class Real>
void shift_frame(RArr<Real>& frame, MaskArr& mask, int dr, int dc) {
    const int ny = int(frame.rows()), nx = int(frame.cols());
    RArr<Real> f = RArr<Real>::Zero(ny, nx);
    MaskArr m = MaskArr::Zero(ny, nx);
    for (int r = 0; r < ny; ++r) {
        const int sr = r - dr;
        if (sr < 0 || sr >= ny) continue;
        for (int c = 0; c < nx; ++c) {
            const int sc = c - dc;
            if (sc < 0 || sc >= nx) continue;
            f(r, c) = frame(sr, sc);
            m(r, c) = mask(sr, sc);
        }
    }
    frame = std::move(f);
    mask = std::move(m);
}

// Full preparation pipeline: per frame, subtract the dark frame (clamped at
// zero), mask pixels at or beyond the thresholds, shift the stack so the
// zeroth order (centroid of the brightest connected region of the stack sum)
// sits at the array center, and resample through the tilt map. The scan
// table and wavelengths are passed through into the packaged dataset.
template <class Real>
Dataset<Real> preprocess_frames(const std::vector<RArr<Real>>& raw, const RArr<Real>& dark,
                                const TiltGeometry& geom, const ScanTable& scan,
                                const std::vector<double>& wavelengths, double lo = 4.0,
                                double hi = 65535.0, int threads = 0) {
    validate_geometry(geom);
    if (raw.empty()) throw PreprocessError("no frames to preprocess");
    if (int(raw.size()) != scan.shots())
        throw InvalidArgumentError("scan table does not match the frame stack");
    if (wavelengths.empty()) throw InvalidArgumentError("need at least one wavelength");
    for (const auto& f : raw)
        if (int(f.rows()) != geom.det_grid.ny || int(f.cols()) != geom.det_grid.nx)
            throw InvalidArgumentError("frame shape does not match the detector grid");
    if (int(dark.rows()) != geom.det_grid.ny || int(dark.cols()) != geom.det_grid.nx)
        throw InvalidArgumentError("dark frame shape does not match the detector grid");

    RArr<Real> sum = RArr<Real>::Zero(geom.det_grid.ny, geom.det_grid.nx);
    for (const auto& f : raw) sum += subtract_dark(f, dark);
    const auto [zr, zc] = find_zeroth_order(sum, lo);
    const int dr = geom.det_grid.cy() - zr;
    const int dc = geom.det_grid.cx() - zc;

    const ResampleMap map = build_tilt_map(geom);
    Dataset<Real> data;
    data.det_grid = map.out_grid;
    data.theta = geom.theta;
    data.distance = geom.distance;
    data.wavelengths = wavelengths;
    data.scan = scan;
    data.patterns.resize(raw.size());
    data.masks.resize(raw.size());
    parallel_for(int(raw.size()), threads <= 0 ? default_threads() : threads, [&](int k) {
        RArr<Real> f = subtract_dark(raw[std::size_t(k)], dark);
        MaskArr m = threshold_mask(f, lo, hi);
        shift_frame(f, m, dr, dc);
        auto [pattern, mask] = resample_pattern(f, map, &m);
        data.patterns[std::size_t(k)] = std::move(pattern);
        data.masks[std::size_t(k)] = std::move(mask);
    });
    data.validate();
    return data;
}

} // namespace ptycho
