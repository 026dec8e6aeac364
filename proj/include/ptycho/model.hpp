#pragma once

// The forward model
//
//   I_k(rho) = sum_l sum_m sum_n | D_{lambda_l, z}[ sigma_k P_{l,m}(r) O_{l,n}(r - s_k) ] |^2
//              + b(rho)^2
//
// assembled from five differentiable stages per shot:
//   f1 scale_probe      P'_{l,m} = sigma_k P_{l,m}
//   f2 shift_extract    probe-sized patch of O_{l,n} at scan position s_k
//   f3 interact         exit waves E_{l,m,n} = P'_{l,m} . patch_{l,n}
//   f4 propagate        D_{l,m,n} = CZT[E] onto the camera grid (lambda_l, z)
//   f5 detect           incoherent modal sum plus squared background
//
// Each stage pushes one closure onto the shot's tape; adjoints follow the
// conjugate-gradient (Wirtinger) convention. The detector validity mask is
// not applied here; masked pixels are excluded by the loss.

#include <atomic>
#include <cmath>
#include <string>
#include <vector>

#include "ptycho/field.hpp"
#include "ptycho/propagators.hpp"
#include "ptycho/tape.hpp"

namespace ptycho {

enum class Role { Probe, Object, Position, Power, Wavelength, Distance, Background };

inline const char* role_name(Role r) {
    switch (r) {
    case Role::Probe: return "probe";
    case Role::Object: return "object";
    case Role::Position: return "position";
    case Role::Power: return "power";
    case Role::Wavelength: return "wavelength";
    case Role::Distance: return "distance";
    case Role::Background: return "background";
    }
    return "?";
}

inline constexpr Role kAllRoles[] = {Role::Probe,      Role::Object,   Role::Position,
                                     Role::Power,      Role::Wavelength, Role::Distance,
                                     Role::Background};

// Counts f4 evaluations (one per exit wave per shot); benchmarks assert the
// L*M*N law against it.
inline std::atomic<std::int64_t>& propagation_counter() {
    static std::atomic<std::int64_t> c{0};
    return c;
}

// All optimizable state. `wavelengths` here is the runtime truth used by the
// propagator; the nominal values stored in the modal stacks are metadata.
template <class Real>
struct ModelState {
    ModalStack<Real> probe;            // probe plane
    ModalStack<Real> object;           // same pitch as probe, larger support
    std::vector<Vec2<Real>> positions; // s_k [m], (x, y)
    std::vector<Real> powers;          // sigma_k
    std::vector<Real> wavelengths;     // lambda_l [m]
    Real distance = 0;                 // z [m]
    RArr<Real> background_root;        // b with N = b^2, camera-shaped
    Grid det_grid;

    int L() const { return int(wavelengths.size()); }
    int M() const { return probe.modes; }
    int N() const { return object.modes; }
    int shots() const { return int(positions.size()); }

    void validate() const {
        if (wavelengths.empty()) throw GraphConstructionError("model needs at least one wavelength");
        if (int(probe.wavelengths.size()) != L() || int(object.wavelengths.size()) != L())
            throw GraphConstructionError("probe/object wavelength lists do not match the model");
        if (probe.grid.px != object.grid.px || probe.grid.py != object.grid.py)
            throw GraphConstructionError("probe and object must share the sample-plane pitch");
        if (object.grid.nx < probe.grid.nx || object.grid.ny < probe.grid.ny)
            throw GraphConstructionError("object support smaller than the probe window");
        if (positions.size() != powers.size())
            throw GraphConstructionError("positions and powers must pair up");
        if (positions.empty()) throw GraphConstructionError("model needs at least one shot");
        if (int(background_root.rows()) != det_grid.ny || int(background_root.cols()) != det_grid.nx)
            throw GraphConstructionError("background array must be camera-shaped");
        if (!(double(distance) > 0.0)) throw GraphConstructionError("propagation distance must be > 0");
        for (Real l : wavelengths)
            if (!(double(l) > 0.0)) throw GraphConstructionError("wavelengths must be positive");
    }
};

// Gradients mirroring ModelState shapes; complex entries hold dL/dconj.
template <class Real>
struct GradientSet {
    std::vector<CArr<Real>> probe;  // L*M
    std::vector<CArr<Real>> object; // L*N
    std::vector<Vec2<Real>> positions;
    std::vector<Real> powers;
    std::vector<Real> wavelengths;
    Real distance = 0;
    RArr<Real> background;

    static GradientSet zeros_like(const ModelState<Real>& st) {
        GradientSet g;
        g.probe.assign(st.probe.fields.size(),
                       CArr<Real>::Zero(st.probe.grid.ny, st.probe.grid.nx));
        g.object.assign(st.object.fields.size(),
                        CArr<Real>::Zero(st.object.grid.ny, st.object.grid.nx));
        g.positions.assign(st.positions.size(), Vec2<Real>::Zero());
        g.powers.assign(st.powers.size(), Real(0));
        g.wavelengths.assign(st.wavelengths.size(), Real(0));
        g.distance = 0;
        g.background = RArr<Real>::Zero(st.det_grid.ny, st.det_grid.nx);
        return g;
    }

    GradientSet& operator+=(const GradientSet& o) {
        for (std::size_t i = 0; i < probe.size(); ++i) probe[i] += o.probe[i];
        for (std::size_t i = 0; i < object.size(); ++i) object[i] += o.object[i];
        for (std::size_t i = 0; i < positions.size(); ++i) positions[i] += o.positions[i];
        for (std::size_t i = 0; i < powers.size(); ++i) powers[i] += o.powers[i];
        for (std::size_t i = 0; i < wavelengths.size(); ++i) wavelengths[i] += o.wavelengths[i];
        distance += o.distance;
        background += o.background;
        return *this;
    }
};

// Measured data as consumed by the optimizer: camera-plane frames after any
// tilted-detector resampling, with per-shot validity masks (empty = all
// valid) and nominal geometry.
template <class Real>
struct Dataset {
    Grid det_grid;
    double theta = 0;    // grazing/tilt geometry metadata [rad]
    double distance = 0; // nominal z [m]
    std::vector<double> wavelengths;
    ScanTable scan;
    std::vector<RArr<Real>> patterns;
    std::vector<MaskArr> masks;

    int shots() const { return int(patterns.size()); }

    void validate() const {
        if (patterns.empty()) throw CorruptContainerError("dataset has no patterns");
        if (scan.shots() != shots()) throw CorruptContainerError("scan table does not match frames");
        if (!masks.empty() && int(masks.size()) != shots())
            throw CorruptContainerError("mask count does not match frames");
        for (const auto& p : patterns)
            if (int(p.rows()) != det_grid.ny || int(p.cols()) != det_grid.nx)
                throw CorruptContainerError("frame shape does not match detector grid");
        for (const auto& m : masks)
            if (int(m.rows()) != det_grid.ny || int(m.cols()) != det_grid.nx)
                throw CorruptContainerError("mask shape does not match detector grid");
        if (wavelengths.empty()) throw CorruptContainerError("dataset carries no wavelengths");
    }
};

namespace detail {

// Geometry of one scan window: integer window origin plus subpixel remainder.
struct ShiftGeom {
    int y0 = 0, x0 = 0;     // window origin in object indices
    int npy = 0, npx = 0;   // padded window (power of two)
    double fracy = 0, fracx = 0; // subpixel shift in pixels
};

inline int pad_size(int n, int guard = 2) { return next_pow2(n + 2 * guard); }

template <class Real>
ShiftGeom shift_geometry(const Grid& object_grid, const Grid& probe_grid, const Vec2<Real>& s,
                         int shot_for_error) {
    ShiftGeom g;
    g.npx = pad_size(probe_grid.nx);
    g.npy = pad_size(probe_grid.ny);
    const double sx_px = double(s[0]) / object_grid.px;
    const double sy_px = double(s[1]) / object_grid.py;
    const long nix = std::lround(sx_px);
    const long niy = std::lround(sy_px);
    g.fracx = sx_px - double(nix);
    g.fracy = sy_px - double(niy);
    // patch(i) = O[i - c_probe + c_object - s/pitch]; the integer part moves
    // the window, the remainder becomes a Fourier shift on the padded window.
    g.x0 = object_grid.cx() - int(nix) - g.npx / 2;
    g.y0 = object_grid.cy() - int(niy) - g.npy / 2;
    if (g.x0 < 0 || g.y0 < 0 || g.x0 + g.npx > object_grid.nx || g.y0 + g.npy > object_grid.ny)
        throw ScanRangeError("scan window out of object support for shot " +
                             std::to_string(shot_for_error));
    return g;
}

// e^{-2 pi i ((kx - cx) fracx / npx + (ky - cy) fracy / npy)}
template <class Real>
CArr<Real> frac_shift_phase(int npy, int npx, double fracy, double fracx) {
    CArr<Real> ph(npy, npx);
    const int cy = npy / 2, cx = npx / 2;
    for (int r = 0; r < npy; ++r) {
        const double ay = fracy * (r - cy) / npy;
        for (int c = 0; c < npx; ++c) {
            const double a = -2.0 * kPi * (fracx * double(c - cx) / npx + ay);
            const std::complex<double> e = std::polar(1.0, a);
            ph(r, c) = Cpx<Real>(Real(e.real()), Real(e.imag()));
        }
    }
    return ph;
}

template <class T>
std::int64_t bytes_of(const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& a) {
    return std::int64_t(a.rows()) * a.cols() * sizeof(T);
}

} // namespace detail

// Standalone f2 for callers outside the tape (simulator, tests): probe-sized
// patch of `object` at scan position s.
template <class Real>
CArr<Real> shift_extract(const CArr<Real>& object, const Grid& object_grid, const Grid& probe_grid,
                         const Vec2<Real>& s, int shot_for_error = -1) {
    const detail::ShiftGeom g =
        detail::shift_geometry<Real>(object_grid, probe_grid, s, shot_for_error);
    CArr<Real> win = object.block(g.y0, g.x0, g.npy, g.npx);
    if (g.fracx != 0.0 || g.fracy != 0.0) {
        const CArr<Real> ph = detail::frac_shift_phase<Real>(g.npy, g.npx, g.fracy, g.fracx);
        win = idft2c(CArr<Real>(dft2c(win) * ph));
    }
    return win.block(g.npy / 2 - probe_grid.cy(), g.npx / 2 - probe_grid.cx(), probe_grid.ny,
                     probe_grid.nx);
}

// Handles into a recorded shot graph: the prediction plus the adjoint slots
// to seed and harvest.
template <class Real>
struct ShotGraph {
    RArr<Real> intensity;
    int id_intensity = -1;
    std::vector<int> id_probe;    // L*M
    std::vector<int> id_object;   // L*N
    std::vector<int> id_wavelength; // L
    int id_power = -1, id_position = -1, id_distance = -1, id_background = -1;
};

// Evaluates Eq. 1 for shot k. With a tape, records the five-stage graph for
// one backward pass; with tape = nullptr it is a plain forward evaluation
// through the identical arithmetic (the simulator and finite-difference
// checks rely on that bit-identity).
template <class Real>
ShotGraph<Real> predict_pattern(const ModelState<Real>& st, int k, Tape<Real>* tape) {
    if (k < 0 || k >= st.shots()) throw InvalidArgumentError("shot index out of range");
    const int L = st.L(), M = st.M(), N = st.N();
    const Grid& pg = st.probe.grid;
    const Grid& og = st.object.grid;
    const Grid& dg = st.det_grid;

    ShotGraph<Real> out;
    const auto id = [&](int& slot) { slot = tape ? tape->fresh_id() : -1; };
    out.id_probe.resize(std::size_t(L) * M, -1);
    out.id_object.resize(std::size_t(L) * N, -1);
    out.id_wavelength.resize(std::size_t(L), -1);
    if (tape) {
        for (auto& v : out.id_probe) v = tape->fresh_id();
        for (auto& v : out.id_object) v = tape->fresh_id();
        for (auto& v : out.id_wavelength) v = tape->fresh_id();
    }
    id(out.id_power);
    id(out.id_position);
    id(out.id_distance);
    id(out.id_background);

    const Real sigma = st.powers[std::size_t(k)];
    const Vec2<Real> pos = st.positions[std::size_t(k)];

    // f1: probe power scaling
    std::vector<int> id_sp(std::size_t(L) * M, -1);
    std::vector<CArr<Real>> scaled(std::size_t(L) * M);
    for (int l = 0; l < L; ++l)
        for (int m = 0; m < M; ++m) {
            scaled[std::size_t(l) * M + m] = st.probe.at(l, m) * sigma;
            if (tape) id_sp[std::size_t(l) * M + m] = tape->fresh_id();
        }
    if (tape) {
        tape->push_node([tape, &st, sigma, id_sp, id_probe = out.id_probe,
                         id_power = out.id_power, L, M]() {
            for (int l = 0; l < L; ++l)
                for (int m = 0; m < M; ++m) {
                    const std::size_t j = std::size_t(l) * M + m;
                    const CArr<Real>* up = tape->find_cadj(id_sp[j]);
                    if (!up) continue;
                    const CArr<Real>& P = st.probe.at(l, m);
                    tape->cadj(id_probe[j], P.rows(), P.cols()) += sigma * (*up);
                    tape->sadj(id_power) += Real(2) * (up->conjugate() * P).real().sum();
                }
        });
    }

    // f2: object patches; one shift geometry per shot, shared phase ramp
    const detail::ShiftGeom geom = detail::shift_geometry<Real>(og, pg, pos, k);
    const CArr<Real> ph = detail::frac_shift_phase<Real>(geom.npy, geom.npx, geom.fracy, geom.fracx);
    const int crop_y = geom.npy / 2 - pg.cy();
    const int crop_x = geom.npx / 2 - pg.cx();
    std::vector<int> id_patch(std::size_t(L) * N, -1);
    std::vector<CArr<Real>> patches(std::size_t(L) * N);
    std::vector<CArr<Real>> specs(std::size_t(L) * N); // shifted padded spectra, saved for adjoints
    for (int l = 0; l < L; ++l)
        for (int n = 0; n < N; ++n) {
            const std::size_t j = std::size_t(l) * N + n;
            CArr<Real> win = st.object.at(l, n).block(geom.y0, geom.x0, geom.npy, geom.npx);
            CArr<Real> spec = dft2c(win) * ph;
            CArr<Real> shifted = idft2c(spec);
            patches[j] = shifted.block(crop_y, crop_x, pg.ny, pg.nx);
            if (tape) {
                id_patch[j] = tape->fresh_id();
                specs[j] = std::move(spec);
            }
        }
    if (tape) {
        std::int64_t saved = detail::bytes_of(ph);
        for (const auto& s : specs) saved += detail::bytes_of(s);
        tape->note_saved_bytes(saved);
        tape->push_node([tape, geom, ph, specs = std::move(specs), id_patch,
                         id_object = out.id_object, id_position = out.id_position, &st, crop_y,
                         crop_x, L, N]() {
            const Grid& pgrid = st.probe.grid;
            const Grid& ogrid = st.object.grid;
            Real dfracx = 0, dfracy = 0;
            for (int l = 0; l < L; ++l)
                for (int n = 0; n < N; ++n) {
                    const std::size_t j = std::size_t(l) * N + n;
                    const CArr<Real>* pb = tape->find_cadj(id_patch[j]);
                    if (!pb) continue;
                    CArr<Real> pad = CArr<Real>::Zero(geom.npy, geom.npx);
                    pad.block(crop_y, crop_x, pgrid.ny, pgrid.nx) = *pb;
                    const CArr<Real> w = dft2c(pad);
                    // object window: adjoint of crop . idft . diag(ph) . dft . window
                    CArr<Real> owin = idft2c(CArr<Real>(ph.conjugate() * w));
                    tape->cadj(id_object[j], ogrid.ny, ogrid.nx)
                        .block(geom.y0, geom.x0, geom.npy, geom.npx) += owin;
                    // d(loss)/d(frac): differentiate the phase ramp exponent
                    const CArr<Real>& S = specs[j];
                    const int cyp = geom.npy / 2, cxp = geom.npx / 2;
                    Real ax = 0, ay = 0;
                    for (int r = 0; r < geom.npy; ++r)
                        for (int c = 0; c < geom.npx; ++c) {
                            const Cpx<Real> t = std::conj(w(r, c)) * S(r, c);
                            // Re[conj(w) * (-2 pi i q / n) * S] = (2 pi q / n) Im[conj(w) S]
                            ax += Real(c - cxp) * t.imag();
                            ay += Real(r - cyp) * t.imag();
                        }
                    dfracx += Real(2) * Real(2 * kPi) * ax / Real(geom.npx);
                    dfracy += Real(2) * Real(2 * kPi) * ay / Real(geom.npy);
                }
            if (dfracx != Real(0) || dfracy != Real(0)) {
                Vec2<Real>& v = tape->vadj(id_position);
                v[0] += dfracx / Real(ogrid.px); // frac = s/pitch - integer
                v[1] += dfracy / Real(ogrid.py);
            }
        });
    }

    // f3: exit waves
    std::vector<int> id_exit(std::size_t(L) * M * N, -1);
    std::vector<CArr<Real>> exits(std::size_t(L) * M * N);
    for (int l = 0; l < L; ++l)
        for (int m = 0; m < M; ++m)
            for (int n = 0; n < N; ++n) {
                const std::size_t j = (std::size_t(l) * M + m) * N + n;
                exits[j] = scaled[std::size_t(l) * M + m] * patches[std::size_t(l) * N + n];
                if (tape) id_exit[j] = tape->fresh_id();
            }
    if (tape) {
        std::int64_t saved = 0;
        for (const auto& a : scaled) saved += detail::bytes_of(a);
        for (const auto& a : patches) saved += detail::bytes_of(a);
        tape->note_saved_bytes(saved);
        tape->push_node([tape, scaled = std::move(scaled), patches = std::move(patches), id_exit,
                         id_sp, id_patch, L, M, N]() {
            for (int l = 0; l < L; ++l)
                for (int m = 0; m < M; ++m)
                    for (int n = 0; n < N; ++n) {
                        const std::size_t j = (std::size_t(l) * M + m) * N + n;
                        const CArr<Real>* eb = tape->find_cadj(id_exit[j]);
                        if (!eb) continue;
                        const CArr<Real>& P = scaled[std::size_t(l) * M + m];
                        const CArr<Real>& Q = patches[std::size_t(l) * N + n];
                        tape->cadj(id_sp[std::size_t(l) * M + m], P.rows(), P.cols()) +=
                            *eb * Q.conjugate();
                        tape->cadj(id_patch[std::size_t(l) * N + n], Q.rows(), Q.cols()) +=
                            *eb * P.conjugate();
                    }
        });
    } else {
        scaled.clear();
        patches.clear();
    }

    // f4: camera-grid propagation per exit wave
    std::vector<int> id_det(std::size_t(L) * M * N, -1);
    std::vector<CArr<Real>> dets(std::size_t(L) * M * N);
    for (int l = 0; l < L; ++l) {
        const double lambda = double(st.wavelengths[std::size_t(l)]);
        for (int m = 0; m < M; ++m)
            for (int n = 0; n < N; ++n) {
                const std::size_t j = (std::size_t(l) * M + m) * N + n;
                dets[j] = czt_propagate(ComplexField<Real>(pg, exits[j]), lambda,
                                        double(st.distance), dg)
                              .values;
                if (tape) id_det[j] = tape->fresh_id();
            }
    }
    propagation_counter().fetch_add(std::int64_t(L) * M * N, std::memory_order_relaxed);
    if (tape) {
        std::int64_t saved = 0;
        for (const auto& a : exits) saved += detail::bytes_of(a);
        tape->note_saved_bytes(saved);
        tape->push_node([tape, exits = std::move(exits), id_det, id_exit,
                         id_wavelength = out.id_wavelength, id_distance = out.id_distance, &st, L,
                         M, N]() {
            const Grid& pgrid = st.probe.grid;
            const Grid& dgrid = st.det_grid;
            const Real scale = Real(1.0 / std::sqrt(double(pgrid.nx) * double(pgrid.ny)));
            for (int l = 0; l < L; ++l) {
                const double lambda = double(st.wavelengths[std::size_t(l)]);
                const CztGeometry a = czt_alphas(pgrid, dgrid, lambda, double(st.distance));
                for (int m = 0; m < M; ++m)
                    for (int n = 0; n < N; ++n) {
                        const std::size_t j = (std::size_t(l) * M + m) * N + n;
                        const CArr<Real>* db = tape->find_cadj(id_det[j]);
                        if (!db) continue;
                        tape->cadj(id_exit[j], pgrid.ny, pgrid.nx) +=
                            czt_propagate_adjoint(*db, pgrid, dgrid, lambda, double(st.distance));
                        Real day = 0, dax = 0;
                        czt2d_alpha_gradients(exits[j], *db, a.alpha_y, a.alpha_x, scale, day, dax);
                        // alpha = pitch_in*pitch_out/(lambda z): d(alpha)/dz = -alpha/z,
                        // d(alpha)/dlambda = -alpha/lambda
                        tape->sadj(id_distance) +=
                            (dax * Real(-a.alpha_x) + day * Real(-a.alpha_y)) / st.distance;
                        tape->sadj(id_wavelength[std::size_t(l)]) +=
                            (dax * Real(-a.alpha_x) + day * Real(-a.alpha_y)) /
                            st.wavelengths[std::size_t(l)];
                    }
            }
        });
    } else {
        exits.clear();
    }

    // f5: incoherent sum + squared background
    RArr<Real> I = st.background_root * st.background_root;
    for (const auto& d : dets) I += d.abs2();
    out.intensity = I;
    if (tape) {
        out.id_intensity = tape->fresh_id();
        std::int64_t saved = 0;
        for (const auto& a : dets) saved += detail::bytes_of(a);
        tape->note_saved_bytes(saved + detail::bytes_of(st.background_root));
        tape->push_node([tape, dets = std::move(dets), bg = st.background_root, id_det,
                         id_background = out.id_background, id_I = out.id_intensity]() {
            const RArr<Real>* ib = tape->find_radj(id_I);
            if (!ib) return;
            for (std::size_t j = 0; j < dets.size(); ++j)
                tape->cadj(id_det[j], dets[j].rows(), dets[j].cols()) +=
                    ib->template cast<Cpx<Real>>() * dets[j];
            tape->radj(id_background, bg.rows(), bg.cols()) += Real(2) * (*ib) * bg;
        });
    }
    return out;
}

// Forward-only convenience.
template <class Real>
RArr<Real> predict_pattern(const ModelState<Real>& st, int k) {
    return predict_pattern(st, k, static_cast<Tape<Real>*>(nullptr)).intensity;
}

// Harvest leaf adjoints of one shot into a dense gradient set; absent
// buffers (unreached leaves) stay zero.
template <class Real>
void harvest_gradients(const Tape<Real>& tape, const ShotGraph<Real>& g, int shot,
                       const ModelState<Real>& st, GradientSet<Real>& into) {
    for (std::size_t j = 0; j < g.id_probe.size(); ++j)
        if (const auto* a = tape.find_cadj(g.id_probe[j])) into.probe[j] += *a;
    for (std::size_t j = 0; j < g.id_object.size(); ++j)
        if (const auto* a = tape.find_cadj(g.id_object[j])) into.object[j] += *a;
    for (std::size_t l = 0; l < g.id_wavelength.size(); ++l)
        if (const auto* a = tape.find_sadj(g.id_wavelength[l])) into.wavelengths[l] += *a;
    if (const auto* a = tape.find_sadj(g.id_power)) into.powers[std::size_t(shot)] += *a;
    if (const auto* a = tape.find_vadj(g.id_position)) into.positions[std::size_t(shot)] += *a;
    if (const auto* a = tape.find_sadj(g.id_distance)) into.distance += *a;
    if (const auto* a = tape.find_radj(g.id_background)) into.background += *a;
    (void)st;
}

// Object support sized so every scan window (padded for the fractional
// shift) stays in bounds.
inline Grid object_grid_for(const ScanTable& scan, const Grid& probe_grid, int margin = 2) {
    long max_ix = 0, max_iy = 0;
    for (const auto& p : scan.positions) {
        max_ix = std::max(max_ix, std::labs(std::lround(p[0] / probe_grid.px)));
        max_iy = std::max(max_iy, std::labs(std::lround(p[1] / probe_grid.py)));
    }
    const int npx = detail::pad_size(probe_grid.nx);
    const int npy = detail::pad_size(probe_grid.ny);
    return make_grid(npx + 2 * (int(max_ix) + margin), npy + 2 * (int(max_iy) + margin),
                     probe_grid.px, probe_grid.py);
}

} // namespace ptycho
