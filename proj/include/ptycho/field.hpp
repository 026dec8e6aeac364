#pragma once

#include <utility>
#include <vector>

#include "ptycho/fft.hpp"
#include "ptycho/grid.hpp"

namespace ptycho {

// A sampled complex wave on a physical grid.
template <class Real>
struct ComplexField {
    Grid grid;
    CArr<Real> values;

    ComplexField() = default;
    ComplexField(Grid g, CArr<Real> v) : grid(g), values(std::move(v)) {
        if (int(values.rows()) != grid.ny || int(values.cols()) != grid.nx)
            throw InvalidArgumentError("field dimensions do not match grid");
    }
};

template <class Real>
ComplexField<Real> zero_field(const Grid& g) {
    return ComplexField<Real>(g, CArr<Real>::Zero(g.ny, g.nx));
}

// Integral of |v|^2 over the grid: sum |v|^2 * px * py.
template <class Real>
double total_power(const ComplexField<Real>& f) {
    return double(f.values.abs2().sum()) * f.grid.px * f.grid.py;
}

// Wavelength-major stack of mutually incoherent modes on one grid.
// fields[l * modes + m] is mode m at wavelength l.
template <class Real>
struct ModalStack {
    Grid grid;
    std::vector<double> wavelengths;
    int modes = 0;
    std::vector<CArr<Real>> fields;

    int n_wavelengths() const { return int(wavelengths.size()); }
    CArr<Real>& at(int l, int m) { return fields[std::size_t(l) * modes + m]; }
    const CArr<Real>& at(int l, int m) const { return fields[std::size_t(l) * modes + m]; }
};

template <class Real>
ModalStack<Real> make_modal_stack(const Grid& g, std::vector<double> wavelengths, int modes) {
    if (wavelengths.empty()) throw InvalidArgumentError("modal stack needs at least one wavelength");
    for (double w : wavelengths)
        if (!(w > 0.0)) throw InvalidArgumentError("wavelengths must be positive");
    if (modes <= 0) throw InvalidArgumentError("modal stack needs at least one mode");
    ModalStack<Real> s;
    s.grid = g;
    s.wavelengths = std::move(wavelengths);
    s.modes = modes;
    s.fields.assign(std::size_t(s.wavelengths.size()) * modes, CArr<Real>::Zero(g.ny, g.nx));
    return s;
}

// Incoherent intensity sum over all wavelengths and modes.
template <class Real>
RArr<Real> incoherent_intensity(const ModalStack<Real>& s) {
    RArr<Real> acc = RArr<Real>::Zero(s.grid.ny, s.grid.nx);
    for (const auto& f : s.fields) acc += f.abs2();
    return acc;
}

// Scan positions [m] in the object plane plus per-shot power factors.
struct ScanTable {
    std::vector<Eigen::Vector2d> positions; // (x, y)
    std::vector<double> powers;

    int shots() const { return int(positions.size()); }
};

inline ScanTable make_scan_table(std::vector<Eigen::Vector2d> positions, std::vector<double> powers) {
    if (positions.empty()) throw InvalidArgumentError("scan table needs at least one position");
    if (powers.empty()) powers.assign(positions.size(), 1.0);
    if (powers.size() != positions.size())
        throw InvalidArgumentError("scan table powers must match positions");
    ScanTable t;
    t.positions = std::move(positions);
    t.powers = std::move(powers);
    return t;
}

// Normalized peak magnitude of the circular cross-correlation:
//   max_shift |sum_r a(r) conj(b(r - shift))| / (||a|| ||b||).
// Equals 1 exactly iff b matches a up to a global phase and an integer
// circular shift (Cauchy-Schwarz per shift); invariant to both ambiguities.
template <class Real>
double compare_ambiguity_free(const CArr<Real>& a, const CArr<Real>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw InvalidArgumentError("compare_ambiguity_free needs equal shapes");
    const double na = std::sqrt(double(a.abs2().sum()));
    const double nb = std::sqrt(double(b.abs2().sum()));
    if (!(na > 0.0) || !(nb > 0.0))
        throw UndefinedMetricError("cross-correlation metric undefined for zero-norm field");
    CArr<Real> fa = a;
    CArr<Real> fb = b;
    fft2_raw(fa, false);
    fft2_raw(fb, false);
    CArr<Real> prod = fa * fb.conjugate();
    fft2_raw(prod, true);
    const double n_total = double(a.rows()) * double(a.cols());
    const double peak = std::sqrt(double(prod.abs2().maxCoeff())) / n_total;
    return peak / (na * nb);
}

template <class Real>
double compare_ambiguity_free(const ComplexField<Real>& a, const ComplexField<Real>& b) {
    if (a.grid != b.grid) throw InvalidArgumentError("compare_ambiguity_free needs matching grids");
    return compare_ambiguity_free(a.values, b.values);
}

} // namespace ptycho
