#pragma once

// Wave propagators. The sample-to-camera hop is a chirp-z far-field
// transform that renders directly onto an arbitrary camera grid, so
// wavelength and distance enter only through the chirp rate
// alpha = pitch_in * pitch_out / (lambda * z) per axis; any constant
// quadratic-phase prefactor outside the integral is omitted because only
// intensities reach the detector. Refocusing and defocus use the unitary
// angular-spectrum kernel on a fixed grid.

#include <cmath>

#include "ptycho/czt.hpp"
#include "ptycho/field.hpp"

namespace ptycho {

// Far-field rendering via the centered unitary DFT; output grid is the
// conjugate grid with pitch lambda*z/(n*pitch).
template <class Real>
ComplexField<Real> fraunhofer(const ComplexField<Real>& f, double lambda, double z) {
    return ComplexField<Real>(conjugate_grid(f.grid, lambda, z), dft2c(f.values));
}

struct CztGeometry {
    double alpha_x = 0;
    double alpha_y = 0;
};

inline CztGeometry czt_alphas(const Grid& in, const Grid& out, double lambda, double z) {
    if (!(lambda > 0.0)) throw InvalidArgumentError("czt propagation needs lambda > 0");
    if (!(z > 0.0)) throw InvalidArgumentError("czt propagation needs z > 0");
    return CztGeometry{in.px * out.px / (lambda * z), in.py * out.py / (lambda * z)};
}

// Largest |j - c| on an axis of length n with center floor(n/2).
inline int max_center_offset(int n) { return std::max(n / 2, n - 1 - n / 2); }

inline void check_band_limit(const Grid& in, const Grid& out, const CztGeometry& a) {
    const double tol = 0.5 * (1.0 + 1e-9);
    if (std::abs(a.alpha_x) * max_center_offset(out.nx) > tol ||
        std::abs(a.alpha_y) * max_center_offset(out.ny) > tol)
        throw BandLimitError("requested output grid exceeds the input Nyquist band");
    (void)in;
}

// Chirp-z far-field propagation onto `out_grid`. Coincides with fraunhofer()
// when out_grid is the conjugate grid of f.grid.
template <class Real>
ComplexField<Real> czt_propagate(const ComplexField<Real>& f, double lambda, double z,
                                 const Grid& out_grid) {
    const CztGeometry a = czt_alphas(f.grid, out_grid, lambda, z);
    check_band_limit(f.grid, out_grid, a);
    const Real scale = Real(1.0 / std::sqrt(double(f.grid.nx) * double(f.grid.ny)));
    return ComplexField<Real>(out_grid,
                              czt2d(f.values, out_grid.ny, out_grid.nx, a.alpha_y, a.alpha_x, scale));
}

// Conjugate-transpose of czt_propagate as a linear map on field values.
template <class Real>
CArr<Real> czt_propagate_adjoint(const CArr<Real>& gbar, const Grid& in_grid, const Grid& out_grid,
                                 double lambda, double z) {
    const CztGeometry a = czt_alphas(in_grid, out_grid, lambda, z);
    const Real scale = Real(1.0 / std::sqrt(double(in_grid.nx) * double(in_grid.ny)));
    return czt2d(gbar, in_grid.ny, in_grid.nx, -a.alpha_y, -a.alpha_x, scale);
}

// Unitary angular-spectrum transfer function on the grid's frequency axes.
// Evanescent components (fx^2 + fy^2 > 1/lambda^2) are zeroed.
template <class Real>
CArr<Real> angular_spectrum_kernel(const Grid& g, double lambda, double dz) {
    RVec<double> fx = freq_axis<double>(g.nx, g.px);
    RVec<double> fy = freq_axis<double>(g.ny, g.py);
    const double inv_l2 = 1.0 / (lambda * lambda);
    CArr<Real> H(g.ny, g.nx);
    for (int r = 0; r < g.ny; ++r)
        for (int c = 0; c < g.nx; ++c) {
            const double f2 = fx[c] * fx[c] + fy[r] * fy[r];
            if (f2 > inv_l2) {
                H(r, c) = Cpx<Real>(0, 0);
            } else {
                const std::complex<double> h = std::polar(1.0, 2.0 * kPi * dz * std::sqrt(inv_l2 - f2));
                H(r, c) = Cpx<Real>(Real(h.real()), Real(h.imag()));
            }
        }
    return H;
}

template <class Real>
ComplexField<Real> angular_spectrum(const ComplexField<Real>& f, double lambda, double dz) {
    if (!(lambda > 0.0)) throw InvalidArgumentError("angular spectrum needs lambda > 0");
    CArr<Real> H = angular_spectrum_kernel<Real>(f.grid, lambda, dz);
    return ComplexField<Real>(f.grid, idft2c(CArr<Real>(dft2c(f.values) * H)));
}

template <class Real>
CArr<Real> angular_spectrum_adjoint(const CArr<Real>& gbar, const Grid& g, double lambda,
                                    double dz) {
    CArr<Real> H = angular_spectrum_kernel<Real>(g, lambda, dz);
    return idft2c(CArr<Real>(dft2c(gbar) * H.conjugate()));
}

} // namespace ptycho
