#pragma once

// Brute-force non-uniform DFT, the oracle every fast transform here is
// checked against. O(n^2 * points); test and validation use only.

#include <vector>

#include "ptycho/grid.hpp"
#include "ptycho/types.hpp"

namespace ptycho {

// out[k] = scale * sum_r x(r) * exp(-2*pi*1i * (fx[k] * x_r + fy[k] * y_r))
// with pixel coordinates taken from `g` (origin at the center pixel).
template <class Real>
CVec<Real> nudft2(const CArr<Real>& x, const Grid& g, const std::vector<double>& fx,
                  const std::vector<double>& fy, double scale) {
    if (fx.size() != fy.size()) throw InvalidArgumentError("nudft2 needs matching frequency lists");
    if (int(x.rows()) != g.ny || int(x.cols()) != g.nx)
        throw InvalidArgumentError("nudft2 array does not match grid");
    CVec<Real> out(Eigen::Index(fx.size()));
    for (std::size_t k = 0; k < fx.size(); ++k) {
        std::complex<double> acc(0, 0);
        for (int r = 0; r < g.ny; ++r) {
            const double y = (r - g.cy()) * g.py;
            for (int c = 0; c < g.nx; ++c) {
                const double xx = (c - g.cx()) * g.px;
                const std::complex<double> v(double(x(r, c).real()), double(x(r, c).imag()));
                acc += v * std::polar(1.0, -2.0 * kPi * (fx[k] * xx + fy[k] * y));
            }
        }
        acc *= scale;
        out[Eigen::Index(k)] = Cpx<Real>(Real(acc.real()), Real(acc.imag()));
    }
    return out;
}

} // namespace ptycho
