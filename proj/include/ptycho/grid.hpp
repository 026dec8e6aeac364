#pragma once

#include <cmath>

#include "ptycho/errors.hpp"
#include "ptycho/types.hpp"

namespace ptycho {

// Index floor(n/2) is the coordinate origin on every axis, in real space and
// in frequency space alike. Frequency pitch of the conjugate grid is
// 1/(n*pitch).
struct Grid {
    int nx = 0;
    int ny = 0;
    double px = 0.0; // pitch along x [m]
    double py = 0.0; // pitch along y [m]

    std::int64_t pixels() const { return std::int64_t(nx) * ny; }
    double extent_x() const { return nx * px; }
    double extent_y() const { return ny * py; }
    int cx() const { return nx / 2; }
    int cy() const { return ny / 2; }

    bool operator==(const Grid& o) const {
        return nx == o.nx && ny == o.ny && px == o.px && py == o.py;
    }
    bool operator!=(const Grid& o) const { return !(*this == o); }
};

inline Grid make_grid(int nx, int ny, double px, double py) {
    if (nx <= 0 || ny <= 0)
        throw InvalidArgumentError("grid pixel counts must be positive");
    if (!(px > 0.0) || !(py > 0.0))
        throw InvalidArgumentError("grid pitches must be positive");
    return Grid{nx, ny, px, py};
}

inline Grid make_grid(int n, double pitch) { return make_grid(n, n, pitch, pitch); }

inline int center_index(int n) { return n / 2; }

// Physical coordinate of pixel i: (i - n/2) * pitch.
template <class Real>
RVec<Real> coord_axis(int n, double pitch) {
    RVec<Real> a(n);
    const int c = center_index(n);
    for (int i = 0; i < n; ++i) a[i] = Real((i - c) * pitch);
    return a;
}

// Frequency of bin i on the conjugate grid: (i - n/2) / (n * pitch).
template <class Real>
RVec<Real> freq_axis(int n, double pitch) {
    RVec<Real> a(n);
    const int c = center_index(n);
    const double df = 1.0 / (double(n) * pitch);
    for (int i = 0; i < n; ++i) a[i] = Real((i - c) * df);
    return a;
}

// Conjugate (far-field) grid of `g` at wavelength/distance: pitch lambda*z/(n*pitch).
inline Grid conjugate_grid(const Grid& g, double lambda, double z) {
    if (!(lambda > 0.0) || z == 0.0)
        throw InvalidArgumentError("conjugate_grid needs lambda > 0 and z != 0");
    return make_grid(g.nx, g.ny, lambda * std::abs(z) / (g.nx * g.px),
                     lambda * std::abs(z) / (g.ny * g.py));
}

} // namespace ptycho
