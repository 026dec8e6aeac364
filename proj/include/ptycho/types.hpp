#pragma once

#include <complex>
#include <cstdint>

#include <Eigen/Core>

namespace ptycho {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

template <class Real>
using Cpx = std::complex<Real>;

// Row-major so image rows are contiguous; (row, col) = (y, x) throughout.
template <class Real>
using CArr = Eigen::Array<std::complex<Real>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using RArr = Eigen::Array<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskArr = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Real>
using RVec = Eigen::Array<Real, Eigen::Dynamic, 1>;
template <class Real>
using CVec = Eigen::Array<std::complex<Real>, Eigen::Dynamic, 1>;

template <class Real>
using Vec2 = Eigen::Matrix<Real, 2, 1>;

} // namespace ptycho
