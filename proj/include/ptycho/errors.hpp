#pragma once

#include <stdexcept>
#include <string>

namespace ptycho {

// Error taxonomy. The three roots map to CLI exit codes:
//   ArgumentError -> 2, DataError -> 3, NumericalError -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ArgumentError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct NumericalError : Error {
    using Error::Error;
};

struct InvalidArgumentError : ArgumentError {
    using ArgumentError::ArgumentError;
};
// Requested CZT output frequencies outside the input Nyquist band.
struct BandLimitError : ArgumentError {
    using ArgumentError::ArgumentError;
};
struct GeometryError : ArgumentError {
    using ArgumentError::ArgumentError;
};
struct SamplingError : ArgumentError {
    using ArgumentError::ArgumentError;
};
struct GraphConstructionError : ArgumentError {
    using ArgumentError::ArgumentError;
};
// Scan window falls outside the stored object support; message names the shot.
struct ScanRangeError : DataError {
    using DataError::DataError;
};
struct PreprocessError : DataError {
    using DataError::DataError;
};
struct CorruptContainerError : DataError {
    using DataError::DataError;
};
struct UndefinedMetricError : NumericalError {
    using NumericalError::NumericalError;
};
struct InternalConsistencyError : NumericalError {
    using NumericalError::NumericalError;
};
struct NumericalFailureError : NumericalError {
    using NumericalError::NumericalError;
};
struct ClusteringError : NumericalError {
    using NumericalError::NumericalError;
};
struct DivergenceError : NumericalError {
    using NumericalError::NumericalError;
};

} // namespace ptycho
