#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace fairspec {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error {
    using Error::Error;
};

struct DimensionMismatch : Error {
    using Error::Error;
};

/// Power iteration ran out of iterations. Carries the final estimate so
/// callers can decide whether it is usable.
struct NonConvergence : Error {
    NonConvergence(const std::string& what, double last_sigma, double residual,
                   std::vector<double> last_iterate)
        : Error(what), last_sigma(last_sigma), residual(residual),
          last_iterate(std::move(last_iterate)) {}
    double last_sigma;
    double residual;
    std::vector<double> last_iterate;
};

/// Top singular value is (numerically) repeated, so the spectral norm is
/// not differentiable at this point.
struct DegenerateSpectrum : Error {
    DegenerateSpectrum(const std::string& what, double sigma1, double sigma2)
        : Error(what), sigma1(sigma1), sigma2(sigma2) {}
    double sigma1;
    double sigma2;
};

struct MissingClass : Error {
    MissingClass(const std::string& what, int label) : Error(what), label(label) {}
    int label;
};

struct FormatError : Error {
    using Error::Error;
};
struct BadMagic : FormatError {
    using FormatError::FormatError;
};
struct TruncatedFile : FormatError {
    using FormatError::FormatError;
};
struct CountMismatch : FormatError {
    using FormatError::FormatError;
};

struct InfeasibleBound : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace fairspec
