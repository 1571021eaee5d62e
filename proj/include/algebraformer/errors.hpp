#pragma once

#include <stdexcept>
#include <string>

namespace algebraformer {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad inputs, malformed files, dataset generation failures.
class DataError : public Error {
public:
    using Error::Error;
};

/// Numerical breakdown: singular systems, divergence, no convergence.
class NumericalError : public Error {
public:
    using Error::Error;
};

#define ALGEBRAFORMER_ERROR(Name, Base)        \
    class Name : public Base {                 \
    public:                                    \
        using Base::Base;                      \
    }

ALGEBRAFORMER_ERROR(SingularMatrix, NumericalError);
ALGEBRAFORMER_ERROR(RankDeficient, NumericalError);
ALGEBRAFORMER_ERROR(NoConvergence, NumericalError);
ALGEBRAFORMER_ERROR(DivergenceError, NumericalError);
ALGEBRAFORMER_ERROR(DegenerateTruth, NumericalError);

ALGEBRAFORMER_ERROR(InvalidDegree, DataError);
ALGEBRAFORMER_ERROR(InvalidInterval, DataError);
ALGEBRAFORMER_ERROR(OutOfDomain, DataError);
ALGEBRAFORMER_ERROR(DatasetError, DataError);
ALGEBRAFORMER_ERROR(ShapeMismatch, DataError);
ALGEBRAFORMER_ERROR(TooManyTokens, DataError);
ALGEBRAFORMER_ERROR(FormatError, DataError);

#undef ALGEBRAFORMER_ERROR

} // namespace algebraformer
