#pragma once

#include <stdexcept>
#include <string>

namespace srt {

// Base class for every error raised by the library. The CLI maps these to
// exit code 1; argument errors are reported separately with exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class ContainerError : public Error {
public:
    using Error::Error;
};

class LayerError : public Error {
public:
    using Error::Error;
};

class ShiftError : public Error {
public:
    using Error::Error;
};

// A pixel or token received no valid sample; usually the shifts are too large.
class CoverageError : public Error {
public:
    using Error::Error;
};

class UnsupportedStatistic : public Error {
public:
    using Error::Error;
};

class DegenerateBasis : public Error {
public:
    DegenerateBasis(const std::string& what, int rank) : Error(what), rank_(rank) {}
    int rank() const noexcept { return rank_; }

private:
    int rank_;
};

class EquivalenceError : public Error {
public:
    using Error::Error;
};

} // namespace srt
