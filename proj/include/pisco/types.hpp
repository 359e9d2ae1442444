#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace pisco {

using cdouble = std::complex<double>;

/// Complex image indexed (x, y). Column-major storage puts x fastest, which
/// matches the row-major order of Cartesian k-space grids.
using ComplexImage = Eigen::MatrixXcd;
using RealImage = Eigen::MatrixXd;

/// A point in normalized k-space, (k_x, k_y) in [-0.5, 0.5), plus time in [0, 1].
struct Coord {
    double kx = 0.0;
    double ky = 0.0;
    double t = 0.0;

    friend bool operator==(const Coord&, const Coord&) = default;
};

inline double radius(const Coord& c) { return std::hypot(c.kx, c.ky); }

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class InsufficientData : public Error {
public:
    InsufficientData(const std::string& what, std::size_t required, std::size_t available)
        : Error(what + " (required " + std::to_string(required) + ", available " +
                std::to_string(available) + ")"),
          required_(required),
          available_(available) {}

    std::size_t required() const noexcept { return required_; }
    std::size_t available() const noexcept { return available_; }

private:
    std::size_t required_;
    std::size_t available_;
};

class IllConditioned : public Error {
public:
    using Error::Error;
};

class Diverged : public Error {
public:
    explicit Diverged(int epoch)
        : Error("loss became non-finite at epoch " + std::to_string(epoch)), epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

}  // namespace pisco
