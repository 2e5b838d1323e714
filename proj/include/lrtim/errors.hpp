#pragma once

#include <stdexcept>
#include <string>

namespace lrtim {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A precondition on the arguments was violated (bad size, negative exponent, ...).
class InvalidArgument : public Error {
  public:
    using Error::Error;
};

/// An iterative method stopped without meeting its tolerance. `achieved`
/// holds the best accuracy measure reached, `iterations` the work spent.
class ConvergenceError : public Error {
  public:
    ConvergenceError(const std::string& what, double achieved, int iterations)
        : Error(what + " (achieved " + std::to_string(achieved) + " after " +
                std::to_string(iterations) + " iterations)"),
          achieved_(achieved),
          iterations_(iterations) {}

    double achieved() const noexcept { return achieved_; }
    int iterations() const noexcept { return iterations_; }

  private:
    double achieved_;
    int iterations_;
};

/// Two sampled curves never change order on the supplied grid.
class NoCrossing : public Error {
  public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw InvalidArgument(message);
}

}  // namespace lrtim
