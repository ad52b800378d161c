#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cvid {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
/// Inputs with incompatible shape or channel count.
class ArityError : public Error { public: using Error::Error; };
class BoundsError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
/// A numeric argument outside the mathematical domain of the operation.
class DomainError : public Error { public: using Error::Error; };
/// A call that violates an API contract (e.g. training mode without targets).
class ContractError : public Error { public: using Error::Error; };
class PreconditionError : public Error { public: using Error::Error; };
class CheckpointError : public Error { public: using Error::Error; };

class DivergedError : public Error {
public:
    DivergedError(std::int64_t step, std::int64_t last_finite_step)
        : Error("training diverged: non-finite loss at step " + std::to_string(step) +
                " (last finite step " + std::to_string(last_finite_step) + ")"),
          step_(step), last_finite_(last_finite_step) {}

    std::int64_t step() const noexcept { return step_; }
    std::int64_t last_finite_step() const noexcept { return last_finite_; }

private:
    std::int64_t step_;
    std::int64_t last_finite_;
};

}  // namespace cvid
