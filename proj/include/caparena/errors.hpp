#ifndef CAPARENA_ERRORS_HPP
#define CAPARENA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace caparena {

// Invalid configuration or precondition violation supplied by the caller.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failure (missing file, unwritable path, short write).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally broken artifact: bad magic, unsupported version, truncation.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer shape mismatch.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Pixel coordinate outside the image.
struct BoundsError : std::runtime_error {
    explicit BoundsError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric argument outside its mathematical domain.
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// A stage required by the game/report builder has not been recorded.
struct MissingStageError : std::runtime_error {
    explicit MissingStageError(const std::string& msg) : std::runtime_error(msg) {}
};

// A payoff table is missing cells over the finite action product.
struct IncompleteTableError : std::runtime_error {
    explicit IncompleteTableError(const std::string& msg) : std::runtime_error(msg) {}
};

// A game tree violates the structural invariants backward induction needs.
struct MalformedTreeError : std::runtime_error {
    explicit MalformedTreeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace caparena

#endif
