#pragma once

#include <stdexcept>
#include <string>

namespace drag {

// Shape or axis disagreement between operands.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller-side precondition was violated (non-scalar loss, N > C, unknown mode, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// backward() called on a graph that was already swept or cleared.
struct StaleGraphError : std::runtime_error {
  explicit StaleGraphError(const std::string& msg) : std::runtime_error(msg) {}
};

// A function expected to be deterministic returned different values on repeated calls.
struct DeterminismError : std::runtime_error {
  explicit DeterminismError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file content: manifest, image, checkpoint, config.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset synthesis could not satisfy its constraints.
struct GenerationError : std::runtime_error {
  explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

// A training loss became non-finite.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace drag
