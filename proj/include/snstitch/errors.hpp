#pragma once

#include <stdexcept>
#include <string>

namespace snstitch {

// Dimension disagreement between operands.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Block or element index outside the valid range.
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Malformed file contents (checkpoint container, IDX, experiment file).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-convergence or divergence inside a numerical routine.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operation invoked before its prerequisites were established.
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

// Referenced entity not present in its container.
struct LookupError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Experiment-file parse or validation problem, with 1-based position.
struct ConfigError : std::runtime_error {
  int line;
  int column;
  ConfigError(const std::string& msg, int line_, int column_)
      : std::runtime_error(msg), line(line_), column(column_) {}
};

}  // namespace snstitch
