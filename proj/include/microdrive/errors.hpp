#pragma once

// Error taxonomy for the CLI exit-code contract.

#include <stdexcept>
#include <string>

namespace microdrive {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace microdrive
