#pragma once

#include <stdexcept>

namespace gloie {

// Exit-code mapping for the CLI: config = 1, data = 2, divergence = 3.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct divergence_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace gloie
