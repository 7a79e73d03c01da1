#pragma once

#include <stdexcept>
#include <string>

namespace aoisnn {

// Error hierarchy shared across the library. The CLI maps these onto
// process exit codes (config -> 2, data/format -> 3, numeric -> 4).
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct shape_error : error {
  using error::error;
};

struct numeric_error : error {
  using error::error;
};

struct config_error : error {
  using error::error;
};

struct data_error : error {
  using error::error;
};

struct format_error : error {
  using error::error;
};

struct contract_error : error {
  using error::error;
};

}  // namespace aoisnn
