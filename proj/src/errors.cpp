#include "dyjr/errors.hpp"

namespace dyjr {

ExitCode exit_code(const std::exception& e) noexcept {
  if (dynamic_cast<const ConfigError*>(&e)) return ExitCode::kConfig;
  if (dynamic_cast<const NumericError*>(&e)) return ExitCode::kNumeric;
  if (dynamic_cast<const IoError*>(&e)) return ExitCode::kIo;
  return ExitCode::kFailure;
}

}  // namespace dyjr
