#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace drpo {

enum class ErrorCode {
  invalid_range,
  dimension_mismatch,
  timestep_out_of_range,
  zero_projection,
  empty_batch,
  non_positive_temperature,
  degenerate_mse,
  invalid_arch,
  unknown_loss_kind,
  shape_mismatch,
  unknown_prompt,
  degenerate_transform,
  io_error,
  parse_error,
  divergence,
  config_conflict,
  config_error,
  version_mismatch,
  corrupt_header,
  insufficient_samples,
  non_psd,
  invalid_k,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// True for errors caused by bad user input rather than a failed run.
bool is_user_error(ErrorCode code);

}  // namespace drpo
