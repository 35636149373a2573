#include "drpo/error.hpp"

namespace drpo {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_range: return "invalid-range";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::timestep_out_of_range: return "timestep-out-of-range";
    case ErrorCode::zero_projection: return "zero-projection";
    case ErrorCode::empty_batch: return "empty-batch";
    case ErrorCode::non_positive_temperature: return "non-positive-temperature";
    case ErrorCode::degenerate_mse: return "degenerate-mse";
    case ErrorCode::invalid_arch: return "invalid-arch";
    case ErrorCode::unknown_loss_kind: return "unknown-loss-kind";
    case ErrorCode::shape_mismatch: return "shape-mismatch";
    case ErrorCode::unknown_prompt: return "unknown-prompt";
    case ErrorCode::degenerate_transform: return "degenerate-transform";
    case ErrorCode::io_error: return "io-error";
    case ErrorCode::parse_error: return "parse-error";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::config_conflict: return "config-conflict";
    case ErrorCode::config_error: return "config-error";
    case ErrorCode::version_mismatch: return "version-mismatch";
    case ErrorCode::corrupt_header: return "corrupt-header";
    case ErrorCode::insufficient_samples: return "insufficient-samples";
    case ErrorCode::non_psd: return "non-psd";
    case ErrorCode::invalid_k: return "invalid-k";
  }
  return "unknown";
}

bool is_user_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::io_error:
    case ErrorCode::parse_error:
    case ErrorCode::corrupt_header:
    case ErrorCode::version_mismatch:
    case ErrorCode::divergence:
      return false;
    default:
      return true;
  }
}

}  // namespace drpo
