#pragma once

#include <cstdint>
#include <filesystem>

#include "drpo/config.hpp"
#include "drpo/model.hpp"
#include "drpo/schedule.hpp"

namespace drpo {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  DenoiserParams params;
  ScheduleSpec schedule;
  ConfigMap config;  ///< resolved experiment config the params were trained under
};

/// Binary layout, little-endian throughout:
///   "DRPO" | u16 version | u8 activation | u32 layer count | u32 sizes...
///   | u32 T | f64 beta_start | f64 beta_end | u8 schedule kind
///   | u32 config length | config text | u64 theta count | f64 theta...
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const DenoiserParams& params, const DiffusionSchedule& schedule,
                     const ConfigMap& config, const std::filesystem::path& path);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace drpo
