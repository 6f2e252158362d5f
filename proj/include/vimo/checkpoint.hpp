#pragma once

#include <filesystem>
#include <stdexcept>

#include "vimo/params.hpp"

namespace vimo {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes a VIMC container: "VIMC", u32 version, u32 count, then per tensor
/// u16 name length, name bytes, u8 rank, u32 dims, little-endian f64 values.
void save_checkpoint(const std::filesystem::path& path, const ParamList& params);
ParamList load_checkpoint(const std::filesystem::path& path);

}  // namespace vimo
