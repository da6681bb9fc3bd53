#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "freediff/tensor.hpp"

namespace freediff {

// .fdlt layout, all integers little-endian:
//   0..3   magic "FDLT"
//   4..7   u32 version (1)
//   8..19  u32 C, H, W
//   20     dtype (0 = f32 LE)
//   21..23 reserved, zero
//   24..   C*H*W f32 values, row-major per channel
inline constexpr std::size_t kLatentHeaderSize = 24;
inline constexpr std::uint32_t kLatentVersion = 1;

std::string encode_latent(const LatentTensor& x);
LatentTensor decode_latent(std::string_view bytes);

void write_latent_file(const LatentTensor& x, const std::filesystem::path& path);
LatentTensor read_latent_file(const std::filesystem::path& path);

}  // namespace freediff
