#include "freediff/latent_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "freediff/error.hpp"

namespace freediff {
namespace {

constexpr char kMagic[4] = {'F', 'D', 'L', 'T'};
constexpr std::uint8_t kDtypeF32 = 0;
// Refuse headers whose payload would exceed 4 GiB.
constexpr std::uint64_t kMaxPayloadBytes = std::uint64_t{1} << 32;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

Error format_error(const std::string& field, const std::string& detail) {
  return Error(ErrorKind::Format, "latent file: bad " + field + ": " + detail, field);
}

}  // namespace

std::string encode_latent(const LatentTensor& x) {
  const Shape& s = x.shape();
  std::string out;
  out.reserve(kLatentHeaderSize + 4 * s.size());
  out.append(kMagic, 4);
  put_u32(out, kLatentVersion);
  put_u32(out, static_cast<std::uint32_t>(s.channels));
  put_u32(out, static_cast<std::uint32_t>(s.height));
  put_u32(out, static_cast<std::uint32_t>(s.width));
  out.push_back(static_cast<char>(kDtypeF32));
  out.append(3, '\0');
  for (double v : x.values()) {
    const float f = static_cast<float>(v);
    if (!std::isfinite(f)) throw format_error("payload", "value out of float32 range");
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

LatentTensor decode_latent(std::string_view bytes) {
  if (bytes.size() < kLatentHeaderSize) {
    throw format_error("header", "need " + std::to_string(kLatentHeaderSize) + " bytes, got " +
                                     std::to_string(bytes.size()));
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw format_error("magic", "expected FDLT");
  if (const auto version = get_u32(bytes, 4); version != kLatentVersion) {
    throw format_error("version", "unsupported version " + std::to_string(version));
  }
  const std::uint64_t c = get_u32(bytes, 8), h = get_u32(bytes, 12), w = get_u32(bytes, 16);
  if (c == 0 || h == 0 || w == 0) throw format_error("dimensions", "zero extent");
  // Each factor is < 2^32, so the running product is checked before it can wrap.
  const std::uint64_t plane = h * w;
  if (plane > kMaxPayloadBytes / 4 || c > kMaxPayloadBytes / 4 / plane) {
    throw format_error("dimensions", "payload would exceed 4 GiB");
  }
  if (static_cast<std::uint8_t>(bytes[20]) != kDtypeF32) {
    throw format_error("dtype", "unsupported code " +
                                    std::to_string(static_cast<std::uint8_t>(bytes[20])));
  }
  if (bytes[21] != 0 || bytes[22] != 0 || bytes[23] != 0) {
    throw format_error("reserved", "bytes 21..23 must be zero");
  }
  const std::uint64_t count = c * plane;
  const std::uint64_t payload = bytes.size() - kLatentHeaderSize;
  if (payload != 4 * count) {
    throw format_error("payload length", "expected " + std::to_string(4 * count) + " bytes, got " +
                                             std::to_string(payload));
  }
  std::vector<double> values(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const float f = std::bit_cast<float>(get_u32(bytes, kLatentHeaderSize + 4 * i));
    if (!std::isfinite(f)) throw format_error("payload", "non-finite value");
    values[i] = f;
  }
  return LatentTensor(Shape{c, h, w}, std::move(values));
}

void write_latent_file(const LatentTensor& x, const std::filesystem::path& path) {
  const std::string bytes = encode_latent(x);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Precondition, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Precondition, "failed writing " + path.string());
}

LatentTensor read_latent_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::NotFound, "cannot open " + path.string(), "path");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_latent(bytes);
}

}  // namespace freediff
