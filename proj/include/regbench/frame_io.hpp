#pragma once

// RBF1 frame container. All integers and reals little-endian.
//
//   offset  size        field
//   0       4           magic "RBF1"
//   4       2           version (1)
//   6       1           dtype (1 = float32, 2 = float64)
//   7       1           reserved (0)
//   8       8           timestamp, int64 seconds since Unix epoch (UTC)
//   16      4 x 3       V, H, W (uint32)
//   28      8           nominal resolution in degrees (float64)
//   36      ...         V channel records: u16 name length, name (UTF-8),
//                       i32 level hPa (0 = surface/static), u16 units length, units
//   ...     8 H         latitudes (float64)
//   ...     8 W         longitudes (float64)
//   ...     V H W e     payload, channel-major then row-major, e = 4 or 8
//   ...     4           CRC-32 (zlib polynomial) over the payload bytes

#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "regbench/bytes.hpp"
#include "regbench/grid.hpp"

namespace regbench {

enum class DType : std::uint8_t { Float32 = 1, Float64 = 2 };

inline std::size_t element_size(DType d) { return d == DType::Float32 ? 4 : 8; }

inline DType parse_dtype(const std::string& s) {
  if (s == "f32" || s == "float32") return DType::Float32;
  if (s == "f64" || s == "float64") return DType::Float64;
  throw Error(ErrorKind::InvalidConfig, "unknown dtype '" + s + "'");
}
inline std::string to_string(DType d) { return d == DType::Float32 ? "f32" : "f64"; }

inline constexpr std::uint16_t kFrameVersion = 1;
/// Upper bound on V*H*W accepted from a header.
inline constexpr std::uint64_t kMaxElements = std::uint64_t(1) << 34;

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = uInt(std::min<std::size_t>(bytes.size() - offset, std::numeric_limits<uInt>::max()));
    crc = ::crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return std::uint32_t(crc);
}

/// Element payload (no header) in the given dtype.
inline void encode_elements(ByteWriter& out, std::span<const double> values, DType dtype) {
  for (double x : values) {
    if (dtype == DType::Float32) {
      out.f32(float(x));
    } else {
      out.f64(x);
    }
  }
}

inline std::vector<double> decode_elements(ByteReader& in, std::size_t count, DType dtype) {
  in.require(count * element_size(dtype));
  std::vector<double> values(count);
  for (auto& x : values) x = dtype == DType::Float32 ? double(in.f32()) : in.f64();
  return values;
}

inline DType checked_dtype(std::uint8_t code, ErrorKind kind) {
  if (code != std::uint8_t(DType::Float32) && code != std::uint8_t(DType::Float64)) {
    throw Error(kind, "unknown dtype code " + std::to_string(code));
  }
  return DType(code);
}

inline std::uint64_t checked_element_count(std::uint32_t v, std::uint32_t h, std::uint32_t w, ErrorKind kind) {
  const std::uint64_t n = std::uint64_t(v) * std::uint64_t(h) * std::uint64_t(w);
  if (v == 0 || h == 0 || w == 0 || n > kMaxElements) {
    throw Error(kind, "implausible shape " + std::to_string(v) + "x" + std::to_string(h) + "x" + std::to_string(w));
  }
  return n;
}

inline std::vector<std::uint8_t> encode_frame(const FieldFrame& frame, DType dtype = DType::Float64) {
  const auto& shape = frame.shape();
  const auto& geometry = *frame.geometry();
  ByteWriter out;
  out.raw("RBF1");
  out.u16(kFrameVersion);
  out.u8(std::uint8_t(dtype));
  out.u8(0);
  out.i64(to_unix(frame.time()));
  out.u32(std::uint32_t(shape.channels));
  out.u32(std::uint32_t(shape.rows));
  out.u32(std::uint32_t(shape.cols));
  out.f64(geometry.resolution_deg());
  for (const auto& c : frame.catalog()->channels()) {
    out.str16(c.name);
    out.i32(c.level_hpa.value_or(0));
    out.str16(c.units);
  }
  for (double x : geometry.lat()) out.f64(x);
  for (double x : geometry.lon()) out.f64(x);
  const std::size_t payload_begin = out.size();
  encode_elements(out, frame.values().data(), dtype);
  const auto& buf = out.buffer();
  const auto crc = crc32_of(std::span<const std::uint8_t>(buf).subspan(payload_begin));
  out.u32(crc);
  return out.take();
}

struct DecodedFrame {
  FieldFrame frame;
  DType dtype;
};

inline DecodedFrame decode_frame_with_dtype(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, ErrorKind::FormatError);
  const auto magic = in.bytes(4);
  if (std::string(magic.begin(), magic.end()) != "RBF1") throw Error(ErrorKind::FormatError, "bad magic");
  const auto version = in.u16();
  if (version != kFrameVersion) throw Error(ErrorKind::FormatError, "unsupported version " + std::to_string(version));
  const DType dtype = checked_dtype(in.u8(), ErrorKind::FormatError);
  in.u8();
  const auto time = from_unix(in.i64());
  const auto v = in.u32(), h = in.u32(), w = in.u32();
  const auto count = checked_element_count(v, h, w, ErrorKind::FormatError);
  const double resolution = in.f64();

  std::vector<Channel> channels;
  channels.reserve(std::min<std::size_t>(v, in.remaining()));
  for (std::uint32_t k = 0; k < v; ++k) {
    Channel c;
    c.name = in.str16();
    const auto level = in.i32();
    if (level != 0) c.level_hpa = level;
    c.units = in.str16();
    channels.push_back(std::move(c));
  }
  in.require(8 * (std::size_t(h) + std::size_t(w)));
  std::vector<double> lat(h), lon(w);
  for (auto& x : lat) x = in.f64();
  for (auto& x : lon) x = in.f64();

  const std::size_t payload_bytes = std::size_t(count) * element_size(dtype);
  if (in.remaining() != payload_bytes + 4) {
    throw Error(ErrorKind::FormatError, "payload size mismatch: " + std::to_string(in.remaining()) +
                                            " bytes left, expected " + std::to_string(payload_bytes + 4));
  }
  const auto payload = bytes.subspan(in.position(), payload_bytes);
  std::vector<double> values = decode_elements(in, std::size_t(count), dtype);
  const auto stored_crc = in.u32();
  if (crc32_of(payload) != stored_crc) throw Error(ErrorKind::CorruptFile, "payload checksum mismatch");

  auto catalog = std::make_shared<const VariableCatalog>(std::move(channels));
  auto geometry = std::make_shared<const GridGeometry>(std::move(lat), std::move(lon), resolution);
  return {FieldFrame(time, Tensor3(Shape3{v, h, w}, std::move(values)), std::move(catalog), std::move(geometry)),
          dtype};
}

inline FieldFrame decode_frame(std::span<const std::uint8_t> bytes) { return decode_frame_with_dtype(bytes).frame; }

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

/// Writes to a sibling temporary and renames over the destination.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::IoError, "cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw Error(ErrorKind::IoError, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline void write_frame(const FieldFrame& frame, const std::filesystem::path& path, DType dtype = DType::Float64) {
  write_file_atomic(path, encode_frame(frame, dtype));
}

inline FieldFrame read_frame(const std::filesystem::path& path) { return decode_frame(read_file_bytes(path)); }

}  // namespace regbench
