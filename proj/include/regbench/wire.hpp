#pragma once

// Framed binary protocol between the engine and an external forecaster or
// denoiser. Every frame is
//
//   u32 length   payload bytes (the type byte is not counted)
//   u8  type     1..8, see WireType
//   ...          payload
//
// All integers and reals are little-endian. Payload building blocks:
//
//   array    u32 V, u32 H, u32 W, u8 dtype (1 = f32, 2 = f64),
//            V*H*W elements, channel-major then row-major
//   timed    i64 seconds since the Unix epoch, then an array
//   string   u16 byte length, UTF-8 bytes
//   catalog  u16 count, then per channel: string name, i32 level hPa
//            (0 = surface/static), string units
//   geometry u32 H, u32 W, f64 resolution, H f64 latitudes, W f64 longitudes
//
// Payloads by type:
//
//   1 HandshakeRequest  u16 protocol version, string service ("forecast" or
//                       "denoise"), catalog, geometry, u16 history,
//                       u8 conditioning mode, u16 halo width
//   2 HandshakeAck      u8 accepted, u16 history, u8 mode, string message
//   3 StepRequest       i64 time, u32 step index, u16 n, n timed history
//                       arrays (oldest first), u16 m, m timed aux arrays
//   4 StepResponse      array (the increment)
//   5 ErrorReport       u16 error code, string message
//   6 Shutdown          empty
//   7 DenoiseRequest    f64 sigma, array (noisy increment), u16 k,
//                       k timed conditioning arrays
//   8 DenoiseResponse   array (denoised increment)
//
// Error codes are the ErrorKind ordinal plus one.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "regbench/engine.hpp"
#include "regbench/frame_io.hpp"

namespace regbench {

inline constexpr std::uint16_t kWireVersion = 1;
inline constexpr std::uint32_t kDefaultMaxMessage = std::uint32_t(1) << 30;
inline constexpr std::size_t kWireHeaderSize = 5;

enum class WireType : std::uint8_t {
  HandshakeRequest = 1,
  HandshakeAck = 2,
  StepRequest = 3,
  StepResponse = 4,
  ErrorReport = 5,
  Shutdown = 6,
  DenoiseRequest = 7,
  DenoiseResponse = 8,
};

struct WireArray {
  Tensor3 values;
  DType dtype = DType::Float64;
  bool operator==(const WireArray&) const = default;
};

struct TimedArray {
  Timestamp time;
  WireArray array;
  bool operator==(const TimedArray&) const = default;
};

struct HandshakeRequest {
  std::uint16_t version = kWireVersion;
  std::string service = "forecast";
  VariableCatalog catalog;
  GridGeometry geometry;
  std::uint16_t history = 0;
  ConditioningMode mode = ConditioningMode::BoundaryForcing;
  std::uint16_t halo_width = 0;

  friend bool operator==(const HandshakeRequest& a, const HandshakeRequest& b) {
    return a.version == b.version && a.service == b.service && a.catalog == b.catalog && a.geometry == b.geometry &&
           a.geometry.resolution_deg() == b.geometry.resolution_deg() && a.history == b.history && a.mode == b.mode &&
           a.halo_width == b.halo_width;
  }
};

struct HandshakeAck {
  bool accepted = true;
  std::uint16_t history = 0;
  ConditioningMode mode = ConditioningMode::BoundaryForcing;
  std::string message;
  bool operator==(const HandshakeAck&) const = default;
};

struct StepRequest {
  Timestamp time;
  std::uint32_t step_index = 0;
  std::vector<TimedArray> history;
  std::vector<TimedArray> aux;
  bool operator==(const StepRequest&) const = default;
};

struct StepResponse {
  WireArray increment;
  bool operator==(const StepResponse&) const = default;
};

struct ErrorReport {
  ErrorKind code = ErrorKind::AdapterError;
  std::string message;
  bool operator==(const ErrorReport&) const = default;
};

struct Shutdown {
  bool operator==(const Shutdown&) const = default;
};

struct DenoiseRequest {
  double sigma = 0.0;
  WireArray noisy;
  std::vector<TimedArray> conditioning;
  bool operator==(const DenoiseRequest&) const = default;
};

struct DenoiseResponse {
  WireArray denoised;
  bool operator==(const DenoiseResponse&) const = default;
};

/// Alternatives are in type-byte order: index + 1 is the type byte.
using WireMessage = std::variant<HandshakeRequest, HandshakeAck, StepRequest, StepResponse, ErrorReport, Shutdown,
                                 DenoiseRequest, DenoiseResponse>;

inline WireType wire_type(const WireMessage& m) { return WireType(m.index() + 1); }

inline std::uint16_t error_code(ErrorKind k) { return std::uint16_t(std::uint16_t(k) + 1); }

inline ErrorKind error_kind_from_code(std::uint16_t code) {
  if (code < 1 || code > std::uint16_t(ErrorKind::IoError) + 1) {
    throw Error(ErrorKind::ProtocolError, "unknown error code " + std::to_string(code));
  }
  return ErrorKind(code - 1);
}

namespace detail {

inline void put_array(ByteWriter& w, const WireArray& a) {
  const auto& s = a.values.shape();
  w.u32(std::uint32_t(s.channels));
  w.u32(std::uint32_t(s.rows));
  w.u32(std::uint32_t(s.cols));
  w.u8(std::uint8_t(a.dtype));
  encode_elements(w, a.values.data(), a.dtype);
}

inline WireArray get_array(ByteReader& r) {
  const auto v = r.u32(), h = r.u32(), w = r.u32();
  const DType dtype = checked_dtype(r.u8(), ErrorKind::ProtocolError);
  const auto n = checked_element_count(v, h, w, ErrorKind::ProtocolError);
  r.require(std::size_t(n) * element_size(dtype));
  return {Tensor3(Shape3{v, h, w}, decode_elements(r, std::size_t(n), dtype)), dtype};
}

inline void put_timed(ByteWriter& w, const std::vector<TimedArray>& list) {
  if (list.size() > 0xFFFF) throw Error(ErrorKind::ProtocolError, "too many arrays in one message");
  w.u16(std::uint16_t(list.size()));
  for (const auto& t : list) {
    w.i64(to_unix(t.time));
    put_array(w, t.array);
  }
}

inline std::vector<TimedArray> get_timed(ByteReader& r) {
  const auto n = r.u16();
  std::vector<TimedArray> out;
  for (std::uint16_t k = 0; k < n; ++k) {
    const auto t = from_unix(r.i64());
    out.push_back({t, get_array(r)});
  }
  return out;
}

inline void put_catalog(ByteWriter& w, const VariableCatalog& c) {
  w.u16(std::uint16_t(c.size()));
  for (const auto& ch : c.channels()) {
    w.str16(ch.name);
    w.i32(ch.level_hpa.value_or(0));
    w.str16(ch.units);
  }
}

inline VariableCatalog get_catalog(ByteReader& r) {
  const auto n = r.u16();
  std::vector<Channel> channels;
  for (std::uint16_t k = 0; k < n; ++k) {
    Channel c;
    c.name = r.str16();
    const auto level = r.i32();
    if (level != 0) c.level_hpa = level;
    c.units = r.str16();
    channels.push_back(std::move(c));
  }
  return VariableCatalog(std::move(channels));
}

inline void put_geometry(ByteWriter& w, const GridGeometry& g) {
  w.u32(std::uint32_t(g.rows()));
  w.u32(std::uint32_t(g.cols()));
  w.f64(g.resolution_deg());
  for (double x : g.lat()) w.f64(x);
  for (double x : g.lon()) w.f64(x);
}

inline GridGeometry get_geometry(ByteReader& r) {
  const auto h = r.u32(), w = r.u32();
  const double res = r.f64();
  r.require(8 * (std::size_t(h) + std::size_t(w)));
  std::vector<double> lat(h), lon(w);
  for (auto& x : lat) x = r.f64();
  for (auto& x : lon) x = r.f64();
  return GridGeometry(std::move(lat), std::move(lon), res);
}

inline ConditioningMode get_mode(ByteReader& r) {
  const auto m = r.u8();
  if (m != 1 && m != 2) throw Error(ErrorKind::ProtocolError, "unknown conditioning mode " + std::to_string(m));
  return ConditioningMode(m);
}

struct PayloadEncoder {
  ByteWriter& w;
  void operator()(const HandshakeRequest& m) const {
    w.u16(m.version);
    w.str16(m.service);
    put_catalog(w, m.catalog);
    put_geometry(w, m.geometry);
    w.u16(m.history);
    w.u8(std::uint8_t(m.mode));
    w.u16(m.halo_width);
  }
  void operator()(const HandshakeAck& m) const {
    w.u8(m.accepted ? 1 : 0);
    w.u16(m.history);
    w.u8(std::uint8_t(m.mode));
    w.str16(m.message);
  }
  void operator()(const StepRequest& m) const {
    w.i64(to_unix(m.time));
    w.u32(m.step_index);
    put_timed(w, m.history);
    put_timed(w, m.aux);
  }
  void operator()(const StepResponse& m) const { put_array(w, m.increment); }
  void operator()(const ErrorReport& m) const {
    w.u16(error_code(m.code));
    w.str16(m.message);
  }
  void operator()(const Shutdown&) const {}
  void operator()(const DenoiseRequest& m) const {
    w.f64(m.sigma);
    put_array(w, m.noisy);
    put_timed(w, m.conditioning);
  }
  void operator()(const DenoiseResponse& m) const { put_array(w, m.denoised); }
};

inline WireMessage decode_payload(WireType type, ByteReader& r) {
  switch (type) {
    case WireType::HandshakeRequest: {
      HandshakeRequest m{.version = r.u16(), .service = r.str16(), .catalog = get_catalog(r), .geometry = get_geometry(r)};
      m.history = r.u16();
      m.mode = get_mode(r);
      m.halo_width = r.u16();
      return m;
    }
    case WireType::HandshakeAck: {
      HandshakeAck m;
      const auto accepted = r.u8();
      if (accepted > 1) throw Error(ErrorKind::ProtocolError, "bad accepted flag");
      m.accepted = accepted == 1;
      m.history = r.u16();
      m.mode = get_mode(r);
      m.message = r.str16();
      return m;
    }
    case WireType::StepRequest: {
      StepRequest m;
      m.time = from_unix(r.i64());
      m.step_index = r.u32();
      m.history = get_timed(r);
      m.aux = get_timed(r);
      return m;
    }
    case WireType::StepResponse: return StepResponse{get_array(r)};
    case WireType::ErrorReport: {
      ErrorReport m;
      m.code = error_kind_from_code(r.u16());
      m.message = r.str16();
      return m;
    }
    case WireType::Shutdown: return Shutdown{};
    case WireType::DenoiseRequest: {
      DenoiseRequest m;
      m.sigma = r.f64();
      m.noisy = get_array(r);
      m.conditioning = get_timed(r);
      return m;
    }
    case WireType::DenoiseResponse: return DenoiseResponse{get_array(r)};
  }
  throw Error(ErrorKind::ProtocolError, "unknown message type " + std::to_string(int(type)));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_payload(const WireMessage& message) {
  ByteWriter w;
  std::visit(detail::PayloadEncoder{w}, message);
  return w.take();
}

/// Complete frame: header plus payload.
inline std::vector<std::uint8_t> encode_wire(const WireMessage& message, std::uint32_t max_message = kDefaultMaxMessage) {
  auto payload = encode_payload(message);
  if (payload.size() > max_message) {
    throw Error(ErrorKind::ProtocolError, "message of " + std::to_string(payload.size()) + " bytes exceeds the maximum");
  }
  ByteWriter w;
  w.u32(std::uint32_t(payload.size()));
  w.u8(std::uint8_t(wire_type(message)));
  w.bytes(payload);
  return w.take();
}

struct WireHeader {
  std::uint32_t length = 0;
  WireType type = WireType::Shutdown;
};

inline WireHeader decode_header(std::span<const std::uint8_t> bytes, std::uint32_t max_message = kDefaultMaxMessage) {
  ByteReader r(bytes, ErrorKind::ProtocolError);
  WireHeader h;
  h.length = r.u32();
  const auto type = r.u8();
  if (type < 1 || type > 8) throw Error(ErrorKind::ProtocolError, "unknown message type " + std::to_string(type));
  if (h.length > max_message) {
    throw Error(ErrorKind::ProtocolError, "declared length " + std::to_string(h.length) + " exceeds the maximum");
  }
  h.type = WireType(type);
  return h;
}

/// Payload of a known type; every byte must be consumed.
inline WireMessage decode_payload(WireType type, std::span<const std::uint8_t> payload) {
  ByteReader r(payload, ErrorKind::ProtocolError);
  WireMessage m;
  try {
    m = detail::decode_payload(type, r);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::ProtocolError) throw;
    throw Error(ErrorKind::ProtocolError, e.what());
  }
  if (!r.at_end()) throw Error(ErrorKind::ProtocolError, std::to_string(r.remaining()) + " trailing bytes");
  return m;
}

/// Exactly one complete frame.
inline WireMessage decode_wire(std::span<const std::uint8_t> bytes, std::uint32_t max_message = kDefaultMaxMessage) {
  const auto h = decode_header(bytes, max_message);
  if (bytes.size() - kWireHeaderSize < h.length) {
    throw Error(ErrorKind::ProtocolError, "truncated frame: " + std::to_string(bytes.size() - kWireHeaderSize) + " of " +
                                              std::to_string(h.length) + " payload bytes");
  }
  if (bytes.size() - kWireHeaderSize > h.length) throw Error(ErrorKind::ProtocolError, "bytes after the frame");
  return decode_payload(h.type, bytes.subspan(kWireHeaderSize));
}

// ---------------------------------------------------------------------------
// Conversions between frames and wire arrays
// ---------------------------------------------------------------------------

inline TimedArray to_timed(const FieldFrame& f, DType dtype = DType::Float64) { return {f.time(), {f.values(), dtype}}; }

inline std::vector<TimedArray> to_timed(std::span<const FieldFrame> frames, DType dtype = DType::Float64) {
  std::vector<TimedArray> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(to_timed(f, dtype));
  return out;
}

inline HandshakeRequest make_handshake(const AdapterCapabilities& caps, std::string service = "forecast") {
  return HandshakeRequest{kWireVersion,
                          std::move(service),
                          *caps.catalog,
                          *caps.geometry,
                          std::uint16_t(caps.history),
                          caps.mode,
                          std::uint16_t(caps.halo_width)};
}

}  // namespace regbench
