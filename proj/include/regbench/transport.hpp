#pragma once

// Byte streams (child-process pipes, TCP) and the request/response logic on
// both ends of the wire protocol.

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "regbench/edm.hpp"
#include "regbench/wire.hpp"

namespace regbench {

inline constexpr std::chrono::milliseconds kDefaultAdapterTimeout{120'000};

class ByteStream {
 public:
  virtual ~ByteStream() = default;
  virtual void write_all(std::span<const std::uint8_t> bytes) = 0;
  /// Fills `out` completely or throws. A negative timeout waits forever.
  virtual void read_exact(std::span<std::uint8_t> out, std::chrono::milliseconds timeout) = 0;
};

/// Stream over a pair of file descriptors (equal for sockets).
class FdStream : public ByteStream {
 public:
  FdStream(int read_fd, int write_fd) : rfd_(read_fd), wfd_(write_fd) { ignore_sigpipe(); }
  ~FdStream() override { close_fds(); }
  FdStream(const FdStream&) = delete;
  FdStream& operator=(const FdStream&) = delete;

  void write_all(std::span<const std::uint8_t> bytes) override {
    std::size_t done = 0;
    while (done < bytes.size()) {
      const ssize_t n = ::write(wfd_, bytes.data() + done, bytes.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::ProtocolError, std::string("write failed: ") + std::strerror(errno));
      }
      done += std::size_t(n);
    }
  }

  void read_exact(std::span<std::uint8_t> out, std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::size_t done = 0;
    while (done < out.size()) {
      int wait_ms = -1;
      if (timeout.count() >= 0) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) throw Error(ErrorKind::AdapterError, "timed out waiting for the peer");
        wait_ms = int(std::min<long long>(left.count(), 1'000'000));
      }
      pollfd p{rfd_, POLLIN, 0};
      const int ready = ::poll(&p, 1, wait_ms);
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::ProtocolError, std::string("poll failed: ") + std::strerror(errno));
      }
      if (ready == 0) continue;
      const ssize_t n = ::read(rfd_, out.data() + done, out.size() - done);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw Error(ErrorKind::ProtocolError, std::string("read failed: ") + std::strerror(errno));
      }
      if (n == 0) throw Error(ErrorKind::ProtocolError, "peer closed the connection");
      done += std::size_t(n);
    }
  }

 protected:
  void close_fds() {
    if (rfd_ >= 0) ::close(rfd_);
    if (wfd_ >= 0 && wfd_ != rfd_) ::close(wfd_);
    rfd_ = wfd_ = -1;
  }

 private:
  static void ignore_sigpipe() { ::signal(SIGPIPE, SIG_IGN); }
  int rfd_;
  int wfd_;
};

/// Standard input and output of this process; not closed on destruction.
class StdioStream final : public ByteStream {
 public:
  StdioStream() : inner_(::dup(STDIN_FILENO), ::dup(STDOUT_FILENO)) {}
  void write_all(std::span<const std::uint8_t> b) override { inner_.write_all(b); }
  void read_exact(std::span<std::uint8_t> out, std::chrono::milliseconds t) override { inner_.read_exact(out, t); }

 private:
  FdStream inner_;
};

/// Child process whose stdin/stdout are the stream; stderr is inherited.
class ChildProcessStream final : public FdStream {
 public:
  static std::unique_ptr<ChildProcessStream> spawn(const std::vector<std::string>& argv) {
    if (argv.empty()) throw Error(ErrorKind::InvalidConfig, "empty adapter command");
    int to_child[2], from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0 || ::pipe2(from_child, O_CLOEXEC) != 0) {
      throw Error(ErrorKind::AdapterError, std::string("pipe failed: ") + std::strerror(errno));
    }
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    const pid_t pid = ::fork();
    if (pid < 0) throw Error(ErrorKind::AdapterError, std::string("fork failed: ") + std::strerror(errno));
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::execvp(args[0], args.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    return std::unique_ptr<ChildProcessStream>(new ChildProcessStream(from_child[0], to_child[1], pid));
  }

  ~ChildProcessStream() override {
    close_fds();
    wait();
  }

  /// Exit status once the child has ended; closes the pipes first.
  int wait() {
    close_fds();
    if (pid_ > 0) {
      int status = 0;
      while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
      }
      pid_ = -1;
      status_ = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    }
    return status_;
  }

 private:
  ChildProcessStream(int rfd, int wfd, pid_t pid) : FdStream(rfd, wfd), pid_(pid) {}
  pid_t pid_;
  int status_ = -1;
};

inline std::unique_ptr<FdStream> connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &found); rc != 0) {
    throw Error(ErrorKind::AdapterError, "cannot resolve " + host + ": " + ::gai_strerror(rc));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(found, &::freeaddrinfo);
  for (auto* a = found; a; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return std::make_unique<FdStream>(fd, fd);
    }
    ::close(fd);
  }
  throw Error(ErrorKind::AdapterError, "cannot connect to " + host + ":" + std::to_string(port));
}

/// Listening socket on the loopback interface. Port 0 picks a free port.
class TcpListener {
 public:
  explicit TcpListener(std::uint16_t port = 0) {
    fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd_ < 0) throw Error(ErrorKind::IoError, "socket failed");
    const int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 4) != 0) {
      ::close(fd_);
      throw Error(ErrorKind::IoError, "cannot listen on port " + std::to_string(port) + ": " + std::strerror(errno));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }

  std::unique_ptr<FdStream> accept() {
    int fd;
    while ((fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC)) < 0 && errno == EINTR) {
    }
    if (fd < 0) throw Error(ErrorKind::IoError, std::string("accept failed: ") + std::strerror(errno));
    return std::make_unique<FdStream>(fd, fd);
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// "tcp:HOST:PORT" connects; anything else is a whitespace-separated command to spawn.
inline std::unique_ptr<ByteStream> open_endpoint(const std::string& spec) {
  if (spec.rfind("tcp:", 0) == 0) {
    const auto rest = spec.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorKind::InvalidConfig, "expected tcp:HOST:PORT, got " + spec);
    return connect_tcp(rest.substr(0, colon), std::uint16_t(std::stoul(rest.substr(colon + 1))));
  }
  std::vector<std::string> argv;
  std::string word;
  for (char c : spec) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!word.empty()) argv.push_back(std::move(word)), word.clear();
    } else {
      word += c;
    }
  }
  if (!word.empty()) argv.push_back(word);
  return ChildProcessStream::spawn(argv);
}

// ---------------------------------------------------------------------------
// Message I/O
// ---------------------------------------------------------------------------

inline void send_message(ByteStream& stream, const WireMessage& message) { stream.write_all(encode_wire(message)); }

inline WireMessage receive_message(ByteStream& stream, std::chrono::milliseconds timeout = std::chrono::milliseconds(-1),
                                   std::uint32_t max_message = kDefaultMaxMessage) {
  std::array<std::uint8_t, kWireHeaderSize> header{};
  stream.read_exact(header, timeout);
  const auto h = decode_header(header, max_message);
  std::vector<std::uint8_t> payload(h.length);
  stream.read_exact(payload, timeout);
  return decode_payload(h.type, payload);
}

namespace detail {
template <typename T>
T expect(WireMessage&& m, std::size_t step) {
  if (auto* r = std::get_if<ErrorReport>(&m)) {
    throw Error(ErrorKind::AdapterError, "remote " + std::string(to_string(r->code)) + ": " + r->message, step);
  }
  if (auto* t = std::get_if<T>(&m)) return std::move(*t);
  throw Error(ErrorKind::ProtocolError, "unexpected message type " + std::to_string(int(wire_type(m))), step);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Engine side
// ---------------------------------------------------------------------------

/// Forecaster behind a stream. One request in flight at a time.
class RemoteAdapter final : public ModelAdapter {
 public:
  explicit RemoteAdapter(std::unique_ptr<ByteStream> stream, std::chrono::milliseconds timeout = kDefaultAdapterTimeout,
                         DType dtype = DType::Float64)
      : stream_(std::move(stream)), timeout_(timeout), dtype_(dtype) {}
  ~RemoteAdapter() override {
    try {
      if (stream_) send_message(*stream_, Shutdown{});
    } catch (...) {
    }
  }

  std::size_t negotiate(const AdapterCapabilities& caps) override {
    try {
      send_message(*stream_, make_handshake(caps, "forecast"));
      const auto ack = detail::expect<HandshakeAck>(receive_message(*stream_, timeout_), 0);
      if (!ack.accepted) throw Error(ErrorKind::AdapterError, "adapter rejected the handshake: " + ack.message);
      if (ack.mode != caps.mode) throw Error(ErrorKind::AdapterError, "adapter answered with a different conditioning mode");
      return ack.history;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::AdapterError) throw;
      throw Error(ErrorKind::AdapterError, e.what(), 0);
    }
  }

  Tensor3 increment(const StepInput& in) override {
    StepRequest req{in.time, std::uint32_t(in.step_index), to_timed(in.history, dtype_), to_timed(in.aux, dtype_)};
    try {
      send_message(*stream_, req);
      return detail::expect<StepResponse>(receive_message(*stream_, timeout_), in.step_index).increment.values;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::AdapterError) throw;
      throw Error(ErrorKind::AdapterError, e.what(), in.step_index);
    }
  }

 private:
  std::unique_ptr<ByteStream> stream_;
  std::chrono::milliseconds timeout_;
  DType dtype_;
};

/// Denoiser behind a stream. Calls are serialized.
class RemoteDenoiser final : public Denoiser {
 public:
  RemoteDenoiser(std::unique_ptr<ByteStream> stream, const AdapterCapabilities& caps,
                 std::chrono::milliseconds timeout = kDefaultAdapterTimeout)
      : stream_(std::move(stream)), timeout_(timeout) {
    try {
      send_message(*stream_, make_handshake(caps, "denoise"));
      const auto ack = detail::expect<HandshakeAck>(receive_message(*stream_, timeout_), 0);
      if (!ack.accepted) throw Error(ErrorKind::AdapterError, "denoiser rejected the handshake: " + ack.message);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::AdapterError) throw;
      throw Error(ErrorKind::AdapterError, e.what());
    }
  }
  ~RemoteDenoiser() override {
    try {
      send_message(*stream_, Shutdown{});
    } catch (...) {
    }
  }

  Tensor3 denoise(const Tensor3& noisy, double sigma, std::span<const FieldFrame> cond) const override {
    std::lock_guard lock(mutex_);
    try {
      send_message(*stream_, DenoiseRequest{sigma, {noisy, DType::Float64}, to_timed(cond)});
      return detail::expect<DenoiseResponse>(receive_message(*stream_, timeout_), 0).denoised.values;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::AdapterError) throw;
      throw Error(ErrorKind::AdapterError, e.what());
    }
  }

 private:
  std::unique_ptr<ByteStream> stream_;
  std::chrono::milliseconds timeout_;
  mutable std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Adapter side
// ---------------------------------------------------------------------------

struct ServeHandlers {
  /// Answers StepRequests; may be null.
  ModelAdapter* forecaster = nullptr;
  /// Answers DenoiseRequests; may be null.
  const Denoiser* denoiser = nullptr;
};

namespace detail {

struct Session {
  CatalogPtr catalog;
  CatalogPtr stacked;
  GeometryPtr geometry;
};

inline std::vector<FieldFrame> frames_of(const std::vector<TimedArray>& list, const Session& s) {
  std::vector<FieldFrame> out;
  for (const auto& t : list) {
    const auto& shape = t.array.values.shape();
    if (shape.rows != s.geometry->rows() || shape.cols != s.geometry->cols()) {
      throw Error(ErrorKind::ShapeError, "array " + to_string(shape) + " does not match the negotiated grid");
    }
    CatalogPtr catalog;
    if (shape.channels == s.catalog->size()) {
      catalog = s.catalog;
    } else if (shape.channels == s.stacked->size()) {
      catalog = s.stacked;
    } else {
      throw Error(ErrorKind::ShapeError, "array has " + std::to_string(shape.channels) + " channels, negotiated " +
                                             std::to_string(s.catalog->size()));
    }
    out.emplace_back(t.time, t.array.values, catalog, s.geometry);
  }
  return out;
}

inline CatalogPtr stacked_catalog(const VariableCatalog& base) {
  auto channels = base.channels();
  for (const auto& c : base.channels()) channels.push_back({kCoarsePrefix + c.name, c.level_hpa, c.units});
  return std::make_shared<const VariableCatalog>(std::move(channels));
}

}  // namespace detail

/// Adapter-side loop: handshake, then alternate requests and responses until
/// Shutdown or end of stream. Handler failures are reported with an
/// ErrorReport and the loop continues. Returns the number of requests served.
inline std::size_t serve(ByteStream& stream, const ServeHandlers& handlers) {
  std::optional<detail::Session> session;
  std::size_t served = 0;
  for (;;) {
    WireMessage message;
    try {
      message = receive_message(stream);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ProtocolError || std::string(e.what()).find("peer closed") != std::string::npos) {
        return served;
      }
      send_message(stream, ErrorReport{ErrorKind::ProtocolError, e.what()});
      continue;
    }
    if (std::holds_alternative<Shutdown>(message)) return served;
    try {
      if (auto* hs = std::get_if<HandshakeRequest>(&message)) {
        const bool want_denoise = hs->service == "denoise";
        const bool ok = want_denoise ? handlers.denoiser != nullptr : handlers.forecaster != nullptr;
        HandshakeAck ack{ok, hs->history, hs->mode, ok ? "" : "service '" + hs->service + "' not available"};
        if (ok) {
          session = detail::Session{std::make_shared<const VariableCatalog>(hs->catalog), detail::stacked_catalog(hs->catalog),
                                    std::make_shared<const GridGeometry>(hs->geometry)};
          if (!want_denoise) {
            ack.history = std::uint16_t(handlers.forecaster->negotiate(
                AdapterCapabilities{session->catalog, session->geometry, hs->history, hs->mode, hs->halo_width}));
          }
        }
        send_message(stream, ack);
        continue;
      }
      if (!session) throw Error(ErrorKind::ProtocolError, "request before handshake");
      if (auto* req = std::get_if<StepRequest>(&message)) {
        if (!handlers.forecaster) throw Error(ErrorKind::ProtocolError, "no forecaster on this endpoint");
        const auto history = detail::frames_of(req->history, *session);
        const auto aux = detail::frames_of(req->aux, *session);
        if (history.empty()) throw Error(ErrorKind::ShapeError, "step request without history");
        auto delta = handlers.forecaster->increment(StepInput{req->time, history, aux, req->step_index});
        send_message(stream, StepResponse{{std::move(delta), DType::Float64}});
      } else if (auto* dn = std::get_if<DenoiseRequest>(&message)) {
        if (!handlers.denoiser) throw Error(ErrorKind::ProtocolError, "no denoiser on this endpoint");
        const auto cond = detail::frames_of(dn->conditioning, *session);
        send_message(stream, DenoiseResponse{{handlers.denoiser->denoise(dn->noisy.values, dn->sigma, cond), DType::Float64}});
      } else {
        throw Error(ErrorKind::ProtocolError, "unexpected message type " + std::to_string(int(wire_type(message))));
      }
      ++served;
    } catch (const Error& e) {
      send_message(stream, ErrorReport{e.kind(), e.what()});
    } catch (const std::exception& e) {
      send_message(stream, ErrorReport{ErrorKind::AdapterError, e.what()});
    }
  }
}

}  // namespace regbench
