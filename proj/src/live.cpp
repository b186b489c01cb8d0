#include "derauth/live.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <thread>
#include <unistd.h>

#include <charconv>
#include <cmath>

namespace derauth::live {

namespace {

using Clock = std::chrono::steady_clock;

class Socket {
 public:
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() {
    if (fd_ >= 0) ::close(fd_);
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  [[nodiscard]] int fd() const noexcept { return fd_; }

  void send_all(const link::Bytes& bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
      const auto n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw NetworkError(std::string("send failed: ") + std::strerror(errno));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  // Returns std::nullopt on orderly shutdown by the peer.
  std::optional<link::Bytes> receive_available(int wait_ms) {
    pollfd p{fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, wait_ms);
    if (r < 0) {
      if (errno == EINTR) return link::Bytes{};
      throw NetworkError(std::string("poll failed: ") + std::strerror(errno));
    }
    if (r == 0) return link::Bytes{};
    link::Bytes buf(4096);
    const auto n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n == 0) return std::nullopt;
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) return link::Bytes{};
      if (errno == ECONNRESET) return std::nullopt;
      throw NetworkError(std::string("recv failed: ") + std::strerror(errno));
    }
    buf.resize(static_cast<std::size_t>(n));
    return buf;
  }

 private:
  int fd_;
};

sockaddr_in resolve(const Address& addr) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(addr.port);
  if (::inet_pton(AF_INET, addr.host.c_str(), &sa.sin_addr) == 1) return sa;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(addr.host.c_str(), nullptr, &hints, &res) != 0 || !res)
    throw NetworkError("cannot resolve host '" + addr.host + "'");
  sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return sa;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

// Drives one agent against one socket on the scaled dt grid.
template <typename Agent, typename Done>
bool drive(Agent& agent, Socket& sock, const LiveOptions& options, const std::atomic<bool>* stop,
           Done&& done) {
  link::Endpoint ep;
  const auto start = Clock::now();
  std::uint64_t k = 0;
  const auto horizon_steps = static_cast<std::uint64_t>(std::llround(options.horizon / options.dt));

  const auto send_all = [&](const std::vector<link::Message>& msgs) {
    for (const auto& m : msgs) sock.send_all(ep.send(m));
  };

  send_all(agent.on_tick(0.0));
  for (;;) {
    if (stop && stop->load()) return true;
    auto bytes = sock.receive_available(1);
    if (!bytes) return false;  // peer closed
    const double grid_now = static_cast<double>(k) * options.dt;
    if (!bytes->empty()) {
      auto delivery = ep.receive(*bytes);
      for (const auto& nak : delivery.replies) sock.send_all(nak);
      for (const auto& frame : delivery.frames) send_all(agent.on_frame(frame, grid_now));
    }
    const double elapsed =
        std::chrono::duration<double>(Clock::now() - start).count() * options.speed;
    while (static_cast<double>(k + 1) * options.dt <= elapsed && k < horizon_steps) {
      agent.advance(options.dt);
      ++k;
      send_all(agent.on_tick(static_cast<double>(k) * options.dt));
    }
    if (done() || k >= horizon_steps) return false;
  }
}

}  // namespace

Address parse_address(const std::string& text) {
  Address a;
  const auto colon = text.rfind(':');
  std::string host = colon == std::string::npos ? text : text.substr(0, colon);
  std::string port = colon == std::string::npos ? std::string{} : text.substr(colon + 1);
  if (colon == std::string::npos && !text.empty() &&
      text.find_first_not_of("0123456789") == std::string::npos) {
    port = text;
    host.clear();
  }
  if (!host.empty()) a.host = host;
  if (!port.empty()) {
    unsigned v = 0;
    auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), v);
    if (ec != std::errc{} || ptr != port.data() + port.size() || v > 65535)
      throw std::invalid_argument("invalid port in address '" + text + "'");
    a.port = static_cast<std::uint16_t>(v);
  }
  return a;
}

bool LiveReport::all_operations_applied() const {
  for (const auto& op : operations)
    if (op.status != agents::OperationOutcome::Status::applied) return false;
  return true;
}

Listener::Listener(const Address& addr) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw NetworkError(std::string("socket failed: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  auto sa = resolve(addr);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
    const std::string err = std::strerror(errno);
    close();
    throw NetworkError("bind to " + addr.host + ":" + std::to_string(addr.port) + " failed: " + err);
  }
  if (::listen(fd_, 1) != 0) {
    const std::string err = std::strerror(errno);
    close();
    throw NetworkError("listen failed: " + err);
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

Listener::~Listener() { close(); }

void Listener::close() noexcept {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

int Listener::accept_one(double timeout_wall_s) {
  if (fd_ < 0) throw NetworkError("listener is closed");
  pollfd p{fd_, POLLIN, 0};
  const int r = ::poll(&p, 1, static_cast<int>(timeout_wall_s * 1000.0));
  if (r <= 0) throw NetworkError("timed out waiting for a master connection");
  const int client = ::accept(fd_, nullptr, nullptr);
  if (client < 0) throw NetworkError(std::string("accept failed: ") + std::strerror(errno));
  close();
  set_nodelay(client);
  return client;
}

LiveReport run_outstation(Listener& listener, const battery::PackConfig& pack,
                          const LiveOptions& options, std::uint64_t seed,
                          const agents::EventSink& sink, const std::atomic<bool>* stop) {
  LiveReport report;
  Socket sock(listener.accept_one(options.accept_timeout_wall_s));
  agents::Outstation outstation(pack, options.timing, seed);
  outstation.set_sink([&](const agents::LogEvent& e) {
    report.log.push_back(e);
    if (sink) sink(e);
  });
  report.interrupted = drive(outstation, sock, options, stop, [] { return false; });
  report.applied = outstation.applied();
  report.accepted_at = outstation.accepted_rounds();
  report.table = outstation.table();
  return report;
}

LiveReport run_master(const Address& addr, const battery::PackConfig& pack,
                      const std::vector<agents::ScenarioEvent>& scenario, const LiveOptions& options,
                      std::uint64_t seed, const agents::EventSink& sink,
                      const std::atomic<bool>* stop) {
  LiveReport report;
  const auto sa = resolve(addr);
  int fd = -1;
  std::string last_error;
  for (int attempt = 0; attempt < std::max(1, options.connect_attempts); ++attempt) {
    if (stop && stop->load()) break;
    fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw NetworkError(std::string("socket failed: ") + std::strerror(errno));
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&sa), sizeof sa) == 0) break;
    last_error = std::strerror(errno);
    ::close(fd);
    fd = -1;
    std::this_thread::sleep_for(std::chrono::duration<double>(options.connect_retry_wall_s));
  }
  if (fd < 0)
    throw NetworkError("cannot connect to " + addr.host + ":" + std::to_string(addr.port) + ": " +
                       last_error);
  set_nodelay(fd);
  Socket sock(fd);

  agents::Master master(pack, scenario, options.timing, seed ^ 0x6D61737465720000ULL);
  master.set_sink([&](const agents::LogEvent& e) {
    report.log.push_back(e);
    if (sink) sink(e);
  });
  std::optional<store::SessionStore> store;
  if (options.store_dir) {
    std::filesystem::create_directories(*options.store_dir);
    store.emplace(store::SessionStore::session_path(*options.store_dir, 0.0, seed));
    report.store_file = store->path();
    master.set_store(&*store);
  }

  report.interrupted = drive(master, sock, options, stop, [&] { return master.finished(); });
  if (store) store->flush();
  report.rounds = master.rounds();
  report.operations = master.operations();
  report.table = master.table();
  return report;
}

}  // namespace derauth::live
