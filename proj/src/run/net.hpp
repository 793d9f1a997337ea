#pragma once

#include <memory>
#include <mutex>
#include <string>

#include "wire.hpp"

namespace fraglow::run {

// Blocking TCP with whole-frame reads/writes. Writes are serialized so
// multiple threads may share one connection.
class TcpConn {
  public:
    TcpConn() = default;
    explicit TcpConn(int fd) : fd_(fd) {}
    TcpConn(const TcpConn&) = delete;
    TcpConn& operator=(const TcpConn&) = delete;
    TcpConn(TcpConn&& o) noexcept { *this = std::move(o); }
    TcpConn& operator=(TcpConn&& o) noexcept;
    ~TcpConn();

    bool valid() const { return fd_ >= 0; }
    void send(const Frame& f);
    // False on orderly close; throws on malformed input.
    bool recv(Frame* out);
    void close();

  private:
    int fd_ = -1;
    std::mutex write_mu_;
    std::vector<uint8_t> rbuf_;
};

// Connects to "host:port"; Errc::WorkerUnreachable on failure.
std::unique_ptr<TcpConn> tcp_connect(const std::string& address, int timeout_ms = 3000);

class TcpListener {
  public:
    // Binds "host:port"; Errc::Bind on failure. Port 0 picks a free port.
    explicit TcpListener(const std::string& address);
    ~TcpListener();
    std::unique_ptr<TcpConn> accept();
    int port() const { return port_; }
    void close();

  private:
    int fd_ = -1;
    int port_ = 0;
};

}  // namespace fraglow::run
