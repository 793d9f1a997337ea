#include "net.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

namespace fraglow::run {

namespace {

std::pair<std::string, int> split_address(const std::string& address) {
    auto pos = address.rfind(':');
    if (pos == std::string::npos) fail(Errc::Config, "address '" + address + "' is not host:port");
    return {address.substr(0, pos), std::stoi(address.substr(pos + 1))};
}

sockaddr_in make_addr(const std::string& host, int port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port));
    std::string h = host.empty() || host == "localhost" ? "127.0.0.1" : host;
    if (h == "0.0.0.0")
        addr.sin_addr.s_addr = INADDR_ANY;
    else if (inet_pton(AF_INET, h.c_str(), &addr.sin_addr) != 1)
        fail(Errc::Config, "cannot parse host '" + host + "'");
    return addr;
}

}  // namespace

TcpConn& TcpConn::operator=(TcpConn&& o) noexcept {
    if (this != &o) {
        close();
        fd_ = o.fd_;
        rbuf_ = std::move(o.rbuf_);
        o.fd_ = -1;
    }
    return *this;
}

TcpConn::~TcpConn() { close(); }

void TcpConn::close() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        fd_ = -1;
    }
}

void TcpConn::send(const Frame& f) {
    std::lock_guard<std::mutex> lk(write_mu_);
    auto bytes = encode_frame(f);
    size_t off = 0;
    while (off < bytes.size()) {
        ssize_t n = ::write(fd_, bytes.data() + off, bytes.size() - off);
        if (n <= 0) fail(Errc::PeerFailure, "connection write failed");
        off += static_cast<size_t>(n);
    }
}

bool TcpConn::recv(Frame* out) {
    while (true) {
        size_t used = decode_frame(rbuf_.data(), rbuf_.size(), out);
        if (used > 0) {
            rbuf_.erase(rbuf_.begin(), rbuf_.begin() + static_cast<long>(used));
            return true;
        }
        uint8_t chunk[16384];
        ssize_t n = ::read(fd_, chunk, sizeof chunk);
        if (n <= 0) return false;
        rbuf_.insert(rbuf_.end(), chunk, chunk + n);
    }
}

std::unique_ptr<TcpConn> tcp_connect(const std::string& address, int timeout_ms) {
    auto [host, port] = split_address(address);
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) fail(Errc::WorkerUnreachable, "socket() failed");
    timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
    setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    sockaddr_in addr = make_addr(host, port);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(fd);
        fail(Errc::WorkerUnreachable, "worker " + address + " unreachable");
    }
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return std::make_unique<TcpConn>(fd);
}

TcpListener::TcpListener(const std::string& address) {
    auto [host, port] = split_address(address);
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) fail(Errc::Bind, "socket() failed");
    int one = 1;
    setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr = make_addr(host.empty() ? "0.0.0.0" : host, port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 8) != 0) {
        ::close(fd_);
        fd_ = -1;
        fail(Errc::Bind, "cannot bind " + address);
    }
    socklen_t len = sizeof addr;
    getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() { close(); }

void TcpListener::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

std::unique_ptr<TcpConn> TcpListener::accept() {
    int cfd = ::accept(fd_, nullptr, nullptr);
    if (cfd < 0) fail(Errc::Runtime, "accept failed");
    int one = 1;
    setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return std::make_unique<TcpConn>(cfd);
}

}  // namespace fraglow::run
