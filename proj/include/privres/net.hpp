#ifndef PRIVRES_NET_HPP
#define PRIVRES_NET_HPP

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <string>
#include <vector>

#include "privres/common.hpp"

namespace privres {

class Socket {
  public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
    Socket& operator=(Socket&& other) noexcept {
        if (this != &other) {
            close_fd();
            fd_ = other.fd_;
            other.fd_ = -1;
        }
        return *this;
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() { close_fd(); }

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }

  private:
    void close_fd() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }
    int fd_ = -1;
};

inline void write_all(const Socket& sock, std::span<const std::uint8_t> data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        const ssize_t n = ::send(sock.fd(), data.data() + sent, data.size() - sent,
                                 MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw TransportError(std::string("send failed: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }
}

inline void read_exact(const Socket& sock, std::uint8_t* buf, std::size_t len) {
    std::size_t got = 0;
    while (got < len) {
        const ssize_t n = ::recv(sock.fd(), buf + got, len - got, 0);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw TransportError(std::string("recv failed: ") + std::strerror(errno));
        }
        if (n == 0) throw TransportError("connection closed mid-frame");
        got += static_cast<std::size_t>(n);
    }
}

// Reads one length-prefixed frame (header + body bytes) from the socket.
inline std::vector<std::uint8_t> read_frame_bytes(const Socket& sock,
                                                  std::size_t max_body) {
    std::uint8_t header[4];
    read_exact(sock, header, 4);
    const std::uint32_t len = (static_cast<std::uint32_t>(header[0]) << 24) |
                              (static_cast<std::uint32_t>(header[1]) << 16) |
                              (static_cast<std::uint32_t>(header[2]) << 8) |
                              static_cast<std::uint32_t>(header[3]);
    if (len > max_body) throw ContractError("frame: oversize");
    std::vector<std::uint8_t> frame(4 + static_cast<std::size_t>(len));
    std::memcpy(frame.data(), header, 4);
    if (len > 0) read_exact(sock, frame.data() + 4, len);
    return frame;
}

inline Socket connect_to(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* result = nullptr;
    const std::string port_str = std::to_string(port);
    if (::getaddrinfo(host.c_str(), port_str.c_str(), &hints, &result) != 0)
        throw TransportError("cannot resolve host: " + host);
    Socket sock;
    for (addrinfo* rp = result; rp; rp = rp->ai_next) {
        int fd = ::socket(rp->ai_family, rp->ai_socktype, rp->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, rp->ai_addr, rp->ai_addrlen) == 0) {
            sock = Socket(fd);
            break;
        }
        ::close(fd);
    }
    ::freeaddrinfo(result);
    if (!sock.valid())
        throw TransportError("cannot connect to " + host + ":" + port_str);
    return sock;
}

struct ListenResult {
    Socket sock;
    int port = 0;  // resolved port (useful when binding port 0)
};

inline ListenResult listen_on(const std::string& host, int port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw TransportError("cannot create socket");
    Socket sock(fd);
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (host.empty() || host == "0.0.0.0") {
        addr.sin_addr.s_addr = INADDR_ANY;
    } else if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        throw TransportError("bad bind address: " + host);
    }
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
        throw TransportError(std::string("bind failed: ") + std::strerror(errno));
    if (::listen(fd, 16) != 0)
        throw TransportError(std::string("listen failed: ") + std::strerror(errno));
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
    return {std::move(sock), static_cast<int>(ntohs(bound.sin_port))};
}

}  // namespace privres

#endif  // PRIVRES_NET_HPP
