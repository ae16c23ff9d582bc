#include "dpig/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "dpig/protocol.hpp"

namespace dpig {

namespace {

void write_all(int fd, const uint8_t* data, size_t len) {
    size_t off = 0;
    while (off < len) {
        const ssize_t n = ::write(fd, data + off, len - off);
        if (n <= 0) {
            if (n < 0 && errno == EINTR) continue;
            throw ProtocolError(ProtoCode::transport, std::string("write: ") + std::strerror(errno));
        }
        off += static_cast<size_t>(n);
    }
}

// returns false on clean EOF at offset 0
bool read_all(int fd, uint8_t* data, size_t len) {
    size_t off = 0;
    while (off < len) {
        const ssize_t n = ::read(fd, data + off, len - off);
        if (n == 0) {
            if (off == 0) return false;
            throw ProtocolError(ProtoCode::transport, "connection closed mid-frame");
        }
        if (n < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError(ProtoCode::transport, std::string("read: ") + std::strerror(errno));
        }
        off += static_cast<size_t>(n);
    }
    return true;
}

}  // namespace

SocketTransport::SocketTransport(int fd) : fd_(fd) {
    const int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

SocketTransport::~SocketTransport() {
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<SocketTransport> SocketTransport::connect(const std::string& host, uint16_t port,
                                                          int timeout_ms) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ProtocolError(ProtoCode::transport, "socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw ProtocolError(ProtoCode::transport, "bad address: " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw ProtocolError(ProtoCode::transport,
                            "connect " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
    }
    timeval tv{};
    tv.tv_sec = timeout_ms / 1000;
    tv.tv_usec = (timeout_ms % 1000) * 1000;
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    return std::unique_ptr<SocketTransport>(new SocketTransport(fd));
}

void SocketTransport::send_frame(const std::vector<uint8_t>& frame) {
    write_all(fd_, frame.data(), frame.size());
}

std::vector<uint8_t> SocketTransport::recv_frame() {
    std::vector<uint8_t> frame(kFrameHeaderSize);
    if (!read_all(fd_, frame.data(), frame.size())) {
        throw ProtocolError(ProtoCode::transport, "connection closed");
    }
    const uint64_t plen = frame_payload_length(frame.data());
    if (plen > (1ull << 33)) {
        throw ProtocolError(ProtoCode::length_mismatch, "declared payload too large");
    }
    frame.resize(kFrameHeaderSize + plen);
    if (!read_all(fd_, frame.data() + kFrameHeaderSize, plen)) {
        throw ProtocolError(ProtoCode::transport, "connection closed mid-frame");
    }
    return frame;
}

SocketServer::SocketServer(const std::string& host, uint16_t port) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw ProtocolError(ProtoCode::transport, "socket() failed");
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        throw ProtocolError(ProtoCode::transport, "bad address: " + host);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        throw ProtocolError(ProtoCode::transport, std::string("bind: ") + std::strerror(errno));
    }
    if (::listen(listen_fd_, 8) != 0) {
        throw ProtocolError(ProtoCode::transport, std::string("listen: ") + std::strerror(errno));
    }
    sockaddr_in bound{};
    socklen_t blen = sizeof(bound);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
    port_ = ntohs(bound.sin_port);
}

SocketServer::~SocketServer() { stop(); }

void SocketServer::run(const Handler& handler) {
    while (!stopping_) {
        const int cfd = ::accept(listen_fd_, nullptr, nullptr);
        if (cfd < 0) {
            if (stopping_) break;
            if (errno == EINTR) continue;
            break;
        }
        SocketTransport conn(cfd);
        try {
            while (true) {
                std::vector<uint8_t> frame;
                try {
                    frame = conn.recv_frame();
                } catch (const ProtocolError& e) {
                    break;  // connection closed; wait for the next client
                }
                conn.send_frame(handler(frame));
            }
        } catch (const ProtocolError&) {
            // drop the connection, keep serving
        }
    }
}

void SocketServer::stop() {
    stopping_ = true;
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
}

}  // namespace dpig
