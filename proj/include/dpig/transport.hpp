#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dpig/error.hpp"

namespace dpig {

// Reliable ordered frame pipe from a client to the Q service. Frames are
// the self-delimiting wire format; recv blocks until one full frame or a
// transport failure.
class Transport {
public:
    virtual ~Transport() = default;
    virtual void send_frame(const std::vector<uint8_t>& frame) = 0;
    virtual std::vector<uint8_t> recv_frame() = 0;
};

// In-process channel: send invokes the service handler synchronously and
// queues the reply. Single-threaded and deterministic.
class DirectTransport : public Transport {
public:
    using Handler = std::function<std::vector<uint8_t>(const std::vector<uint8_t>&)>;
    explicit DirectTransport(Handler handler) : handler_(std::move(handler)) {}

    void send_frame(const std::vector<uint8_t>& frame) override {
        replies_.push_back(handler_(frame));
    }

    std::vector<uint8_t> recv_frame() override {
        if (replies_.empty()) throw ProtocolError(ProtoCode::transport, "no pending reply");
        std::vector<uint8_t> r = std::move(replies_.front());
        replies_.pop_front();
        return r;
    }

private:
    Handler handler_;
    std::deque<std::vector<uint8_t>> replies_;
};

// Length-prefixed byte stream over a connected TCP socket.
class SocketTransport : public Transport {
public:
    explicit SocketTransport(int fd);
    ~SocketTransport() override;
    SocketTransport(const SocketTransport&) = delete;
    SocketTransport& operator=(const SocketTransport&) = delete;

    static std::unique_ptr<SocketTransport> connect(const std::string& host, uint16_t port,
                                                    int timeout_ms = 10000);

    void send_frame(const std::vector<uint8_t>& frame) override;
    std::vector<uint8_t> recv_frame() override;

private:
    int fd_;
};

// Loopback frame server: accepts one connection at a time and feeds each
// received frame to the handler, writing the reply back. Run blocks until
// stop() closes the listener.
class SocketServer {
public:
    using Handler = std::function<std::vector<uint8_t>(const std::vector<uint8_t>&)>;

    SocketServer(const std::string& host, uint16_t port);  // port 0 = ephemeral
    ~SocketServer();

    uint16_t port() const { return port_; }
    void run(const Handler& handler);
    void stop();

private:
    int listen_fd_ = -1;
    uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
};

}  // namespace dpig
