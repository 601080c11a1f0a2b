#pragma once

#include "cmotion/linalg.hpp"
#include "cmotion/plant.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <cstring>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cmotion {

inline constexpr int kProtocolVersion = 1;

/// Line-delimited wire message of the controller/plant link.
struct WireMessage {
    enum class Tag { Hello, Poses, Cmd, Bye, Err };
    Tag tag = Tag::Bye;
    std::vector<double> fields;  // tag-dependent payload
    std::string text;            // ERR description

    static WireMessage hello(double T_e) {
        return {Tag::Hello, {static_cast<double>(kProtocolVersion), T_e}, {}};
    }
    static WireMessage poses(const Pose& w_T_e, const Pose& w_T_r) {
        WireMessage m{Tag::Poses, {}, {}};
        m.fields.reserve(24);
        append_pose(m.fields, w_T_e);
        append_pose(m.fields, w_T_r);
        return m;
    }
    static WireMessage cmd(const Twist& tw) {
        WireMessage m{Tag::Cmd, {}, {}};
        const Vec6 x = tw.vector();
        m.fields.assign(x.data(), x.data() + 6);
        return m;
    }
    static WireMessage bye() { return {Tag::Bye, {}, {}}; }
    static WireMessage err(const std::string& code_and_text) {
        return {Tag::Err, {}, code_and_text};
    }

    Pose pose_at(std::size_t offset) const {
        Pose p;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) p.R(r, c) = fields[offset + 3 * r + c];
        for (int i = 0; i < 3; ++i) p.t(i) = fields[offset + 9 + i];
        return p;
    }
    Twist twist() const { return Twist{Vec3(fields[0], fields[1], fields[2]),
                                       Vec3(fields[3], fields[4], fields[5])}; }

  private:
    static void append_pose(std::vector<double>& out, const Pose& p) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) out.push_back(p.R(r, c));
        for (int i = 0; i < 3; ++i) out.push_back(p.t(i));
    }
};

class protocol_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace wire {

inline const char* tag_name(WireMessage::Tag t) {
    switch (t) {
        case WireMessage::Tag::Hello: return "HELLO";
        case WireMessage::Tag::Poses: return "POSES";
        case WireMessage::Tag::Cmd: return "CMD";
        case WireMessage::Tag::Bye: return "BYE";
        case WireMessage::Tag::Err: return "ERR";
    }
    return "?";
}

inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace wire

/// One newline-terminated line per message, fields space-separated.
inline std::string encode(const WireMessage& msg) {
    std::string line = wire::tag_name(msg.tag);
    for (double f : msg.fields) {
        line += ' ';
        line += wire::format_double(f);
    }
    if (msg.tag == WireMessage::Tag::Err) {
        line += ' ';
        line += msg.text;
    }
    line += '\n';
    return line;
}

/// Total decoder: any malformed line raises protocol_error carrying the line.
inline WireMessage decode(const std::string& line) {
    std::istringstream in(line);
    std::string tag;
    if (!(in >> tag)) throw protocol_error("empty wire line");

    const auto parse_fields = [&](std::size_t expected) {
        std::vector<double> fields;
        double x;
        while (in >> x) fields.push_back(x);
        if (!in.eof()) throw protocol_error("non-numeric field in line: " + line);
        if (fields.size() != expected) {
            throw protocol_error("wrong arity (" + std::to_string(fields.size()) + " of " +
                                 std::to_string(expected) + ") in line: " + line);
        }
        return fields;
    };

    WireMessage msg;
    if (tag == "HELLO") {
        msg.tag = WireMessage::Tag::Hello;
        msg.fields = parse_fields(2);
    } else if (tag == "POSES") {
        msg.tag = WireMessage::Tag::Poses;
        msg.fields = parse_fields(24);
    } else if (tag == "CMD") {
        msg.tag = WireMessage::Tag::Cmd;
        msg.fields = parse_fields(6);
    } else if (tag == "BYE") {
        msg.tag = WireMessage::Tag::Bye;
        msg.fields = parse_fields(0);
    } else if (tag == "ERR") {
        msg.tag = WireMessage::Tag::Err;
        std::string rest;
        std::getline(in, rest);
        while (!rest.empty() && rest.front() == ' ') rest.erase(rest.begin());
        msg.text = rest;
    } else {
        throw protocol_error("unknown tag in line: " + line);
    }
    return msg;
}

namespace detail {

/// Blocking line-oriented socket wrapper. Owns the descriptor.
class LineSocket {
  public:
    explicit LineSocket(int fd) : fd_(fd) {}
    LineSocket(const LineSocket&) = delete;
    LineSocket& operator=(const LineSocket&) = delete;
    LineSocket(LineSocket&& other) noexcept : fd_(other.fd_), buf_(std::move(other.buf_)) {
        other.fd_ = -1;
    }
    ~LineSocket() { close(); }

    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }
    bool valid() const { return fd_ >= 0; }
    int fd() const { return fd_; }

    void set_timeout(double seconds) const {
        timeval tv;
        tv.tv_sec = static_cast<long>(seconds);
        tv.tv_usec = static_cast<long>((seconds - static_cast<double>(tv.tv_sec)) * 1e6);
        ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    }

    void send_line(const std::string& line) const {
        std::size_t off = 0;
        while (off < line.size()) {
            const ssize_t n = ::send(fd_, line.data() + off, line.size() - off, MSG_NOSIGNAL);
            if (n <= 0) throw protocol_error("socket send failed");
            off += static_cast<std::size_t>(n);
        }
    }

    /// Reads one newline-terminated line; empty optional-like "" on orderly
    /// close before any byte of a new line.
    bool recv_line(std::string& out) {
        out.clear();
        while (true) {
            const auto nl = buf_.find('\n');
            if (nl != std::string::npos) {
                out = buf_.substr(0, nl);
                buf_.erase(0, nl + 1);
                return true;
            }
            char chunk[512];
            const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
            if (n == 0) {
                if (buf_.empty()) return false;
                throw protocol_error("connection closed mid-line");
            }
            if (n < 0) throw protocol_error("socket read failed or timed out");
            buf_.append(chunk, static_cast<std::size_t>(n));
        }
    }

  private:
    int fd_ = -1;
    std::string buf_;
};

}  // namespace detail

/// Plant server: accepts one session at a time on a stream socket, expects
/// HELLO, then alternates POSES (out) with CMD (in), stepping the plant once
/// per CMD at T_e. A concurrent connection is refused with ERR BUSY.
class PlantServer {
  public:
    PlantServer(PlantState initial, Pose w_T_r, double T_e, double read_timeout_s = 5.0)
        : plant_(initial), w_T_r_(w_T_r), T_e_(T_e), timeout_(read_timeout_s) {}

    /// Binds a listening socket on 127.0.0.1; returns the bound port.
    int bind(int port = 0) {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw protocol_error("cannot create socket");
        const int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(static_cast<uint16_t>(port));
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
            throw protocol_error("cannot bind port " + std::to_string(port));
        }
        if (::listen(listen_fd_, 4) < 0) throw protocol_error("cannot listen");
        socklen_t len = sizeof(addr);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        return ntohs(addr.sin_port);
    }

    const PlantState& plant() const { return plant_; }

    /// Serves sessions until stop() or, when max_sessions > 0, that many
    /// sessions have completed. One session owns the plant at a time; while it
    /// runs (on a worker thread) additional connections are refused with
    /// "ERR BUSY".
    void serve(int max_sessions = 0) {
        int done = 0;
        std::thread worker;
        while (!stop_.load() && (max_sessions == 0 || done < max_sessions)) {
            const int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) {
                if (stop_.load()) break;
                continue;
            }
            if (busy_.load()) {
                detail::LineSocket reject(fd);
                try {
                    reject.send_line(encode(WireMessage::err("BUSY plant already in session")));
                } catch (...) {
                }
                continue;
            }
            if (worker.joinable()) worker.join();
            busy_.store(true);
            ++done;
            worker = std::thread([this, fd] {
                detail::LineSocket sock(fd);
                sock.set_timeout(timeout_);
                try {
                    run_session(sock);
                } catch (const protocol_error& ex) {
                    try {
                        sock.send_line(encode(WireMessage::err(std::string("PROTO ") + ex.what())));
                    } catch (...) {
                    }
                }
                busy_.store(false);
            });
        }
        if (worker.joinable()) worker.join();
    }

    void stop() {
        stop_.store(true);
        if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    }

    ~PlantServer() {
        if (listen_fd_ >= 0) ::close(listen_fd_);
    }

  private:
    void run_session(detail::LineSocket& sock) {
        std::string line;
        if (!sock.recv_line(line)) return;
        const WireMessage hello = decode(line);
        if (hello.tag != WireMessage::Tag::Hello) {
            throw protocol_error("expected HELLO, got: " + line);
        }
        if (static_cast<int>(hello.fields[0]) != kProtocolVersion) {
            sock.send_line(encode(WireMessage::err("VERSION unsupported protocol version")));
            return;
        }
        // Lock-step: exactly one POSES out per CMD in.
        while (true) {
            sock.send_line(encode(WireMessage::poses(plant_.w_T_e, w_T_r_)));
            if (!sock.recv_line(line)) return;  // connection closed: done
            const WireMessage msg = decode(line);
            if (msg.tag == WireMessage::Tag::Bye) return;
            if (msg.tag != WireMessage::Tag::Cmd) {
                throw protocol_error("expected CMD or BYE, got: " + line);
            }
            plant_ = plant_step(plant_, msg.twist(), T_e_);
        }
    }

    PlantState plant_;
    Pose w_T_r_;
    double T_e_;
    double timeout_;
    int listen_fd_ = -1;
    std::atomic<bool> stop_{false};
    std::atomic<bool> busy_{false};
};

/// Client side of the link: connects to a plant server and exposes the same
/// pose-in / twist-out cycle the in-process loop uses.
class PlantClient {
  public:
    PlantClient(const std::string& host, int port, double T_e) : sock_(connect_fd(host, port)) {
        sock_.set_timeout(10.0);
        sock_.send_line(encode(WireMessage::hello(T_e)));
    }

    /// Receives the next POSES message; returns (w_T_e, w_T_r).
    std::pair<Pose, Pose> recv_poses() {
        std::string line;
        if (!sock_.recv_line(line)) throw protocol_error("server closed connection");
        const WireMessage msg = decode(line);
        if (msg.tag == WireMessage::Tag::Err) throw protocol_error("server error: " + msg.text);
        if (msg.tag != WireMessage::Tag::Poses) throw protocol_error("expected POSES, got: " + line);
        return {msg.pose_at(0), msg.pose_at(12)};
    }

    void send_cmd(const Twist& tw) { sock_.send_line(encode(WireMessage::cmd(tw))); }
    void send_bye() { sock_.send_line(encode(WireMessage::bye())); }

  private:
    static int connect_fd(const std::string& host, int port) {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw protocol_error("cannot create socket");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<uint16_t>(port));
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
            ::close(fd);
            throw protocol_error("bad host address: " + host);
        }
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
            ::close(fd);
            throw protocol_error("cannot connect to " + host + ":" + std::to_string(port));
        }
        return fd;
    }

    detail::LineSocket sock_;
};

}  // namespace cmotion
