#include "cmotion/netlink.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <arpa/inet.h>
#include <sys/socket.h>

#include <chrono>
#include <random>
#include <thread>

using namespace cmotion;

namespace {

Pose random_pose(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    const Vec3 ax = Vec3(uni(rng), uni(rng), uni(rng)).normalized();
    return Pose{rotation_exp(2.0 * uni(rng) * ax), Vec3(20 * uni(rng), 20 * uni(rng), 20 * uni(rng))};
}

/// Raw client used for protocol-violation tests (PlantClient always behaves).
detail::LineSocket raw_connect(int port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port));
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    detail::LineSocket sock(fd);
    sock.set_timeout(5.0);
    return sock;
}

}  // namespace

TEST_CASE("encode: canonical message lines") {
    REQUIRE(encode(WireMessage::cmd(Twist{})) == "CMD 0 0 0 0 0 0\n");
    REQUIRE(encode(WireMessage::poses(Pose{}, Pose{})) ==
            "POSES 1 0 0 0 1 0 0 0 1 0 0 0 1 0 0 0 1 0 0 0 1 0 0 0\n");
    REQUIRE(encode(WireMessage::bye()) == "BYE\n");
    REQUIRE(encode(WireMessage::hello(0.008)) == "HELLO 1 0.0080000000000000002\n");
    REQUIRE(encode(WireMessage::err("BUSY plant already in session")) ==
            "ERR BUSY plant already in session\n");
}

TEST_CASE("decode: well-formed lines") {
    const WireMessage h = decode("HELLO 1 0.008");
    REQUIRE(h.tag == WireMessage::Tag::Hello);
    REQUIRE(h.fields.size() == 2);
    REQUIRE(h.fields[0] == 1.0);

    const WireMessage c = decode("CMD 1 2 3 -4 5.5 -6");
    REQUIRE(c.tag == WireMessage::Tag::Cmd);
    REQUIRE((c.twist().v - Vec3(1, 2, 3)).norm() == 0.0);
    REQUIRE((c.twist().w - Vec3(-4, 5.5, -6)).norm() == 0.0);

    const WireMessage e = decode("ERR BUSY plant already in session");
    REQUIRE(e.tag == WireMessage::Tag::Err);
    REQUIRE(e.text == "BUSY plant already in session");

    REQUIRE(decode("BYE").tag == WireMessage::Tag::Bye);
}

TEST_CASE("decode: malformed lines raise protocol_error") {
    REQUIRE_THROWS_AS(decode("CMD 1 2"), protocol_error);          // wrong arity
    REQUIRE_THROWS_AS(decode("CMD 1 2 3 4 5 6 7"), protocol_error);
    REQUIRE_THROWS_AS(decode("CMD 1 2 3 four 5 6"), protocol_error);
    REQUIRE_THROWS_AS(decode("WAT 1"), protocol_error);            // unknown tag
    REQUIRE_THROWS_AS(decode(""), protocol_error);
    REQUIRE_THROWS_AS(decode("POSES 1 0 0"), protocol_error);
    REQUIRE_THROWS_AS(decode("BYE 1"), protocol_error);
}

TEST_CASE("decode(encode(msg)) round-trips every field bit-exactly") {
    std::mt19937_64 rng(113);
    std::uniform_real_distribution<double> uni(-100.0, 100.0);
    for (int i = 0; i < 200; ++i) {
        Twist tw;
        tw.v = Vec3(uni(rng), uni(rng), uni(rng));
        tw.w = Vec3(uni(rng), uni(rng), uni(rng));
        const WireMessage back = decode(encode(WireMessage::cmd(tw)));
        REQUIRE(back.twist().v == tw.v);
        REQUIRE(back.twist().w == tw.w);

        const Pose a = random_pose(rng);
        const Pose b = random_pose(rng);
        const WireMessage p = decode(encode(WireMessage::poses(a, b)));
        REQUIRE(p.pose_at(0).R == a.R);
        REQUIRE(p.pose_at(0).t == a.t);
        REQUIRE(p.pose_at(12).R == b.R);
        REQUIRE(p.pose_at(12).t == b.t);
    }
}

TEST_CASE("decode never crashes on fuzzed input") {
    std::mt19937_64 rng(127);
    std::uniform_int_distribution<int> len(0, 80);
    std::uniform_int_distribution<int> ch(32, 126);
    for (int i = 0; i < 2000; ++i) {
        std::string line;
        const int n = len(rng);
        for (int j = 0; j < n; ++j) line.push_back(static_cast<char>(ch(rng)));
        try {
            (void)decode(line);
        } catch (const protocol_error&) {
        }
    }
    SUCCEED("no crash");
}

TEST_CASE("server: HELLO followed by BYE steps the plant zero times") {
    PlantServer server(PlantState{}, Pose{}, 0.008, 2.0);
    const int port = server.bind(0);
    std::thread st([&] { server.serve(1); });
    {
        PlantClient client("127.0.0.1", port, 0.008);
        (void)client.recv_poses();
        client.send_bye();
    }
    st.join();
    REQUIRE(server.plant().step_count == 0);
}

TEST_CASE("server: N commands step the plant exactly N times, lock-step") {
    PlantState init;
    init.w_T_e = Pose{Mat3::Identity(), Vec3(1, 2, 3)};
    const Pose w_T_r{rotation_exp(Vec3(0, 0, 0.5)), Vec3(9, 8, 7)};
    PlantServer server(init, w_T_r, 0.008, 2.0);
    const int port = server.bind(0);
    std::thread st([&] { server.serve(1); });

    const int N = 50;
    Twist tw;
    tw.v = Vec3(1, 0, 0);
    {
        PlantClient client("127.0.0.1", port, 0.008);
        for (int i = 0; i < N; ++i) {
            const auto [w_T_e, ref] = client.recv_poses();
            REQUIRE(ref.t == w_T_r.t);  // reference frame repeats verbatim
            // Pose advances by exactly one step per cycle.
            REQUIRE(w_T_e.t.x() == Catch::Approx(1.0 + 0.008 * i).margin(1e-12));
            client.send_cmd(tw);
        }
        (void)client.recv_poses();
        client.send_bye();
    }
    st.join();
    REQUIRE(server.plant().step_count == N);
    REQUIRE(server.plant().w_T_e.t.x() == Catch::Approx(1.0 + 0.008 * N).margin(1e-12));
}

TEST_CASE("server: concurrent connection is refused with ERR BUSY") {
    PlantServer server(PlantState{}, Pose{}, 0.008, 2.0);
    const int port = server.bind(0);
    std::thread st([&] { server.serve(2); });

    PlantClient first("127.0.0.1", port, 0.008);
    (void)first.recv_poses();  // session established and owns the plant

    {
        PlantClient second("127.0.0.1", port, 0.008);
        try {
            (void)second.recv_poses();
            FAIL("expected ERR BUSY");
        } catch (const protocol_error& ex) {
            REQUIRE(std::string(ex.what()).find("BUSY") != std::string::npos);
        }
    }

    first.send_bye();
    // A later client gets a normal session again (retry while the first
    // session is still winding down).
    bool served = false;
    for (int attempt = 0; attempt < 100 && !served; ++attempt) {
        try {
            PlantClient third("127.0.0.1", port, 0.008);
            (void)third.recv_poses();
            third.send_bye();
            served = true;
        } catch (const protocol_error&) {
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
    }
    REQUIRE(served);
    st.join();
}

TEST_CASE("server: unsupported protocol version is rejected") {
    PlantServer server(PlantState{}, Pose{}, 0.008, 2.0);
    const int port = server.bind(0);
    std::thread st([&] { server.serve(1); });
    {
        detail::LineSocket raw = raw_connect(port);
        raw.send_line("HELLO 99 0.008\n");
        std::string reply;
        REQUIRE(raw.recv_line(reply));
        REQUIRE(reply.rfind("ERR VERSION", 0) == 0);
    }
    st.join();
}

TEST_CASE("server: lock-step violation answers ERR PROTO") {
    PlantServer server(PlantState{}, Pose{}, 0.008, 2.0);
    const int port = server.bind(0);
    std::thread st([&] { server.serve(1); });
    {
        detail::LineSocket raw = raw_connect(port);
        raw.send_line("HELLO 1 0.008\n");
        std::string line;
        REQUIRE(raw.recv_line(line));
        REQUIRE(decode(line).tag == WireMessage::Tag::Poses);
        raw.send_line("CMD 1 2\n");  // wrong arity mid-session
        REQUIRE(raw.recv_line(line));
        REQUIRE(line.rfind("ERR PROTO", 0) == 0);
    }
    st.join();
    REQUIRE(server.plant().step_count == 0);
}
