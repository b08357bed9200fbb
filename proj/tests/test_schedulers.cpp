#include <atomic>
#include <cmath>
#include <numbers>
#include <random>
#include <thread>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "unicon/error.hpp"
#include "unicon/schedulers.hpp"
#include "unicon/synth.hpp"

using namespace unicon;
using doctest::Approx;

namespace {

constexpr double kPi = std::numbers::pi;

Quat yaw_quat(double yaw) { return Quat::from_axis_angle(Vec3::unit_z(), yaw); }

double yaw_of(const Quat& q) {
    const Vec3 f = q.rotate(Vec3::unit_x());
    return std::atan2(f.y, f.x);
}

/// Root walks along its heading at `speed` m/s; two joints swing with period (n - 1) frames,
/// so the last frame repeats the first pose one stride further on.
MotionClip walk_clip(const std::string& id = "walk", int n = 61, double speed = 1.0, double yaw = 0.0) {
    MotionClip clip;
    clip.id = id;
    clip.label_path = {"root", id};
    clip.fps = 60.0;
    clip.has_velocities = true;
    const Quat heading = yaw_quat(yaw);
    const Vec3 dir = heading.rotate(Vec3::unit_x());
    const double period = (n - 1) / clip.fps;
    const double w = 2.0 * kPi / period;
    for (int f = 0; f < n; ++f) {
        const double t = f / clip.fps;
        CharacterState s(2);
        s.root = {dir * (speed * t) + Vec3{0.0, 0.0, 1.0}, heading};
        s.root_velocity = {dir * speed, {}};
        for (std::size_t j = 0; j < 2; ++j) {
            const double sign = j == 0 ? 1.0 : -1.0;
            const double a = 0.3 * sign * std::sin(w * t);
            s.joint_orientations[j] = Quat::from_axis_angle(Vec3::unit_y(), a);
            s.joint_positions[j] = s.root.position + heading.rotate({0.0, 0.2 * sign, -0.5});
            s.joint_velocities[j] = {dir * speed, Vec3::unit_y() * (0.3 * sign * w * std::cos(w * t))};
        }
        clip.frames.push_back(s);
    }
    return clip;
}

MotionClip turn_clip(const std::string& id, int n, const Quat& from, const Quat& to, const Vec3& p0, const Vec3& p1) {
    MotionClip clip;
    clip.id = id;
    clip.label_path = {"root", id};
    clip.has_velocities = true;
    for (int f = 0; f < n; ++f) {
        const double s = n > 1 ? static_cast<double>(f) / (n - 1) : 0.0;
        CharacterState st(2);
        st.root = {lerp(p0, p1, s), quat_slerp(from, to, s)};
        for (std::size_t j = 0; j < 2; ++j) {
            st.joint_orientations[j] = quat_slerp(from, to, s * 0.5);
            st.joint_positions[j] = st.root.position + Vec3{0.0, 0.0, -0.4 * (j + 1.0)};
        }
        clip.frames.push_back(st);
    }
    return derive_velocities(clip);
}

void check_close(const CharacterState& a, const CharacterState& b, double tol) {
    CHECK((a.root.position - b.root.position).norm() < tol);
    CHECK(oracle::quat_distance(a.root.orientation, b.root.orientation) < tol);
    CHECK((a.root_velocity.linear - b.root_velocity.linear).norm() < tol);
    CHECK((a.root_velocity.angular - b.root_velocity.angular).norm() < tol);
    REQUIRE(a.num_joints() == b.num_joints());
    for (std::size_t j = 0; j < a.num_joints(); ++j) {
        CHECK((a.joint_positions[j] - b.joint_positions[j]).norm() < tol);
        CHECK(oracle::quat_distance(a.joint_orientations[j], b.joint_orientations[j]) < tol);
        CHECK((a.joint_velocities[j].linear - b.joint_velocities[j].linear).norm() < tol);
        CHECK((a.joint_velocities[j].angular - b.joint_velocities[j].angular).norm() < tol);
    }
}

CharacterState shifted(CharacterState s, const Vec3& d) {
    s.root.position += d;
    for (auto& p : s.joint_positions) p += d;
    return s;
}

PosePacket packet_at(std::uint64_t seq, double ms, const Vec3& root, std::size_t joints = 2) {
    PosePacket p;
    p.seq = seq;
    p.timestamp_ms = ms;
    p.root_position = root;
    p.root_orientation = yaw_quat(0.1 * static_cast<double>(seq));
    for (std::size_t j = 0; j < joints; ++j) {
        p.joint_orientations.push_back(Quat::from_axis_angle(Vec3::unit_y(), 0.2 * (j + 1.0)));
        p.joint_positions.push_back(root + Vec3{0.0, 0.0, -0.5 * (j + 1.0)});
    }
    return p;
}

const SchedulerInput kNoInput{};

}  // namespace

TEST_CASE("dataset replay windows") {
    const MotionClip clip = walk_clip("walk", 20);
    SUBCASE("first window") {
        const auto f = dataset_next(clip, 0, 0, 2);
        REQUIRE(f);
        REQUIRE(f->size() == 2);
        CHECK((*f)[0] == clip.frames[1]);
        CHECK((*f)[1] == clip.frames[2]);
    }
    SUBCASE("last window then exhaustion") {
        for (std::size_t j : {0u, 3u}) {
            for (int tau : {1, 2}) {
                const std::size_t last_t = clip.size() - 1 - j - static_cast<std::size_t>(tau);
                const auto f = dataset_next(clip, j, last_t, tau);
                REQUIRE(f);
                CHECK(f->back() == clip.frames.back());
                CHECK_FALSE(dataset_next(clip, j, last_t + 1, tau));
            }
        }
    }
    SUBCASE("scheduler walks the clip one step per call") {
        DatasetScheduler s(clip, 4);
        std::size_t calls = 0;
        while (auto f = s.next(kNoInput, 2)) {
            REQUIRE(f->size() == 2);
            CHECK((*f)[0] == clip.frames[4 + calls + 1]);
            ++calls;
        }
        CHECK(calls == clip.size() - 1 - 4 - 1);
        CHECK(s.pending() == 1);
        CHECK(s.next(kNoInput, 1));
        CHECK_FALSE(s.next(kNoInput, 1));
    }
    CHECK_THROWS_AS(dataset_next(clip, 0, 0, 0), InvalidArgument);
    CHECK_THROWS_AS(DatasetScheduler(clip, clip.size()), InvalidArgument);
}

TEST_CASE("stitch buffer counting and concatenation") {
    const MotionClip a = walk_clip("a", 31);
    const MotionClip b = walk_clip("b", 17, 0.5, 1.0);

    StitchBuffer empty_push(6);
    empty_push.push(a);
    CHECK(empty_push.size() == a.size());

    StitchBuffer buf(6);
    buf.push(b);
    buf.push(a);
    REQUIRE(buf.size() == b.size() + 6 + a.size());

    const auto all = buf.pop(static_cast<int>(buf.size()));
    REQUIRE(all);
    CHECK(buf.empty());
    for (std::size_t i = 0; i < b.size(); ++i) CHECK((*all)[i] == b.frames[i]);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK((*all)[b.size() + 6 + i] == a.frames[i]);

    SUBCASE("three clips give two seams") {
        StitchBuffer three(4);
        three.push(a);
        three.push(b);
        three.push(a);
        CHECK(three.size() == 2 * a.size() + b.size() + 8);
    }
    SUBCASE("zero transition frames") {
        StitchBuffer plain(0);
        plain.push(a);
        plain.push(b);
        CHECK(plain.size() == a.size() + b.size());
    }
}

TEST_CASE("stitch seam interpolates at uniform angular speed") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const Quat q0 = oracle::random_quat(rng), q1 = oracle::random_quat(rng), q2 = oracle::random_quat(rng);
        const Vec3 p0 = oracle::random_vec(rng), p1 = oracle::random_vec(rng), p2 = oracle::random_vec(rng);
        const MotionClip first = turn_clip("first", 9, q0, q1, p0, p1);
        const MotionClip second = turn_clip("second", 7, q2, q0, p2, p0);
        const int tr = 6;
        StitchBuffer buf(tr);
        buf.push(first);
        buf.push(second);
        const auto frames = buf.pop(static_cast<int>(buf.size()));
        REQUIRE(frames);
        const std::size_t s0 = first.size() - 1;  // last frame of the first clip
        const CharacterState& end = (*frames)[s0];
        const CharacterState& start = (*frames)[s0 + tr + 1];
        CHECK(start == second.frames.front());
        const double total = quat_angle(end.root.orientation, start.root.orientation);
        const double dt = 1.0 / second.fps;
        for (int i = 0; i < tr + 1; ++i) {
            const CharacterState& u = (*frames)[s0 + i];
            const CharacterState& v = (*frames)[s0 + i + 1];
            const double jump = quat_angle(u.root.orientation, v.root.orientation);
            CHECK(jump <= total / tr + 1e-6);
            CHECK(jump == Approx(total / (tr + 1)).epsilon(0).scale(1).epsilon(1e-7));
            const Vec3 step = (start.root.position - end.root.position) / (tr + 1);
            CHECK((v.root.position - u.root.position - step).norm() < 1e-12);
        }
        // synthetic velocities are central differences over the seam
        for (int i = 1; i <= tr; ++i) {
            const CharacterState& lo = (*frames)[s0 + i - 1];
            const CharacterState& mid = (*frames)[s0 + i];
            const CharacterState& hi = (*frames)[s0 + i + 1];
            const Vec3 v = (hi.root.position - lo.root.position) / (2 * dt);
            CHECK((mid.root_velocity.linear - v).norm() < 1e-9);
            const oracle::Mat3 rel = oracle::matmul(oracle::rotation_matrix(hi.root.orientation),
                                                    oracle::transpose(oracle::rotation_matrix(lo.root.orientation)));
            CHECK(mid.root_velocity.angular.norm() * 2 * dt == Approx(oracle::matrix_angle(rel)).epsilon(1e-9));
            for (std::size_t j = 0; j < 2; ++j) {
                const Vec3 vj = (hi.joint_positions[j] - lo.joint_positions[j]) / (2 * dt);
                CHECK((mid.joint_velocities[j].linear - vj).norm() < 1e-9);
            }
        }
    }
}

TEST_CASE("stitch FIFO order and exhaustion") {
    StitchBuffer buf(2);
    CHECK_FALSE(buf.pop(1));
    const MotionClip a = walk_clip("a", 5);
    const MotionClip b = walk_clip("b", 4, 2.0);
    buf.push(a);
    const auto two = buf.pop(2);
    REQUIRE(two);
    CHECK(two->size() == 2);
    CHECK((*two)[0] == a.frames[0]);
    CHECK((*two)[1] == a.frames[1]);
    buf.push(b);
    CHECK(buf.size() == 3 + 2 + 4);
    CHECK(buf.pop(3)->back() == a.frames[4]);
    buf.pop(2);
    CHECK(buf.pop(1)->front() == b.frames[0]);
    CHECK_FALSE(buf.pop(4));
    CHECK(buf.size() == 3);
    CHECK(buf.pop(3)->back() == b.frames[3]);
    CHECK_FALSE(buf.pop(1));

    MotionClip raw = walk_clip("raw", 5);
    raw.has_velocities = false;
    CHECK_THROWS_AS(buf.push(raw), InvalidArgument);
    CHECK_THROWS_AS(StitchBuffer(-1), InvalidArgument);
}

TEST_CASE("stitch alignment moves the clip under the last root") {
    const MotionClip a = walk_clip("a", 31);
    const MotionClip b = walk_clip("b", 31, 1.0, 2.0);
    StitchBuffer buf(6);
    buf.push(a);
    buf.push(b, true);
    const auto frames = buf.pop(static_cast<int>(buf.size()));
    const CharacterState& end = (*frames)[a.size() - 1];
    const CharacterState& start = (*frames)[a.size() + 6];
    CHECK(std::abs(start.root.position.x - end.root.position.x) < 1e-12);
    CHECK(std::abs(start.root.position.y - end.root.position.y) < 1e-12);
    CHECK(start.root.position.z == Approx(b.frames[0].root.position.z));
    CHECK(std::abs(yaw_of(start.root.orientation) - yaw_of(end.root.orientation)) < 1e-12);
    // the shape of the aligned clip is a rigid copy
    const CharacterState& last = frames->back();
    CHECK((last.root.position - start.root.position).norm() ==
          Approx((b.frames.back().root.position - b.frames.front().root.position).norm()));
}

TEST_CASE("stitch scheduler peeks tau and consumes one") {
    const MotionClip a = walk_clip("a", 6);
    StitchScheduler s(6, false);
    CHECK_FALSE(s.next(kNoInput, 1));
    s.push(a);
    for (std::size_t i = 0; i + 2 <= a.size(); ++i) {
        const auto f = s.next(kNoInput, 2);
        REQUIRE(f);
        CHECK((*f)[0] == a.frames[i]);
        CHECK((*f)[1] == a.frames[i + 1]);
    }
    CHECK(s.pending() == 1);
    CHECK_FALSE(s.next(kNoInput, 2));
    CHECK(s.next(kNoInput, 1));
    CHECK(s.pending() == 0);
}

TEST_CASE("command scheduler with no steering replays the gait") {
    const MotionClip walk = walk_clip();
    CommandScheduler s({walk});
    const std::size_t span = walk.size() - 1;
    const Vec3 stride = walk.frames.back().root.position - walk.frames.front().root.position;
    for (std::size_t k = 1; k <= 3 * span; ++k) {
        const auto f = s.next(kNoInput, 1);
        REQUIRE(f);
        REQUIRE(f->size() == 1);
        const double cycles = static_cast<double>(k / span);
        const CharacterState expect = shifted(walk.frames[k % span], stride * cycles);
        check_close(f->front(), expect, 1e-9);
    }
}

TEST_CASE("command scheduler speed warps time") {
    const MotionClip walk = walk_clip();
    CommandScheduler s({walk});
    s.set_command({std::nullopt, 0.5, ""});
    Vec3 prev = walk.frames[0].root.position;
    const double clip_step = 1.0 / walk.fps;
    for (int k = 0; k < 200; ++k) {
        const CharacterState f = s.next(kNoInput, 1)->front();
        CHECK((f.root.position - prev).norm() == Approx(0.5 * clip_step).epsilon(1e-9));
        CHECK(f.root_velocity.linear.x == Approx(0.5));
        prev = f.root.position;
    }
    s.set_command({std::nullopt, 0.0, ""});
    const CharacterState held = s.next(kNoInput, 1)->front();
    CHECK((held.root.position - prev).norm() < 1e-12);
    CHECK(held.root_velocity.linear.norm() == 0.0);
}

TEST_CASE("command scheduler turns at the bounded rate") {
    const MotionClip walk = walk_clip();
    CommandConfig cfg;
    CommandScheduler s({walk}, cfg);
    CHECK(s.facing() == Approx(0.0));
    s.set_command({kPi / 2, 1.0, ""});
    const double max_step = cfg.turn_rate / walk.fps;
    const int steps = static_cast<int>(std::ceil((kPi / 2) / max_step - 1e-9));
    CHECK(steps == 45);
    double facing = s.facing();
    Vec3 prev = walk.frames[0].root.position;
    for (int k = 1; k <= steps + 20; ++k) {
        const CharacterState f = s.next(kNoInput, 1)->front();
        const double now = s.facing();
        CHECK(now == Approx(yaw_of(f.root.orientation)).epsilon(1e-12));
        CHECK(now - facing <= max_step + 1e-12);
        CHECK(now >= facing - 1e-12);
        if (k < steps) CHECK(now == Approx(k * max_step).epsilon(1e-9));
        if (k >= steps) CHECK(std::abs(now - kPi / 2) < 1e-9);
        // the root path stays continuous while turning
        CHECK((f.root.position - prev).norm() == Approx(1.0 / walk.fps).epsilon(1e-9));
        prev = f.root.position;
        facing = now;
    }
    // after the turn the root advances along +y
    const CharacterState a = s.next(kNoInput, 1)->front();
    const CharacterState b = s.next(kNoInput, 1)->front();
    CHECK(std::abs(b.root.position.x - a.root.position.x) < 1e-9);
    CHECK(b.root.position.y - a.root.position.y == Approx(1.0 / walk.fps));

    SUBCASE("turning the short way across pi") {
        s.set_command({-kPi * 0.9, 1.0, ""});
        const double before = s.facing();
        s.next(kNoInput, 1);
        // 90 -> -162 degrees: 108 degrees counter-clockwise through 180
        CHECK(s.facing() == Approx(before + max_step));
        for (int k = 0; k < 60; ++k) s.next(kNoInput, 1);
        CHECK(std::abs(s.facing() + kPi * 0.9) < 1e-9);
    }
}

TEST_CASE("command scheduler ignores the simulated state") {
    const MotionClip walk = walk_clip();
    CommandScheduler a({walk}), b({walk});
    std::mt19937_64 rng(5);
    std::vector<CharacterState> fake(3, CharacterState(2));
    for (int k = 0; k < 150; ++k) {
        if (k == 30) {
            a.set_command({1.0, 1.5, ""});
            b.set_command({1.0, 1.5, ""});
        }
        for (auto& st : fake) st.root.position = oracle::random_vec(rng, 100.0);
        const auto fa = a.next(kNoInput, 2);
        const auto fb = b.next({fake, static_cast<std::uint64_t>(k * 7)}, 2);
        REQUIRE(fa);
        REQUIRE(fb);
        CHECK(*fa == *fb);
    }
}

TEST_CASE("command scheduler lookahead matches the next step") {
    const MotionClip walk = walk_clip();
    CommandScheduler s({walk});
    s.set_command({0.7, 1.3, ""});
    Frames prev = *s.next(kNoInput, 2);
    for (int k = 0; k < 100; ++k) {
        const Frames now = *s.next(kNoInput, 2);
        REQUIRE(now.size() == 2);
        check_close(now[0], prev[1], 1e-12);
        prev = now;
    }
}

TEST_CASE("command scheduler gait switching and errors") {
    const MotionClip walk = walk_clip("walk");
    const MotionClip run = walk_clip("run", 31, 3.0);
    CommandScheduler s({walk, run});
    CHECK(s.has_gait("run"));
    CHECK_FALSE(s.has_gait("jog"));
    s.set_command({0.5, 1.0, ""});
    for (int k = 0; k < 70; ++k) s.next(kNoInput, 1);
    const CharacterState before = s.next(kNoInput, 1)->front();
    const double facing = s.facing();
    s.set_command({0.5, 1.0, "run"});
    CHECK(s.command().gait == "run");
    CHECK(s.facing() == Approx(facing));
    const CharacterState after = s.next(kNoInput, 1)->front();
    const Vec3 d = after.root.position - before.root.position;
    CHECK(std::hypot(d.x, d.y) == Approx(3.0 / run.fps).epsilon(1e-6));

    const Command keep = s.command();
    CHECK_THROWS_AS(s.set_command({0.0, 1.0, "jog"}), InvalidArgument);
    CHECK_THROWS_AS(s.set_command({0.0, -1.0, ""}), InvalidArgument);
    CHECK_THROWS_AS(s.set_command({0.0, 5.0, ""}), InvalidArgument);
    CHECK_THROWS_AS(s.set_command({std::nan(""), 1.0, ""}), InvalidArgument);
    CHECK(s.command() == keep);
    CHECK_THROWS_AS(CommandScheduler({}), InvalidArgument);
    CHECK_THROWS_AS(CommandScheduler({walk, walk}), InvalidArgument);
}

TEST_CASE("pose packet wire round trip") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        PosePacket p;
        p.seq = rng();
        p.timestamp_ms = std::uniform_real_distribution<double>(0, 1e9)(rng);
        p.root_position = oracle::random_vec(rng, 10.0);
        p.root_orientation = oracle::random_quat(rng);
        const std::size_t joints = rng() % 6;
        for (std::size_t j = 0; j < joints; ++j) p.joint_orientations.push_back(oracle::random_quat(rng));
        if (trial % 2)
            for (std::size_t j = 0; j < joints; ++j) p.joint_positions.push_back(oracle::random_vec(rng));
        const PosePacket q = decode_pose_packet(encode_pose_packet(p));
        CHECK(q == p);
    }
}

TEST_CASE("pose packet parse errors") {
    const std::string good = encode_pose_packet(packet_at(1, 10.0, {1, 2, 3}));
    CHECK_NOTHROW(decode_pose_packet(good));
    const char* bad[] = {
        "",
        "not json",
        "[]",
        R"({"seq":1,"timestamp_ms":0,"root_position":[0,0],"root_quat":[1,0,0,0],"J":0,"joint_quats":[]})",
        R"({"seq":1,"timestamp_ms":0,"root_position":[0,0,0],"root_quat":[2,0,0,0],"J":0,"joint_quats":[]})",
        R"({"seq":1,"timestamp_ms":0,"root_position":[0,0,0],"root_quat":[1,0,0,0],"J":1,"joint_quats":[]})",
        R"({"seq":-1,"timestamp_ms":0,"root_position":[0,0,0],"root_quat":[1,0,0,0],"J":0,"joint_quats":[]})",
        R"({"timestamp_ms":0,"root_position":[0,0,0],"root_quat":[1,0,0,0],"J":0,"joint_quats":[]})",
        R"({"seq":1,"timestamp_ms":"x","root_position":[0,0,0],"root_quat":[1,0,0,0],"J":0,"joint_quats":[]})",
        R"({"seq":1,"timestamp_ms":0,"root_position":[0,0,0],"root_quat":[1,0,0,0],"J":1,"joint_quats":[1,0,0,0],"joint_positions":[0]})",
        R"({"seq":1,"timestamp_ms":0,"root_position":[0,0,0],"root_quat":[1,0,0,0],"J":0,"joint_quats":[],"extra":1})",
    };
    for (const char* text : bad) CHECK_THROWS_AS(decode_pose_packet(text), ParseError);
}

TEST_CASE("pose buffer ingestion rules") {
    PoseBuffer buf(3);
    CHECK(buf.ingest(encode_pose_packet(packet_at(1, 10.0, {}))) == IngestResult::appended);
    CHECK(buf.size() == 1);

    CHECK(buf.ingest(encode_pose_packet(packet_at(2, 5.0, {}))) == IngestResult::stale);
    CHECK(buf.ingest(encode_pose_packet(packet_at(3, 10.0, {}))) == IngestResult::stale);
    CHECK(buf.stale_drops() == 2);
    CHECK(buf.size() == 1);

    CHECK(buf.ingest("{garbage") == IngestResult::parse_error);
    CHECK(buf.ingest(encode_pose_packet(packet_at(4, 20.0, {}, 3))) == IngestResult::parse_error);
    CHECK(buf.parse_errors() == 2);
    CHECK(buf.size() == 1);

    for (int k = 0; k < 4; ++k) buf.push(packet_at(10 + k, 100.0 + k, {}));
    CHECK(buf.size() == 3);
    const auto snap = buf.snapshot();
    CHECK(snap.front().seq == 11);
    CHECK(snap.back().seq == 13);
    CHECK(buf.accepted() == 5);
    CHECK_THROWS_AS(PoseBuffer(1), InvalidArgument);
}

TEST_CASE("stream velocities") {
    SUBCASE("underfull buffer") {
        CHECK_FALSE(stream_next({}, 1));
        CHECK_FALSE(stream_next({packet_at(1, 0.0, {})}, 1));
    }
    SUBCASE("two-point difference") {
        const Vec3 d{0.3, -0.1, 0.05};
        const double dt_ms = 20.0;
        std::vector<PosePacket> s{packet_at(1, 100.0, {1, 1, 1}), packet_at(2, 100.0 + dt_ms, Vec3{1, 1, 1} + d)};
        const auto f = stream_next(s, 2, 1.0);
        REQUIRE(f);
        REQUIRE(f->size() == 2);
        CHECK(((*f)[0].root_velocity.linear - d / (dt_ms / 1000.0)).norm() < 1e-9);
        CHECK((*f)[0].root_velocity.angular.z == Approx(0.1 / 0.02));
        CHECK((*f)[0] == (*f)[1]);
        CHECK((*f)[0].root.position == s.back().root_position);
    }
    SUBCASE("constant stream") {
        std::vector<PosePacket> s;
        for (int k = 0; k < 8; ++k) {
            PosePacket p = packet_at(1, 10.0 * k, {0.5, 0.5, 1.0});
            s.push_back(p);
        }
        const auto f = stream_next(s, 1);
        REQUIRE(f);
        CHECK(f->front().root_velocity.linear.norm() == 0.0);
        CHECK(f->front().root_velocity.angular.norm() == 0.0);
        for (const auto& v : f->front().joint_velocities) {
            CHECK(v.linear.norm() == 0.0);
            CHECK(v.angular.norm() == 0.0);
        }
    }
    SUBCASE("smoothing reduces noise variance") {
        std::mt19937_64 rng(21);
        std::normal_distribution<double> noise(0.0, 0.01);
        PoseBuffer buf(16);
        std::vector<double> raw, smooth;
        for (int k = 0; k < 600; ++k) {
            const double t = k / 60.0;
            buf.push(packet_at(static_cast<std::uint64_t>(k), 1000.0 * t, {1.0 * t + noise(rng), 0.0, 1.0}));
            if (buf.size() < 16) continue;
            const auto snap = buf.snapshot();
            raw.push_back(stream_next(snap, 1, 1.0)->front().root_velocity.linear.x);
            smooth.push_back(stream_next(snap, 1, 0.3)->front().root_velocity.linear.x);
        }
        auto variance = [](const std::vector<double>& v) {
            double m = 0.0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            double s = 0.0;
            for (double x : v) s += (x - m) * (x - m);
            return s / static_cast<double>(v.size() - 1);
        };
        MESSAGE("raw variance " << variance(raw) << ", smoothed " << variance(smooth));
        CHECK(variance(smooth) < variance(raw));
    }
    CHECK_THROWS_AS(stream_next({packet_at(1, 0, {}), packet_at(2, 1, {})}, 1, 0.0), InvalidArgument);
    CHECK_THROWS_AS(stream_next({packet_at(1, 0, {}), packet_at(2, 1, {})}, 0), InvalidArgument);
}

TEST_CASE("stream fills missing joint positions by kinematics") {
    const CharacterModel model = build_chain(3, true);
    std::mt19937_64 rng(8);
    std::vector<PosePacket> packets;
    CharacterState last;
    for (int k = 0; k < 3; ++k) {
        SimState s = zero_state(model);
        for (int i = 0; i < model.num_actuated(); ++i)
            s.q[s.q.size() - 1 - i] = std::uniform_real_distribution<double>(-1, 1)(rng);
        last = forward_kinematics(model, s);
        PosePacket p;
        p.seq = static_cast<std::uint64_t>(k);
        p.timestamp_ms = 16.0 * k;
        p.root_position = last.root.position;
        p.root_orientation = last.root.orientation;
        p.joint_orientations = last.joint_orientations;
        packets.push_back(p);
    }
    CHECK_THROWS_AS(stream_next(packets, 1), InvalidArgument);
    const auto f = stream_next(packets, 1, 0.3, &model);
    REQUIRE(f);
    for (std::size_t j = 0; j < last.num_joints(); ++j)
        CHECK((f->front().joint_positions[j] - last.joint_positions[j]).norm() < 1e-12);

    auto buf = std::make_shared<PoseBuffer>();
    for (const auto& p : packets) buf->push(p);
    StreamScheduler sched(buf, 0.3, model);
    CHECK(*sched.next(kNoInput, 1) == *f);
}

TEST_CASE("pose buffer under concurrent ingest and read") {
    auto buf = std::make_shared<PoseBuffer>(8);
    std::atomic<bool> done{false};
    constexpr int kPackets = 3000;
    std::thread writer([&] {
        for (int k = 0; k < kPackets; ++k)
            buf->ingest(encode_pose_packet(packet_at(static_cast<std::uint64_t>(k), k * 1.0, {k * 0.01, 0, 1})));
        done = true;
    });
    StreamScheduler sched(buf, 0.3);
    std::size_t reads = 0;
    bool ordered = true;
    while (!done) {
        const auto snap = buf->snapshot();
        for (std::size_t i = 1; i < snap.size(); ++i) ordered = ordered && snap[i].timestamp_ms > snap[i - 1].timestamp_ms;
        if (auto f = sched.next(kNoInput, 1)) ordered = ordered && f->size() == 1;
        ++reads;
    }
    writer.join();
    CHECK(ordered);
    CHECK(buf->accepted() == kPackets);
    CHECK(buf->size() == 8);
    CHECK(buf->snapshot().back().seq == kPackets - 1);
    MESSAGE("reads during ingest: " << reads);
}

TEST_CASE("every scheduler returns tau frames or nothing") {
    const MotionClip walk = walk_clip("walk", 12);
    auto pose = std::make_shared<PoseBuffer>();
    std::vector<std::unique_ptr<Scheduler>> all;
    all.push_back(std::make_unique<DatasetScheduler>(walk));
    auto stitch = std::make_unique<StitchScheduler>();
    stitch->push(walk);
    all.push_back(std::move(stitch));
    all.push_back(std::make_unique<CommandScheduler>(std::vector<MotionClip>{walk}));
    all.push_back(std::make_unique<StreamScheduler>(pose));
    std::mt19937_64 rng(2);
    for (int k = 0; k < 40; ++k) {
        pose->push(packet_at(static_cast<std::uint64_t>(k), k * 16.0, {}));
        for (auto& s : all) {
            const int tau = 1 + static_cast<int>(rng() % 3);
            const auto f = s->next(kNoInput, tau);
            if (f) CHECK(f->size() == static_cast<std::size_t>(tau));
        }
    }
    CHECK(scheduler_kind_from("stream") == SchedulerKind::stream);
    CHECK(scheduler_kind_name(SchedulerKind::stitch) == "stitch");
    CHECK_THROWS_AS(scheduler_kind_from("pfnn"), InvalidArgument);
}
