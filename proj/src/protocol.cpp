#include "unicon/protocol.hpp"

#include <cmath>
#include <set>

#include "json.hpp"
#include "pose_json.hpp"

namespace unicon {

using nlohmann::json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

[[noreturn]] void malformed(const std::string& what) { throw ProtocolError("malformed", what); }

json vec3(const Vec3& v) { return {v.x, v.y, v.z}; }

json encode_state(const CharacterState& s) {
    json jp = json::array(), jq = json::array(), jv = json::array();
    for (std::size_t j = 0; j < s.num_joints(); ++j) {
        const Vec3& p = s.joint_positions[j];
        const Quat& q = s.joint_orientations[j];
        const SpatialVelocity& v = s.joint_velocities[j];
        jp.insert(jp.end(), {p.x, p.y, p.z});
        jq.insert(jq.end(), {q.w, q.x, q.y, q.z});
        jv.insert(jv.end(), {v.linear.x, v.linear.y, v.linear.z, v.angular.x, v.angular.y, v.angular.z});
    }
    const RigidPose& r = s.root;
    const SpatialVelocity& rv = s.root_velocity;
    return {{"J", s.num_joints()},
            {"root", {r.position.x, r.position.y, r.position.z, r.orientation.w, r.orientation.x, r.orientation.y,
                      r.orientation.z}},
            {"rv", {rv.linear.x, rv.linear.y, rv.linear.z, rv.angular.x, rv.angular.y, rv.angular.z}},
            {"jp", std::move(jp)},
            {"jq", std::move(jq)},
            {"jv", std::move(jv)}};
}

const json& field(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end()) malformed(std::string("missing field '") + key + "'");
    return *it;
}

double real(const json& j, const char* key) {
    const json& v = field(j, key);
    if (!v.is_number()) malformed(std::string("field '") + key + "' is not a number");
    return v.get<double>();
}

std::uint64_t count(const json& j, const char* key) {
    const json& v = field(j, key);
    if (!v.is_number_unsigned()) malformed(std::string("field '") + key + "' is not a non-negative integer");
    return v.get<std::uint64_t>();
}

std::string text(const json& j, const char* key) {
    const json& v = field(j, key);
    if (!v.is_string()) malformed(std::string("field '") + key + "' is not a string");
    return v.get<std::string>();
}

std::vector<double> reals(const json& j, const char* key, std::size_t n) {
    const json& v = field(j, key);
    if (!v.is_array() || v.size() != n)
        malformed(std::string("field '") + key + "' must hold " + std::to_string(n) + " numbers");
    std::vector<double> out;
    out.reserve(n);
    for (const auto& x : v) {
        if (!x.is_number()) malformed(std::string("field '") + key + "' holds a non-number");
        out.push_back(x.get<double>());
    }
    return out;
}

CharacterState decode_state(const json& j) {
    if (!j.is_object()) malformed("state is not an object");
    const auto joints = static_cast<std::size_t>(count(j, "J"));
    if (joints > 4096) malformed("state joint count too large");
    CharacterState s(joints);
    const auto root = reals(j, "root", 7);
    s.root = {{root[0], root[1], root[2]}, {root[3], root[4], root[5], root[6]}};
    const auto rv = reals(j, "rv", 6);
    s.root_velocity = {{rv[0], rv[1], rv[2]}, {rv[3], rv[4], rv[5]}};
    const auto jp = reals(j, "jp", 3 * joints);
    const auto jq = reals(j, "jq", 4 * joints);
    const auto jv = reals(j, "jv", 6 * joints);
    for (std::size_t i = 0; i < joints; ++i) {
        s.joint_positions[i] = {jp[3 * i], jp[3 * i + 1], jp[3 * i + 2]};
        s.joint_orientations[i] = {jq[4 * i], jq[4 * i + 1], jq[4 * i + 2], jq[4 * i + 3]};
        const double* v = &jv[6 * i];
        s.joint_velocities[i] = {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
    }
    return s;
}

json encode_terms(const RewardTerms& t) {
    json out = json::object();
    const auto values = t.values();
    for (std::size_t i = 0; i < kNumRewardTerms; ++i) out[std::string(kRewardTermNames[i])] = values[i];
    return out;
}

RewardTerms decode_terms(const json& j) {
    if (!j.is_object() || j.size() != kNumRewardTerms) malformed("reward terms must name all five terms");
    return {real(j, "pr"), real(j, "qr"), real(j, "pj"), real(j, "qj"), real(j, "qdj")};
}

void expect_keys(const json& j, std::initializer_list<const char*> keys) {
    std::set<std::string> allowed{"v", "type", "seq"};
    for (const char* k : keys) allowed.insert(k);
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) malformed("unexpected field '" + k + "'");
}

}  // namespace

std::string_view message_type(const Payload& payload) {
    return std::visit(overloaded{
                          [](const EnqueueClip&) { return std::string_view("enqueue_clip"); },
                          [](const SetCommand&) { return std::string_view("set_command"); },
                          [](const ApplyImpulse&) { return std::string_view("apply_impulse"); },
                          [](const SetSpeedRatio&) { return std::string_view("set_speed_ratio"); },
                          [](const PoseMessage&) { return std::string_view("pose_packet"); },
                          [](const Pause&) { return std::string_view("pause"); },
                          [](const Resume&) { return std::string_view("resume"); },
                          [](const SelectScheduler&) { return std::string_view("select_scheduler"); },
                          [](const StateFrame&) { return std::string_view("state_frame"); },
                          [](const ClipLibrary&) { return std::string_view("clip_library"); },
                          [](const Ack&) { return std::string_view("ack"); },
                          [](const ErrorReply&) { return std::string_view("error"); },
                      },
                      payload);
}

bool is_client_message(const Payload& payload) {
    return !std::holds_alternative<StateFrame>(payload) && !std::holds_alternative<ClipLibrary>(payload) &&
           !std::holds_alternative<Ack>(payload) && !std::holds_alternative<ErrorReply>(payload);
}

std::string serialize(const Message& message) {
    json j = {{"v", kProtocolVersion}, {"type", message_type(message.payload)}, {"seq", message.seq}};
    std::visit(overloaded{
                   [&](const EnqueueClip& m) { j["id"] = m.id; },
                   [&](const SetCommand& m) {
                       j["heading"] = m.command.heading ? json(*m.command.heading) : json(nullptr);
                       j["speed"] = m.command.speed;
                       j["gait"] = m.command.gait;
                   },
                   [&](const ApplyImpulse& m) {
                       j["body"] = m.body;
                       j["impulse"] = vec3(m.impulse);
                   },
                   [&](const SetSpeedRatio& m) { j["ratio"] = m.ratio; },
                   [&](const PoseMessage& m) { j["pose"] = pose_packet_to_json(m.pose); },
                   [&](const Pause&) {},
                   [&](const Resume&) {},
                   [&](const SelectScheduler& m) {
                       j["scheduler"] = scheduler_kind_name(m.scheduler);
                       j["clip"] = m.clip;
                   },
                   [&](const StateFrame& m) {
                       j["tick"] = m.tick;
                       j["actual"] = encode_state(m.actual);
                       j["target"] = encode_state(m.target);
                       j["terms"] = encode_terms(m.terms);
                       j["reward"] = m.reward;
                       j["scheduler"] = scheduler_kind_name(m.scheduler);
                       j["buffer"] = m.buffer;
                   },
                   [&](const ClipLibrary& m) {
                       json clips = json::array();
                       for (const auto& c : m.clips)
                           clips.push_back({{"id", c.id}, {"label", c.label}, {"frames", c.frames}, {"fps", c.fps}});
                       j["clips"] = std::move(clips);
                   },
                   [&](const Ack&) {},
                   [&](const ErrorReply& m) {
                       j["code"] = m.code;
                       j["message"] = m.message;
                   },
               },
               message.payload);
    try {
        return j.dump();
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("message not encodable: ") + e.what());
    }
}

Message deserialize(std::string_view bytes) {
    json j;
    try {
        j = json::parse(bytes);
    } catch (const json::parse_error& e) {
        malformed(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) malformed("message is not an object");
    const json& v = field(j, "v");
    if (!v.is_number_integer()) malformed("field 'v' is not an integer");
    if (v.get<std::int64_t>() != kProtocolVersion)
        throw ProtocolError("version_mismatch", "protocol version " + v.dump() + ", expected " +
                                                    std::to_string(kProtocolVersion));
    const std::string type = text(j, "type");
    Message m;
    m.seq = count(j, "seq");
    try {
        if (type == "enqueue_clip") {
            expect_keys(j, {"id"});
            m.payload = EnqueueClip{text(j, "id")};
        } else if (type == "set_command") {
            expect_keys(j, {"heading", "speed", "gait"});
            SetCommand c;
            const json& h = field(j, "heading");
            if (!h.is_null() && !h.is_number()) malformed("field 'heading' is not a number");
            if (h.is_number()) c.command.heading = h.get<double>();
            c.command.speed = real(j, "speed");
            c.command.gait = text(j, "gait");
            m.payload = c;
        } else if (type == "apply_impulse") {
            expect_keys(j, {"body", "impulse"});
            const json& b = field(j, "body");
            if (!b.is_number_integer()) malformed("field 'body' is not an integer");
            const auto imp = reals(j, "impulse", 3);
            m.payload = ApplyImpulse{b.get<int>(), {imp[0], imp[1], imp[2]}};
        } else if (type == "set_speed_ratio") {
            expect_keys(j, {"ratio"});
            m.payload = SetSpeedRatio{real(j, "ratio")};
        } else if (type == "pose_packet") {
            expect_keys(j, {"pose"});
            m.payload = PoseMessage{pose_packet_from_json(field(j, "pose"))};
        } else if (type == "pause") {
            expect_keys(j, {});
            m.payload = Pause{};
        } else if (type == "resume") {
            expect_keys(j, {});
            m.payload = Resume{};
        } else if (type == "select_scheduler") {
            expect_keys(j, {"scheduler", "clip"});
            m.payload = SelectScheduler{scheduler_kind_from(text(j, "scheduler")), text(j, "clip")};
        } else if (type == "state_frame") {
            expect_keys(j, {"tick", "actual", "target", "terms", "reward", "scheduler", "buffer"});
            StateFrame f;
            f.tick = count(j, "tick");
            f.actual = decode_state(field(j, "actual"));
            f.target = decode_state(field(j, "target"));
            f.terms = decode_terms(field(j, "terms"));
            f.reward = real(j, "reward");
            f.scheduler = scheduler_kind_from(text(j, "scheduler"));
            f.buffer = count(j, "buffer");
            m.payload = std::move(f);
        } else if (type == "clip_library") {
            expect_keys(j, {"clips"});
            const json& list = field(j, "clips");
            if (!list.is_array()) malformed("field 'clips' is not an array");
            ClipLibrary lib;
            for (const auto& c : list) {
                if (!c.is_object()) malformed("clip entry is not an object");
                lib.clips.push_back({text(c, "id"), text(c, "label"), count(c, "frames"), real(c, "fps")});
            }
            m.payload = std::move(lib);
        } else if (type == "ack") {
            expect_keys(j, {});
            m.payload = Ack{};
        } else if (type == "error") {
            expect_keys(j, {"code", "message"});
            m.payload = ErrorReply{text(j, "code"), text(j, "message")};
        } else {
            throw ProtocolError("unknown_tag", "unknown message type '" + type + "'");
        }
    } catch (const ProtocolError&) {
        throw;
    } catch (const Error& e) {
        malformed(e.what());
    }
    return m;
}

Message error_message(std::uint64_t seq, std::string code, std::string text) {
    return {seq, ErrorReply{std::move(code), std::move(text)}};
}

}  // namespace unicon
