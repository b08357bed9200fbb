#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "unicon/encoder.hpp"
#include "unicon/error.hpp"
#include "unicon/motion.hpp"
#include "unicon/schedulers.hpp"

namespace unicon {

inline constexpr int kProtocolVersion = 1;

/// Client to server.
struct EnqueueClip {
    std::string id;
    bool operator==(const EnqueueClip&) const = default;
};
struct SetCommand {
    Command command;
    bool operator==(const SetCommand&) const = default;
};
struct ApplyImpulse {
    int body = 0;
    Vec3 impulse;  ///< N s, world frame
    bool operator==(const ApplyImpulse&) const = default;
};
struct SetSpeedRatio {
    double ratio = 1.0;
    bool operator==(const SetSpeedRatio&) const = default;
};
struct PoseMessage {
    PosePacket pose;
    bool operator==(const PoseMessage&) const = default;
};
struct Pause {
    bool operator==(const Pause&) const = default;
};
struct Resume {
    bool operator==(const Resume&) const = default;
};
struct SelectScheduler {
    SchedulerKind scheduler = SchedulerKind::stitch;
    std::string clip;  ///< clip to replay for the dataset scheduler
    bool operator==(const SelectScheduler&) const = default;
};

/// Server to client.
struct StateFrame {
    std::uint64_t tick = 0;
    CharacterState actual;
    CharacterState target;
    RewardTerms terms;
    double reward = 0.0;
    SchedulerKind scheduler = SchedulerKind::stitch;
    std::uint64_t buffer = 0;  ///< frames the active scheduler still holds
    bool operator==(const StateFrame&) const = default;
};
struct ClipInfo {
    std::string id;
    std::string label;
    std::uint64_t frames = 0;
    double fps = 60.0;
    bool operator==(const ClipInfo&) const = default;
};
struct ClipLibrary {
    std::vector<ClipInfo> clips;
    bool operator==(const ClipLibrary&) const = default;
};
struct Ack {
    bool operator==(const Ack&) const = default;
};
struct ErrorReply {
    std::string code;
    std::string message;
    bool operator==(const ErrorReply&) const = default;
};

using Payload = std::variant<EnqueueClip, SetCommand, ApplyImpulse, SetSpeedRatio, PoseMessage, Pause, Resume,
                             SelectScheduler, StateFrame, ClipLibrary, Ack, ErrorReply>;

/// Every message carries `seq`; ack and error echo the seq of the message they answer.
struct Message {
    std::uint64_t seq = 0;
    Payload payload;
    bool operator==(const Message&) const = default;
};

/// Wire tag of the payload ("enqueue_clip", "state_frame", ...).
std::string_view message_type(const Payload& payload);
bool is_client_message(const Payload& payload);

/// Decoding failure with a machine-readable code: "malformed", "unknown_tag" or "version_mismatch".
class ProtocolError : public ParseError {
public:
    ProtocolError(std::string code, const std::string& what) : ParseError(what), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

/// JSON text {"v": version, "type": tag, "seq": n, ...fields}. Reals are written in
/// shortest round-trip decimal form, so decode(encode(m)) == m.
std::string serialize(const Message& message);
Message deserialize(std::string_view bytes);

/// Error reply answering `seq`.
Message error_message(std::uint64_t seq, std::string code, std::string text);

}  // namespace unicon
