#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unicon/motion.hpp"
#include "unicon/simkit.hpp"

namespace unicon {

using Frames = std::vector<CharacterState>;

enum class SchedulerKind { dataset, stitch, command, stream };

SchedulerKind scheduler_kind_from(std::string_view name);
std::string_view scheduler_kind_name(SchedulerKind kind);

/// What a scheduler may look at besides its own history.
struct SchedulerInput {
    std::span<const CharacterState> actual;  ///< recent simulated states, newest last
    std::uint64_t tick = 0;
};

/// Produces the next `tau` target frames, or nothing once exhausted. Never a partial list.
/// Each call advances the scheduler by one control step.
class Scheduler {
public:
    virtual ~Scheduler() = default;
    virtual SchedulerKind kind() const = 0;
    virtual std::optional<Frames> next(const SchedulerInput& input, int tau) = 0;
    /// Frames still available, where that is meaningful.
    virtual std::size_t pending() const { return 0; }
};

// ---------------------------------------------------------------------------
// dataset replay

/// Frames start + t + 1 ... start + t + tau (0-based) of `clip`; nothing when the window
/// passes the last frame.
std::optional<Frames> dataset_next(const MotionClip& clip, std::size_t start, std::size_t t, int tau);

class DatasetScheduler : public Scheduler {
public:
    DatasetScheduler(MotionClip clip, std::size_t start = 0);

    SchedulerKind kind() const override { return SchedulerKind::dataset; }
    std::optional<Frames> next(const SchedulerInput& input, int tau) override;
    std::size_t pending() const override;

    const MotionClip& clip() const { return clip_; }
    std::size_t t() const { return t_; }

private:
    MotionClip clip_;
    std::size_t start_;
    std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// stitching

inline constexpr int kDefaultTransitionFrames = 6;

/// Rigid copy of `clip` (yaw about z and ground translation) whose first root shares the
/// ground heading frame of `root`.
MotionClip align_clip(const MotionClip& clip, const RigidPose& root);

/// FIFO of target frames. Consecutive clips are joined by `transition_frames`
/// synthetic frames (slerped orientations, lerped positions, differenced velocities).
class StitchBuffer {
public:
    explicit StitchBuffer(int transition_frames = kDefaultTransitionFrames);

    /// Appends all frames of `clip`. With `align`, the clip is first moved rigidly
    /// (yaw and ground translation) so its first root heading matches the last buffered one.
    void push(const MotionClip& clip, bool align = false);
    /// Removes and returns the first `count` frames, or nothing if fewer are queued.
    std::optional<Frames> pop(int count);
    std::optional<Frames> peek(int count) const;

    std::size_t size() const { return frames_.size(); }
    bool empty() const { return frames_.empty(); }
    int transition_frames() const { return transition_frames_; }
    void clear() { frames_.clear(); }

private:
    std::deque<CharacterState> frames_;
    int transition_frames_;
};

/// Returns the head `tau` frames and consumes one per call.
class StitchScheduler : public Scheduler {
public:
    explicit StitchScheduler(int transition_frames = kDefaultTransitionFrames, bool align = true);

    SchedulerKind kind() const override { return SchedulerKind::stitch; }
    std::optional<Frames> next(const SchedulerInput& input, int tau) override;
    std::size_t pending() const override { return buffer_.size(); }

    void push(const MotionClip& clip) { buffer_.push(clip, align_); }
    const StitchBuffer& buffer() const { return buffer_; }

private:
    StitchBuffer buffer_;
    bool align_;
};

// ---------------------------------------------------------------------------
// command-driven locomotion

struct Command {
    std::optional<double> heading;  ///< desired facing yaw (rad); empty follows the clip
    double speed = 1.0;             ///< time-warp factor, 0 holds the pose
    std::string gait;               ///< gait clip id; empty keeps the current one

    bool operator==(const Command&) const = default;
};

struct CommandConfig {
    double turn_rate = 120.0 * std::numbers::pi / 180.0;  ///< rad/s
    double max_speed = 4.0;
};

/// Replays a gait clip cyclically, steering its root path toward the commanded heading
/// at a bounded turn rate and warping time by the commanded speed. One step per clip frame.
/// Output depends only on the commands and the scheduler's own emitted frames.
class CommandScheduler : public Scheduler {
public:
    CommandScheduler(std::vector<MotionClip> gaits, CommandConfig config = {});

    SchedulerKind kind() const override { return SchedulerKind::command; }
    std::optional<Frames> next(const SchedulerInput& input, int tau) override;

    void set_command(const Command& command);
    const Command& command() const { return command_; }
    bool has_gait(std::string_view id) const;
    const MotionClip& gait() const { return gaits_[gait_]; }
    /// Facing yaw of the most recently committed frame.
    double facing() const;

private:
    struct Cursor {
        double phase = 0.0;  ///< fractional frame index into the gait
        double yaw = 0.0;    ///< anchor yaw
        Vec3 origin;         ///< anchor ground position
    };
    CharacterState local_frame(double phase) const;
    CharacterState emit(const Cursor& cursor, double turn_rate) const;
    double facing_at(const Cursor& cursor) const;
    Cursor advance(Cursor cursor, double* turn) const;

    std::vector<MotionClip> gaits_;
    CommandConfig config_;
    Command command_;
    std::size_t gait_ = 0;
    RigidPose gait_start_;  ///< ground heading frame of frame 0
    RigidPose cycle_;       ///< root heading displacement over one gait cycle
    Cursor cursor_;
};

// ---------------------------------------------------------------------------
// pose stream

/// Wire record for one streamed pose.
struct PosePacket {
    std::uint64_t seq = 0;
    double timestamp_ms = 0.0;
    Vec3 root_position;
    Quat root_orientation;
    std::vector<Quat> joint_orientations;
    std::vector<Vec3> joint_positions;  ///< empty when the sender omits them

    std::size_t num_joints() const { return joint_orientations.size(); }
    bool operator==(const PosePacket&) const = default;
};

/// JSON object: {"seq", "timestamp_ms", "root_position"[3], "root_quat"[4] (w,x,y,z),
/// "J", "joint_quats"[4J], optional "joint_positions"[3J]}.
std::string encode_pose_packet(const PosePacket& packet);
PosePacket decode_pose_packet(std::string_view bytes);

enum class IngestResult { appended, stale, parse_error };

/// Timestamp-ordered ring of received poses. Safe to ingest from one thread while
/// another reads snapshots.
class PoseBuffer {
public:
    explicit PoseBuffer(std::size_t capacity = 32, std::size_t joints = 0);

    IngestResult ingest(std::string_view bytes);
    IngestResult push(PosePacket packet);
    std::vector<PosePacket> snapshot() const;

    std::size_t size() const;
    std::size_t capacity() const { return capacity_; }
    std::uint64_t accepted() const;
    std::uint64_t stale_drops() const;
    std::uint64_t parse_errors() const;

private:
    mutable std::mutex mutex_;
    std::deque<PosePacket> samples_;
    std::size_t capacity_;
    std::size_t joints_;
    std::uint64_t accepted_ = 0;
    std::uint64_t stale_ = 0;
    std::uint64_t parse_errors_ = 0;
};

inline constexpr double kDefaultStreamSmoothing = 0.3;

/// Latest pose with velocities from exponentially smoothed finite differences over the
/// buffer (smoothing 1 keeps only the newest difference), repeated `tau` times.
/// Nothing with fewer than two samples. Joint positions missing from the packets are
/// computed by forward kinematics of `model`.
std::optional<Frames> stream_next(const std::vector<PosePacket>& samples, int tau,
                                  double smoothing = kDefaultStreamSmoothing, const CharacterModel* model = nullptr);

class StreamScheduler : public Scheduler {
public:
    StreamScheduler(std::shared_ptr<PoseBuffer> buffer, double smoothing = kDefaultStreamSmoothing,
                    std::optional<CharacterModel> model = std::nullopt);

    SchedulerKind kind() const override { return SchedulerKind::stream; }
    std::optional<Frames> next(const SchedulerInput& input, int tau) override;
    std::size_t pending() const override { return buffer_->size(); }

    const std::shared_ptr<PoseBuffer>& buffer() const { return buffer_; }

private:
    std::shared_ptr<PoseBuffer> buffer_;
    double smoothing_;
    std::optional<CharacterModel> model_;
};

}  // namespace unicon
