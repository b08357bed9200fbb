#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "unicon/env.hpp"
#include "unicon/policy.hpp"
#include "unicon/protocol.hpp"
#include "unicon/random.hpp"
#include "unicon/schedulers.hpp"

namespace unicon {

/// Impulses fired automatically every `period` ticks; 0 disables.
struct PerturbationSchedule {
    int period = 0;
    double magnitude = 0.0;  ///< N s, horizontal, random direction
    int body = -1;           ///< -1 picks a random body
    std::uint64_t seed = 1;

    void validate() const;
};

struct SessionConfig {
    TaskConfig task;
    AblationConfig ablation;
    int transition_frames = kDefaultTransitionFrames;
    CommandConfig command;
    double stream_smoothing = kDefaultStreamSmoothing;
    std::size_t pose_capacity = 32;
    PerturbationSchedule perturbation;
    double max_impulse = 100.0;      ///< N s accepted from clients
    std::size_t ack_memory = 4096;   ///< replies remembered for re-sent messages
    std::size_t state_history = 4;   ///< actual states handed to schedulers

    void validate() const;
};

struct TickResult {
    std::optional<StateFrame> frame;  ///< broadcast when the session advanced
    std::optional<Message> error;     ///< exhaustion or divergence notice (seq 0)
};

/// One character driven by a policy that tracks frames from the active scheduler.
/// Not thread-safe: the owner calls handle_message and tick from one thread.
class Session {
public:
    Session(CharacterModel model, GaussianPolicy policy, std::optional<RunningNormalizer> normalizer,
            std::vector<MotionClip> library, SessionConfig config = {});

    /// Validates and applies a client message; returns the ack or error reply. A message
    /// whose (client, seq) was already handled gets the same reply without being applied again.
    Message handle_message(const Message& message, std::uint64_t client = 0);
    /// Scheduler next, observe, policy mean, simulate, reward. Does nothing while paused.
    /// An exhausted scheduler holds the character still until it yields frames again.
    TickResult tick();

    ClipLibrary library() const;
    /// Places the character at `state` and clears the state history.
    void reset(const CharacterState& state);

    /// Paused by a client, or waiting on an exhausted scheduler.
    bool paused() const { return paused_ || exhausted_; }
    std::uint64_t ticks() const { return tick_; }
    SchedulerKind active() const { return active_->kind(); }
    std::size_t pending() const { return active_->pending(); }
    double speed_ratio() const { return speed_ratio_; }
    const SimState& sim_state() const { return sim_; }
    const CharacterState& actual() const { return actual_; }
    const CharacterModel& model() const { return model_; }
    const std::shared_ptr<PoseBuffer>& pose_buffer() const { return pose_buffer_; }
    int lookahead() const;

private:
    std::optional<ErrorReply> apply(const Payload& payload);
    const MotionClip* find_clip(const std::string& id) const;
    MotionClip prepared(const MotionClip& clip) const;
    Eigen::VectorXd action_for(const Frames& frames) const;

    CharacterModel model_;
    GaussianPolicy policy_;
    std::optional<RunningNormalizer> normalizer_;
    std::vector<MotionClip> library_;
    SessionConfig config_;
    Eigen::VectorXd torque_scale_;

    std::unique_ptr<StitchScheduler> stitch_;
    std::unique_ptr<CommandScheduler> command_;
    std::unique_ptr<StreamScheduler> stream_;
    std::unique_ptr<DatasetScheduler> dataset_;
    Scheduler* active_ = nullptr;
    std::shared_ptr<PoseBuffer> pose_buffer_;
    Command command_request_;

    SimState sim_;
    CharacterState actual_;
    std::deque<CharacterState> history_;
    std::vector<std::pair<int, Vec3>> pending_impulses_;
    Rng perturb_rng_;
    std::uint64_t tick_ = 0;
    bool paused_ = false;
    bool exhausted_ = false;
    double speed_ratio_ = 1.0;

    std::map<std::pair<std::uint64_t, std::uint64_t>, Message> replies_;
    std::deque<std::pair<std::uint64_t, std::uint64_t>> reply_order_;
};

}  // namespace unicon
