#include "unicon/session.hpp"

#include <cmath>
#include <numbers>
#include <set>

#include "unicon/error.hpp"

namespace unicon {

void PerturbationSchedule::validate() const {
    if (period < 0) throw InvalidArgument("perturbation period must be non-negative");
    if (!(magnitude >= 0.0) || !std::isfinite(magnitude)) throw InvalidArgument("impulse magnitude must be >= 0");
}

void SessionConfig::validate() const {
    task.validate();
    ablation.validate();
    perturbation.validate();
    if (ablation.observation != ObservationMode::full)
        throw InvalidArgument("sessions serve policies that observe states and targets only");
    if (transition_frames < 0) throw InvalidArgument("transition frame count must be non-negative");
    if (!(stream_smoothing > 0.0 && stream_smoothing <= 1.0)) throw InvalidArgument("stream smoothing in (0, 1]");
    if (pose_capacity < 2) throw InvalidArgument("pose capacity must be at least 2");
    if (!(max_impulse > 0.0)) throw InvalidArgument("max impulse must be positive");
    if (ack_memory == 0) throw InvalidArgument("ack memory must be positive");
}

namespace {

SimState rest_state(const CharacterModel& model, const std::vector<MotionClip>& library) {
    if (!library.empty() && library.front().num_joints() == model.num_joints()) {
        SimState s = state_from_character(model, library.front().frames.front());
        return resolve_penetration(model, s);
    }
    return resolve_penetration(model, zero_state(model));
}

}  // namespace

Session::Session(CharacterModel model, GaussianPolicy policy, std::optional<RunningNormalizer> normalizer,
                 std::vector<MotionClip> library, SessionConfig config)
    : model_(std::move(model)),
      policy_(std::move(policy)),
      normalizer_(std::move(normalizer)),
      library_(std::move(library)),
      config_(std::move(config)),
      perturb_rng_(stream_rng(config_.perturbation.seed, 0x5e55)) {
    config_.validate();
    std::set<std::string> ids;
    for (auto& clip : library_) {
        clip.validate();
        if (clip.num_joints() != model_.num_joints())
            throw InvalidArgument("clip " + clip.id + " does not match the model's joint count");
        if (!ids.insert(clip.id).second) throw InvalidArgument("duplicate clip id " + clip.id);
        if (!clip.has_velocities) clip = derive_velocities(clip);
    }
    const int targets = config_.ablation.targets == TargetMode::lookahead ? 1 : lookahead();
    const auto obs = observation_size(model_.num_joints(), static_cast<std::size_t>(targets));
    if (policy_.obs_dim() != static_cast<int>(obs))
        throw InvalidArgument("policy expects " + std::to_string(policy_.obs_dim()) + " inputs, session produces " +
                              std::to_string(obs));
    if (policy_.action_dim() != model_.num_actuated())
        throw InvalidArgument("policy action size does not match the model");
    if (normalizer_ && normalizer_->dim() != policy_.obs_dim())
        throw InvalidArgument("normalizer size does not match the policy");
    const auto limits = model_.effort_limits();
    torque_scale_ = Eigen::Map<const Eigen::VectorXd>(limits.data(), static_cast<Eigen::Index>(limits.size())) *
                    config_.task.action_scale;

    stitch_ = std::make_unique<StitchScheduler>(config_.transition_frames, true);
    if (!library_.empty()) command_ = std::make_unique<CommandScheduler>(library_, config_.command);
    pose_buffer_ = std::make_shared<PoseBuffer>(config_.pose_capacity, model_.num_joints());
    stream_ = std::make_unique<StreamScheduler>(pose_buffer_, config_.stream_smoothing, model_);
    active_ = stitch_.get();
    if (command_) command_request_ = command_->command();

    sim_ = rest_state(model_, library_);
    actual_ = forward_kinematics(model_, sim_);
}

int Session::lookahead() const {
    return config_.ablation.targets == TargetMode::next ? config_.task.encoder.tau : config_.ablation.k;
}

void Session::reset(const CharacterState& state) {
    sim_ = state_from_character(model_, state);
    actual_ = forward_kinematics(model_, sim_);
    history_.clear();
}

ClipLibrary Session::library() const {
    ClipLibrary lib;
    for (const auto& c : library_) lib.clips.push_back({c.id, c.label(), c.size(), c.fps});
    return lib;
}

const MotionClip* Session::find_clip(const std::string& id) const {
    for (const auto& c : library_)
        if (c.id == id) return &c;
    return nullptr;
}

MotionClip Session::prepared(const MotionClip& clip) const {
    return speed_ratio_ == 1.0 ? clip : resample_speed(clip, speed_ratio_);
}

Message Session::handle_message(const Message& message, std::uint64_t client) {
    const auto key = std::make_pair(client, message.seq);
    if (const auto it = replies_.find(key); it != replies_.end()) return it->second;
    Message reply{message.seq, Ack{}};
    if (!is_client_message(message.payload)) {
        reply = error_message(message.seq, "unexpected_message",
                              std::string(message_type(message.payload)) + " is a server message");
    } else if (auto err = apply(message.payload)) {
        reply = {message.seq, std::move(*err)};
    }
    replies_.emplace(key, reply);
    reply_order_.push_back(key);
    while (reply_order_.size() > config_.ack_memory) {
        replies_.erase(reply_order_.front());
        reply_order_.pop_front();
    }
    return reply;
}

std::optional<ErrorReply> Session::apply(const Payload& payload) {
    if (const auto* m = std::get_if<EnqueueClip>(&payload)) {
        const MotionClip* clip = find_clip(m->id);
        if (!clip) return ErrorReply{"unknown_clip", "no clip named '" + m->id + "'"};
        // the first clip of an empty buffer starts under the character
        if (stitch_->buffer().empty()) {
            stitch_->push(align_clip(prepared(*clip), actual_.root));
        } else {
            stitch_->push(prepared(*clip));
        }
        return std::nullopt;
    }
    if (const auto* m = std::get_if<SetCommand>(&payload)) {
        if (!command_) return ErrorReply{"unavailable", "no gait clips loaded"};
        Command c = m->command;
        c.speed *= speed_ratio_;
        try {
            command_->set_command(c);
        } catch (const InvalidArgument& e) {
            const bool gait = !c.gait.empty() && !command_->has_gait(c.gait);
            return ErrorReply{gait ? "unknown_gait" : "bad_command", e.what()};
        }
        command_request_ = m->command;
        return std::nullopt;
    }
    if (const auto* m = std::get_if<ApplyImpulse>(&payload)) {
        if (m->body < 0 || static_cast<std::size_t>(m->body) >= model_.num_bodies())
            return ErrorReply{"bad_impulse", "body index out of range"};
        if (!m->impulse.is_finite() || m->impulse.norm() > config_.max_impulse)
            return ErrorReply{"bad_impulse", "impulse must be finite and at most " +
                                                 std::to_string(config_.max_impulse) + " N s"};
        pending_impulses_.emplace_back(m->body, m->impulse);
        return std::nullopt;
    }
    if (const auto* m = std::get_if<SetSpeedRatio>(&payload)) {
        if (!(m->ratio >= kMinSpeedRatio && m->ratio <= kMaxSpeedRatio))
            return ErrorReply{"bad_ratio", "speed ratio outside [0.25, 4]"};
        if (command_) {
            Command c = command_request_;
            c.speed *= m->ratio;
            try {
                command_->set_command(c);
            } catch (const InvalidArgument& e) {
                return ErrorReply{"bad_ratio", e.what()};
            }
        }
        speed_ratio_ = m->ratio;
        return std::nullopt;
    }
    if (const auto* m = std::get_if<PoseMessage>(&payload)) {
        switch (pose_buffer_->push(m->pose)) {
            case IngestResult::appended: return std::nullopt;
            case IngestResult::stale: return ErrorReply{"stale_pose", "timestamp not newer than the buffer"};
            case IngestResult::parse_error: return ErrorReply{"bad_pose", "pose joint count does not match"};
        }
    }
    if (std::holds_alternative<Pause>(payload)) {
        paused_ = true;
        return std::nullopt;
    }
    if (std::holds_alternative<Resume>(payload)) {
        paused_ = false;
        return std::nullopt;
    }
    if (const auto* m = std::get_if<SelectScheduler>(&payload)) {
        switch (m->scheduler) {
            case SchedulerKind::stitch: active_ = stitch_.get(); break;
            case SchedulerKind::stream: active_ = stream_.get(); break;
            case SchedulerKind::command:
                if (!command_) return ErrorReply{"unavailable", "no gait clips loaded"};
                active_ = command_.get();
                break;
            case SchedulerKind::dataset: {
                const MotionClip* clip = find_clip(m->clip);
                if (!clip) return ErrorReply{"unknown_clip", "no clip named '" + m->clip + "'"};
                dataset_ = std::make_unique<DatasetScheduler>(prepared(*clip));
                reset(dataset_->clip().frames.front());
                active_ = dataset_.get();
                break;
            }
        }
        return std::nullopt;
    }
    return ErrorReply{"unexpected_message", "not handled"};
}

Eigen::VectorXd Session::action_for(const Frames& frames) const {
    EncoderConfig enc = config_.task.encoder;
    Eigen::VectorXd obs;
    if (config_.ablation.targets == TargetMode::lookahead) {
        enc.tau = 1;
        obs = observe(actual_, std::span<const CharacterState>(&frames.back(), 1), enc);
    } else {
        enc.tau = static_cast<int>(frames.size());
        obs = observe(actual_, frames, enc);
    }
    if (normalizer_) obs = Eigen::VectorXd(normalizer_->normalize(obs));
    return policy_.mean(obs).cwiseMax(-1.0).cwiseMin(1.0).cwiseProduct(torque_scale_);
}

TickResult Session::tick() {
    TickResult out;
    if (paused_) return out;

    const std::vector<CharacterState> history(history_.begin(), history_.end());
    const auto frames = active_->next({history, tick_}, lookahead());
    if (!frames) {
        // waits without simulating; reported once per exhaustion
        if (!exhausted_)
            out.error = error_message(0, "exhausted",
                                      std::string(scheduler_kind_name(active_->kind())) + " scheduler has no frames");
        exhausted_ = true;
        return out;
    }
    exhausted_ = false;

    const SimState safe = sim_;  // before this tick's impulses
    for (const auto& [body, impulse] : pending_impulses_) sim_ = apply_impulse(sim_, model_, body, impulse);
    pending_impulses_.clear();
    const PerturbationSchedule& ps = config_.perturbation;
    if (ps.period > 0 && ps.magnitude > 0.0 && tick_ > 0 && tick_ % static_cast<std::uint64_t>(ps.period) == 0) {
        const double angle = uniform(perturb_rng_, 0.0, 2.0 * std::numbers::pi);
        const int body = ps.body >= 0 ? ps.body
                                      : static_cast<int>(uniform_int(perturb_rng_, 0,
                                                                     static_cast<std::int64_t>(model_.num_bodies()) - 1));
        sim_ = apply_impulse(sim_, model_, body, Vec3{std::cos(angle), std::sin(angle), 0.0} * ps.magnitude);
    }
    actual_ = forward_kinematics(model_, sim_);

    try {
        sim_ = step(model_, sim_, action_for(*frames), config_.task.sim);
    } catch (const SimulationDiverged& e) {
        sim_ = safe;
        actual_ = forward_kinematics(model_, sim_);
        out.error = error_message(0, "diverged", e.what());
        return out;
    }
    actual_ = forward_kinematics(model_, sim_);
    history_.push_back(actual_);
    while (history_.size() > config_.state_history) history_.pop_front();

    const Reward r = reward(actual_, frames->front(), config_.task.weights, config_.task.coeffs);
    ++tick_;
    out.frame = StateFrame{tick_, actual_, frames->front(), r.terms, r.total, active_->kind(), active_->pending()};
    return out;
}

}  // namespace unicon
