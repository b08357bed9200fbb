#include "unicon/env.hpp"

#include <algorithm>
#include <cmath>

#include "unicon/error.hpp"

namespace unicon {

ObservationMode observation_mode_from(std::string_view name) {
    if (name == "full") return ObservationMode::full;
    if (name == "onehot") return ObservationMode::onehot;
    if (name == "variable") return ObservationMode::variable;
    if (name == "kinematic_state") return ObservationMode::kinematic_state;
    throw InvalidArgument("unknown observation mode '" + std::string(name) + "'");
}

std::string_view observation_mode_name(ObservationMode mode) {
    switch (mode) {
        case ObservationMode::full: return "full";
        case ObservationMode::onehot: return "onehot";
        case ObservationMode::variable: return "variable";
        case ObservationMode::kinematic_state: return "kinematic_state";
    }
    return "full";
}

TargetMode target_mode_from(std::string_view name) {
    if (name == "next") return TargetMode::next;
    if (name == "lookahead") return TargetMode::lookahead;
    if (name == "stack") return TargetMode::stack;
    throw InvalidArgument("unknown target mode '" + std::string(name) + "'");
}

std::string_view target_mode_name(TargetMode mode) {
    switch (mode) {
        case TargetMode::next: return "next";
        case TargetMode::lookahead: return "lookahead";
        case TargetMode::stack: return "stack";
    }
    return "next";
}

void AblationConfig::validate() const {
    if (k < 1) throw InvalidArgument("ablation k must be at least 1");
}

void TaskConfig::validate() const {
    if (encoder.tau < 1) throw InvalidArgument("tau must be at least 1");
    weights.validate();
    coeffs.validate();
    tolerance.validate();
    if (!(sim.dt > 0.0) || sim.substeps < 1) throw InvalidArgument("simulation step must be positive");
    if (!(action_scale > 0.0)) throw InvalidArgument("action scale must be positive");
    if (horizon < 1) throw InvalidArgument("horizon must be at least 1");
}

void RsisConfig::validate() const {
    if (k_min < 0 || k_max < k_min) throw InvalidArgument("RSIS offsets need 0 <= k_min <= k_max");
    if (!(translation_noise >= 0.0) || !(velocity_noise >= 0.0)) throw InvalidArgument("RSIS noise must be >= 0");
}

std::string_view end_cause_name(EndCause cause) {
    switch (cause) {
        case EndCause::none: return "none";
        case EndCause::clip_end: return "clip_end";
        case EndCause::term_violation: return "term_violation";
        case EndCause::divergence: return "divergence";
        case EndCause::horizon: return "horizon";
    }
    return "none";
}

namespace {

Vec3 uniform_vec(Rng& rng, double scale) {
    const double x = uniform(rng, -scale, scale);
    const double y = uniform(rng, -scale, scale);
    const double z = uniform(rng, -scale, scale);
    return {x, y, z};
}

}  // namespace

RsisStart rsis_init(const MotionClip& clip, Rng& rng, const RsisConfig& config, int lookahead) {
    config.validate();
    if (lookahead < 1) throw InvalidArgument("lookahead must be at least 1");
    const int k_max = config.enabled ? config.k_max : 1;
    const auto n = static_cast<std::int64_t>(clip.size());
    if (n <= k_max + lookahead)
        throw InvalidArgument("clip '" + clip.id + "' has " + std::to_string(n) + " frames, needs more than " +
                              std::to_string(k_max + lookahead));

    RsisStart s;
    s.frame = static_cast<std::size_t>(uniform_int(rng, 0, n - k_max - lookahead));
    s.state = clip.frames[s.frame];
    if (!config.enabled) {
        s.first_target = s.frame + 1;
        return s;
    }
    s.offset = static_cast<int>(uniform_int(rng, config.k_min, config.k_max));
    s.first_target = s.frame + static_cast<std::size_t>(std::max(s.offset, 1));
    s.translation = uniform_vec(rng, config.translation_noise);
    s.state.root.position += s.translation;
    for (auto& p : s.state.joint_positions) p += s.translation;
    const double v = config.velocity_noise;
    s.state.root_velocity.linear += uniform_vec(rng, v);
    s.state.root_velocity.angular += uniform_vec(rng, v);
    for (auto& jv : s.state.joint_velocities) {
        jv.linear += uniform_vec(rng, v);
        jv.angular += uniform_vec(rng, v);
    }
    return s;
}

SimState resolve_penetration(const CharacterModel& model, SimState state) {
    if (!model.free_root()) return state;
    const Kinematics kin = compute_kinematics(model, state);
    double lowest = 0.0;
    for (std::size_t b = 0; b < model.bodies.size(); ++b)
        for (const Vec3& c : model.bodies[b].contact_points)
            lowest = std::min(lowest, kin.frames[b].transform_point(c).z);
    state.q[2] -= lowest;
    return state;
}

TrackingEnv::TrackingEnv(CharacterModel model, TaskConfig task, AblationConfig ablation, std::size_t num_clips)
    : model_(std::move(model)), task_(task), ablation_(ablation), num_clips_(std::max<std::size_t>(num_clips, 1)) {
    task_.validate();
    ablation_.validate();
    const auto limits = model_.effort_limits();
    torque_scale_ = Eigen::Map<const Eigen::VectorXd>(limits.data(), static_cast<Eigen::Index>(limits.size())) *
                    task_.action_scale;
}

int TrackingEnv::lookahead() const {
    return ablation_.targets == TargetMode::next ? task_.encoder.tau : ablation_.k;
}

std::size_t TrackingEnv::observation_size() const {
    const std::size_t joints = model_.num_joints();
    const auto tau = static_cast<std::size_t>(ablation_.targets == TargetMode::lookahead ? 1 : lookahead());
    std::size_t n = unicon::observation_size(joints, tau);
    switch (ablation_.observation) {
        case ObservationMode::full: break;
        case ObservationMode::onehot: n += num_clips_; break;
        case ObservationMode::variable: n += 1; break;
        case ObservationMode::kinematic_state: n -= state_encoding_size(joints); break;
    }
    return n;
}

void TrackingEnv::begin(const MotionClip& clip, std::size_t clip_index, SimState state, std::size_t first_target) {
    if (clip.num_joints() != model_.num_joints())
        throw InvalidArgument("clip '" + clip.id + "' has " + std::to_string(clip.num_joints()) +
                              " joints, model has " + std::to_string(model_.num_joints()));
    if (first_target < 1 || first_target - 1 + static_cast<std::size_t>(lookahead()) >= clip.size())
        throw InvalidArgument("clip '" + clip.id + "' is too short for the requested start");
    clip_ = &clip;
    clip_index_ = clip_index;
    sim_ = resolve_penetration(model_, std::move(state));
    actual_ = forward_kinematics(model_, sim_);
    cursor_ = first_target - 1;
    steps_ = 0;
    available_ = clip.size() - first_target - static_cast<std::size_t>(lookahead()) + 1;
}

void TrackingEnv::reset(const MotionClip& clip, std::size_t clip_index, Rng& rng, const RsisConfig& rsis) {
    const RsisStart s = rsis_init(clip, rng, rsis, lookahead());
    begin(clip, clip_index, state_from_character(model_, s.state), s.first_target);
}

void TrackingEnv::reset_at(const MotionClip& clip, std::size_t clip_index, std::size_t start) {
    if (start >= clip.size()) throw InvalidArgument("start frame past the clip end");
    begin(clip, clip_index, state_from_character(model_, clip.frames[start]), start + 1);
}

void TrackingEnv::reset_from(const MotionClip& clip, std::size_t clip_index, const CharacterState& state,
                             std::size_t first_target) {
    begin(clip, clip_index, state_from_character(model_, state), first_target);
}

std::vector<CharacterState> TrackingEnv::targets() const {
    std::vector<CharacterState> out;
    if (!clip_) return out;
    if (ablation_.targets == TargetMode::lookahead) {
        out.push_back(clip_->frames[cursor_ + static_cast<std::size_t>(ablation_.k)]);
        return out;
    }
    for (int i = 1; i <= lookahead(); ++i) out.push_back(clip_->frames[cursor_ + static_cast<std::size_t>(i)]);
    return out;
}

Eigen::VectorXd TrackingEnv::observation() const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(observation_size()));
    observation(out);
    return out;
}

void TrackingEnv::observation(Eigen::Ref<Eigen::VectorXd> out) const {
    if (!clip_) throw InvalidArgument("environment has not been reset");
    const std::vector<CharacterState> tg = targets();
    EncoderConfig enc = task_.encoder;
    enc.tau = static_cast<int>(tg.size());
    const Eigen::VectorXd base = observe(actual_, tg, enc);
    const auto skip = static_cast<Eigen::Index>(state_encoding_size(model_.num_joints()));
    Eigen::Index at = 0;
    if (ablation_.observation == ObservationMode::kinematic_state) {
        out.head(base.size() - skip) = base.tail(base.size() - skip);
        return;
    }
    out.head(base.size()) = base;
    at = base.size();
    if (ablation_.observation == ObservationMode::onehot) {
        out.segment(at, static_cast<Eigen::Index>(num_clips_)).setZero();
        out[at + static_cast<Eigen::Index>(clip_index_)] = 1.0;
    } else if (ablation_.observation == ObservationMode::variable) {
        out[at] = num_clips_ > 1 ? static_cast<double>(clip_index_) / static_cast<double>(num_clips_ - 1) : 0.0;
    }
}

StepResult TrackingEnv::step(const Eigen::VectorXd& action) {
    if (!clip_) throw InvalidArgument("environment has not been reset");
    if (action.size() != torque_scale_.size())
        throw InvalidArgument("action has " + std::to_string(action.size()) + " entries, expected " +
                              std::to_string(torque_scale_.size()));
    StepResult r;
    const Eigen::VectorXd torques = action.cwiseMax(-1.0).cwiseMin(1.0).cwiseProduct(torque_scale_);
    ++steps_;
    try {
        sim_ = step_dynamics(torques);
    } catch (const SimulationDiverged&) {
        r.reward.terms = {0.0, 0.0, 0.0, 0.0, 0.0};
        r.end = EndCause::divergence;
        return r;
    }
    actual_ = forward_kinematics(model_, sim_);
    ++cursor_;
    r.reward = reward(actual_, clip_->frames[cursor_], task_.weights, task_.coeffs);
    if (const auto term = check_termination(r.reward.terms, task_.tolerance)) {
        r.end = EndCause::term_violation;
        r.violated_term = *term;
    } else if (cursor_ + static_cast<std::size_t>(lookahead()) >= clip_->size()) {
        r.end = EndCause::clip_end;
    } else if (steps_ >= task_.horizon) {
        r.end = EndCause::horizon;
    }
    return r;
}

SimState TrackingEnv::step_dynamics(const Eigen::VectorXd& torques) const {
    return unicon::step(model_, sim_, torques, task_.sim);
}

void TrackingEnv::apply_impulse(int body, const Vec3& impulse) {
    sim_ = unicon::apply_impulse(sim_, model_, body, impulse);
    actual_ = forward_kinematics(model_, sim_);
}

void TrackingEnv::set_model(CharacterModel model) {
    if (model.num_dofs != model_.num_dofs || model.num_bodies() != model_.num_bodies())
        throw InvalidArgument("replacement model has a different topology");
    model_ = std::move(model);
    const auto limits = model_.effort_limits();
    torque_scale_ = Eigen::Map<const Eigen::VectorXd>(limits.data(), static_cast<Eigen::Index>(limits.size())) *
                    task_.action_scale;
}

}  // namespace unicon
