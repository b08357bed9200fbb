#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unicon/encoder.hpp"
#include "unicon/motion.hpp"
#include "unicon/random.hpp"
#include "unicon/simkit.hpp"

namespace unicon {

/// What the executor sees besides its own state.
enum class ObservationMode {
    full,             ///< current state plus targets
    onehot,           ///< full plus a one-hot clip index
    variable,         ///< full plus the clip index scaled to [0, 1]
    kinematic_state,  ///< targets and root offsets only
};

/// Which reference frames become targets.
enum class TargetMode {
    next,       ///< the next `tau` frames
    lookahead,  ///< the single frame k steps ahead
    stack,      ///< the next k frames
};

ObservationMode observation_mode_from(std::string_view name);
std::string_view observation_mode_name(ObservationMode mode);
TargetMode target_mode_from(std::string_view name);
std::string_view target_mode_name(TargetMode mode);

struct AblationConfig {
    ObservationMode observation = ObservationMode::full;
    TargetMode targets = TargetMode::next;
    int k = 1;                    ///< lookahead / stack depth
    bool balancer = true;         ///< class-balanced clip sampling, else uniform
    bool variance_control = true;

    void validate() const;
};

struct TaskConfig {
    EncoderConfig encoder;
    RewardWeights weights;
    RewardCoefficients coeffs;
    ToleranceConfig tolerance;
    SimConfig sim;
    double action_scale = 1.0;  ///< torque = action * action_scale * effort limit
    int horizon = 512;          ///< steps before an episode is cut

    void validate() const;
};

struct RsisConfig {
    int k_min = 5;
    int k_max = 10;
    double translation_noise = 0.05;  ///< m, uniform per component
    double velocity_noise = 0.5;      ///< m/s (rad/s for angular terms), uniform per component
    bool enabled = true;

    void validate() const;
};

struct RsisStart {
    CharacterState state;       ///< perturbed copy of frame `frame`
    std::size_t frame = 0;      ///< j
    int offset = 0;             ///< k
    std::size_t first_target = 0;
    Vec3 translation;           ///< noise added to root and joint positions
};

/// Frame j, offset k and a perturbed m(j); targets begin at m(j + k), or m(j + 1) when disabled.
/// `lookahead` is how many frames past the current target the observation reads.
RsisStart rsis_init(const MotionClip& clip, Rng& rng, const RsisConfig& config, int lookahead = 1);

enum class EndCause { none, clip_end, term_violation, divergence, horizon };

std::string_view end_cause_name(EndCause cause);

struct StepResult {
    Reward reward;
    EndCause end = EndCause::none;
    std::string_view violated_term;  ///< set for term_violation
    /// Only a horizon cut leaves a future worth bootstrapping; the clip end has no targets left.
    bool bootstrap() const { return end == EndCause::horizon; }
};

/// One character tracking one clip.
class TrackingEnv {
public:
    TrackingEnv(CharacterModel model, TaskConfig task, AblationConfig ablation = {}, std::size_t num_clips = 1);

    /// Target frames read per observation beyond the cursor.
    int lookahead() const;
    std::size_t observation_size() const;
    int action_size() const { return model_.num_actuated(); }

    /// Starts on `clip` at RSIS-sampled state.
    void reset(const MotionClip& clip, std::size_t clip_index, Rng& rng, const RsisConfig& rsis);
    /// Starts exactly on frame `start` with targets from `start + 1`.
    void reset_at(const MotionClip& clip, std::size_t clip_index, std::size_t start);
    /// Starts from an arbitrary state with targets from `first_target`.
    void reset_from(const MotionClip& clip, std::size_t clip_index, const CharacterState& state,
                    std::size_t first_target);

    Eigen::VectorXd observation() const;
    void observation(Eigen::Ref<Eigen::VectorXd> out) const;
    /// Applies normalized actions as torques for one control step.
    StepResult step(const Eigen::VectorXd& action);

    /// Instantaneous impulse at a body COM.
    void apply_impulse(int body, const Vec3& impulse);
    /// Replaces the dynamics model (same topology), e.g. a mass-scaled copy.
    void set_model(CharacterModel model);

    const CharacterModel& model() const { return model_; }
    const SimState& sim_state() const { return sim_; }
    const CharacterState& actual() const { return actual_; }
    const MotionClip* clip() const { return clip_; }
    std::size_t cursor() const { return cursor_; }
    int steps() const { return steps_; }
    /// Frames the episode could track from its first target to the clip end.
    std::size_t available_steps() const { return available_; }
    std::vector<CharacterState> targets() const;

private:
    void begin(const MotionClip& clip, std::size_t clip_index, SimState state, std::size_t first_target);
    SimState step_dynamics(const Eigen::VectorXd& torques) const;

    CharacterModel model_;
    TaskConfig task_;
    AblationConfig ablation_;
    std::size_t num_clips_;
    const MotionClip* clip_ = nullptr;
    std::size_t clip_index_ = 0;
    SimState sim_;
    CharacterState actual_;
    std::size_t cursor_ = 0;  ///< frame the character should currently match
    int steps_ = 0;
    std::size_t available_ = 0;
    Eigen::VectorXd torque_scale_;
};

/// Lifts a free root so no contact point starts below the ground.
SimState resolve_penetration(const CharacterModel& model, SimState state);

}  // namespace unicon
