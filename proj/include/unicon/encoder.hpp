#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <span>
#include <string_view>

#include "unicon/motion.hpp"

namespace unicon {

struct EncoderConfig {
    int tau = 1;                             ///< number of future target frames
    bool heading_frame = false;              ///< encode in the yaw-only root frame instead of the full root frame
    bool targets_in_current_frame = false;   ///< encode targets in the actual root frame instead of their own
};

/// Entries per encoded state: root z, root quat, then 13 per joint plus 6 root velocity terms.
constexpr std::size_t state_encoding_size(std::size_t joints) { return 11 + 13 * joints; }
constexpr std::size_t observation_size(std::size_t joints, std::size_t tau) {
    return (tau + 1) * state_encoding_size(joints) + 7 * tau;
}

/// Frame a state is encoded in under `config`.
RigidPose encoding_frame(const RigidPose& root, const EncoderConfig& config);

/// Appends o(X) for `state` expressed in `frame` to `out` starting at `at`; returns the next offset.
std::size_t encode_state(const CharacterState& state, const RigidPose& frame, Eigen::Ref<Eigen::VectorXd> out,
                         std::size_t at);

/// Observation for the current state and `config.tau` future targets.
Eigen::VectorXd observe(const CharacterState& current, std::span<const CharacterState> targets,
                        const EncoderConfig& config = {});

inline constexpr std::size_t kNumRewardTerms = 5;
inline constexpr std::array<std::string_view, kNumRewardTerms> kRewardTermNames = {"pr", "qr", "pj", "qj", "qdj"};

struct RewardWeights {
    double pr = 0.2;
    double qr = 0.2;
    double pj = 0.1;
    double qj = 0.4;
    double qdj = 0.1;

    std::array<double, kNumRewardTerms> values() const { return {pr, qr, pj, qj, qdj}; }
    /// Weights must be non-negative and sum to 1 within 1e-12.
    void validate() const;
};

/// Curvature of each exponential term. The joint-position coefficient is divided by J.
struct RewardCoefficients {
    double k_pr = 10.0;
    double k_qr = 2.0;
    double k_pj = 40.0;
    double k_qj = 2.0;
    double k_qdj = 0.1;

    void validate() const;
};

struct RewardTerms {
    double pr = 1.0;
    double qr = 1.0;
    double pj = 1.0;
    double qj = 1.0;
    double qdj = 1.0;

    std::array<double, kNumRewardTerms> values() const { return {pr, qr, pj, qj, qdj}; }
    bool operator==(const RewardTerms&) const = default;
};

struct Reward {
    double total = 0.0;
    RewardTerms terms;
};

Reward reward(const CharacterState& actual, const CharacterState& target, const RewardWeights& weights = {},
              const RewardCoefficients& coeffs = {});

struct ToleranceConfig {
    std::array<double, kNumRewardTerms> alpha = {0.1, 0.1, 0.1, 0.1, 0.1};

    /// Every alpha must lie in [0, 1).
    void validate() const;
};

/// Name of the first term with r_i <= alpha_i, if any.
std::optional<std::string_view> check_termination(const RewardTerms& terms, const ToleranceConfig& tol = {});

}  // namespace unicon
