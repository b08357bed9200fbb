#include "unicon/encoder.hpp"

#include <cmath>
#include <string>

#include "unicon/error.hpp"

namespace unicon {

namespace {

std::size_t put(Eigen::Ref<Eigen::VectorXd> out, std::size_t at, const Vec3& v) {
    out[static_cast<Eigen::Index>(at)] = v.x;
    out[static_cast<Eigen::Index>(at + 1)] = v.y;
    out[static_cast<Eigen::Index>(at + 2)] = v.z;
    return at + 3;
}

std::size_t put(Eigen::Ref<Eigen::VectorXd> out, std::size_t at, const Quat& q) {
    const Quat c = q.canonical();
    out[static_cast<Eigen::Index>(at)] = c.w;
    out[static_cast<Eigen::Index>(at + 1)] = c.x;
    out[static_cast<Eigen::Index>(at + 2)] = c.y;
    out[static_cast<Eigen::Index>(at + 3)] = c.z;
    return at + 4;
}

void check_state(const CharacterState& s, std::size_t joints, const char* what) {
    if (s.num_joints() != joints || s.joint_positions.size() != joints || s.joint_velocities.size() != joints)
        throw InvalidArgument(std::string(what) + " has " + std::to_string(s.num_joints()) + " joints, expected " +
                              std::to_string(joints));
}

}  // namespace

RigidPose encoding_frame(const RigidPose& root, const EncoderConfig& config) {
    return config.heading_frame ? heading_frame(root) : root;
}

std::size_t encode_state(const CharacterState& state, const RigidPose& frame, Eigen::Ref<Eigen::VectorXd> out,
                         std::size_t at) {
    const std::size_t joints = state.num_joints();
    out[static_cast<Eigen::Index>(at++)] = state.root.position.z;
    at = put(out, at, to_local_orientation(frame, state.root.orientation));
    for (const auto& p : state.joint_positions) at = put(out, at, to_local_point(frame, p));
    // parent-relative already
    for (const auto& q : state.joint_orientations) at = put(out, at, q);
    at = put(out, at, to_local_vector(frame, state.root_velocity.linear));
    at = put(out, at, to_local_vector(frame, state.root_velocity.angular));
    for (std::size_t j = 0; j < joints; ++j) at = put(out, at, to_local_vector(frame, state.joint_velocities[j].linear));
    for (std::size_t j = 0; j < joints; ++j) at = put(out, at, state.joint_velocities[j].angular);
    return at;
}

Eigen::VectorXd observe(const CharacterState& current, std::span<const CharacterState> targets,
                        const EncoderConfig& config) {
    if (config.tau < 1) throw InvalidArgument("tau must be at least 1");
    const auto tau = static_cast<std::size_t>(config.tau);
    if (targets.size() != tau)
        throw InvalidArgument("expected " + std::to_string(tau) + " targets, got " + std::to_string(targets.size()));
    const std::size_t joints = current.num_joints();
    check_state(current, joints, "current state");
    for (const auto& t : targets) check_state(t, joints, "target");

    Eigen::VectorXd out(static_cast<Eigen::Index>(observation_size(joints, tau)));
    const RigidPose current_frame = encoding_frame(current.root, config);
    std::size_t at = encode_state(current, current_frame, out, 0);
    for (const auto& t : targets)
        at = encode_state(t, config.targets_in_current_frame ? current_frame : encoding_frame(t.root, config), out, at);
    for (const auto& t : targets) {
        const RigidPose y = relative_root_offset(current.root, t.root);
        at = put(out, at, y.position);
        at = put(out, at, y.orientation);
    }
    return out;
}

void RewardWeights::validate() const {
    double sum = 0.0;
    for (double w : values()) {
        if (!(w >= 0.0)) throw InvalidArgument("reward weights must be non-negative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw InvalidArgument("reward weights must sum to 1");
}

void RewardCoefficients::validate() const {
    for (double k : {k_pr, k_qr, k_pj, k_qj, k_qdj})
        if (!(k > 0.0) || !std::isfinite(k)) throw InvalidArgument("reward coefficients must be positive");
}

Reward reward(const CharacterState& actual, const CharacterState& target, const RewardWeights& weights,
              const RewardCoefficients& coeffs) {
    const std::size_t joints = target.num_joints();
    check_state(actual, joints, "actual state");
    check_state(target, joints, "target state");
    if (!actual.is_finite() || !target.is_finite()) throw InvalidArgument("reward of a non-finite state");

    double pj = 0.0, qj = 0.0, qdj = 0.0;
    for (std::size_t j = 0; j < joints; ++j) {
        pj += (target.joint_positions[j] - actual.joint_positions[j]).squared_norm();
        const double angle = quat_angle(target.joint_orientations[j], actual.joint_orientations[j]);
        qj += angle * angle;
        qdj += (target.joint_velocities[j].angular - actual.joint_velocities[j].angular).squared_norm();
    }
    // align the actual quaternion with the target's hemisphere so both double-cover signs agree
    const Quat& a = target.root.orientation;
    const Quat b = a.dot(actual.root.orientation) < 0.0 ? -actual.root.orientation : actual.root.orientation;
    const double qr = (a.w - b.w) * (a.w - b.w) + (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                      (a.z - b.z) * (a.z - b.z);

    Reward r;
    r.terms.pr = std::exp(-coeffs.k_pr * (target.root.position - actual.root.position).squared_norm());
    r.terms.qr = std::exp(-coeffs.k_qr * qr);
    r.terms.pj = joints ? std::exp(-coeffs.k_pj / static_cast<double>(joints) * pj) : 1.0;
    r.terms.qj = std::exp(-coeffs.k_qj * qj);
    r.terms.qdj = std::exp(-coeffs.k_qdj * qdj);
    const auto w = weights.values();
    const auto v = r.terms.values();
    for (std::size_t i = 0; i < kNumRewardTerms; ++i) r.total += w[i] * v[i];
    return r;
}

void ToleranceConfig::validate() const {
    for (double a : alpha)
        if (!(a >= 0.0 && a < 1.0)) throw InvalidArgument("tolerances must lie in [0, 1)");
}

std::optional<std::string_view> check_termination(const RewardTerms& terms, const ToleranceConfig& tol) {
    const auto v = terms.values();
    for (std::size_t i = 0; i < kNumRewardTerms; ++i)
        if (v[i] <= tol.alpha[i]) return kRewardTermNames[i];
    return std::nullopt;
}

}  // namespace unicon
