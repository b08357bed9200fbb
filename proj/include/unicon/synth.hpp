#pragma once

#include <functional>
#include <string>
#include <vector>

#include "unicon/motion.hpp"
#include "unicon/simkit.hpp"

namespace unicon {

/// Actuated joint coordinates and rates at time t (seconds).
using JointTrajectory = std::function<void(double t, Eigen::VectorXd& q, Eigen::VectorXd& qd)>;

/// Clip whose frames are the forward kinematics of `model` following `trajectory`
/// with the root resting on the ground. Velocities are exact, not differenced.
MotionClip kinematic_clip(const CharacterModel& model, const std::string& id, std::vector<std::string> label_path,
                          double seconds, double fps, const JointTrajectory& trajectory);

/// All hinge joints swing in phase: q_i(t) = amplitude * sin(2 pi f t).
MotionClip sway_clip(const CharacterModel& model, double seconds = 4.0, double fps = 60.0, double amplitude = 0.3,
                     double frequency = 0.5);

/// Zig-zag fold of the chain: q = depth * (1 - cos(2 pi f t)) / 2 * (1, -2, 2, -2, ...).
MotionClip squat_clip(const CharacterModel& model, double seconds = 4.0, double fps = 60.0, double depth = 0.5,
                      double frequency = 0.5);

/// Hinge-only sinusoid with a per-joint amplitude and phase, for transfer tests.
MotionClip sinusoid_clip(const CharacterModel& model, const std::string& id, double amplitude, double frequency,
                         double phase, double seconds = 4.0, double fps = 60.0);

}  // namespace unicon
