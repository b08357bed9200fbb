#include "unicon/synth.hpp"

#include <cmath>
#include <numbers>

#include "unicon/env.hpp"
#include "unicon/error.hpp"

namespace unicon {

MotionClip kinematic_clip(const CharacterModel& model, const std::string& id, std::vector<std::string> label_path,
                          double seconds, double fps, const JointTrajectory& trajectory) {
    if (!(seconds > 0.0) || !(fps > 0.0)) throw InvalidArgument("clip duration and rate must be positive");
    for (std::size_t b = 1; b < model.bodies.size(); ++b)
        if (model.bodies[b].joint != JointType::hinge) throw InvalidArgument("kinematic clips need hinge joints");
    MotionClip clip;
    clip.id = id;
    clip.label_path = std::move(label_path);
    clip.fps = fps;
    clip.has_velocities = true;
    clip.consistent = true;
    const int n = static_cast<int>(std::lround(seconds * fps)) + 1;
    const int act = model.num_actuated();
    Eigen::VectorXd q(act), qd(act);
    SimState rest = resolve_penetration(model, zero_state(model));
    for (int f = 0; f < n; ++f) {
        q.setZero();
        qd.setZero();
        trajectory(f / fps, q, qd);
        SimState s = rest;
        s.q.tail(act) = q;
        s.qd.tail(act) = qd;
        clip.frames.push_back(forward_kinematics(model, s));
    }
    clip.validate();
    return clip;
}

MotionClip sway_clip(const CharacterModel& model, double seconds, double fps, double amplitude, double frequency) {
    const double w = 2.0 * std::numbers::pi * frequency;
    return kinematic_clip(model, "sway", {"root", "sway"}, seconds, fps,
                          [=](double t, Eigen::VectorXd& q, Eigen::VectorXd& qd) {
                              q.setConstant(amplitude * std::sin(w * t));
                              qd.setConstant(amplitude * w * std::cos(w * t));
                          });
}

MotionClip squat_clip(const CharacterModel& model, double seconds, double fps, double depth, double frequency) {
    const double w = 2.0 * std::numbers::pi * frequency;
    return kinematic_clip(model, "squat", {"root", "squat"}, seconds, fps,
                          [=](double t, Eigen::VectorXd& q, Eigen::VectorXd& qd) {
                              const double s = depth * 0.5 * (1.0 - std::cos(w * t));
                              const double sd = depth * 0.5 * w * std::sin(w * t);
                              for (Eigen::Index i = 0; i < q.size(); ++i) {
                                  const double g = i == 0 ? 1.0 : (i % 2 ? -2.0 : 2.0);
                                  q[i] = g * s;
                                  qd[i] = g * sd;
                              }
                          });
}

MotionClip sinusoid_clip(const CharacterModel& model, const std::string& id, double amplitude, double frequency,
                         double phase, double seconds, double fps) {
    const double w = 2.0 * std::numbers::pi * frequency;
    return kinematic_clip(model, id, {"root", id}, seconds, fps,
                          [=](double t, Eigen::VectorXd& q, Eigen::VectorXd& qd) {
                              for (Eigen::Index i = 0; i < q.size(); ++i) {
                                  const double p = phase * static_cast<double>(i);
                                  q[i] = amplitude * std::sin(w * t + p);
                                  qd[i] = amplitude * w * std::cos(w * t + p);
                              }
                          });
}

}  // namespace unicon
