#pragma once

#include <Eigen/Dense>
#include <string>
#include <string_view>
#include <vector>

#include "unicon/geom.hpp"
#include "unicon/motion.hpp"

namespace unicon {

enum class JointType { free, fixed, hinge, ball };

int joint_dofs(JointType type);
/// Generalized-coordinate count for a joint (quaternions take 4, positions 3).
int joint_coords(JointType type);

struct Body {
    std::string name;
    int parent = -1;
    JointType joint = JointType::hinge;
    double mass = 1.0;            ///< kg
    Vec3 inertia;                 ///< principal moments about the COM, body frame (kg m^2)
    Vec3 com;                     ///< COM in the body frame
    Vec3 anchor;                  ///< joint anchor in the parent frame; the body origin sits on it
    Vec3 axis = Vec3::unit_y();   ///< hinge axis, parent frame
    std::vector<double> effort_limits;  ///< N m, one per DOF (root: none)
    double armature = 0.0;              ///< reflected rotor inertia added to each joint DOF (kg m^2)
    std::vector<Vec3> contact_points;   ///< body frame
    Vec3 extent;                  ///< segment end in the body frame, for rendering and height
};

/// Articulated tree. Body 0 is the root; parents precede children.
struct CharacterModel {
    std::string name;
    std::vector<Body> bodies;
    RigidPose fixed_root_pose;  ///< used when the root joint is `fixed`

    // Topology derived by finalize().
    std::vector<int> dof_offset;    ///< first velocity DOF of each body
    std::vector<int> coord_offset;  ///< first generalized coordinate of each body
    std::vector<std::vector<int>> chain_dofs;  ///< DOFs moving each body (root first)
    int num_dofs = 0;
    int num_coords = 0;
    int root_dofs = 0;

    /// Computes the derived topology; throws InvalidArgument on a malformed tree.
    void finalize();

    std::size_t num_bodies() const { return bodies.size(); }
    std::size_t num_joints() const { return bodies.empty() ? 0 : bodies.size() - 1; }
    int num_actuated() const { return num_dofs - root_dofs; }
    bool free_root() const { return !bodies.empty() && bodies[0].joint == JointType::free; }
    double total_mass() const;
    /// Vertical extent of the zero pose: highest segment end minus lowest contact point.
    double total_height() const;
    std::vector<double> effort_limits() const;
    int body_index(std::string_view name) const;
    /// Mirror pairs by "left_"/"right_" prefixes match in mass, inertia, limits and mirrored anchors.
    bool is_symmetric(double tol = 1e-12) const;
};

enum class Integrator { rk4, semi_implicit_euler };

struct SimConfig {
    double dt = 1.0 / 60.0;
    int substeps = 4;
    double gravity = 9.8;                ///< m/s^2 along -z
    double friction = 1.0;               ///< static and dynamic coefficient
    double contact_stiffness = 30000.0;  ///< N/m per contact point
    double contact_damping_ratio = 0.5;
    double tangential_damping = 2000.0;  ///< N s/m before the Coulomb clamp
    double joint_damping = 0.0;          ///< N m s/rad on actuated DOFs
    bool contacts = true;
    int solver_iterations = 1;           ///< kept for config compatibility; the direct solve needs one
    Integrator integrator = Integrator::rk4;
};

struct SimState {
    Eigen::VectorXd q;
    Eigen::VectorXd qd;
    double time = 0.0;

    bool is_finite() const { return q.allFinite() && qd.allFinite() && std::isfinite(time); }
    bool operator==(const SimState& o) const { return q == o.q && qd == o.qd && time == o.time; }
};

/// External impulse schedule used by the robustness protocol.
struct Perturbation {
    Vec3 impulse;          ///< N s
    int target_body = -1;  ///< -1 picks a random body each time
    int period_steps = 60;
    double mass_scale = 1.0;

    void validate() const;
};

/// World kinematics of every body and velocity DOF.
struct Kinematics {
    std::vector<RigidPose> frames;  ///< body frames (origin at the joint anchor)
    std::vector<Vec3> com;
    std::vector<Vec3> omega;
    std::vector<Vec3> origin_velocity;
    std::vector<Vec3> dof_axis;   ///< world axis per velocity DOF
    std::vector<Vec3> dof_point;  ///< point the axis passes through (angular DOFs)
    std::vector<bool> dof_linear;
};

SimState zero_state(const CharacterModel& model);
Kinematics compute_kinematics(const CharacterModel& model, const SimState& state);

Eigen::MatrixXd mass_matrix(const CharacterModel& model, const Kinematics& kin);
/// C(q, qd) qd + gravity term.
Eigen::VectorXd bias_forces(const CharacterModel& model, const Kinematics& kin, const SimState& state, double gravity);
/// 3 x num_dofs Jacobian of a world point rigidly attached to `body`.
Eigen::MatrixXd point_jacobian(const CharacterModel& model, const Kinematics& kin, int body, const Vec3& world_point);

Vec3 linear_momentum(const CharacterModel& model, const Kinematics& kin);
double kinetic_energy(const CharacterModel& model, const SimState& state);
double potential_energy(const CharacterModel& model, const SimState& state, double gravity);

/// Advances one control step of `config.dt` split into `config.substeps` substeps.
/// Torques (one per actuated DOF) are clamped to the effort limits before use.
/// The free-root linear momentum is corrected after every substep so it changes
/// by exactly the impulse of gravity and contact forces.
SimState step(const CharacterModel& model, const SimState& state, const Eigen::VectorXd& torques,
              const SimConfig& config);
/// Torques after the effort clamp.
Eigen::VectorXd clamp_torques(const CharacterModel& model, const Eigen::VectorXd& torques);

/// Position update along a generalized velocity (quaternion coordinates stay unit).
Eigen::VectorXd integrate_coords(const CharacterModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                                 double h);

CharacterState forward_kinematics(const CharacterModel& model, const SimState& state);
/// Inverse of forward_kinematics for the coordinates the model can represent.
SimState state_from_character(const CharacterModel& model, const CharacterState& target);

/// Instantaneous velocity change from an impulse at `point` (world; defaults to the body COM).
SimState apply_impulse(const SimState& state, const CharacterModel& model, int body, const Vec3& impulse);
SimState apply_impulse_at(const SimState& state, const CharacterModel& model, int body, const Vec3& impulse,
                          const Vec3& world_point);

CharacterModel scale_mass(const CharacterModel& model, double factor);

/// 20-body, 35-DOF humanoid (1.8 m, 70 kg) with a free root.
CharacterModel build_humanoid();

struct ChainOptions {
    double link_length = 0.4;
    double link_mass = 1.0;
    double link_radius = 0.04;
    double base_mass = 10.0;
    Vec3 base_half_extents{0.3, 0.2, 0.05};
    double effort_limit = 60.0;
    double armature = 0.0;  ///< per hinge, kg m^2
    bool free_root = true;
};

/// Base plus a serial chain of hinge links pointing up (+z) in the zero pose.
/// Planar chains rotate about +y only; otherwise axes alternate y, x.
CharacterModel build_chain(int n_links, bool planar, const ChainOptions& options = {});

inline constexpr std::string_view kModelMagic = "UNICON-MODEL";
inline constexpr int kModelVersion = 1;

std::string save_model(const CharacterModel& model);
CharacterModel load_model(std::string_view text);

}  // namespace unicon
