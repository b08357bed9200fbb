#include "unicon/simkit.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "unicon/error.hpp"

namespace unicon {

int joint_dofs(JointType type) {
    switch (type) {
        case JointType::free: return 6;
        case JointType::fixed: return 0;
        case JointType::hinge: return 1;
        case JointType::ball: return 3;
    }
    return 0;
}

int joint_coords(JointType type) {
    switch (type) {
        case JointType::free: return 7;
        case JointType::fixed: return 0;
        case JointType::hinge: return 1;
        case JointType::ball: return 4;
    }
    return 0;
}

void CharacterModel::finalize() {
    if (bodies.empty()) throw InvalidArgument("model has no bodies");
    if (bodies[0].parent != -1) throw InvalidArgument("body 0 must be the root");
    if (bodies[0].joint != JointType::free && bodies[0].joint != JointType::fixed)
        throw InvalidArgument("root joint must be free or fixed");
    dof_offset.assign(bodies.size(), 0);
    coord_offset.assign(bodies.size(), 0);
    chain_dofs.assign(bodies.size(), {});
    num_dofs = 0;
    num_coords = 0;
    for (std::size_t b = 0; b < bodies.size(); ++b) {
        const Body& body = bodies[b];
        if (b > 0) {
            if (body.parent < 0 || body.parent >= static_cast<int>(b))
                throw InvalidArgument("body '" + body.name + "' must follow its parent");
            if (body.joint != JointType::hinge && body.joint != JointType::ball)
                throw InvalidArgument("body '" + body.name + "' needs a hinge or ball joint");
            if (static_cast<int>(body.effort_limits.size()) != joint_dofs(body.joint))
                throw InvalidArgument("body '" + body.name + "' needs one effort limit per DOF");
            for (double e : body.effort_limits)
                if (!(e > 0.0)) throw InvalidArgument("effort limits must be positive");
        }
        if (!(body.mass > 0.0)) throw InvalidArgument("body '" + body.name + "' needs positive mass");
        if (!(body.armature >= 0.0)) throw InvalidArgument("body '" + body.name + "' has negative armature");
        dof_offset[b] = num_dofs;
        coord_offset[b] = num_coords;
        if (b > 0) chain_dofs[b] = chain_dofs[static_cast<std::size_t>(body.parent)];
        for (int k = 0; k < joint_dofs(body.joint); ++k) chain_dofs[b].push_back(num_dofs + k);
        num_dofs += joint_dofs(body.joint);
        num_coords += joint_coords(body.joint);
    }
    root_dofs = joint_dofs(bodies[0].joint);
}

double CharacterModel::total_mass() const {
    double m = 0.0;
    for (const auto& b : bodies) m += b.mass;
    return m;
}

std::vector<double> CharacterModel::effort_limits() const {
    std::vector<double> out;
    for (std::size_t b = 1; b < bodies.size(); ++b)
        out.insert(out.end(), bodies[b].effort_limits.begin(), bodies[b].effort_limits.end());
    return out;
}

int CharacterModel::body_index(std::string_view n) const {
    for (std::size_t b = 0; b < bodies.size(); ++b)
        if (bodies[b].name == n) return static_cast<int>(b);
    return -1;
}

bool CharacterModel::is_symmetric(double tol) const {
    auto close = [tol](double a, double b) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(a)); };
    auto close3 = [&](const Vec3& a, const Vec3& b) { return close(a.x, b.x) && close(a.y, b.y) && close(a.z, b.z); };
    auto mirrored = [](const Vec3& v) { return Vec3{v.x, -v.y, v.z}; };
    for (const auto& body : bodies) {
        if (body.name.rfind("left_", 0) != 0) continue;
        const int other = body_index("right_" + body.name.substr(5));
        if (other < 0) return false;
        const Body& r = bodies[static_cast<std::size_t>(other)];
        if (!close(body.mass, r.mass) || !close3(body.inertia, r.inertia) || body.joint != r.joint) return false;
        if (!close3(body.anchor, mirrored(r.anchor)) || !close3(body.com, mirrored(r.com))) return false;
        if (body.effort_limits != r.effort_limits || body.armature != r.armature) return false;
        if (body.contact_points.size() != r.contact_points.size()) return false;
        for (std::size_t i = 0; i < body.contact_points.size(); ++i)
            if (!close3(body.contact_points[i], mirrored(r.contact_points[i]))) return false;
    }
    for (const auto& body : bodies)
        if (body.name.rfind("right_", 0) == 0 && body_index("left_" + body.name.substr(6)) < 0) return false;
    return true;
}

void Perturbation::validate() const {
    if (period_steps < 1) throw InvalidArgument("perturbation period must be at least one step");
    if (!(mass_scale >= 0.5 && mass_scale <= 2.0)) throw InvalidArgument("mass scale must lie in [0.5, 2]");
    if (!impulse.is_finite()) throw InvalidArgument("impulse must be finite");
}

// ---------------------------------------------------------------------------
// kinematics

namespace {

Quat coord_quat(const Eigen::VectorXd& q, int at) { return Quat{q[at], q[at + 1], q[at + 2], q[at + 3]}; }

void set_coord_quat(Eigen::VectorXd& q, int at, const Quat& r) {
    q[at] = r.w;
    q[at + 1] = r.x;
    q[at + 2] = r.y;
    q[at + 3] = r.z;
}

Vec3 coord_vec(const Eigen::VectorXd& v, int at) { return {v[at], v[at + 1], v[at + 2]}; }

Quat local_rotation(const Body& body, const Eigen::VectorXd& q, int at) {
    if (body.joint == JointType::hinge) return Quat::from_axis_angle(body.axis, q[at]);
    return coord_quat(q, at).normalized();
}

/// World inertia tensor times a vector: R diag(I) R^T v.
Vec3 world_inertia_times(const Body& body, const Quat& orientation, const Vec3& v) {
    const Vec3 local = orientation.inverse_rotate(v);
    const Vec3 scaled{local.x * body.inertia.x, local.y * body.inertia.y, local.z * body.inertia.z};
    return orientation.rotate(scaled);
}

}  // namespace

SimState zero_state(const CharacterModel& model) {
    SimState s;
    s.q = Eigen::VectorXd::Zero(model.num_coords);
    s.qd = Eigen::VectorXd::Zero(model.num_dofs);
    for (std::size_t b = 0; b < model.bodies.size(); ++b) {
        const JointType t = model.bodies[b].joint;
        const int at = model.coord_offset[b];
        if (t == JointType::free) set_coord_quat(s.q, at + 3, Quat::identity());
        if (t == JointType::ball) set_coord_quat(s.q, at, Quat::identity());
    }
    return s;
}

Kinematics compute_kinematics(const CharacterModel& model, const SimState& state) {
    const std::size_t nb = model.bodies.size();
    Kinematics k;
    k.frames.resize(nb);
    k.com.resize(nb);
    k.omega.resize(nb);
    k.origin_velocity.resize(nb);
    k.dof_axis.resize(static_cast<std::size_t>(model.num_dofs));
    k.dof_point.resize(static_cast<std::size_t>(model.num_dofs));
    k.dof_linear.assign(static_cast<std::size_t>(model.num_dofs), false);
    const auto& q = state.q;
    const auto& qd = state.qd;
    for (std::size_t b = 0; b < nb; ++b) {
        const Body& body = model.bodies[b];
        const int c0 = model.coord_offset[b];
        const int d0 = model.dof_offset[b];
        if (b == 0) {
            if (body.joint == JointType::free) {
                k.frames[0] = {coord_vec(q, c0), coord_quat(q, c0 + 3).normalized()};
                k.origin_velocity[0] = coord_vec(qd, d0);
                k.omega[0] = coord_vec(qd, d0 + 3);
                const Vec3 basis[3] = {Vec3::unit_x(), Vec3::unit_y(), Vec3::unit_z()};
                for (int i = 0; i < 3; ++i) {
                    k.dof_axis[static_cast<std::size_t>(d0 + i)] = basis[i];
                    k.dof_linear[static_cast<std::size_t>(d0 + i)] = true;
                    k.dof_axis[static_cast<std::size_t>(d0 + 3 + i)] = basis[i];
                    k.dof_point[static_cast<std::size_t>(d0 + 3 + i)] = k.frames[0].position;
                }
            } else {
                k.frames[0] = model.fixed_root_pose;
                k.origin_velocity[0] = Vec3{};
                k.omega[0] = Vec3{};
            }
        } else {
            const auto p = static_cast<std::size_t>(body.parent);
            const RigidPose& pf = k.frames[p];
            const Vec3 origin = pf.transform_point(body.anchor);
            const Quat rel = local_rotation(body, q, c0);
            k.frames[b] = {origin, quat_mul(pf.orientation, rel)};
            Vec3 rel_rate;
            if (body.joint == JointType::hinge) {
                const Vec3 axis = pf.orientation.rotate(body.axis.normalized());
                k.dof_axis[static_cast<std::size_t>(d0)] = axis;
                k.dof_point[static_cast<std::size_t>(d0)] = origin;
                rel_rate = axis * qd[d0];
            } else {
                const Vec3 basis[3] = {Vec3::unit_x(), Vec3::unit_y(), Vec3::unit_z()};
                for (int i = 0; i < 3; ++i) {
                    const Vec3 axis = pf.orientation.rotate(basis[i]);
                    k.dof_axis[static_cast<std::size_t>(d0 + i)] = axis;
                    k.dof_point[static_cast<std::size_t>(d0 + i)] = origin;
                    rel_rate += axis * qd[d0 + i];
                }
            }
            k.omega[b] = k.omega[p] + rel_rate;
            k.origin_velocity[b] = k.origin_velocity[p] + k.omega[p].cross(origin - pf.position);
        }
        k.com[b] = k.frames[b].transform_point(body.com);
    }
    return k;
}

Eigen::MatrixXd point_jacobian(const CharacterModel& model, const Kinematics& kin, int body, const Vec3& p) {
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3, model.num_dofs);
    for (int d : model.chain_dofs[static_cast<std::size_t>(body)]) {
        const auto du = static_cast<std::size_t>(d);
        const Vec3 col = kin.dof_linear[du] ? kin.dof_axis[du] : kin.dof_axis[du].cross(p - kin.dof_point[du]);
        jac(0, d) = col.x;
        jac(1, d) = col.y;
        jac(2, d) = col.z;
    }
    return jac;
}

Eigen::MatrixXd mass_matrix(const CharacterModel& model, const Kinematics& kin) {
    const int n = model.num_dofs;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    std::vector<Vec3> jv;
    std::vector<Vec3> jw;
    std::vector<Vec3> ijw;
    for (std::size_t b = 0; b < model.bodies.size(); ++b) {
        const Body& body = model.bodies[b];
        const auto& dofs = model.chain_dofs[b];
        const std::size_t nd = dofs.size();
        jv.assign(nd, Vec3{});
        jw.assign(nd, Vec3{});
        ijw.assign(nd, Vec3{});
        for (std::size_t i = 0; i < nd; ++i) {
            const auto d = static_cast<std::size_t>(dofs[i]);
            if (kin.dof_linear[d]) {
                jv[i] = kin.dof_axis[d];
            } else {
                jv[i] = kin.dof_axis[d].cross(kin.com[b] - kin.dof_point[d]);
                jw[i] = kin.dof_axis[d];
                ijw[i] = world_inertia_times(body, kin.frames[b].orientation, jw[i]);
            }
        }
        for (std::size_t i = 0; i < nd; ++i) {
            for (std::size_t j = 0; j <= i; ++j) {
                const double v = body.mass * jv[i].dot(jv[j]) + jw[i].dot(ijw[j]);
                m(dofs[i], dofs[j]) += v;
                if (i != j) m(dofs[j], dofs[i]) += v;
            }
        }
        if (b > 0 && body.armature > 0.0) {
            const int d0 = model.dof_offset[b];
            for (int i = 0; i < joint_dofs(body.joint); ++i) m(d0 + i, d0 + i) += body.armature;
        }
    }
    return m;
}

Eigen::VectorXd bias_forces(const CharacterModel& model, const Kinematics& kin, const SimState& state, double gravity) {
    const std::size_t nb = model.bodies.size();
    std::vector<Vec3> alpha(nb);
    std::vector<Vec3> acc_origin(nb);
    std::vector<Vec3> force(nb);
    std::vector<Vec3> moment(nb);  // about the world origin
    const Vec3 g{0.0, 0.0, -gravity};
    for (std::size_t b = 0; b < nb; ++b) {
        const Body& body = model.bodies[b];
        if (b > 0) {
            const auto p = static_cast<std::size_t>(body.parent);
            const Vec3 rel_rate = kin.omega[b] - kin.omega[p];
            alpha[b] = alpha[p] + kin.omega[p].cross(rel_rate);
            const Vec3 r = kin.frames[b].position - kin.frames[p].position;
            acc_origin[b] = acc_origin[p] + alpha[p].cross(r) + kin.omega[p].cross(kin.omega[p].cross(r));
        }
        const Vec3 rc = kin.com[b] - kin.frames[b].position;
        const Vec3 acc_com = acc_origin[b] + alpha[b].cross(rc) + kin.omega[b].cross(kin.omega[b].cross(rc));
        const Quat& rot = kin.frames[b].orientation;
        const Vec3 f = (acc_com - g) * body.mass;
        const Vec3 n = world_inertia_times(body, rot, alpha[b]) +
                       kin.omega[b].cross(world_inertia_times(body, rot, kin.omega[b]));
        force[b] = f;
        moment[b] = n + kin.com[b].cross(f);
    }
    for (std::size_t b = nb; b-- > 1;) {
        const auto p = static_cast<std::size_t>(model.bodies[b].parent);
        force[p] += force[b];
        moment[p] += moment[b];
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(model.num_dofs);
    for (std::size_t b = 0; b < nb; ++b) {
        const int d0 = model.dof_offset[b];
        for (int i = 0; i < joint_dofs(model.bodies[b].joint); ++i) {
            const auto d = static_cast<std::size_t>(d0 + i);
            const Vec3& u = kin.dof_axis[d];
            out[d0 + i] = kin.dof_linear[d] ? u.dot(force[b]) : u.dot(moment[b] - kin.dof_point[d].cross(force[b]));
        }
    }
    (void)state;
    return out;
}

Vec3 linear_momentum(const CharacterModel& model, const Kinematics& kin) {
    Vec3 p;
    for (std::size_t b = 0; b < model.bodies.size(); ++b) {
        const Vec3 v = kin.origin_velocity[b] + kin.omega[b].cross(kin.com[b] - kin.frames[b].position);
        p += v * model.bodies[b].mass;
    }
    return p;
}

double kinetic_energy(const CharacterModel& model, const SimState& state) {
    const Kinematics kin = compute_kinematics(model, state);
    return 0.5 * state.qd.dot(mass_matrix(model, kin) * state.qd);
}

double potential_energy(const CharacterModel& model, const SimState& state, double gravity) {
    const Kinematics kin = compute_kinematics(model, state);
    double e = 0.0;
    for (std::size_t b = 0; b < model.bodies.size(); ++b) e += model.bodies[b].mass * gravity * kin.com[b].z;
    return e;
}

// ---------------------------------------------------------------------------
// dynamics

Eigen::VectorXd clamp_torques(const CharacterModel& model, const Eigen::VectorXd& torques) {
    if (torques.size() != model.num_actuated())
        throw InvalidArgument("torque vector has " + std::to_string(torques.size()) + " entries, model actuates " +
                              std::to_string(model.num_actuated()));
    Eigen::VectorXd out = torques;
    int i = 0;
    for (std::size_t b = 1; b < model.bodies.size(); ++b)
        for (double limit : model.bodies[b].effort_limits) {
            out[i] = std::clamp(out[i], -limit, limit);
            ++i;
        }
    return out;
}

Eigen::VectorXd integrate_coords(const CharacterModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                                 double h) {
    Eigen::VectorXd out = q;
    for (std::size_t b = 0; b < model.bodies.size(); ++b) {
        const int c0 = model.coord_offset[b];
        const int d0 = model.dof_offset[b];
        switch (model.bodies[b].joint) {
            case JointType::free: {
                for (int i = 0; i < 3; ++i) out[c0 + i] += h * qd[d0 + i];
                const Quat r = quat_mul(Quat::exp(coord_vec(qd, d0 + 3) * h), coord_quat(q, c0 + 3));
                set_coord_quat(out, c0 + 3, r);
                break;
            }
            case JointType::hinge: out[c0] += h * qd[d0]; break;
            case JointType::ball: {
                const Quat r = quat_mul(Quat::exp(coord_vec(qd, d0) * h), coord_quat(q, c0));
                set_coord_quat(out, c0, r);
                break;
            }
            case JointType::fixed: break;
        }
    }
    return out;
}

namespace {

/// Adds a world force applied at `p` on `body` to the generalized force vector.
void add_point_force(const CharacterModel& model, const Kinematics& kin, int body, const Vec3& p, const Vec3& f,
                     Eigen::VectorXd& gen) {
    for (int d : model.chain_dofs[static_cast<std::size_t>(body)]) {
        const auto du = static_cast<std::size_t>(d);
        gen[d] += kin.dof_linear[du] ? kin.dof_axis[du].dot(f) : kin.dof_axis[du].dot((p - kin.dof_point[du]).cross(f));
    }
}

/// Penalty ground contact; returns the summed contact force.
Vec3 contact_forces(const CharacterModel& model, const Kinematics& kin, const SimConfig& cfg, double h,
                    Eigen::VectorXd& gen) {
    Vec3 total;
    for (std::size_t b = 0; b < model.bodies.size(); ++b) {
        const Body& body = model.bodies[b];
        if (body.contact_points.empty()) continue;
        const double m_point = body.mass / static_cast<double>(body.contact_points.size());
        const double normal_damping = 2.0 * cfg.contact_damping_ratio * std::sqrt(cfg.contact_stiffness * m_point);
        // keep explicit damping below the one-substep stopping rate
        const double tangential = std::min(cfg.tangential_damping, 0.5 * m_point / h);
        for (const Vec3& local : body.contact_points) {
            const Vec3 p = kin.frames[b].transform_point(local);
            if (p.z >= 0.0) continue;
            const Vec3 v = kin.origin_velocity[b] + kin.omega[b].cross(p - kin.frames[b].position);
            const double fn = std::max(0.0, cfg.contact_stiffness * (-p.z) - normal_damping * v.z);
            if (fn <= 0.0) continue;
            Vec3 ft{-tangential * v.x, -tangential * v.y, 0.0};
            const double ft_norm = ft.norm();
            const double cap = cfg.friction * fn;
            if (ft_norm > cap) ft *= cap / ft_norm;
            const Vec3 f{ft.x, ft.y, fn};
            add_point_force(model, kin, static_cast<int>(b), p, f, gen);
            total += f;
        }
    }
    return total;
}

}  // namespace

namespace {

struct Derivative {
    Eigen::VectorXd qdd;
    Vec3 external;  ///< gravity plus contact force on the whole body
};

Derivative evaluate(const CharacterModel& model, const SimState& s, const Eigen::VectorXd& applied,
                    const SimConfig& config, double h) {
    const Kinematics kin = compute_kinematics(model, s);
    const int na = model.num_actuated();
    const int r0 = model.root_dofs;
    Eigen::VectorXd gen = Eigen::VectorXd::Zero(model.num_dofs);
    gen.segment(r0, na) = applied;
    if (config.joint_damping > 0.0) gen.segment(r0, na) -= config.joint_damping * s.qd.segment(r0, na);
    Vec3 external{0.0, 0.0, -config.gravity * model.total_mass()};
    if (config.contacts) external += contact_forces(model, kin, config, h, gen);
    gen -= bias_forces(model, kin, s, config.gravity);
    return {mass_matrix(model, kin).ldlt().solve(gen), external};
}

SimState stage(const CharacterModel& model, const SimState& s, const Eigen::VectorXd& rate,
               const Eigen::VectorXd& qd, double h) {
    SimState out = s;
    out.q = integrate_coords(model, s.q, rate, h);
    out.qd = qd;
    return out;
}

}  // namespace

SimState step(const CharacterModel& model, const SimState& state, const Eigen::VectorXd& torques,
              const SimConfig& config) {
    if (!(config.dt > 0.0) || config.substeps < 1) throw InvalidArgument("dt and substeps must be positive");
    if (!state.is_finite()) throw SimulationDiverged("non-finite state passed to step");
    const Eigen::VectorXd applied = clamp_torques(model, torques);
    const double h = config.dt / config.substeps;
    SimState s = state;
    for (int sub = 0; sub < config.substeps; ++sub) {
        const Vec3 momentum_before = model.free_root() ? linear_momentum(model, compute_kinematics(model, s)) : Vec3{};
        Vec3 external;
        if (config.integrator == Integrator::semi_implicit_euler) {
            const Derivative d = evaluate(model, s, applied, config, h);
            s.qd += h * d.qdd;
            s.q = integrate_coords(model, s.q, s.qd, h);
            external = d.external;
        } else {
            const Eigen::VectorXd v1 = s.qd;
            const Derivative d1 = evaluate(model, s, applied, config, h);
            const Eigen::VectorXd v2 = s.qd + 0.5 * h * d1.qdd;
            const Derivative d2 = evaluate(model, stage(model, s, v1, v2, 0.5 * h), applied, config, h);
            const Eigen::VectorXd v3 = s.qd + 0.5 * h * d2.qdd;
            const Derivative d3 = evaluate(model, stage(model, s, v2, v3, 0.5 * h), applied, config, h);
            const Eigen::VectorXd v4 = s.qd + h * d3.qdd;
            const Derivative d4 = evaluate(model, stage(model, s, v3, v4, h), applied, config, h);
            s.q = integrate_coords(model, s.q, (v1 + 2.0 * v2 + 2.0 * v3 + v4) / 6.0, h);
            s.qd += h * (d1.qdd + 2.0 * d2.qdd + 2.0 * d3.qdd + d4.qdd) / 6.0;
            external = (d1.external + d2.external * 2.0 + d3.external * 2.0 + d4.external) / 6.0;
        }
        if (model.free_root()) {
            // Configuration-dependent momentum drift is removed through the root velocity.
            const Vec3 target = momentum_before + external * h;
            const Vec3 actual = linear_momentum(model, compute_kinematics(model, s));
            const Vec3 fix = (target - actual) / model.total_mass();
            s.qd[0] += fix.x;
            s.qd[1] += fix.y;
            s.qd[2] += fix.z;
        }
        s.time += h;
    }
    s.time = state.time + config.dt;
    if (!s.is_finite()) throw SimulationDiverged("simulation produced a non-finite state");
    return s;
}

SimState apply_impulse_at(const SimState& state, const CharacterModel& model, int body, const Vec3& impulse,
                          const Vec3& world_point) {
    if (body < 0 || body >= static_cast<int>(model.bodies.size()))
        throw InvalidArgument("unknown body index " + std::to_string(body));
    if (!impulse.is_finite()) throw InvalidArgument("impulse must be finite");
    const Kinematics kin = compute_kinematics(model, state);
    Eigen::VectorXd gen = Eigen::VectorXd::Zero(model.num_dofs);
    add_point_force(model, kin, body, world_point, impulse, gen);
    SimState out = state;
    out.qd += mass_matrix(model, kin).ldlt().solve(gen);
    return out;
}

SimState apply_impulse(const SimState& state, const CharacterModel& model, int body, const Vec3& impulse) {
    if (body < 0 || body >= static_cast<int>(model.bodies.size()))
        throw InvalidArgument("unknown body index " + std::to_string(body));
    const Kinematics kin = compute_kinematics(model, state);
    return apply_impulse_at(state, model, body, impulse, kin.com[static_cast<std::size_t>(body)]);
}

// ---------------------------------------------------------------------------
// state conversion

CharacterState forward_kinematics(const CharacterModel& model, const SimState& state) {
    const Kinematics kin = compute_kinematics(model, state);
    const std::size_t joints = model.num_joints();
    CharacterState out(joints);
    out.root = kin.frames[0];
    out.root_velocity = {kin.origin_velocity[0], kin.omega[0]};
    for (std::size_t b = 1; b < model.bodies.size(); ++b) {
        const Body& body = model.bodies[b];
        const std::size_t j = b - 1;
        const auto p = static_cast<std::size_t>(body.parent);
        out.joint_positions[j] = kin.frames[b].position;
        out.joint_orientations[j] = local_rotation(body, state.q, model.coord_offset[b]);
        const int d0 = model.dof_offset[b];
        Vec3 rel;
        if (body.joint == JointType::hinge)
            rel = body.axis.normalized() * state.qd[d0];
        else
            rel = coord_vec(state.qd, d0);
        out.joint_velocities[j] = {kin.origin_velocity[b], rel};
        (void)p;
    }
    return out;
}

SimState state_from_character(const CharacterModel& model, const CharacterState& target) {
    if (target.num_joints() != model.num_joints())
        throw InvalidArgument("state has " + std::to_string(target.num_joints()) + " joints, model has " +
                              std::to_string(model.num_joints()));
    SimState s = zero_state(model);
    for (std::size_t b = 0; b < model.bodies.size(); ++b) {
        const Body& body = model.bodies[b];
        const int c0 = model.coord_offset[b];
        const int d0 = model.dof_offset[b];
        if (b == 0) {
            if (body.joint == JointType::free) {
                const RigidPose& r = target.root;
                s.q[c0] = r.position.x;
                s.q[c0 + 1] = r.position.y;
                s.q[c0 + 2] = r.position.z;
                set_coord_quat(s.q, c0 + 3, r.orientation.normalized());
                const SpatialVelocity& v = target.root_velocity;
                for (int i = 0; i < 3; ++i) {
                    s.qd[d0 + i] = v.linear[i];
                    s.qd[d0 + 3 + i] = v.angular[i];
                }
            }
            continue;
        }
        const std::size_t j = b - 1;
        const Quat& rel = target.joint_orientations[j];
        const Vec3& rate = target.joint_velocities[j].angular;
        if (body.joint == JointType::hinge) {
            const Vec3 axis = body.axis.normalized();
            s.q[c0] = 2.0 * std::atan2(rel.vec().dot(axis), rel.w);
            s.qd[d0] = axis.dot(rate);
        } else {
            set_coord_quat(s.q, c0, rel.normalized());
            for (int i = 0; i < 3; ++i) s.qd[d0 + i] = rate[i];
        }
    }
    return s;
}

CharacterModel scale_mass(const CharacterModel& model, double factor) {
    if (!(factor >= 0.5 && factor <= 2.0)) throw InvalidArgument("mass scale must lie in [0.5, 2]");
    CharacterModel out = model;
    for (auto& b : out.bodies) {
        b.mass *= factor;
        b.inertia *= factor;
    }
    return out;
}

double CharacterModel::total_height() const {
    SimState s = zero_state(*this);
    const Kinematics kin = compute_kinematics(*this, s);
    double lo = kin.frames[0].position.z;
    double hi = lo;
    for (std::size_t b = 0; b < bodies.size(); ++b) {
        const RigidPose& f = kin.frames[b];
        hi = std::max({hi, f.position.z, f.transform_point(bodies[b].extent).z});
        lo = std::min(lo, f.position.z);
        for (const auto& c : bodies[b].contact_points) {
            const double z = f.transform_point(c).z;
            lo = std::min(lo, z);
            hi = std::max(hi, z);
        }
    }
    return hi - lo;
}

// ---------------------------------------------------------------------------
// model builders

namespace {

Vec3 box_inertia(double mass, const Vec3& half) {
    const double x2 = 4.0 * half.x * half.x;
    const double y2 = 4.0 * half.y * half.y;
    const double z2 = 4.0 * half.z * half.z;
    return {mass * (y2 + z2) / 12.0, mass * (x2 + z2) / 12.0, mass * (x2 + y2) / 12.0};
}

/// Solid capsule-ish rod along `dir` (a unit basis vector).
Vec3 rod_inertia(double mass, double length, double radius, const Vec3& dir) {
    const double axial = 0.5 * mass * radius * radius;
    const double transverse = mass * (3.0 * radius * radius + length * length) / 12.0;
    return {std::abs(dir.x) > 0.5 ? axial : transverse, std::abs(dir.y) > 0.5 ? axial : transverse,
            std::abs(dir.z) > 0.5 ? axial : transverse};
}

}  // namespace

CharacterModel build_chain(int n_links, bool planar, const ChainOptions& o) {
    if (n_links < 1) throw InvalidArgument("chain needs at least one link");
    CharacterModel m;
    m.name = planar ? "planar_chain_" + std::to_string(n_links) : "chain_" + std::to_string(n_links);
    const Vec3& he = o.base_half_extents;
    Body base;
    base.name = "base";
    base.joint = o.free_root ? JointType::free : JointType::fixed;
    base.mass = o.base_mass;
    base.inertia = box_inertia(o.base_mass, he);
    base.extent = {0.0, 0.0, he.z};
    for (double sx : {-1.0, 1.0})
        for (double sy : {-1.0, 1.0}) base.contact_points.push_back({sx * he.x, sy * he.y, -he.z});
    m.bodies.push_back(base);
    if (!o.free_root) m.fixed_root_pose = {{0.0, 0.0, he.z}, Quat::identity()};
    for (int i = 0; i < n_links; ++i) {
        Body link;
        link.name = "link" + std::to_string(i + 1);
        link.parent = i;
        link.joint = JointType::hinge;
        link.axis = (planar || i % 2 == 0) ? Vec3::unit_y() : Vec3::unit_x();
        link.mass = o.link_mass;
        link.com = {0.0, 0.0, 0.5 * o.link_length};
        link.inertia = rod_inertia(o.link_mass, o.link_length, o.link_radius, Vec3::unit_z());
        link.anchor = i == 0 ? Vec3{0.0, 0.0, he.z} : Vec3{0.0, 0.0, o.link_length};
        link.effort_limits = {o.effort_limit};
        link.armature = o.armature;
        link.contact_points = {{0.0, 0.0, o.link_length}};
        link.extent = {0.0, 0.0, o.link_length};
        m.bodies.push_back(link);
    }
    m.finalize();
    return m;
}

CharacterModel build_humanoid() {
    // Segment mass fractions adapted from Winter's anthropometric table, then
    // renormalized to the 70 kg total. Lengths follow a 1.8 m standing height.
    struct Spec {
        const char* name;
        const char* parent;
        JointType joint;
        double mass_fraction;
        Vec3 anchor;   // in parent frame
        Vec3 extent;   // segment end in body frame
        double radius;
        double effort;
        Vec3 axis;
    };
    const Vec3 up = Vec3::unit_z();
    const Vec3 y = Vec3::unit_y();
    const Vec3 x = Vec3::unit_x();
    const std::vector<Spec> specs = {
        {"pelvis", "", JointType::free, 0.142, {}, {0, 0, 0.10}, 0.12, 0, up},
        {"lower_spine", "pelvis", JointType::ball, 0.070, {0, 0, 0.10}, {0, 0, 0.12}, 0.11, 400, up},
        {"upper_spine", "lower_spine", JointType::hinge, 0.070, {0, 0, 0.12}, {0, 0, 0.12}, 0.11, 300, y},
        {"chest", "upper_spine", JointType::hinge, 0.140, {0, 0, 0.12}, {0, 0, 0.18}, 0.13, 300, x},
        {"neck", "chest", JointType::hinge, 0.020, {0, 0, 0.18}, {0, 0, 0.10}, 0.05, 100, y},
        {"head", "neck", JointType::ball, 0.060, {0, 0, 0.10}, {0, 0, 0.18}, 0.09, 50, up},
        {"left_upper_arm", "chest", JointType::ball, 0.028, {0, 0.19, 0.12}, {0, 0, -0.30}, 0.045, 200, up},
        {"left_lower_arm", "left_upper_arm", JointType::hinge, 0.016, {0, 0, -0.30}, {0, 0, -0.26}, 0.04, 150, y},
        {"left_hand", "left_lower_arm", JointType::hinge, 0.006, {0, 0, -0.26}, {0, 0, -0.18}, 0.035, 50, x},
        {"right_upper_arm", "chest", JointType::ball, 0.028, {0, -0.19, 0.12}, {0, 0, -0.30}, 0.045, 200, up},
        {"right_lower_arm", "right_upper_arm", JointType::hinge, 0.016, {0, 0, -0.30}, {0, 0, -0.26}, 0.04, 150, y},
        {"right_hand", "right_lower_arm", JointType::hinge, 0.006, {0, 0, -0.26}, {0, 0, -0.18}, 0.035, 50, x},
        {"left_thigh", "pelvis", JointType::ball, 0.100, {0, 0.09, -0.05}, {0, 0, -0.44}, 0.07, 600, up},
        {"left_shin", "left_thigh", JointType::hinge, 0.0465, {0, 0, -0.44}, {0, 0, -0.43}, 0.05, 500, y},
        {"left_foot", "left_shin", JointType::ball, 0.0125, {0, 0, -0.43}, {0.16, 0, -0.08}, 0.04, 300, up},
        {"left_toe", "left_foot", JointType::hinge, 0.002, {0.16, 0, -0.06}, {0.06, 0, 0}, 0.02, 50, y},
        {"right_thigh", "pelvis", JointType::ball, 0.100, {0, -0.09, -0.05}, {0, 0, -0.44}, 0.07, 600, up},
        {"right_shin", "right_thigh", JointType::hinge, 0.0465, {0, 0, -0.44}, {0, 0, -0.43}, 0.05, 500, y},
        {"right_foot", "right_shin", JointType::ball, 0.0125, {0, 0, -0.43}, {0.16, 0, -0.08}, 0.04, 300, up},
        {"right_toe", "right_foot", JointType::hinge, 0.002, {0.16, 0, -0.06}, {0.06, 0, 0}, 0.02, 50, y},
    };
    double fraction_sum = 0.0;
    for (const auto& s : specs) fraction_sum += s.mass_fraction;
    const double total_mass = 70.0;

    CharacterModel m;
    m.name = "humanoid";
    for (const auto& s : specs) {
        Body b;
        b.name = s.name;
        b.parent = s.parent[0] ? m.body_index(s.parent) : -1;
        b.joint = s.joint;
        b.mass = total_mass * s.mass_fraction / fraction_sum;
        b.anchor = s.anchor;
        b.axis = s.axis;
        b.extent = s.extent;
        b.com = s.extent * 0.5;
        const double len = s.extent.norm();
        const Vec3 dir = s.extent.normalized();
        b.inertia = rod_inertia(b.mass, len, s.radius, Vec3{std::round(std::abs(dir.x)), std::round(std::abs(dir.y)),
                                                            std::round(std::abs(dir.z))});
        if (s.joint != JointType::free) {
            b.effort_limits.assign(static_cast<std::size_t>(joint_dofs(s.joint)), s.effort);
            b.armature = 0.02;
        }
        m.bodies.push_back(b);
    }
    // Feet: four sole points each; toes: tip; hands and head: segment ends.
    for (const char* side : {"left_", "right_"}) {
        const double sy = side[0] == 'l' ? 1.0 : -1.0;
        Body& foot = m.bodies[static_cast<std::size_t>(m.body_index(std::string(side) + "foot"))];
        foot.contact_points = {{-0.05, sy * 0.04, -0.08}, {-0.05, -sy * 0.04, -0.08}, {0.16, sy * 0.04, -0.08},
                               {0.16, -sy * 0.04, -0.08}};
        Body& toe = m.bodies[static_cast<std::size_t>(m.body_index(std::string(side) + "toe"))];
        toe.contact_points = {{0.06, 0.0, -0.02}};
        Body& hand = m.bodies[static_cast<std::size_t>(m.body_index(std::string(side) + "hand"))];
        hand.contact_points = {{0.0, 0.0, -0.18}};
    }
    m.bodies[static_cast<std::size_t>(m.body_index("head"))].contact_points = {{0.0, 0.0, 0.18}};
    m.bodies[0].contact_points = {{0.0, 0.0, -0.08}};
    m.finalize();
    return m;
}

// ---------------------------------------------------------------------------
// model files

namespace {

using nlohmann::json;

const char* joint_name(JointType t) {
    switch (t) {
        case JointType::free: return "free";
        case JointType::fixed: return "fixed";
        case JointType::hinge: return "hinge";
        case JointType::ball: return "ball";
    }
    return "?";
}

JointType joint_from(const std::string& s) {
    if (s == "free") return JointType::free;
    if (s == "fixed") return JointType::fixed;
    if (s == "hinge") return JointType::hinge;
    if (s == "ball") return JointType::ball;
    throw ParseError("model: unknown joint type '" + s + "'");
}

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
Vec3 vec_from(const json& j) {
    if (!j.is_array() || j.size() != 3) throw ParseError("model: expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

std::string save_model(const CharacterModel& model) {
    json bodies = json::array();
    for (const auto& b : model.bodies) {
        json contacts = json::array();
        for (const auto& c : b.contact_points) contacts.push_back(vec_json(c));
        bodies.push_back({{"name", b.name},
                          {"parent", b.parent >= 0 ? model.bodies[static_cast<std::size_t>(b.parent)].name : ""},
                          {"joint", joint_name(b.joint)},
                          {"mass", b.mass},
                          {"inertia", vec_json(b.inertia)},
                          {"com", vec_json(b.com)},
                          {"anchor", vec_json(b.anchor)},
                          {"axis", vec_json(b.axis)},
                          {"effort_limits", b.effort_limits},
                          {"armature", b.armature},
                          {"contact_points", contacts},
                          {"extent", vec_json(b.extent)}});
    }
    const auto& r = model.fixed_root_pose;
    json doc = {{"magic", kModelMagic},
                {"version", kModelVersion},
                {"name", model.name},
                {"fixed_root_pose",
                 {r.position.x, r.position.y, r.position.z, r.orientation.w, r.orientation.x, r.orientation.y,
                  r.orientation.z}},
                {"bodies", bodies}};
    return doc.dump(2) + "\n";
}

CharacterModel load_model(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("model: ") + e.what());
    }
    CharacterModel m;
    try {
        if (doc.at("magic").get<std::string>() != kModelMagic) throw ParseError("model: bad magic");
        if (doc.at("version").get<int>() != kModelVersion) throw ParseError("model: unsupported version");
        m.name = doc.at("name").get<std::string>();
        if (doc.contains("fixed_root_pose")) {
            const auto p = doc.at("fixed_root_pose").get<std::vector<double>>();
            if (p.size() != 7) throw ParseError("model: fixed_root_pose needs 7 numbers");
            m.fixed_root_pose = {{p[0], p[1], p[2]}, Quat{p[3], p[4], p[5], p[6]}.normalized()};
        }
        for (const auto& jb : doc.at("bodies")) {
            Body b;
            b.name = jb.at("name").get<std::string>();
            const auto parent = jb.at("parent").get<std::string>();
            b.parent = parent.empty() ? -1 : m.body_index(parent);
            if (!parent.empty() && b.parent < 0) throw ParseError("model: unknown parent '" + parent + "'");
            b.joint = joint_from(jb.at("joint").get<std::string>());
            b.mass = jb.at("mass").get<double>();
            b.inertia = vec_from(jb.at("inertia"));
            b.com = vec_from(jb.at("com"));
            b.anchor = vec_from(jb.at("anchor"));
            b.axis = vec_from(jb.at("axis"));
            b.effort_limits = jb.at("effort_limits").get<std::vector<double>>();
            b.armature = jb.value("armature", 0.0);
            for (const auto& c : jb.at("contact_points")) b.contact_points.push_back(vec_from(c));
            b.extent = vec_from(jb.value("extent", json::array({0.0, 0.0, 0.0})));
            m.bodies.push_back(std::move(b));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("model: ") + e.what());
    }
    m.finalize();
    return m;
}

}  // namespace unicon
