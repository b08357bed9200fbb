#include "unicon/schedulers.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pose_json.hpp"
#include "unicon/error.hpp"

namespace unicon {

using nlohmann::json;

SchedulerKind scheduler_kind_from(std::string_view name) {
    if (name == "dataset") return SchedulerKind::dataset;
    if (name == "stitch") return SchedulerKind::stitch;
    if (name == "command") return SchedulerKind::command;
    if (name == "stream") return SchedulerKind::stream;
    throw InvalidArgument("unknown scheduler: " + std::string(name));
}

std::string_view scheduler_kind_name(SchedulerKind kind) {
    switch (kind) {
        case SchedulerKind::dataset: return "dataset";
        case SchedulerKind::stitch: return "stitch";
        case SchedulerKind::command: return "command";
        case SchedulerKind::stream: return "stream";
    }
    return "?";
}

namespace {

void check_tau(int tau) {
    if (tau < 1) throw InvalidArgument("tau must be positive");
}

double yaw_of(const Quat& q) {
    const Vec3 fwd = q.rotate(Vec3::unit_x());
    return std::atan2(fwd.y, fwd.x);
}

Quat yaw_quat(double yaw) { return Quat::from_axis_angle(Vec3::unit_z(), yaw); }

/// Yaw-only frame on the ground below `pose`.
RigidPose ground_heading(const RigidPose& pose) {
    return {{pose.position.x, pose.position.y, 0.0}, yaw_quat(yaw_of(pose.orientation))};
}

double wrap_angle(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }

void scale_velocities(CharacterState& s, double k) {
    s.root_velocity.linear *= k;
    s.root_velocity.angular *= k;
    for (auto& v : s.joint_velocities) {
        v.linear *= k;
        v.angular *= k;
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// dataset replay

std::optional<Frames> dataset_next(const MotionClip& clip, std::size_t start, std::size_t t, int tau) {
    check_tau(tau);
    const std::size_t last = start + t + static_cast<std::size_t>(tau);
    if (last >= clip.size()) return std::nullopt;
    return Frames(clip.frames.begin() + static_cast<std::ptrdiff_t>(start + t + 1),
                  clip.frames.begin() + static_cast<std::ptrdiff_t>(last + 1));
}

DatasetScheduler::DatasetScheduler(MotionClip clip, std::size_t start) : clip_(std::move(clip)), start_(start) {
    clip_.validate();
    if (start_ >= clip_.size()) throw InvalidArgument("start frame past the clip end");
}

std::optional<Frames> DatasetScheduler::next(const SchedulerInput&, int tau) {
    auto frames = dataset_next(clip_, start_, t_, tau);
    if (frames) ++t_;
    return frames;
}

std::size_t DatasetScheduler::pending() const { return clip_.size() - 1 - std::min(clip_.size() - 1, start_ + t_); }

// ---------------------------------------------------------------------------
// stitching

MotionClip align_clip(const MotionClip& clip, const RigidPose& root) {
    MotionClip out = clip;
    if (clip.frames.empty()) return out;
    const RigidPose move = ground_heading(root) * ground_heading(clip.frames.front().root).inverse();
    for (auto& f : out.frames) f = from_local(move, f);
    return out;
}

StitchBuffer::StitchBuffer(int transition_frames) : transition_frames_(transition_frames) {
    if (transition_frames < 0) throw InvalidArgument("transition frame count must be non-negative");
}

void StitchBuffer::push(const MotionClip& clip, bool align) {
    clip.validate();
    if (!clip.has_velocities) throw InvalidArgument("clip " + clip.id + " has no velocities");
    if (clip.frames.empty()) return;
    if (!frames_.empty() && frames_.back().num_joints() != clip.num_joints())
        throw InvalidArgument("clip " + clip.id + " joint count differs from the buffered frames");

    std::vector<CharacterState> src =
        align && !frames_.empty() ? align_clip(clip, frames_.back().root).frames : clip.frames;

    if (!frames_.empty() && transition_frames_ > 0) {
        const int n = transition_frames_;
        const std::size_t joints = clip.num_joints();
        std::vector<CharacterState> seam;
        seam.reserve(static_cast<std::size_t>(n) + 2);
        seam.push_back(frames_.back());
        const CharacterState& a = frames_.back();
        const CharacterState& b = src.front();
        for (int i = 1; i <= n; ++i) {
            const double s = static_cast<double>(i) / (n + 1);
            CharacterState f(joints);
            f.root.position = lerp(a.root.position, b.root.position, s);
            f.root.orientation = quat_slerp(a.root.orientation, b.root.orientation, s);
            for (std::size_t j = 0; j < joints; ++j) {
                f.joint_positions[j] = lerp(a.joint_positions[j], b.joint_positions[j], s);
                f.joint_orientations[j] = quat_slerp(a.joint_orientations[j], b.joint_orientations[j], s);
            }
            seam.push_back(std::move(f));
        }
        seam.push_back(b);
        const double dt2 = 2.0 / clip.fps;
        for (int i = 1; i <= n; ++i) {
            const CharacterState& lo = seam[static_cast<std::size_t>(i - 1)];
            const CharacterState& hi = seam[static_cast<std::size_t>(i + 1)];
            CharacterState& f = seam[static_cast<std::size_t>(i)];
            f.root_velocity.linear = (hi.root.position - lo.root.position) / dt2;
            f.root_velocity.angular = angular_rate(lo.root.orientation, hi.root.orientation, dt2);
            for (std::size_t j = 0; j < joints; ++j) {
                f.joint_velocities[j].linear = (hi.joint_positions[j] - lo.joint_positions[j]) / dt2;
                f.joint_velocities[j].angular =
                    angular_rate(lo.joint_orientations[j], hi.joint_orientations[j], dt2);
            }
        }
        for (int i = 1; i <= n; ++i) frames_.push_back(std::move(seam[static_cast<std::size_t>(i)]));
    }
    for (auto& f : src) frames_.push_back(std::move(f));
}

std::optional<Frames> StitchBuffer::peek(int count) const {
    check_tau(count);
    if (frames_.size() < static_cast<std::size_t>(count)) return std::nullopt;
    return Frames(frames_.begin(), frames_.begin() + count);
}

std::optional<Frames> StitchBuffer::pop(int count) {
    auto out = peek(count);
    if (out) frames_.erase(frames_.begin(), frames_.begin() + count);
    return out;
}

StitchScheduler::StitchScheduler(int transition_frames, bool align) : buffer_(transition_frames), align_(align) {}

std::optional<Frames> StitchScheduler::next(const SchedulerInput&, int tau) {
    auto frames = buffer_.peek(tau);
    if (frames) buffer_.pop(1);
    return frames;
}

// ---------------------------------------------------------------------------
// command-driven locomotion

CommandScheduler::CommandScheduler(std::vector<MotionClip> gaits, CommandConfig config)
    : gaits_(std::move(gaits)), config_(config) {
    if (gaits_.empty()) throw InvalidArgument("command scheduler needs at least one gait clip");
    if (!(config_.turn_rate >= 0.0) || !(config_.max_speed > 0.0))
        throw InvalidArgument("turn rate and max speed must be positive");
    std::set<std::string> ids;
    for (const auto& g : gaits_) {
        g.validate();
        if (!g.has_velocities) throw InvalidArgument("gait " + g.id + " has no velocities");
        if (g.size() < 2) throw InvalidArgument("gait " + g.id + " needs at least two frames");
        if (!ids.insert(g.id).second) throw InvalidArgument("duplicate gait id " + g.id);
    }
    command_.gait = gaits_.front().id;
    gait_start_ = ground_heading(gaits_.front().frames.front().root);
    cycle_ = to_local(gait_start_, ground_heading(gaits_.front().frames.back().root));
    cursor_.yaw = yaw_of(gait_start_.orientation);
    cursor_.origin = gait_start_.position;
}

bool CommandScheduler::has_gait(std::string_view id) const {
    return std::any_of(gaits_.begin(), gaits_.end(), [&](const MotionClip& g) { return g.id == id; });
}

CharacterState CommandScheduler::local_frame(double phase) const {
    return to_local(gait_start_, interpolate_frame(gaits_[gait_], phase));
}

CharacterState CommandScheduler::emit(const Cursor& cursor, double turn_rate) const {
    CharacterState local = local_frame(cursor.phase);
    scale_velocities(local, command_.speed);
    CharacterState out = from_local(RigidPose{cursor.origin, yaw_quat(cursor.yaw)}, local);
    if (turn_rate != 0.0) {
        const Vec3 w{0.0, 0.0, turn_rate};
        out.root_velocity.angular += w;
        for (std::size_t j = 0; j < out.num_joints(); ++j)
            out.joint_velocities[j].linear += w.cross(out.joint_positions[j] - out.root.position);
    }
    return out;
}

double CommandScheduler::facing_at(const Cursor& cursor) const {
    return wrap_angle(cursor.yaw + yaw_of(local_frame(cursor.phase).root.orientation));
}

double CommandScheduler::facing() const { return facing_at(cursor_); }

CommandScheduler::Cursor CommandScheduler::advance(Cursor c, double* turn) const {
    const MotionClip& g = gaits_[gait_];
    const double span = static_cast<double>(g.size() - 1);
    c.phase += command_.speed;
    while (c.phase >= span) {
        c.origin = c.origin + yaw_quat(c.yaw).rotate(cycle_.position);
        c.yaw = wrap_angle(c.yaw + yaw_of(cycle_.orientation));
        c.phase -= span;
    }
    *turn = 0.0;
    if (command_.heading) {
        const double max_step = config_.turn_rate / g.fps;
        const double d = std::clamp(wrap_angle(*command_.heading - facing_at(c)), -max_step, max_step);
        if (d != 0.0) {
            Vec3 pivot = RigidPose{c.origin, yaw_quat(c.yaw)}.transform_point(local_frame(c.phase).root.position);
            pivot.z = 0.0;
            c.origin = pivot + yaw_quat(d).rotate(c.origin - pivot);
            c.yaw = wrap_angle(c.yaw + d);
            *turn = d * g.fps;
        }
    }
    return c;
}

std::optional<Frames> CommandScheduler::next(const SchedulerInput&, int tau) {
    check_tau(tau);
    Frames out;
    out.reserve(static_cast<std::size_t>(tau));
    Cursor c = cursor_;
    for (int k = 0; k < tau; ++k) {
        double turn = 0.0;
        c = advance(c, &turn);
        out.push_back(emit(c, turn));
        if (k == 0) cursor_ = c;
    }
    return out;
}

void CommandScheduler::set_command(const Command& command) {
    if (!std::isfinite(command.speed) || command.speed < 0.0 || command.speed > config_.max_speed)
        throw InvalidArgument("command speed outside [0, " + std::to_string(config_.max_speed) + "]");
    if (command.heading && !std::isfinite(*command.heading)) throw InvalidArgument("command heading is not finite");
    std::size_t gait = gait_;
    if (!command.gait.empty() && command.gait != gaits_[gait_].id) {
        const auto it = std::find_if(gaits_.begin(), gaits_.end(),
                                     [&](const MotionClip& g) { return g.id == command.gait; });
        if (it == gaits_.end()) throw InvalidArgument("unknown gait: " + command.gait);
        gait = static_cast<std::size_t>(it - gaits_.begin());
    }
    if (gait != gait_) {
        // restart the new gait under the current root, facing the same way
        const double yaw = facing();
        Vec3 root = RigidPose{cursor_.origin, yaw_quat(cursor_.yaw)}.transform_point(
            local_frame(cursor_.phase).root.position);
        root.z = 0.0;
        gait_ = gait;
        gait_start_ = ground_heading(gaits_[gait_].frames.front().root);
        cycle_ = to_local(gait_start_, ground_heading(gaits_[gait_].frames.back().root));
        cursor_ = Cursor{0.0, yaw, root};
    }
    command_ = command;
    command_.gait = gaits_[gait_].id;
}

// ---------------------------------------------------------------------------
// pose stream

namespace {

double number(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_number()) throw ParseError(std::string("pose packet field '") + key + "' missing");
    const double v = it->get<double>();
    if (!std::isfinite(v)) throw ParseError(std::string("pose packet field '") + key + "' is not finite");
    return v;
}

std::vector<double> numbers(const json& j, const char* key, std::size_t expected) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_array())
        throw ParseError(std::string("pose packet field '") + key + "' missing");
    if (it->size() != expected)
        throw ParseError(std::string("pose packet field '") + key + "' has " + std::to_string(it->size()) +
                         " values, expected " + std::to_string(expected));
    std::vector<double> out;
    out.reserve(expected);
    for (const auto& v : *it) {
        if (!v.is_number()) throw ParseError(std::string("pose packet field '") + key + "' holds a non-number");
        out.push_back(v.get<double>());
        if (!std::isfinite(out.back())) throw ParseError(std::string("pose packet field '") + key + "' not finite");
    }
    return out;
}

Quat unit_quat(const double* v, const char* key) {
    const Quat q{v[0], v[1], v[2], v[3]};
    if (std::abs(q.norm() - 1.0) > 1e-6) throw ParseError(std::string("pose packet field '") + key + "' not unit");
    return q;
}

}  // namespace

json pose_packet_to_json(const PosePacket& p) {
    json j;
    j["seq"] = p.seq;
    j["timestamp_ms"] = p.timestamp_ms;
    j["root_position"] = {p.root_position.x, p.root_position.y, p.root_position.z};
    const Quat& r = p.root_orientation;
    j["root_quat"] = {r.w, r.x, r.y, r.z};
    j["J"] = p.num_joints();
    json quats = json::array();
    for (const auto& q : p.joint_orientations) quats.insert(quats.end(), {q.w, q.x, q.y, q.z});
    j["joint_quats"] = std::move(quats);
    if (!p.joint_positions.empty()) {
        json pos = json::array();
        for (const auto& v : p.joint_positions) pos.insert(pos.end(), {v.x, v.y, v.z});
        j["joint_positions"] = std::move(pos);
    }
    return j;
}

PosePacket pose_packet_from_json(const json& j) {
    if (!j.is_object()) throw ParseError("pose packet is not an object");
    static const std::set<std::string> known{"seq",       "timestamp_ms", "root_position",  "root_quat",
                                             "J",         "joint_quats",  "joint_positions"};
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw ParseError("pose packet has unknown field '" + k + "'");
    PosePacket p;
    const auto seq = j.find("seq");
    if (seq == j.end() || !seq->is_number_unsigned()) throw ParseError("pose packet field 'seq' missing");
    p.seq = seq->get<std::uint64_t>();
    p.timestamp_ms = number(j, "timestamp_ms");
    const auto rp = numbers(j, "root_position", 3);
    p.root_position = {rp[0], rp[1], rp[2]};
    const auto rq = numbers(j, "root_quat", 4);
    p.root_orientation = unit_quat(rq.data(), "root_quat");
    const auto jn = j.find("J");
    if (jn == j.end() || !jn->is_number_unsigned()) throw ParseError("pose packet field 'J' missing");
    const auto joints = jn->get<std::size_t>();
    const auto jq = numbers(j, "joint_quats", 4 * joints);
    for (std::size_t i = 0; i < joints; ++i) p.joint_orientations.push_back(unit_quat(&jq[4 * i], "joint_quats"));
    if (j.contains("joint_positions")) {
        const auto jp = numbers(j, "joint_positions", 3 * joints);
        for (std::size_t i = 0; i < joints; ++i) p.joint_positions.push_back({jp[3 * i], jp[3 * i + 1], jp[3 * i + 2]});
    }
    return p;
}

std::string encode_pose_packet(const PosePacket& packet) { return pose_packet_to_json(packet).dump(); }

PosePacket decode_pose_packet(std::string_view bytes) {
    json j;
    try {
        j = json::parse(bytes);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("pose packet: ") + e.what());
    }
    return pose_packet_from_json(j);
}

PoseBuffer::PoseBuffer(std::size_t capacity, std::size_t joints) : capacity_(capacity), joints_(joints) {
    if (capacity < 2) throw InvalidArgument("pose buffer capacity must be at least 2");
}

IngestResult PoseBuffer::ingest(std::string_view bytes) {
    PosePacket packet;
    try {
        packet = decode_pose_packet(bytes);
    } catch (const ParseError&) {
        std::lock_guard lock(mutex_);
        ++parse_errors_;
        return IngestResult::parse_error;
    }
    return push(std::move(packet));
}

IngestResult PoseBuffer::push(PosePacket packet) {
    std::lock_guard lock(mutex_);
    if (joints_ != 0 && packet.num_joints() != joints_) {
        ++parse_errors_;
        return IngestResult::parse_error;
    }
    if (!samples_.empty() && !(packet.timestamp_ms > samples_.back().timestamp_ms)) {
        ++stale_;
        return IngestResult::stale;
    }
    joints_ = packet.num_joints();
    samples_.push_back(std::move(packet));
    if (samples_.size() > capacity_) samples_.pop_front();
    ++accepted_;
    return IngestResult::appended;
}

std::vector<PosePacket> PoseBuffer::snapshot() const {
    std::lock_guard lock(mutex_);
    return {samples_.begin(), samples_.end()};
}

std::size_t PoseBuffer::size() const {
    std::lock_guard lock(mutex_);
    return samples_.size();
}

std::uint64_t PoseBuffer::accepted() const {
    std::lock_guard lock(mutex_);
    return accepted_;
}

std::uint64_t PoseBuffer::stale_drops() const {
    std::lock_guard lock(mutex_);
    return stale_;
}

std::uint64_t PoseBuffer::parse_errors() const {
    std::lock_guard lock(mutex_);
    return parse_errors_;
}

namespace {

CharacterState pose_state(const PosePacket& p, const CharacterModel* model) {
    CharacterState s(p.num_joints());
    s.root = {p.root_position, p.root_orientation.normalized()};
    for (std::size_t j = 0; j < p.num_joints(); ++j) s.joint_orientations[j] = p.joint_orientations[j].normalized();
    if (!p.joint_positions.empty()) {
        s.joint_positions = p.joint_positions;
    } else {
        if (!model) throw InvalidArgument("pose packet without joint positions and no model for kinematics");
        s.joint_positions = forward_kinematics(*model, state_from_character(*model, s)).joint_positions;
    }
    return s;
}

}  // namespace

std::optional<Frames> stream_next(const std::vector<PosePacket>& samples, int tau, double smoothing,
                                  const CharacterModel* model) {
    check_tau(tau);
    if (!(smoothing > 0.0 && smoothing <= 1.0)) throw InvalidArgument("stream smoothing must be in (0, 1]");
    if (samples.size() < 2) return std::nullopt;
    const std::size_t joints = samples.back().num_joints();
    for (const auto& p : samples)
        if (p.num_joints() != joints) throw InvalidArgument("pose samples disagree on the joint count");

    CharacterState prev = pose_state(samples.front(), model);
    CharacterState smooth(joints);
    for (std::size_t i = 1; i < samples.size(); ++i) {
        CharacterState cur = pose_state(samples[i], model);
        const double dt = (samples[i].timestamp_ms - samples[i - 1].timestamp_ms) / 1000.0;
        if (!(dt > 0.0)) throw InvalidArgument("pose sample timestamps must increase");
        const double a = i == 1 ? 1.0 : smoothing;
        auto mix = [a](Vec3& acc, const Vec3& raw) { acc = raw * a + acc * (1.0 - a); };
        mix(smooth.root_velocity.linear, (cur.root.position - prev.root.position) / dt);
        mix(smooth.root_velocity.angular, angular_rate(prev.root.orientation, cur.root.orientation, dt));
        for (std::size_t j = 0; j < joints; ++j) {
            mix(smooth.joint_velocities[j].linear, (cur.joint_positions[j] - prev.joint_positions[j]) / dt);
            mix(smooth.joint_velocities[j].angular,
                angular_rate(prev.joint_orientations[j], cur.joint_orientations[j], dt));
        }
        prev = std::move(cur);
    }
    prev.root_velocity = smooth.root_velocity;
    prev.joint_velocities = smooth.joint_velocities;
    return Frames(static_cast<std::size_t>(tau), prev);
}

StreamScheduler::StreamScheduler(std::shared_ptr<PoseBuffer> buffer, double smoothing,
                                 std::optional<CharacterModel> model)
    : buffer_(std::move(buffer)), smoothing_(smoothing), model_(std::move(model)) {
    if (!buffer_) throw InvalidArgument("stream scheduler needs a pose buffer");
    if (!(smoothing > 0.0 && smoothing <= 1.0)) throw InvalidArgument("stream smoothing must be in (0, 1]");
}

std::optional<Frames> StreamScheduler::next(const SchedulerInput&, int tau) {
    return stream_next(buffer_->snapshot(), tau, smoothing_, model_ ? &*model_ : nullptr);
}

}  // namespace unicon
