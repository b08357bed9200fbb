#include "unicon/motion.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "unicon/error.hpp"

namespace unicon {

using nlohmann::json;

bool CharacterState::is_finite() const {
    if (!root.position.is_finite() || !root.orientation.is_finite()) return false;
    if (!root_velocity.linear.is_finite() || !root_velocity.angular.is_finite()) return false;
    for (const auto& p : joint_positions)
        if (!p.is_finite()) return false;
    for (const auto& q : joint_orientations)
        if (!q.is_finite()) return false;
    for (const auto& v : joint_velocities)
        if (!v.linear.is_finite() || !v.angular.is_finite()) return false;
    return true;
}

CharacterState to_local(const RigidPose& frame, const CharacterState& state) {
    CharacterState out = state;
    out.root = unicon::to_local(frame, state.root);
    out.root_velocity = unicon::to_local(frame, state.root_velocity);
    for (std::size_t j = 0; j < state.num_joints(); ++j) {
        out.joint_positions[j] = to_local_point(frame, state.joint_positions[j]);
        out.joint_velocities[j].linear = to_local_vector(frame, state.joint_velocities[j].linear);
    }
    return out;
}

CharacterState from_local(const RigidPose& frame, const CharacterState& state) {
    CharacterState out = state;
    out.root = unicon::from_local(frame, state.root);
    out.root_velocity = unicon::from_local(frame, state.root_velocity);
    for (std::size_t j = 0; j < state.num_joints(); ++j) {
        out.joint_positions[j] = from_local_point(frame, state.joint_positions[j]);
        out.joint_velocities[j].linear = from_local_vector(frame, state.joint_velocities[j].linear);
    }
    return out;
}

std::string MotionClip::label() const {
    std::string out;
    for (const auto& part : label_path) {
        if (!out.empty()) out += '-';
        out += part;
    }
    return out;
}

void MotionClip::validate() const {
    if (frames.size() < 2) throw InvalidArgument("clip '" + id + "' needs at least 2 frames");
    if (!(fps > 0.0) || !std::isfinite(fps)) throw InvalidArgument("clip '" + id + "' has non-positive fps");
    if (label_path.empty() || label_path.front() != "root")
        throw InvalidArgument("clip '" + id + "' label path must start with \"root\"");
    const std::size_t joints = frames.front().num_joints();
    for (const auto& f : frames) {
        if (f.num_joints() != joints || f.joint_positions.size() != joints || f.joint_velocities.size() != joints)
            throw InvalidArgument("clip '" + id + "' has inconsistent joint counts");
    }
}

// ---------------------------------------------------------------------------
// native format

namespace {

json encode_frame(const CharacterState& s, bool with_velocities) {
    json root = json::array({s.root.position.x, s.root.position.y, s.root.position.z, s.root.orientation.w,
                             s.root.orientation.x, s.root.orientation.y, s.root.orientation.z});
    json jp = json::array();
    json jq = json::array();
    for (std::size_t j = 0; j < s.num_joints(); ++j) {
        const auto& p = s.joint_positions[j];
        const auto& q = s.joint_orientations[j];
        jp.insert(jp.end(), {p.x, p.y, p.z});
        jq.insert(jq.end(), {q.w, q.x, q.y, q.z});
    }
    json rec = {{"root", root}, {"jp", jp}, {"jq", jq}};
    if (with_velocities) {
        const auto& rv = s.root_velocity;
        rec["rv"] = {rv.linear.x, rv.linear.y, rv.linear.z, rv.angular.x, rv.angular.y, rv.angular.z};
        json jv = json::array();
        for (const auto& v : s.joint_velocities)
            jv.insert(jv.end(), {v.linear.x, v.linear.y, v.linear.z, v.angular.x, v.angular.y, v.angular.z});
        rec["jv"] = jv;
    }
    return rec;
}

std::vector<double> numbers(const json& rec, const char* key, std::size_t expected, std::size_t line) {
    auto it = rec.find(key);
    if (it == rec.end() || !it->is_array()) throw ParseError(std::string("missing array '") + key + "'", line);
    if (it->size() != expected)
        throw ParseError(std::string("channel-count mismatch in '") + key + "': expected " + std::to_string(expected) +
                             ", got " + std::to_string(it->size()),
                         line);
    std::vector<double> out;
    out.reserve(expected);
    for (const auto& v : *it) {
        if (!v.is_number()) throw ParseError(std::string("non-numeric value in '") + key + "'", line);
        out.push_back(v.get<double>());
    }
    return out;
}

CharacterState decode_frame(const json& rec, std::size_t joints, bool with_velocities, std::size_t line) {
    CharacterState s(joints);
    const auto root = numbers(rec, "root", 7, line);
    s.root.position = {root[0], root[1], root[2]};
    s.root.orientation = {root[3], root[4], root[5], root[6]};
    const auto jp = numbers(rec, "jp", 3 * joints, line);
    const auto jq = numbers(rec, "jq", 4 * joints, line);
    for (std::size_t j = 0; j < joints; ++j) {
        s.joint_positions[j] = {jp[3 * j], jp[3 * j + 1], jp[3 * j + 2]};
        s.joint_orientations[j] = {jq[4 * j], jq[4 * j + 1], jq[4 * j + 2], jq[4 * j + 3]};
    }
    if (with_velocities) {
        const auto rv = numbers(rec, "rv", 6, line);
        s.root_velocity = {{rv[0], rv[1], rv[2]}, {rv[3], rv[4], rv[5]}};
        const auto jv = numbers(rec, "jv", 6 * joints, line);
        for (std::size_t j = 0; j < joints; ++j)
            s.joint_velocities[j] = {{jv[6 * j], jv[6 * j + 1], jv[6 * j + 2]},
                                     {jv[6 * j + 3], jv[6 * j + 4], jv[6 * j + 5]}};
    }
    return s;
}

MotionClip load_native(std::string_view bytes) {
    std::istringstream in{std::string(bytes)};
    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) return true;
        }
        return false;
    };
    auto parse = [&](const std::string& text) {
        try {
            return json::parse(text);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("malformed record: ") + e.what(), line_no);
        }
    };

    if (!next_line()) throw ParseError("empty clip file", 1);
    const json header = parse(line);
    if (!header.is_object() || header.value("magic", "") != kClipMagic)
        throw ParseError("malformed header: bad magic", line_no);
    if (header.value("version", -1) != kClipVersion)
        throw ParseError("unsupported clip version " + header.value("version", json(-1)).dump(), line_no);
    MotionClip clip;
    std::size_t joints = 0;
    std::size_t frame_count = 0;
    try {
        clip.id = header.at("id").get<std::string>();
        clip.label_path = header.at("label_path").get<std::vector<std::string>>();
        clip.fps = header.at("fps").get<double>();
        joints = header.at("joints").get<std::size_t>();
        frame_count = header.at("frames").get<std::size_t>();
        clip.has_velocities = header.value("velocities", false);
        clip.consistent = header.value("consistent", false);
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed header: ") + e.what(), line_no);
    }
    clip.frames.reserve(frame_count);
    while (next_line()) {
        if (clip.frames.size() == frame_count)
            throw ParseError("frame-count mismatch: more than " + std::to_string(frame_count) + " frames", line_no);
        const json rec = parse(line);
        clip.frames.push_back(decode_frame(rec, joints, clip.has_velocities, line_no));
    }
    if (clip.frames.size() != frame_count)
        throw ParseError("frame-count mismatch: header declares " + std::to_string(frame_count) + ", found " +
                             std::to_string(clip.frames.size()),
                         line_no);
    return clip;
}

// ---------------------------------------------------------------------------
// BVH subset

struct Token {
    std::string text;
    std::size_t line;
};

class Tokenizer {
public:
    explicit Tokenizer(std::string_view text) {
        std::size_t line = 1;
        std::size_t i = 0;
        while (i < text.size()) {
            const char c = text[i];
            if (c == '\n') {
                ++line;
                ++i;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++i;
            } else {
                std::size_t j = i;
                while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
                tokens_.push_back({std::string(text.substr(i, j - i)), line});
                i = j;
            }
        }
    }

    bool done() const { return pos_ >= tokens_.size(); }
    const Token& peek() const {
        if (done()) throw ParseError("malformed header: unexpected end of file", last_line());
        return tokens_[pos_];
    }
    Token next() {
        const Token& t = peek();
        ++pos_;
        return t;
    }
    void expect(std::string_view word) {
        const Token t = next();
        if (t.text != word) throw ParseError("malformed header: expected '" + std::string(word) + "', got '" + t.text + "'", t.line);
    }
    double number() {
        const Token t = next();
        try {
            std::size_t used = 0;
            const double v = std::stod(t.text, &used);
            if (used != t.text.size()) throw std::invalid_argument(t.text);
            return v;
        } catch (const std::exception&) {
            throw ParseError("expected a number, got '" + t.text + "'", t.line);
        }
    }
    std::size_t last_line() const { return tokens_.empty() ? 1 : tokens_.back().line; }
    std::size_t line() const { return done() ? last_line() : tokens_[pos_].line; }

private:
    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
};

enum class Channel { xpos, ypos, zpos, xrot, yrot, zrot };

struct BvhJoint {
    std::string name;
    int parent = -1;
    Vec3 offset;
    std::vector<Channel> channels;
};

Channel parse_channel(const Token& t, bool is_root) {
    static const std::map<std::string, Channel> names = {
        {"Xposition", Channel::xpos}, {"Yposition", Channel::ypos}, {"Zposition", Channel::zpos},
        {"Xrotation", Channel::xrot}, {"Yrotation", Channel::yrot}, {"Zrotation", Channel::zrot}};
    auto it = names.find(t.text);
    if (it == names.end()) throw ParseError("unsupported channel '" + t.text + "'", t.line);
    const bool positional = it->second == Channel::xpos || it->second == Channel::ypos || it->second == Channel::zpos;
    if (positional && !is_root) throw ParseError("position channels are only supported on the root", t.line);
    return it->second;
}

void parse_joint_body(Tokenizer& tok, std::vector<BvhJoint>& joints, int index) {
    tok.expect("{");
    tok.expect("OFFSET");
    joints[index].offset.x = tok.number();
    joints[index].offset.y = tok.number();
    joints[index].offset.z = tok.number();
    if (tok.peek().text == "CHANNELS") {
        tok.next();
        const Token count_tok = tok.peek();
        const double count = tok.number();
        if (count < 0 || count > 6 || count != std::floor(count))
            throw ParseError("malformed header: bad channel count", count_tok.line);
        for (int c = 0; c < static_cast<int>(count); ++c)
            joints[index].channels.push_back(parse_channel(tok.next(), index == 0));
    }
    while (true) {
        const Token t = tok.next();
        if (t.text == "}") return;
        if (t.text == "JOINT") {
            BvhJoint child;
            child.name = tok.next().text;
            child.parent = index;
            joints.push_back(child);
            parse_joint_body(tok, joints, static_cast<int>(joints.size()) - 1);
        } else if (t.text == "End") {
            tok.expect("Site");
            tok.expect("{");
            tok.expect("OFFSET");
            tok.number();
            tok.number();
            tok.number();
            tok.expect("}");
        } else {
            throw ParseError("malformed header: unexpected '" + t.text + "'", t.line);
        }
    }
}

Quat axis_rotation(Channel c, double degrees) {
    const double rad = deg_to_rad(degrees);
    switch (c) {
        case Channel::xrot: return Quat::from_axis_angle(Vec3::unit_x(), rad);
        case Channel::yrot: return Quat::from_axis_angle(Vec3::unit_y(), rad);
        case Channel::zrot: return Quat::from_axis_angle(Vec3::unit_z(), rad);
        default: return Quat::identity();
    }
}

}  // namespace

BvhDocument parse_bvh(std::string_view text, const BvhOptions& options) {
    Tokenizer tok(text);
    tok.expect("HIERARCHY");
    tok.expect("ROOT");
    std::vector<BvhJoint> joints(1);
    joints[0].name = tok.next().text;
    parse_joint_body(tok, joints, 0);

    tok.expect("MOTION");
    tok.expect("Frames:");
    const Token frames_tok = tok.peek();
    const double frames_d = tok.number();
    if (frames_d < 0 || frames_d != std::floor(frames_d)) throw ParseError("malformed header: bad frame count", frames_tok.line);
    const auto frame_count = static_cast<std::size_t>(frames_d);
    tok.expect("Frame");
    tok.expect("Time:");
    const Token time_tok = tok.peek();
    const double frame_time = tok.number();
    if (!(frame_time > 0.0)) throw ParseError("malformed header: frame time must be positive", time_tok.line);

    std::size_t channels_per_frame = 0;
    for (const auto& j : joints) channels_per_frame += j.channels.size();

    // Group remaining numeric tokens by source line: one frame per line.
    std::vector<std::vector<double>> rows;
    std::size_t current_line = 0;
    while (!tok.done()) {
        const std::size_t line = tok.line();
        if (rows.empty() || line != current_line) {
            if (!rows.empty() && rows.back().size() != channels_per_frame)
                throw ParseError("channel-count mismatch: expected " + std::to_string(channels_per_frame) +
                                     " values, got " + std::to_string(rows.back().size()),
                                 current_line);
            rows.emplace_back();
            current_line = line;
        }
        rows.back().push_back(tok.number());
    }
    if (!rows.empty() && rows.back().size() != channels_per_frame)
        throw ParseError("channel-count mismatch: expected " + std::to_string(channels_per_frame) + " values, got " +
                             std::to_string(rows.back().size()),
                         current_line);
    if (rows.size() != frame_count)
        throw ParseError("frame-count mismatch: header declares " + std::to_string(frame_count) + ", found " +
                             std::to_string(rows.size()),
                         tok.last_line());

    BvhDocument doc;
    for (const auto& j : joints) {
        doc.skeleton.names.push_back(j.name);
        doc.skeleton.parents.push_back(j.parent);
        doc.skeleton.offsets.push_back(j.offset * options.scale);
    }
    MotionClip& clip = doc.clip;
    clip.id = joints[0].name;
    clip.label_path = {"root"};
    clip.fps = 1.0 / frame_time;
    const std::size_t num_joints = joints.size() - 1;
    std::vector<RigidPose> world(joints.size());
    for (const auto& row : rows) {
        CharacterState s(num_joints);
        std::size_t k = 0;
        for (std::size_t b = 0; b < joints.size(); ++b) {
            Vec3 translation = joints[b].offset * options.scale;
            Quat rot = Quat::identity();
            for (Channel c : joints[b].channels) {
                const double v = row[k++];
                switch (c) {
                    case Channel::xpos: translation.x = v * options.scale; break;
                    case Channel::ypos: translation.y = v * options.scale; break;
                    case Channel::zpos: translation.z = v * options.scale; break;
                    default: rot = quat_mul(rot, axis_rotation(c, v)); break;
                }
            }
            if (b == 0) {
                world[0] = {translation, rot};
                s.root = world[0];
            } else {
                const RigidPose& parent = world[static_cast<std::size_t>(joints[b].parent)];
                world[b] = parent * RigidPose{translation, rot};
                s.joint_positions[b - 1] = world[b].position;
                s.joint_orientations[b - 1] = rot;
            }
        }
        clip.frames.push_back(std::move(s));
    }
    return doc;
}

MotionClip load_clip(std::string_view bytes, ClipFormat format, const BvhOptions& bvh) {
    if (format == ClipFormat::bvh) return parse_bvh(bytes, bvh).clip;
    return load_native(bytes);
}

namespace {
std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}
}  // namespace

MotionClip load_clip_file(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    const ClipFormat format = (ext == ".bvh" || ext == ".BVH") ? ClipFormat::bvh : ClipFormat::native;
    MotionClip clip = load_clip(read_file(path), format);
    if (format == ClipFormat::bvh) clip.id = path.stem().string();
    return clip;
}

std::string save_clip(const MotionClip& clip) {
    json header = {{"magic", kClipMagic},         {"version", kClipVersion},
                   {"id", clip.id},               {"label_path", clip.label_path},
                   {"joints", clip.num_joints()}, {"fps", clip.fps},
                   {"frames", clip.size()},       {"velocities", clip.has_velocities},
                   {"consistent", clip.consistent}};
    std::string out = header.dump();
    out += '\n';
    for (const auto& f : clip.frames) {
        out += encode_frame(f, clip.has_velocities).dump();
        out += '\n';
    }
    return out;
}

void save_clip_file(const MotionClip& clip, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << save_clip(clip);
}

// ---------------------------------------------------------------------------
// velocities and resampling

MotionClip derive_velocities(const MotionClip& clip) {
    clip.validate();
    MotionClip out = clip;
    const std::size_t n = clip.size();
    const std::size_t joints = clip.num_joints();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i == 0 ? 0 : i - 1;
        const std::size_t hi = i + 1 == n ? n - 1 : i + 1;
        const double dt = static_cast<double>(hi - lo) / clip.fps;
        const CharacterState& a = clip.frames[lo];
        const CharacterState& b = clip.frames[hi];
        CharacterState& s = out.frames[i];
        s.root_velocity.linear = (b.root.position - a.root.position) / dt;
        s.root_velocity.angular = angular_rate(a.root.orientation, b.root.orientation, dt);
        s.joint_velocities.assign(joints, SpatialVelocity{});
        for (std::size_t j = 0; j < joints; ++j) {
            s.joint_velocities[j].linear = (b.joint_positions[j] - a.joint_positions[j]) / dt;
            s.joint_velocities[j].angular = angular_rate(a.joint_orientations[j], b.joint_orientations[j], dt);
        }
    }
    out.has_velocities = true;
    return out;
}

CharacterState interpolate_frame(const MotionClip& clip, double index) {
    const double max_index = static_cast<double>(clip.size() - 1);
    index = std::clamp(index, 0.0, max_index);
    const auto lo = static_cast<std::size_t>(std::floor(index));
    const double t = index - static_cast<double>(lo);
    if (t == 0.0 || lo + 1 >= clip.size()) return clip.frames[lo];
    const CharacterState& a = clip.frames[lo];
    const CharacterState& b = clip.frames[lo + 1];
    CharacterState s(a.num_joints());
    s.root.position = lerp(a.root.position, b.root.position, t);
    s.root.orientation = quat_slerp(a.root.orientation, b.root.orientation, t);
    s.root_velocity = {lerp(a.root_velocity.linear, b.root_velocity.linear, t),
                       lerp(a.root_velocity.angular, b.root_velocity.angular, t)};
    for (std::size_t j = 0; j < a.num_joints(); ++j) {
        s.joint_positions[j] = lerp(a.joint_positions[j], b.joint_positions[j], t);
        s.joint_orientations[j] = quat_slerp(a.joint_orientations[j], b.joint_orientations[j], t);
        s.joint_velocities[j] = {lerp(a.joint_velocities[j].linear, b.joint_velocities[j].linear, t),
                                 lerp(a.joint_velocities[j].angular, b.joint_velocities[j].angular, t)};
    }
    return s;
}

MotionClip resample_speed(const MotionClip& clip, double ratio) {
    if (!(ratio >= kMinSpeedRatio && ratio <= kMaxSpeedRatio))
        throw InvalidArgument("speed ratio " + std::to_string(ratio) + " outside [0.25, 4]");
    clip.validate();
    MotionClip out = clip;
    const double span = static_cast<double>(clip.size() - 1);
    const auto count = static_cast<std::size_t>(std::llround(span / ratio)) + 1;
    out.frames.clear();
    out.frames.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.frames.push_back(interpolate_frame(clip, static_cast<double>(i) * ratio));
    if (out.frames.size() < 2) out.frames.push_back(clip.frames.back());
    if (ratio != 1.0) out.consistent = false;
    return derive_velocities(out);
}

// ---------------------------------------------------------------------------
// datasets

const MotionClip* Dataset::find(std::string_view id) const {
    for (const auto& c : clips)
        if (c.id == id) return &c;
    return nullptr;
}

std::vector<const MotionClip*> Dataset::split(Split which) const {
    std::vector<const MotionClip*> out;
    for (const auto& c : clips) {
        const bool train = train_ids.count(c.id) > 0;
        const bool test = test_ids.count(c.id) > 0;
        if ((which == Split::train && train) || (which == Split::test && test) ||
            (which == Split::none && !train && !test))
            out.push_back(&c);
    }
    return out;
}

void Dataset::validate() const {
    std::set<std::string> ids;
    for (const auto& c : clips) {
        if (!ids.insert(c.id).second) throw InvalidArgument("duplicate clip id '" + c.id + "'");
    }
    for (const auto& id : train_ids) {
        if (!ids.count(id)) throw InvalidArgument("train split names unknown clip '" + id + "'");
        if (test_ids.count(id)) throw InvalidArgument("clip '" + id + "' is in both splits");
    }
    for (const auto& id : test_ids)
        if (!ids.count(id)) throw InvalidArgument("test split names unknown clip '" + id + "'");
}

Dataset split_dataset(std::vector<MotionClip> clips, double train_fraction, std::uint64_t seed) {
    if (clips.empty()) throw InvalidArgument("cannot split an empty clip list");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidArgument("train fraction must lie in (0, 1)");

    std::map<std::string, std::vector<std::size_t>> classes;
    std::size_t total_frames = 0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        classes[clips[i].label()].push_back(i);
        total_frames += clips[i].size();
    }
    std::vector<std::pair<std::string, std::vector<std::size_t>>> order(classes.begin(), classes.end());
    // least frequent first; the map already orders equal counts by name
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.second.size() < b.second.size(); });

    std::mt19937_64 rng(seed);
    auto shuffle = [&rng](std::vector<std::size_t>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
    };

    Dataset ds;
    const double target_train_frames = train_fraction * static_cast<double>(total_frames);
    double train_frames = 0.0;
    for (std::size_t c = 0; c < order.size(); ++c) {
        auto& members = order[c].second;
        shuffle(members);
        const bool last = c + 1 == order.size();
        if (members.size() == 1) {
            ds.test_ids.insert(clips[members[0]].id);
            continue;
        }
        if (!last) {
            auto take = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
            take = std::min(take, members.size() - 1);
            for (std::size_t k = 0; k < members.size(); ++k) {
                const MotionClip& clip = clips[members[k]];
                if (k < take) {
                    ds.train_ids.insert(clip.id);
                    train_frames += static_cast<double>(clip.size());
                } else {
                    ds.test_ids.insert(clip.id);
                }
            }
            continue;
        }
        // the largest class fills the remaining frame quota
        for (std::size_t idx : members) {
            const MotionClip& clip = clips[idx];
            const double with = train_frames + static_cast<double>(clip.size());
            if (std::abs(with - target_train_frames) < std::abs(train_frames - target_train_frames)) {
                ds.train_ids.insert(clip.id);
                train_frames = with;
            } else {
                ds.test_ids.insert(clip.id);
            }
        }
    }
    ds.clips = std::move(clips);
    ds.validate();
    return ds;
}

SplitStats stats(const std::vector<const MotionClip*>& clips) {
    SplitStats s;
    s.num_motions = clips.size();
    for (const auto* c : clips) s.num_frames += c->size();
    s.avg_length = s.num_motions ? static_cast<double>(s.num_frames) / static_cast<double>(s.num_motions) : 0.0;
    return s;
}

DatasetStats stats(const Dataset& dataset) {
    std::vector<const MotionClip*> all;
    for (const auto& c : dataset.clips) all.push_back(&c);
    return {stats(all), stats(dataset.split(Split::train)), stats(dataset.split(Split::test))};
}

// ---------------------------------------------------------------------------
// manifest

namespace {
const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::test: return "test";
        default: return "none";
    }
}
Split split_from(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    if (s == "none" || s.empty()) return Split::none;
    throw ParseError("unknown split '" + s + "'");
}
}  // namespace

Manifest parse_manifest(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("manifest: ") + e.what());
    }
    Manifest m;
    try {
        if (doc.at("version").get<int>() != 1) throw ParseError("manifest: unsupported version");
        for (const auto& e : doc.at("clips")) {
            ManifestEntry entry;
            entry.id = e.at("id").get<std::string>();
            entry.path = e.at("path").get<std::string>();
            entry.label_path = e.at("label_path").get<std::vector<std::string>>();
            entry.split = split_from(e.value("split", std::string("none")));
            m.entries.push_back(std::move(entry));
        }
        if (doc.contains("exclude")) {
            for (const auto& id : doc.at("exclude")) m.exclude.insert(id.get<std::string>());
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest: ") + e.what());
    }
    return m;
}

std::string write_manifest(const Manifest& manifest) {
    json clips = json::array();
    for (const auto& e : manifest.entries)
        clips.push_back({{"id", e.id}, {"path", e.path}, {"label_path", e.label_path}, {"split", split_name(e.split)}});
    json doc = {{"version", 1}, {"clips", clips}, {"exclude", manifest.exclude}};
    return doc.dump(2) + "\n";
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    const Manifest m = parse_manifest(read_file(manifest_path));
    const auto dir = manifest_path.parent_path();
    Dataset ds;
    for (const auto& e : m.entries) {
        if (m.exclude.count(e.id)) continue;
        MotionClip clip = load_clip_file(dir / e.path);
        clip.id = e.id;
        clip.label_path = e.label_path;
        if (!clip.has_velocities) clip = derive_velocities(clip);
        clip.validate();
        if (e.split == Split::train) ds.train_ids.insert(e.id);
        if (e.split == Split::test) ds.test_ids.insert(e.id);
        ds.clips.push_back(std::move(clip));
    }
    ds.validate();
    return ds;
}

Manifest manifest_for(const Dataset& dataset) {
    Manifest m;
    for (const auto& c : dataset.clips) {
        Split s = Split::none;
        if (dataset.train_ids.count(c.id)) s = Split::train;
        if (dataset.test_ids.count(c.id)) s = Split::test;
        m.entries.push_back({c.id, c.id + ".clip", c.label_path, s});
    }
    return m;
}

}  // namespace unicon
