#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "unicon/geom.hpp"

namespace unicon {

/// Redundant character state: root pose, per-joint world positions and
/// parent-relative orientations, plus first-order terms.
///
/// Frame conventions: root pose, root velocity, joint positions and joint
/// linear velocities are world-expressed. Joint orientations and joint angular
/// velocities are relative to the parent body and expressed in the parent
/// frame, so they are already invariant under a change of world frame.
struct CharacterState {
    RigidPose root;
    std::vector<Vec3> joint_positions;
    std::vector<Quat> joint_orientations;
    SpatialVelocity root_velocity;
    std::vector<SpatialVelocity> joint_velocities;

    CharacterState() = default;
    explicit CharacterState(std::size_t joints)
        : joint_positions(joints), joint_orientations(joints), joint_velocities(joints) {}

    std::size_t num_joints() const { return joint_orientations.size(); }
    bool is_finite() const;
    bool operator==(const CharacterState&) const = default;
};

/// World-expressed parts of `state` re-expressed in `frame`.
CharacterState to_local(const RigidPose& frame, const CharacterState& state);
CharacterState from_local(const RigidPose& frame, const CharacterState& state);

struct MotionClip {
    std::string id;
    std::vector<std::string> label_path;  ///< "root", class, subclass, ...
    double fps = 60.0;
    std::vector<CharacterState> frames;
    bool has_velocities = false;
    /// Joint world positions agree with forward kinematics of a known model.
    bool consistent = false;

    std::size_t size() const { return frames.size(); }
    std::size_t num_joints() const { return frames.empty() ? 0 : frames.front().num_joints(); }
    double dt() const { return 1.0 / fps; }
    /// Leaf class name joined with '-' (e.g. "root-walking-forward").
    std::string label() const;

    /// Throws InvalidArgument when the clip violates its invariants.
    void validate() const;
};

enum class ClipFormat { native, bvh };

struct BvhOptions {
    double scale = 1.0;  ///< applied to offsets and root translation
};

/// Joint hierarchy recovered from a BVH file (end sites dropped).
struct BvhSkeleton {
    std::vector<std::string> names;  ///< index 0 is the root
    std::vector<int> parents;        ///< -1 for the root
    std::vector<Vec3> offsets;
};

struct BvhDocument {
    BvhSkeleton skeleton;
    MotionClip clip;
};

inline constexpr std::string_view kClipMagic = "UNICON-CLIP";
inline constexpr int kClipVersion = 1;

MotionClip load_clip(std::string_view bytes, ClipFormat format, const BvhOptions& bvh = {});
MotionClip load_clip_file(const std::filesystem::path& path);
std::string save_clip(const MotionClip& clip);
void save_clip_file(const MotionClip& clip, const std::filesystem::path& path);
BvhDocument parse_bvh(std::string_view text, const BvhOptions& options = {});

/// Central finite differences (one-sided at the ends) at the clip rate.
MotionClip derive_velocities(const MotionClip& clip);

inline constexpr double kMinSpeedRatio = 0.25;
inline constexpr double kMaxSpeedRatio = 4.0;

/// Replays the clip `ratio` times faster at the same fps; velocities are re-derived.
MotionClip resample_speed(const MotionClip& clip, double ratio);

/// Interpolated state at fractional frame index (lerp positions, slerp orientations).
CharacterState interpolate_frame(const MotionClip& clip, double index);

enum class Split { none, train, test };

struct Dataset {
    std::vector<MotionClip> clips;
    std::set<std::string> train_ids;
    std::set<std::string> test_ids;

    const MotionClip* find(std::string_view id) const;
    std::vector<const MotionClip*> split(Split which) const;
    void validate() const;
};

Dataset split_dataset(std::vector<MotionClip> clips, double train_fraction, std::uint64_t seed);

struct SplitStats {
    std::size_t num_motions = 0;
    std::size_t num_frames = 0;
    double avg_length = 0.0;
    bool operator==(const SplitStats&) const = default;
};

struct DatasetStats {
    SplitStats all;
    SplitStats train;
    SplitStats test;
};

SplitStats stats(const std::vector<const MotionClip*>& clips);
DatasetStats stats(const Dataset& dataset);

/// Manifest listing clip files, their label paths and split assignment.
struct ManifestEntry {
    std::string id;
    std::string path;  ///< relative to the manifest directory
    std::vector<std::string> label_path;
    Split split = Split::none;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    std::set<std::string> exclude;
};

Manifest parse_manifest(std::string_view text);
std::string write_manifest(const Manifest& manifest);
/// Loads every non-excluded clip; label paths and split come from the manifest.
Dataset load_dataset(const std::filesystem::path& manifest_path);
/// Manifest describing `dataset` with clips stored as `<id>.clip` next to it.
Manifest manifest_for(const Dataset& dataset);

}  // namespace unicon
