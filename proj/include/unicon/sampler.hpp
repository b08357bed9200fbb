#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "unicon/motion.hpp"
#include "unicon/random.hpp"

namespace unicon {

/// Hierarchy of class labels with clips hanging off the leaf classes.
class LabelTree {
public:
    struct Node {
        std::string name;
        int parent = -1;
        std::vector<int> children;
        std::string clip_id;  ///< set only on clip nodes
        bool is_clip = false;
    };

    LabelTree();

    /// Adds `clip_id` under the class path. The path must start with "root".
    /// Throws InvalidArgument if a clip would sit next to sub-classes, or a
    /// class would be created below a node that already holds clips.
    void add_clip(std::string_view clip_id, const std::vector<std::string>& label_path);

    static LabelTree from_clips(const std::vector<const MotionClip*>& clips);

    const std::vector<Node>& nodes() const { return nodes_; }
    const Node& root() const { return nodes_.front(); }
    std::size_t num_clips() const;

    /// Throws InvalidArgument if any class node is empty or mixes clips and sub-classes.
    void validate() const;

private:
    int child_class(int node, const std::string& name);

    std::vector<Node> nodes_;
};

/// Off-line clip probabilities plus a cumulative table for inverse-CDF draws.
struct SamplingTable {
    std::vector<std::string> clip_ids;
    std::vector<double> probabilities;
    std::vector<double> cumulative;

    std::size_t size() const { return clip_ids.size(); }
    double probability(std::string_view clip_id) const;
};

/// Each clip gets the product of 1/|children| along its root path.
SamplingTable build_probability_table(const LabelTree& tree);
/// Ablation: every clip equally likely regardless of class.
SamplingTable build_uniform_table(const std::vector<std::string>& clip_ids);

std::size_t sample_index(const SamplingTable& table, Rng& rng);
const std::string& sample_clip(const SamplingTable& table, Rng& rng);

}  // namespace unicon
