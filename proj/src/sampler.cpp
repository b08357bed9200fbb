#include "unicon/sampler.hpp"

#include <algorithm>

#include "unicon/error.hpp"

namespace unicon {

LabelTree::LabelTree() { nodes_.push_back(Node{"root", -1, {}, {}, false}); }

int LabelTree::child_class(int node, const std::string& name) {
    for (int c : nodes_[static_cast<std::size_t>(node)].children) {
        const Node& child = nodes_[static_cast<std::size_t>(c)];
        if (!child.is_clip && child.name == name) return c;
    }
    for (int c : nodes_[static_cast<std::size_t>(node)].children) {
        if (nodes_[static_cast<std::size_t>(c)].is_clip)
            throw InvalidArgument("class '" + name + "' would be created under '" + nodes_[static_cast<std::size_t>(node)].name +
                                  "', which already holds clips");
    }
    nodes_.push_back(Node{name, node, {}, {}, false});
    const int id = static_cast<int>(nodes_.size()) - 1;
    nodes_[static_cast<std::size_t>(node)].children.push_back(id);
    return id;
}

void LabelTree::add_clip(std::string_view clip_id, const std::vector<std::string>& label_path) {
    if (label_path.empty() || label_path.front() != "root")
        throw InvalidArgument("label path of '" + std::string(clip_id) + "' must start with \"root\"");
    int node = 0;
    for (std::size_t i = 1; i < label_path.size(); ++i) node = child_class(node, label_path[i]);
    for (int c : nodes_[static_cast<std::size_t>(node)].children) {
        if (!nodes_[static_cast<std::size_t>(c)].is_clip)
            throw InvalidArgument("clip '" + std::string(clip_id) + "' bound to internal class '" +
                                  nodes_[static_cast<std::size_t>(node)].name + "'");
    }
    nodes_.push_back(Node{std::string(clip_id), node, {}, std::string(clip_id), true});
    nodes_[static_cast<std::size_t>(node)].children.push_back(static_cast<int>(nodes_.size()) - 1);
}

LabelTree LabelTree::from_clips(const std::vector<const MotionClip*>& clips) {
    LabelTree tree;
    for (const auto* c : clips) tree.add_clip(c->id, c->label_path);
    tree.validate();
    return tree;
}

std::size_t LabelTree::num_clips() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.is_clip; }));
}

void LabelTree::validate() const {
    for (const auto& n : nodes_) {
        if (n.is_clip) continue;
        if (n.children.empty()) throw InvalidArgument("class '" + n.name + "' has no clips");
        const bool any_clip = std::any_of(n.children.begin(), n.children.end(),
                                          [&](int c) { return nodes_[static_cast<std::size_t>(c)].is_clip; });
        const bool any_class = std::any_of(n.children.begin(), n.children.end(),
                                           [&](int c) { return !nodes_[static_cast<std::size_t>(c)].is_clip; });
        if (any_clip && any_class) throw InvalidArgument("class '" + n.name + "' mixes clips and sub-classes");
    }
}

double SamplingTable::probability(std::string_view clip_id) const {
    for (std::size_t i = 0; i < clip_ids.size(); ++i)
        if (clip_ids[i] == clip_id) return probabilities[i];
    return 0.0;
}

namespace {
void finish(SamplingTable& table) {
    table.cumulative.resize(table.probabilities.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < table.probabilities.size(); ++i) {
        acc += table.probabilities[i];
        table.cumulative[i] = acc;
    }
    if (!table.cumulative.empty()) table.cumulative.back() = 1.0;
}
}  // namespace

SamplingTable build_probability_table(const LabelTree& tree) {
    tree.validate();
    SamplingTable table;
    const auto& nodes = tree.nodes();
    // depth-first, children in insertion order
    std::vector<std::pair<int, double>> stack{{0, 1.0}};
    while (!stack.empty()) {
        auto [id, p] = stack.back();
        stack.pop_back();
        const auto& node = nodes[static_cast<std::size_t>(id)];
        if (node.is_clip) {
            table.clip_ids.push_back(node.clip_id);
            table.probabilities.push_back(p);
            continue;
        }
        const double share = p / static_cast<double>(node.children.size());
        for (auto it = node.children.rbegin(); it != node.children.rend(); ++it) stack.emplace_back(*it, share);
    }
    finish(table);
    return table;
}

SamplingTable build_uniform_table(const std::vector<std::string>& clip_ids) {
    if (clip_ids.empty()) throw InvalidArgument("uniform table needs at least one clip");
    SamplingTable table;
    table.clip_ids = clip_ids;
    table.probabilities.assign(clip_ids.size(), 1.0 / static_cast<double>(clip_ids.size()));
    finish(table);
    return table;
}

std::size_t sample_index(const SamplingTable& table, Rng& rng) {
    if (table.clip_ids.empty()) throw InvalidArgument("cannot sample from an empty table");
    const double u = uniform01(rng);
    const auto it = std::upper_bound(table.cumulative.begin(), table.cumulative.end(), u);
    const auto idx = static_cast<std::size_t>(it - table.cumulative.begin());
    return std::min(idx, table.clip_ids.size() - 1);
}

const std::string& sample_clip(const SamplingTable& table, Rng& rng) { return table.clip_ids[sample_index(table, rng)]; }

}  // namespace unicon
