#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace treedual {

using NodeId = int;
inline constexpr NodeId kNoNode = -1;

struct TreeNode {
    int time_index = 0;
    NodeId parent = kNoNode;
    double cond_prob = 1.0; // probability of reaching this node from its parent
    std::vector<NodeId> children;
};

/// Finite filtered probability space: the nodes at a given time index are the
/// atoms of the sigma-algebra at that time. Children lists, path
/// probabilities and the terminal-node list are derived at construction.
class EventTree {
public:
    EventTree() = default;

    /// `nodes` carry (time_index, parent, cond_prob); children are derived.
    /// Throws on structurally broken input (bad parent ids, no unique root);
    /// numeric invariants are checked by validate().
    EventTree(std::vector<TreeNode> nodes, std::vector<double> time_grid)
        : nodes_(std::move(nodes)), time_grid_(std::move(time_grid)) {
        const int n = static_cast<int>(nodes_.size());
        if (n == 0) throw std::invalid_argument("EventTree: empty node set");
        if (time_grid_.size() < 2) throw std::invalid_argument("EventTree: need at least two time points");
        root_ = kNoNode;
        for (NodeId i = 0; i < n; ++i) {
            auto& nd = nodes_[i];
            nd.children.clear();
            if (nd.parent == kNoNode) {
                if (root_ != kNoNode) throw std::invalid_argument("EventTree: multiple roots");
                root_ = i;
            } else if (nd.parent < 0 || nd.parent >= n) {
                throw std::invalid_argument("EventTree: node " + std::to_string(i) + " has invalid parent");
            }
        }
        if (root_ == kNoNode) throw std::invalid_argument("EventTree: no root node");
        for (NodeId i = 0; i < n; ++i)
            if (nodes_[i].parent != kNoNode) nodes_[nodes_[i].parent].children.push_back(i);

        path_prob_.assign(n, 0.0);
        // parents may appear after children in the input; walk from the root
        std::vector<NodeId> stack{root_};
        path_prob_[root_] = nodes_[root_].cond_prob = 1.0;
        int visited = 0;
        while (!stack.empty()) {
            NodeId u = stack.back();
            stack.pop_back();
            ++visited;
            for (NodeId c : nodes_[u].children) {
                path_prob_[c] = path_prob_[u] * nodes_[c].cond_prob;
                stack.push_back(c);
            }
        }
        if (visited != n) throw std::invalid_argument("EventTree: nodes unreachable from root (cycle or orphan)");

        for (NodeId i = 0; i < n; ++i)
            if (nodes_[i].children.empty()) terminals_.push_back(i);
    }

    std::size_t size() const { return nodes_.size(); }
    int horizon() const { return static_cast<int>(time_grid_.size()) - 1; }
    NodeId root() const { return root_; }
    const TreeNode& node(NodeId i) const { return nodes_[i]; }
    const std::vector<double>& time_grid() const { return time_grid_; }
    double time_of(NodeId i) const { return time_grid_[nodes_[i].time_index]; }
    int time_index(NodeId i) const { return nodes_[i].time_index; }
    bool is_terminal(NodeId i) const { return nodes_[i].children.empty(); }
    const std::vector<NodeId>& terminals() const { return terminals_; }

    /// P(the path through this node), strictly positive on valid trees.
    double path_prob(NodeId i) const { return path_prob_[i]; }

    /// Index of `terminal` within terminals(); -1 if not terminal.
    int terminal_ordinal(NodeId terminal) const {
        for (std::size_t k = 0; k < terminals_.size(); ++k)
            if (terminals_[k] == terminal) return static_cast<int>(k);
        return -1;
    }

    /// Nodes listed root-first (every parent before its children).
    std::vector<NodeId> top_down() const {
        std::vector<NodeId> order;
        order.reserve(nodes_.size());
        std::vector<NodeId> stack{root_};
        while (!stack.empty()) {
            NodeId u = stack.back();
            stack.pop_back();
            order.push_back(u);
            for (auto it = nodes_[u].children.rbegin(); it != nodes_[u].children.rend(); ++it)
                stack.push_back(*it);
        }
        return order;
    }

    /// Path from the root down to `target`, inclusive.
    std::vector<NodeId> path_to(NodeId target) const {
        std::vector<NodeId> path;
        for (NodeId u = target; u != kNoNode; u = nodes_[u].parent) path.push_back(u);
        std::reverse(path.begin(), path.end());
        return path;
    }

    /// Terminal descendants of `n` as ordinals into terminals().
    std::vector<int> terminal_ordinals_below(NodeId n) const {
        std::vector<int> out;
        std::vector<NodeId> stack{n};
        while (!stack.empty()) {
            NodeId u = stack.back();
            stack.pop_back();
            if (is_terminal(u)) out.push_back(terminal_ordinal(u));
            for (NodeId c : nodes_[u].children) stack.push_back(c);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    /// Structural/numerical violations, empty when the tree is a valid
    /// filtered space under a full-support reference measure.
    std::vector<std::string> validate() const {
        std::vector<std::string> bad;
        const int last = horizon();
        for (std::size_t k = 0; k + 1 < time_grid_.size(); ++k)
            if (time_grid_[k + 1] <= time_grid_[k]) {
                bad.push_back("time grid not strictly increasing");
                break;
            }
        if (nodes_[root_].time_index != 0) bad.push_back("root node has time_index != 0");
        for (NodeId i = 0; i < NodeId(nodes_.size()); ++i) {
            const auto& nd = nodes_[i];
            if (nd.parent != kNoNode && nodes_[nd.parent].time_index + 1 != nd.time_index)
                bad.push_back("time-index gap at node " + std::to_string(i));
            if (nd.children.empty()) {
                if (nd.time_index != last)
                    bad.push_back("terminal node " + std::to_string(i) + " not at final time");
            } else {
                double s = 0.0;
                bool pos = true;
                for (NodeId c : nd.children) {
                    s += nodes_[c].cond_prob;
                    if (nodes_[c].cond_prob <= 0.0) pos = false;
                }
                if (!pos) bad.push_back("nonpositive branch probability under node " + std::to_string(i));
                if (std::fabs(s - 1.0) > 1e-12 * std::max<double>(1, nd.children.size()) + 1e-12)
                    bad.push_back("probabilities sum != 1 under node " + std::to_string(i));
            }
        }
        double total = 0.0;
        for (NodeId t : terminals_) total += path_prob_[t];
        if (!terminals_.empty() && std::fabs(total - 1.0) > 1e-10)
            bad.push_back("terminal path probabilities do not sum to 1");
        return bad;
    }

private:
    std::vector<TreeNode> nodes_;
    std::vector<double> time_grid_;
    std::vector<NodeId> terminals_;
    std::vector<double> path_prob_;
    NodeId root_ = kNoNode;
};

} // namespace treedual
