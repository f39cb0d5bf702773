#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "pm/errors.hpp"
#include "pm/hash.hpp"
#include "pm/serialize.hpp"
#include "pm/task.hpp"

namespace pm::mcts {

using NodeType = task::NodeType;
using task::NodeAssignment;

enum class NodeStatus : std::uint8_t { Unvisited = 0, Evaluated = 1, Terminal = 2 };

inline const char* to_string(NodeStatus s) {
    switch (s) {
        case NodeStatus::Unvisited: return "Unvisited";
        case NodeStatus::Evaluated: return "Evaluated";
        case NodeStatus::Terminal: return "Terminal";
    }
    return "?";
}

struct UctParams {
    double C = 1.414;
    std::uint64_t seed = 0;
};

struct TreeNode {
    std::uint64_t id = 0;
    std::int64_t parent = -1;        // -1 marks the root
    std::vector<std::uint64_t> children;
    double Q = 0.0;
    std::uint64_t N = 0;
    NodeType node_type = NodeType::Draft;
    NodeAssignment assignment;
    std::string output_summary;
    NodeStatus status = NodeStatus::Unvisited;
};

// Mean reward plus exploration bonus; unvisited nodes score infinite so each
// child is tried once before any child is revisited.
inline double uct_score(double Q, std::uint64_t N, std::uint64_t N_parent, double C) {
    if (N == 0) return std::numeric_limits<double>::infinity();
    return Q / static_cast<double>(N) +
           C * std::sqrt(std::log(static_cast<double>(N_parent)) / static_cast<double>(N));
}

// Visit counts used during selection may be inflated by virtual losses so
// concurrent selectors diverge instead of piling onto one leaf.
using VirtualLoss = std::unordered_map<std::uint64_t, std::uint64_t>;

class SearchTree {
public:
    explicit SearchTree(int branching_limit = 3) : limit_(branching_limit) {
        if (limit_ < 1) raise_config("MissingField", "branching limit must be at least 1");
        TreeNode root;
        root.id = 0;
        nodes_.push_back(std::move(root));
    }

    std::uint64_t root() const { return 0; }
    int branching_limit() const { return limit_; }
    std::uint64_t size() const { return nodes_.size(); }
    std::uint64_t total_simulations() const { return total_; }

    const TreeNode& node(std::uint64_t id) const {
        if (id >= nodes_.size())
            raise_runtime("UnknownNode", "node " + std::to_string(id) + " does not exist");
        return nodes_[id];
    }

    std::uint64_t expand(std::uint64_t parent, NodeAssignment assignment, NodeType type) {
        if (parent >= nodes_.size())
            raise_runtime("UnknownParent", "parent " + std::to_string(parent) + " does not exist");
        if (static_cast<int>(nodes_[parent].children.size()) >= limit_)
            raise_runtime("BranchingLimitExceeded",
                          "parent " + std::to_string(parent) + " already has " +
                              std::to_string(nodes_[parent].children.size()) + " children");
        TreeNode child;
        child.id = nodes_.size();
        child.parent = static_cast<std::int64_t>(parent);
        child.assignment = std::move(assignment);
        child.node_type = type;
        nodes_.push_back(std::move(child));
        nodes_[parent].children.push_back(nodes_.back().id);
        return nodes_.back().id;
    }

    void backpropagate(std::uint64_t leaf, double reward) {
        if (leaf >= nodes_.size())
            raise_runtime("UnknownNode", "node " + std::to_string(leaf) + " does not exist");
        std::int64_t cur = static_cast<std::int64_t>(leaf);
        while (cur >= 0) {
            TreeNode& n = nodes_[static_cast<std::uint64_t>(cur)];
            n.Q += reward;
            n.N += 1;
            if (n.status == NodeStatus::Unvisited) n.status = NodeStatus::Evaluated;
            cur = n.parent;
        }
        total_ += 1;
    }

    void set_output_summary(std::uint64_t id, std::string summary) {
        if (id >= nodes_.size())
            raise_runtime("UnknownNode", "node " + std::to_string(id) + " does not exist");
        nodes_[id].output_summary = std::move(summary);
    }

    // Dead branches are closed by marking evaluated nodes Terminal; selection
    // routes around them and propagates the mark when a family dies out.
    void mark_terminal(std::uint64_t id) {
        if (id >= nodes_.size())
            raise_runtime("UnknownNode", "node " + std::to_string(id) + " does not exist");
        if (nodes_[id].status == NodeStatus::Unvisited)
            raise_runtime("InvalidNodeState", "cannot mark an unvisited node terminal");
        nodes_[id].status = NodeStatus::Terminal;
    }

    std::uint64_t select_leaf(const UctParams& params, const VirtualLoss* vloss = nullptr) {
        std::uint64_t cur = 0;
        while (true) {
            TreeNode& n = nodes_[cur];
            if (n.status == NodeStatus::Terminal) {
                if (cur == 0) raise_runtime("TreeFullyTerminal", "every branch of the tree is terminal");
                cur = 0;
                continue;
            }
            if (n.status == NodeStatus::Unvisited) return cur;
            if (static_cast<int>(n.children.size()) < limit_) return cur;

            std::uint64_t best = 0;
            double best_score = -std::numeric_limits<double>::infinity();
            bool found = false;
            const std::uint64_t np = effective_n(n.N, n.id, vloss);
            for (std::uint64_t c : n.children) {
                const TreeNode& ch = nodes_[c];
                if (ch.status == NodeStatus::Terminal) continue;
                const double s = uct_score(ch.Q, effective_n(ch.N, c, vloss), np, params.C);
                if (!found || s > best_score) {
                    best = c;
                    best_score = s;
                    found = true;
                }
            }
            if (!found) {
                // Full node whose children all died: close it and restart.
                n.status = NodeStatus::Terminal;
                if (cur == 0) raise_runtime("TreeFullyTerminal", "every branch of the tree is terminal");
                cur = 0;
                continue;
            }
            cur = best;
        }
    }

    std::vector<std::uint64_t> best_trajectory() const {
        if (total_ == 0) raise_runtime("NoEvaluatedNodes", "no simulations have been backpropagated");
        std::vector<std::uint64_t> path{0};
        std::uint64_t cur = 0;
        while (true) {
            std::uint64_t best = 0;
            double best_mean = -std::numeric_limits<double>::infinity();
            bool found = false;
            for (std::uint64_t c : nodes_[cur].children) {
                const TreeNode& ch = nodes_[c];
                if (ch.N == 0) continue;
                const double mean = ch.Q / static_cast<double>(ch.N);
                if (!found || mean > best_mean) {
                    best = c;
                    best_mean = mean;
                    found = true;
                }
            }
            if (!found) return path;
            path.push_back(best);
            cur = best;
        }
    }

    const std::vector<TreeNode>& nodes() const { return nodes_; }

    // Checkpoint plumbing: rebuilds a tree from an already-validated node table.
    static SearchTree from_parts(int limit, std::vector<TreeNode> nodes, std::uint64_t total) {
        SearchTree t(limit);
        t.nodes_ = std::move(nodes);
        t.total_ = total;
        return t;
    }

private:
    static std::uint64_t effective_n(std::uint64_t n, std::uint64_t id, const VirtualLoss* vloss) {
        if (!vloss) return n;
        const auto it = vloss->find(id);
        return it == vloss->end() ? n : n + it->second;
    }

    int limit_ = 3;
    std::uint64_t total_ = 0;
    std::vector<TreeNode> nodes_;
};

struct Checkpoint {
    std::uint32_t version = 1;
    SearchTree tree;
    std::string rng_state;
    std::string store_snapshot_ref;
};

inline constexpr char kCheckpointMagic[4] = {'P', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string checkpoint_save(const SearchTree& tree, const std::string& rng_state,
                                   const std::string& store_snapshot_ref = "") {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(kCheckpointMagic[0]));
    w.u8(static_cast<std::uint8_t>(kCheckpointMagic[1]));
    w.u8(static_cast<std::uint8_t>(kCheckpointMagic[2]));
    w.u8(static_cast<std::uint8_t>(kCheckpointMagic[3]));
    w.u32(kCheckpointVersion);
    w.str(store_snapshot_ref);
    w.str(rng_state);
    w.u32(static_cast<std::uint32_t>(tree.branching_limit()));
    w.u64(tree.total_simulations());
    w.u64(tree.size());
    for (const TreeNode& n : tree.nodes()) {
        w.u64(n.id);
        w.u64(static_cast<std::uint64_t>(n.parent));
        w.u64(n.children.size());
        for (std::uint64_t c : n.children) w.u64(c);
        w.f64(n.Q);
        w.u64(n.N);
        w.u8(static_cast<std::uint8_t>(n.node_type));
        w.u8(static_cast<std::uint8_t>(n.status));
        w.str(n.assignment.subtask_id);
        w.str(n.assignment.inherited_summary);
        w.u64(n.assignment.context_items.size());
        for (const std::string& s : n.assignment.context_items) w.str(s);
        w.str(n.output_summary);
    }
    std::string out = w.bytes();
    const std::uint32_t crc = crc32(out.data(), out.size());
    ByteWriter t;
    t.u32(crc);
    out += t.bytes();
    return out;
}

inline Checkpoint checkpoint_restore(const std::string& bytes) {
    if (bytes.size() < 12) raise_checkpoint("CorruptCheckpoint", "file shorter than header plus trailer");
    const std::string body = bytes.substr(0, bytes.size() - 4);
    {
        const std::string trailer = bytes.substr(bytes.size() - 4);
        ByteReader crcr(trailer);
        if (crc32(body.data(), body.size()) != crcr.u32())
            raise_checkpoint("CorruptCheckpoint", "checksum mismatch");
    }
    ByteReader r(body);
    for (char m : kCheckpointMagic)
        if (static_cast<char>(r.u8()) != m)
            raise_checkpoint("CorruptCheckpoint", "bad magic, not a checkpoint file");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        raise_checkpoint("VersionMismatch",
                         "checkpoint version " + std::to_string(version) + ", expected " +
                             std::to_string(kCheckpointVersion));

    Checkpoint cp;
    cp.version = version;
    cp.store_snapshot_ref = r.str();
    cp.rng_state = r.str();
    const int limit = static_cast<int>(r.u32());
    const std::uint64_t total = r.u64();
    const std::uint64_t count = r.u64();
    if (count == 0) raise_checkpoint("CorruptCheckpoint", "checkpoint has no nodes");

    SearchTree tree(limit);
    std::vector<TreeNode> nodes;
    nodes.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        TreeNode n;
        n.id = r.u64();
        n.parent = static_cast<std::int64_t>(r.u64());
        const std::uint64_t nc = r.u64();
        for (std::uint64_t c = 0; c < nc; ++c) n.children.push_back(r.u64());
        n.Q = r.f64();
        n.N = r.u64();
        n.node_type = static_cast<NodeType>(r.u8());
        n.status = static_cast<NodeStatus>(r.u8());
        n.assignment.subtask_id = r.str();
        n.assignment.inherited_summary = r.str();
        const std::uint64_t ni = r.u64();
        for (std::uint64_t k = 0; k < ni; ++k) n.assignment.context_items.push_back(r.str());
        n.output_summary = r.str();
        if (n.id != i) raise_checkpoint("CorruptCheckpoint", "node ids are not dense and ordered");
        if (i == 0 && n.parent != -1) raise_checkpoint("CorruptCheckpoint", "root has a parent");
        if (i > 0 && (n.parent < 0 || static_cast<std::uint64_t>(n.parent) >= i))
            raise_checkpoint("CorruptCheckpoint", "node parent points forward or nowhere");
        nodes.push_back(std::move(n));
    }
    if (!r.exhausted()) raise_checkpoint("CorruptCheckpoint", "trailing bytes after the node table");
    for (const TreeNode& n : nodes)
        for (std::uint64_t c : n.children) {
            if (c >= count || nodes[c].parent != static_cast<std::int64_t>(n.id))
                raise_checkpoint("CorruptCheckpoint", "child link without matching parent link");
        }
    if (total != nodes[0].N)
        raise_checkpoint("CorruptCheckpoint", "total_simulations disagrees with root visits");

    cp.tree = SearchTree::from_parts(limit, std::move(nodes), total);
    return cp;
}

inline nlohmann::json to_json(const SearchTree& tree) {
    nlohmann::json j;
    j["root"] = tree.root();
    j["total_simulations"] = tree.total_simulations();
    j["branching_limit"] = tree.branching_limit();
    j["nodes"] = nlohmann::json::array();
    for (const TreeNode& n : tree.nodes()) {
        nlohmann::json nj;
        nj["id"] = n.id;
        if (n.parent >= 0) nj["parent"] = n.parent;
        nj["children"] = n.children;
        nj["Q"] = n.Q;
        nj["N"] = n.N;
        nj["node_type"] = task::to_string(n.node_type);
        nj["status"] = to_string(n.status);
        nj["subtask_id"] = n.assignment.subtask_id;
        nj["inherited_summary"] = n.assignment.inherited_summary;
        nj["context_items"] = n.assignment.context_items;
        nj["output_summary"] = n.output_summary;
        j["nodes"].push_back(std::move(nj));
    }
    return j;
}

} // namespace pm::mcts
