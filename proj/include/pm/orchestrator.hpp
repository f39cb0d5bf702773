#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "pm/errors.hpp"
#include "pm/landau.hpp"
#include "pm/mcts.hpp"
#include "pm/task.hpp"

namespace pm::orch {

using json = nlohmann::json;
using task::Critique;
using task::NodeAssignment;
using task::NodeType;
using task::Subtask;
using task::TaskSpec;

struct OrchestratorConfig {
    mcts::UctParams uct;
    std::size_t context_k = 3;        // knowledge items attached per assignment
    double improve_threshold = 0.5;   // reward <= threshold keeps refining
};

// Verifiable result of one environment execution: a fault flag plus named
// scalar metrics in a fixed order.
struct EnvFeedback {
    std::string environment;
    bool fault = false;
    std::string fault_kind;
    std::vector<std::pair<std::string, double>> metrics;
};

// Each environment declares one headline metric scored as
// exp(-|value - target| / scale); scale is the tolerance of that
// environment's own acceptance check, widened so a near-miss still earns a
// high reward (li-atom: |dE - 0.0675| < 0.001 must score >= 0.9).
struct ScoreRule {
    std::string metric;
    double target = 0.0;
    double scale = 1.0;
};

inline const std::map<std::string, ScoreRule>& score_rules() {
    static const std::map<std::string, ScoreRule> rules = {
        {"li-atom", {"delta_E", 0.0675, 0.01}},
        {"su3", {"max_abs_dev", 0.0, 1e-6}},
        {"tde", {"theta_deg", 20.3, 1.0}},
        {"qmc", {"energy_abs_dev", 0.0, 0.05}},
        {"cs-kernel", {"kernel_abs_dev", 0.0, 0.01}},
    };
    return rules;
}

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline const double* find_metric(const EnvFeedback& fb, const std::string& name) {
    for (const auto& [k, v] : fb.metrics)
        if (k == name) return &v;
    return nullptr;
}

} // namespace detail

// Debug on faults; Improve while the reward is positive but at or below the
// threshold (ties keep refining); Draft otherwise.
inline NodeType classify_reward(double reward, bool fault, double threshold = 0.5) {
    if (fault) return NodeType::Debug;
    if (reward > 0.0 && reward <= threshold) return NodeType::Improve;
    return NodeType::Draft;
}

// Grounded critique of one environment result: scalar reward from the
// environment's declared rule, the follow-up node type, and deterministic
// template summaries built from the metric names and deltas. Faults never
// throw; they come back as reward 0 / Debug.
inline Critique evaluate(const EnvFeedback& fb, const std::vector<landau::KnowledgeItem>& priors,
                         const OrchestratorConfig& cfg = {}) {
    bool fault = fb.fault;
    std::string fault_kind = fb.fault_kind;
    const ScoreRule* rule = nullptr;
    const double* value = nullptr;
    if (!fault) {
        const auto it = score_rules().find(fb.environment);
        if (it == score_rules().end()) {
            fault = true;
            fault_kind = "UnknownEnvironment:" + fb.environment;
        } else {
            rule = &it->second;
            value = detail::find_metric(fb, rule->metric);
            if (!value) {
                fault = true;
                fault_kind = "MissingMetric:" + rule->metric;
            }
        }
    }

    Critique out;
    std::ostringstream prior_ids;
    for (std::size_t i = 0; i < priors.size(); ++i)
        prior_ids << (i ? "," : "") << priors[i].id;

    if (fault) {
        out.reward = 0.0;
        out.next_node_type = NodeType::Debug;
        out.state_summary = fb.environment + ": fault=" + fault_kind +
                            " | reward=0 | next=Debug";
        out.actionable_critique =
            "execution fault '" + fault_kind + "': fix the failing configuration before refining";
        return out;
    }

    const double dev = std::abs(*value - rule->target);
    out.reward = std::exp(-dev / rule->scale);
    out.next_node_type = classify_reward(out.reward, false, cfg.improve_threshold);

    std::ostringstream ss;
    ss << fb.environment << ":";
    for (const auto& [k, v] : fb.metrics) ss << " " << k << "=" << detail::fmt(v);
    ss << " | reward=" << detail::fmt(out.reward) << " | next=" << to_string(out.next_node_type);
    out.state_summary = ss.str();

    std::ostringstream ac;
    if (out.next_node_type == NodeType::Improve) {
        ac << rule->metric << "=" << detail::fmt(*value) << " deviates from "
           << detail::fmt(rule->target) << " by " << detail::fmt(dev)
           << "; reduce the deviation";
    } else {
        ac << rule->metric << "=" << detail::fmt(*value) << " is within working range of "
           << detail::fmt(rule->target) << "; draft the next variation";
    }
    if (!priors.empty()) ac << " | priors: " << prior_ids.str();
    out.actionable_critique = ac.str();
    return out;
}

inline json critique_to_json(const Critique& c) {
    return json{{"reward", c.reward},
                {"next_node_type", to_string(c.next_node_type)},
                {"state_summary", c.state_summary},
                {"actionable_critique", c.actionable_critique}};
}

// The follow-up type a node prescribed for its children, recovered from the
// "| next=..." tail its critique wrote into the stored summary. Nodes without
// a critique (the root) prescribe Draft.
inline NodeType next_type_from_summary(const std::string& summary) {
    const std::string tag = "| next=";
    const std::size_t p = summary.rfind(tag);
    if (p == std::string::npos) return NodeType::Draft;
    return task::node_type_from_string(summary.substr(p + tag.size()));
}

namespace detail {

inline bool node_alive(const mcts::SearchTree& tree, std::uint64_t id) {
    const mcts::TreeNode& n = tree.node(id);
    if (n.status == mcts::NodeStatus::Terminal) return false;
    if (static_cast<int>(n.children.size()) < tree.branching_limit()) return true;
    for (std::uint64_t c : n.children)
        if (node_alive(tree, c)) return true;
    return false;
}

// Const UCT descent: stops at the first live node with room for a child,
// routing through fully expanded nodes by UCT score. Unlike the engine's
// select_leaf this never mutates the tree, so it can run on a snapshot.
inline std::uint64_t select_expandable(const mcts::SearchTree& tree, const mcts::UctParams& p) {
    if (!node_alive(tree, tree.root()))
        raise_runtime("TreeFullyTerminal", "every branch of the tree is terminal");
    std::uint64_t cur = tree.root();
    while (true) {
        const mcts::TreeNode& n = tree.node(cur);
        if (static_cast<int>(n.children.size()) < tree.branching_limit()) return cur;
        std::uint64_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        bool found = false;
        for (std::uint64_t c : n.children) {
            if (!node_alive(tree, c)) continue;
            const double s = mcts::uct_score(tree.node(c).Q, tree.node(c).N, n.N, p.C);
            if (!found || s > best_score) {
                best = c;
                best_score = s;
                found = true;
            }
        }
        if (!found) raise_runtime("TreeFullyTerminal", "selected subtree has no live leaves");
        cur = best;
    }
}

} // namespace detail

// Assignment for the UCT-selected node's next child: the earliest subtask
// whose budget is not exhausted along the selected path, the parent's stored
// summary, and the top-k knowledge items matching the subtask goal. Raises
// AllBudgetsExhausted when the path has spent every subtask budget.
inline NodeAssignment schedule_next(const mcts::SearchTree& tree, const TaskSpec& task,
                                    const landau::StoreState& store,
                                    const OrchestratorConfig& cfg = {},
                                    std::uint64_t* selected_out = nullptr) {
    if (task.subtasks.empty()) raise_config("EmptySubtaskList", "task has no subtasks");
    const std::uint64_t selected = detail::select_expandable(tree, cfg.uct);
    if (selected_out) *selected_out = selected;

    std::unordered_map<std::string, long> used;
    for (std::int64_t cur = static_cast<std::int64_t>(selected); cur >= 0;
         cur = tree.node(static_cast<std::uint64_t>(cur)).parent) {
        const std::string& sid = tree.node(static_cast<std::uint64_t>(cur)).assignment.subtask_id;
        if (!sid.empty()) used[sid] += 1;
    }

    const Subtask* chosen = nullptr;
    for (const Subtask& st : task.subtasks) {
        const auto it = used.find(st.id);
        if (it == used.end() || it->second < st.budget) {
            chosen = &st;
            break;
        }
    }
    if (!chosen)
        raise_runtime("AllBudgetsExhausted",
                      "every subtask budget along the selected path is spent");

    NodeAssignment out;
    out.subtask_id = chosen->id;
    out.inherited_summary = tree.node(selected).output_summary;
    if (store.size() > 0 && cfg.context_k > 0)
        for (const landau::QueryHit& h : landau::query(store, chosen->goal, cfg.context_k))
            out.context_items.push_back(h.item.id);
    return out;
}

// Scripted stand-ins for agent behavior: a preset fixes the tree shape knobs.
// greedy-refine grows one deep refinement chain; breadth-3 fans out three
// drafts per node before descending.
struct PolicyPreset {
    std::string name;
    int branching_limit = 3;
    double uct_c = 1.414;
};

inline PolicyPreset policy_preset(const std::string& name) {
    if (name == "greedy-refine") return {name, 1, 0.5};
    if (name == "breadth-3") return {name, 3, 1.414};
    raise_config("UnknownPolicy", "policy preset '" + name + "' is not defined");
}

// Refinement depth of a prospective child of `parent`: how many ancestors
// already worked the same subtask. Environment adapters map this to fidelity.
inline long subtask_quality(const mcts::SearchTree& tree, std::uint64_t parent,
                            const std::string& subtask_id) {
    long q = 0;
    for (std::int64_t cur = static_cast<std::int64_t>(parent); cur >= 0;
         cur = tree.node(static_cast<std::uint64_t>(cur)).parent)
        if (tree.node(static_cast<std::uint64_t>(cur)).assignment.subtask_id == subtask_id) ++q;
    return q;
}

struct StepRecord {
    std::uint64_t node = 0;
    long quality = 0;
    EnvFeedback feedback;
    Critique critique;
};

// One loop turn: select -> expand -> environment step -> evaluate ->
// backpropagate. Returns false (tree untouched) once every budget along the
// selected path is exhausted. EnvStep is any callable
// (const Subtask&, NodeType, long quality, const NodeAssignment&) -> EnvFeedback.
template <class EnvStep>
inline bool orchestrate_step(mcts::SearchTree& tree, const TaskSpec& task,
                             const landau::StoreState& store, const OrchestratorConfig& cfg,
                             EnvStep&& env, StepRecord* rec = nullptr) {
    std::uint64_t parent = 0;
    NodeAssignment assignment;
    try {
        assignment = schedule_next(tree, task, store, cfg, &parent);
    } catch (const Error& e) {
        if (e.kind() == "AllBudgetsExhausted") return false;
        throw;
    }

    const NodeType type = next_type_from_summary(tree.node(parent).output_summary);
    const long quality = subtask_quality(tree, parent, assignment.subtask_id);

    const Subtask* st = nullptr;
    for (const Subtask& s : task.subtasks)
        if (s.id == assignment.subtask_id) st = &s;
    if (!st) raise_runtime("UnknownSubtask", "scheduled subtask not present in the task");

    const std::uint64_t child = tree.expand(parent, assignment, type);
    const EnvFeedback fb = env(*st, type, quality, assignment);

    std::vector<landau::KnowledgeItem> priors;
    for (const std::string& id : assignment.context_items)
        if (const landau::KnowledgeItem* item = store.find(id)) priors.push_back(*item);

    const Critique crit = evaluate(fb, priors, cfg);
    tree.set_output_summary(child, crit.state_summary);
    tree.backpropagate(child, crit.reward);

    if (rec) {
        rec->node = child;
        rec->quality = quality;
        rec->feedback = fb;
        rec->critique = crit;
    }
    return true;
}

struct OrchestrationOutcome {
    std::vector<StepRecord> steps;
    bool budgets_exhausted = false;
};

template <class EnvStep>
inline OrchestrationOutcome orchestrate_run(mcts::SearchTree& tree, const TaskSpec& task,
                                            const landau::StoreState& store,
                                            const OrchestratorConfig& cfg, long iterations,
                                            EnvStep&& env) {
    if (iterations < 1) raise_config("MissingField", "iterations must be at least 1");
    OrchestrationOutcome out;
    for (long i = 0; i < iterations; ++i) {
        StepRecord rec;
        if (!orchestrate_step(tree, task, store, cfg, env, &rec)) {
            out.budgets_exhausted = true;
            break;
        }
        out.steps.push_back(std::move(rec));
    }
    return out;
}

// Reward a node earned at its own evaluation: every backpropagation through a
// node came either from its own visit or through exactly one child, so the
// difference of accumulated sums recovers the node's own contribution.
inline double node_own_reward(const mcts::SearchTree& tree, std::uint64_t id) {
    const mcts::TreeNode& n = tree.node(id);
    double q = n.Q;
    for (std::uint64_t c : n.children) q -= tree.node(c).Q;
    return q;
}

} // namespace pm::orch
