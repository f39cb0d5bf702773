#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <vector>

#include <json.hpp>

#include "pm/errors.hpp"

namespace pm::task {

using json = nlohmann::json;

enum class TaskType { EngineeringComputation, HypothesisTesting, OpenEndedExploration, PhenomenologicalAnalysis };
enum class ConstraintKind { Symmetry, ConservationLaw, DimensionalAnalysis, Scale };
enum class NodeType : std::uint8_t { Draft = 0, Debug = 1, Improve = 2 };

struct Constraint {
    ConstraintKind kind = ConstraintKind::Symmetry;
    std::string statement;
    bool machine_checkable = false;
};

struct Subtask {
    std::string id;
    std::string goal;
    std::string environment;
    long budget = 1;
};

struct IoFormats {
    std::string input;
    std::string output;
};

struct TaskSpec {
    std::string topic;
    std::string domain;
    std::string description;
    IoFormats io_formats;
    TaskType task_type = TaskType::EngineeringComputation;
    std::vector<Constraint> constraints;
    std::vector<std::string> knowledge_refs;
    std::vector<Subtask> subtasks;
};

struct NodeAssignment {
    std::string subtask_id;
    std::string inherited_summary;
    std::vector<std::string> context_items;
};

struct Critique {
    double reward = 0.0;
    NodeType next_node_type = NodeType::Draft;
    std::string state_summary;
    std::string actionable_critique;
};

inline const std::vector<std::string>& registered_environments() {
    static const std::vector<std::string> names = {"li-atom", "su3", "tde", "qmc", "cs-kernel"};
    return names;
}

namespace detail {

inline std::string squash(const std::string& s) {
    std::string out;
    for (char c : s)
        if (std::isalnum(static_cast<unsigned char>(c)))
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return out;
}

inline TaskType parse_task_type(const std::string& s) {
    const std::string key = squash(s);
    if (key == "engineeringcomputation") return TaskType::EngineeringComputation;
    if (key == "hypothesistesting") return TaskType::HypothesisTesting;
    if (key == "openendedexploration") return TaskType::OpenEndedExploration;
    if (key == "phenomenologicalanalysis") return TaskType::PhenomenologicalAnalysis;
    raise_config("UnknownTaskType", "task_type '" + s + "' is not one of the four task types");
}

inline ConstraintKind parse_constraint_kind(const std::string& s) {
    const std::string key = squash(s);
    if (key == "symmetry") return ConstraintKind::Symmetry;
    if (key == "conservationlaw") return ConstraintKind::ConservationLaw;
    if (key == "dimensionalanalysis") return ConstraintKind::DimensionalAnalysis;
    if (key == "scale") return ConstraintKind::Scale;
    raise_config("UnknownConstraintKind", "constraint kind '" + s + "' not recognized");
}

// Environment names may carry an "env-" prefix in task files; the canonical
// registry entries are the bare CLI names.
inline std::string canonical_environment(const std::string& s) {
    std::string name = s;
    if (name.rfind("env-", 0) == 0) name = name.substr(4);
    const auto& reg = registered_environments();
    if (std::find(reg.begin(), reg.end(), name) == reg.end())
        raise_config("UnknownEnvironment", "environment '" + s + "' is not registered");
    return name;
}

inline const json& require(const json& j, const char* field, const char* where) {
    if (!j.contains(field))
        raise_config("MissingField", std::string(where) + " is missing field '" + field + "'");
    return j.at(field);
}

inline std::string require_string(const json& j, const char* field, const char* where) {
    const json& v = require(j, field, where);
    if (!v.is_string())
        raise_config("MissingField", std::string(where) + " field '" + field + "' must be a string");
    return v.get<std::string>();
}

} // namespace detail

inline const char* to_string(TaskType t) {
    switch (t) {
        case TaskType::EngineeringComputation: return "EngineeringComputation";
        case TaskType::HypothesisTesting: return "HypothesisTesting";
        case TaskType::OpenEndedExploration: return "OpenEndedExploration";
        case TaskType::PhenomenologicalAnalysis: return "PhenomenologicalAnalysis";
    }
    return "?";
}

inline const char* to_string(ConstraintKind k) {
    switch (k) {
        case ConstraintKind::Symmetry: return "Symmetry";
        case ConstraintKind::ConservationLaw: return "ConservationLaw";
        case ConstraintKind::DimensionalAnalysis: return "DimensionalAnalysis";
        case ConstraintKind::Scale: return "Scale";
    }
    return "?";
}

inline const char* to_string(NodeType t) {
    switch (t) {
        case NodeType::Draft: return "Draft";
        case NodeType::Debug: return "Debug";
        case NodeType::Improve: return "Improve";
    }
    return "?";
}

inline NodeType node_type_from_string(const std::string& s) {
    if (s == "Draft") return NodeType::Draft;
    if (s == "Debug") return NodeType::Debug;
    if (s == "Improve") return NodeType::Improve;
    raise_config("UnknownNodeType", "node type '" + s + "' not recognized");
}

// Parses and validates a task document (schema version 1). Unknown top-level
// keys are rejected so typos fail loudly instead of silently dropping fields.
inline TaskSpec validate_task_spec(const json& raw) {
    if (!raw.is_object()) raise_config("MissingField", "task document must be a JSON object");

    static const std::array<const char*, 9> known = {"task_schema", "topic",          "domain",
                                                     "description", "io_formats",     "task_type",
                                                     "constraints", "knowledge_refs", "subtasks"};
    for (auto it = raw.begin(); it != raw.end(); ++it)
        if (std::find_if(known.begin(), known.end(),
                         [&](const char* k) { return it.key() == k; }) == known.end())
            raise_config("MissingField", "unknown top-level key '" + it.key() + "' in task document");

    const json& schema = detail::require(raw, "task_schema", "task document");
    if (!schema.is_number_integer() || schema.get<int>() != 1)
        raise_config("MissingField", "task_schema must be the integer 1");

    TaskSpec spec;
    spec.topic = detail::require_string(raw, "topic", "task document");
    spec.domain = detail::require_string(raw, "domain", "task document");
    spec.description = detail::require_string(raw, "description", "task document");

    const json& io = detail::require(raw, "io_formats", "task document");
    spec.io_formats.input = detail::require_string(io, "input", "io_formats");
    spec.io_formats.output = detail::require_string(io, "output", "io_formats");

    spec.task_type = detail::parse_task_type(detail::require_string(raw, "task_type", "task document"));

    if (raw.contains("constraints")) {
        for (const json& c : raw.at("constraints")) {
            Constraint out;
            out.kind = detail::parse_constraint_kind(detail::require_string(c, "kind", "constraint"));
            out.statement = detail::require_string(c, "statement", "constraint");
            if (out.statement.empty())
                raise_config("MissingField", "constraint statement must be non-empty");
            out.machine_checkable = c.value("machine_checkable", false);
            spec.constraints.push_back(std::move(out));
        }
    }
    if (raw.contains("knowledge_refs"))
        for (const json& r : raw.at("knowledge_refs")) spec.knowledge_refs.push_back(r.get<std::string>());

    const json& subs = detail::require(raw, "subtasks", "task document");
    if (!subs.is_array() || subs.empty())
        raise_config("EmptySubtaskList", "task document needs at least one subtask");
    for (const json& s : subs) {
        Subtask st;
        st.id = detail::require_string(s, "id", "subtask");
        st.goal = detail::require_string(s, "goal", "subtask");
        st.environment = detail::canonical_environment(detail::require_string(s, "environment", "subtask"));
        st.budget = detail::require(s, "budget", "subtask").get<long>();
        if (st.budget < 1) raise_config("MissingField", "subtask budget must be at least 1");
        for (const Subtask& prev : spec.subtasks)
            if (prev.id == st.id)
                raise_config("DuplicateSubtaskId", "subtask id '" + st.id + "' appears twice");
        spec.subtasks.push_back(std::move(st));
    }
    return spec;
}

inline json to_json(const TaskSpec& spec) {
    json j;
    j["task_schema"] = 1;
    j["topic"] = spec.topic;
    j["domain"] = spec.domain;
    j["description"] = spec.description;
    j["io_formats"] = {{"input", spec.io_formats.input}, {"output", spec.io_formats.output}};
    j["task_type"] = to_string(spec.task_type);
    j["constraints"] = json::array();
    for (const Constraint& c : spec.constraints)
        j["constraints"].push_back({{"kind", to_string(c.kind)},
                                    {"statement", c.statement},
                                    {"machine_checkable", c.machine_checkable}});
    j["knowledge_refs"] = spec.knowledge_refs;
    j["subtasks"] = json::array();
    for (const Subtask& s : spec.subtasks)
        j["subtasks"].push_back({{"id", s.id}, {"goal", s.goal}, {"environment", s.environment}, {"budget", s.budget}});
    return j;
}

} // namespace pm::task
