#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pm/errors.hpp"
#include "pm/hash.hpp"

namespace pm::landau {

using json = nlohmann::json;

enum class Layer { Library, Methodology, Priors };
enum class Kind { Qualitative, Quantitative };

inline const char* to_string(Layer l) {
    switch (l) {
        case Layer::Library: return "Library";
        case Layer::Methodology: return "Methodology";
        case Layer::Priors: return "Priors";
    }
    return "?";
}

inline const char* to_string(Kind k) {
    return k == Kind::Qualitative ? "Qualitative" : "Quantitative";
}

inline Layer layer_from_string(const std::string& s) {
    if (s == "Library") return Layer::Library;
    if (s == "Methodology") return Layer::Methodology;
    if (s == "Priors") return Layer::Priors;
    raise_config("MalformedStoreLine", "unknown layer '" + s + "'");
}

inline Kind kind_from_string(const std::string& s) {
    if (s == "Qualitative") return Kind::Qualitative;
    if (s == "Quantitative") return Kind::Quantitative;
    raise_config("MalformedStoreLine", "unknown kind '" + s + "'");
}

struct Source {
    std::string doc_id;
    std::string locator;
};

struct KnowledgeItem {
    std::string id;
    Layer layer = Layer::Library;
    Kind kind = Kind::Qualitative;
    std::string content;
    Source source;
    std::vector<std::string> tags;
};

struct TraceStep {
    std::string goal;
    std::string approach;
    std::string outcome_metric;
};

struct MethodologyTrace {
    std::string task_id;
    std::vector<TraceStep> steps;
    bool validated = false;
};

struct IngestionLogEntry {
    std::string doc_id;
    std::size_t locator_count = 0;
    std::string content_hash;
};

inline std::string item_id(Layer layer, const std::string& content, const Source& src) {
    std::uint64_t h = fnv1a64(to_string(layer));
    h = fnv1a64("\x1f", h);
    h = fnv1a64(content, h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(src.doc_id, h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(src.locator, h);
    return hex64(h);
}

// Set of items keyed by content hash; value semantics so merges never mutate
// their inputs.
class StoreState {
public:
    bool contains(const std::string& id) const { return items_.count(id) > 0; }
    std::size_t size() const { return items_.size(); }

    std::size_t layer_count(Layer l) const {
        const auto it = layer_counts_.find(l);
        return it == layer_counts_.end() ? 0 : it->second;
    }

    const KnowledgeItem* find(const std::string& id) const {
        const auto it = items_.find(id);
        return it == items_.end() ? nullptr : &it->second;
    }

    void insert(KnowledgeItem item) {
        if (items_.count(item.id)) return;
        layer_counts_[item.layer] += 1;
        items_.emplace(item.id, std::move(item));
    }

    // Ordered by id so every iteration (and hence snapshot hash) is stable.
    const std::map<std::string, KnowledgeItem>& items() const { return items_; }

    std::string snapshot_hash() const {
        std::uint64_t h = kFnvOffset;
        for (const auto& [id, item] : items_) {
            h = fnv1a64(id, h);
            h = fnv1a64(item.content, h);
        }
        return hex64(h);
    }

private:
    std::map<std::string, KnowledgeItem> items_;
    std::map<Layer, std::size_t> layer_counts_;
};

namespace detail {

inline bool blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(),
                       [](unsigned char c) { return std::isspace(c) != 0; });
}

inline std::vector<std::string> split_passages(const std::string& text) {
    std::vector<std::string> passages;
    std::string cur;
    std::size_t pos = 0;
    auto flush = [&] {
        while (!cur.empty() && (cur.back() == '\n' || cur.back() == '\r')) cur.pop_back();
        if (!cur.empty() && !blank(cur)) passages.push_back(cur);
        cur.clear();
    };
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::string line =
            nl == std::string::npos ? text.substr(pos) : text.substr(pos, nl - pos);
        if (blank(line))
            flush();
        else {
            cur += line;
            cur += '\n';
        }
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    flush();
    return passages;
}

// Deterministic kind rule: any digit or relation character marks a passage as
// quantitative; everything else is qualitative.
inline Kind classify(const std::string& passage) {
    for (char c : passage)
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '=' || c == '<' || c == '>' || c == '~' ||
            c == '%')
            return Kind::Quantitative;
    return Kind::Qualitative;
}

inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

} // namespace detail

inline std::vector<KnowledgeItem>
ingest_local_library(const std::vector<std::pair<std::string, std::string>>& documents) {
    if (documents.empty()) raise_config("EmptyDocument", "no documents to ingest");
    std::vector<KnowledgeItem> out;
    for (const auto& [doc_id, text] : documents) {
        if (doc_id.empty()) raise_config("EmptyDocument", "document with empty id");
        const std::vector<std::string> passages = detail::split_passages(text);
        if (passages.empty())
            raise_config("EmptyDocument", "document '" + doc_id + "' has no passages");
        for (std::size_t i = 0; i < passages.size(); ++i) {
            KnowledgeItem item;
            item.layer = Layer::Library;
            item.kind = detail::classify(passages[i]);
            item.content = passages[i];
            item.source = {doc_id, "¶" + std::to_string(i + 1)};
            item.id = item_id(item.layer, item.content, item.source);
            out.push_back(std::move(item));
        }
    }
    return out;
}

inline IngestionLogEntry ingestion_log_entry(const std::string& doc_id, const std::string& text) {
    IngestionLogEntry e;
    e.doc_id = doc_id;
    e.locator_count = detail::split_passages(text).size();
    e.content_hash = hex64(fnv1a64(text));
    return e;
}

inline StoreState merge(StoreState store, const std::vector<KnowledgeItem>& new_items) {
    for (const KnowledgeItem& item : new_items) store.insert(item);
    return store;
}

inline json trace_to_json(const MethodologyTrace& trace) {
    json steps = json::array();
    for (const TraceStep& s : trace.steps)
        steps.push_back({{"goal", s.goal}, {"approach", s.approach}, {"outcome_metric", s.outcome_metric}});
    return json{{"task_id", trace.task_id}, {"steps", steps}, {"validated", trace.validated}};
}

inline StoreState archive_methodology(StoreState store, const MethodologyTrace& trace) {
    if (!trace.validated)
        raise_config("UnvalidatedTrace", "trace for task '" + trace.task_id + "' is not validated");
    KnowledgeItem item;
    item.layer = Layer::Methodology;
    item.kind = Kind::Qualitative;
    item.content = trace_to_json(trace).dump();
    item.source = {"trace:" + trace.task_id, "trace"};
    item.id = item_id(item.layer, item.content, item.source);
    store.insert(std::move(item));
    return store;
}

struct QueryHit {
    KnowledgeItem item;
    double score = 0.0;
};

// TF-IDF with raw term counts and idf = ln((N+1)/df); the +1 keeps corpus-wide
// terms at positive weight so they still rank by frequency.
inline std::vector<QueryHit> query(const StoreState& store, const std::string& text, std::size_t k,
                                   std::optional<Layer> layer_filter = std::nullopt) {
    if (k < 1) raise_config("MissingField", "query needs k >= 1");
    std::vector<const KnowledgeItem*> corpus;
    for (const auto& [id, item] : store.items())
        if (!layer_filter || item.layer == *layer_filter) corpus.push_back(&item);
    if (corpus.empty()) return {};

    const std::vector<std::string> terms = detail::tokenize(text);
    std::unordered_map<std::string, std::size_t> df;
    std::vector<std::unordered_map<std::string, std::size_t>> tf(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        for (const std::string& tok : detail::tokenize(corpus[i]->content)) tf[i][tok] += 1;
        std::unordered_set<std::string> seen;
        for (const auto& [tok, cnt] : tf[i]) seen.insert(tok);
        for (const std::string& tok : seen) df[tok] += 1;
    }

    const double n = static_cast<double>(corpus.size());
    std::vector<QueryHit> hits;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        double score = 0.0;
        for (const std::string& term : terms) {
            const auto t = tf[i].find(term);
            if (t == tf[i].end()) continue;
            const double idf = std::log((n + 1.0) / static_cast<double>(df[term]));
            score += static_cast<double>(t->second) * idf;
        }
        if (score > 0.0) hits.push_back({*corpus[i], score});
    }
    std::sort(hits.begin(), hits.end(), [](const QueryHit& a, const QueryHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item.id < b.item.id;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

inline json item_to_json(const KnowledgeItem& item) {
    return json{{"id", item.id},
                {"layer", to_string(item.layer)},
                {"kind", to_string(item.kind)},
                {"content", item.content},
                {"source", {{"doc_id", item.source.doc_id}, {"locator", item.source.locator}}},
                {"tags", item.tags}};
}

inline KnowledgeItem item_from_json(const json& j) {
    KnowledgeItem item;
    item.id = j.at("id").get<std::string>();
    item.layer = layer_from_string(j.at("layer").get<std::string>());
    item.kind = kind_from_string(j.at("kind").get<std::string>());
    item.content = j.at("content").get<std::string>();
    item.source.doc_id = j.at("source").at("doc_id").get<std::string>();
    item.source.locator = j.at("source").at("locator").get<std::string>();
    if (j.contains("tags"))
        for (const json& t : j.at("tags")) item.tags.push_back(t.get<std::string>());
    return item;
}

// Append-only JSONL codec. force_layer rewrites the layer (and id) on load,
// used for the curated priors file.
inline StoreState store_from_jsonl(const std::vector<std::string>& lines,
                                   std::optional<Layer> force_layer = std::nullopt) {
    StoreState store;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (detail::blank(lines[i])) continue;
        json j;
        try {
            j = json::parse(lines[i]);
        } catch (const json::exception& e) {
            raise_config("MalformedStoreLine", "line " + std::to_string(i + 1) + ": " + e.what());
        }
        try {
            KnowledgeItem item = item_from_json(j);
            if (force_layer) {
                item.layer = *force_layer;
                item.id = item_id(item.layer, item.content, item.source);
            }
            store.insert(std::move(item));
        } catch (const json::exception& e) {
            raise_config("MalformedStoreLine", "line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return store;
}

inline std::string store_to_jsonl(const StoreState& store) {
    std::string out;
    for (const auto& [id, item] : store.items()) {
        out += item_to_json(item).dump();
        out += '\n';
    }
    return out;
}

} // namespace pm::landau
