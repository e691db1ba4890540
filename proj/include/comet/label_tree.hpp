#pragma once

// Class hierarchy: internal nodes define subtasks over their children and
// every class index sits at exactly one leaf.
//
// JSON form:
//   {"nodes": [{"id": "root", "name": "...", "parent": null}, ...],
//    "leaf_classes": {"leaf_id": class_index, ...}}
// Ids may be strings or integers; they are normalized to strings.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "comet/errors.hpp"

namespace comet {

class LabelTree {
public:
    struct Node {
        std::string id;
        std::string name;
        int parent = -1;
        std::vector<int> children;  // in declaration order
        int class_index = -1;       // leaves only
        int depth = 0;
    };

    // Nodes are given as (id, name, parent id or "" for root); leaf_classes
    // maps leaf id -> class index.
    static LabelTree build(const std::vector<std::tuple<std::string, std::string, std::string>>& nodes,
                           const std::vector<std::pair<std::string, int>>& leaf_classes) {
        LabelTree t;
        for (const auto& [id, name, parent] : nodes) {
            if (t.index_.count(id)) throw TreeError("duplicate node id '" + id + "'");
            t.index_[id] = static_cast<int>(t.nodes_.size());
            t.nodes_.push_back(Node{id, name, -1, {}, -1, 0});
        }
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const auto& parent = std::get<2>(nodes[i]);
            if (parent.empty()) {
                if (t.root_ >= 0) throw TreeError("multiple roots ('" + t.nodes_[t.root_].id + "', '" +
                                                  t.nodes_[i].id + "')");
                t.root_ = static_cast<int>(i);
                continue;
            }
            const auto it = t.index_.find(parent);
            if (it == t.index_.end()) throw TreeError("node '" + t.nodes_[i].id + "' has unknown parent '" + parent + "'");
            if (it->second == static_cast<int>(i)) throw TreeError("node '" + parent + "' is its own parent");
            t.nodes_[i].parent = it->second;
            t.nodes_[it->second].children.push_back(static_cast<int>(i));
        }
        if (t.root_ < 0) throw TreeError(t.nodes_.empty() ? "tree has no nodes" : "tree has no root (cycle)");

        // Breadth-first from the root; anything unreached lies on a cycle.
        std::vector<int> order{t.root_};
        std::vector<bool> seen(t.nodes_.size(), false);
        seen[t.root_] = true;
        for (std::size_t k = 0; k < order.size(); ++k) {
            for (int c : t.nodes_[order[k]].children) {
                if (seen[c]) throw TreeError("cycle through node '" + t.nodes_[c].id + "'");
                seen[c] = true;
                t.nodes_[c].depth = t.nodes_[order[k]].depth + 1;
                order.push_back(c);
            }
        }
        if (order.size() != t.nodes_.size()) {
            for (std::size_t i = 0; i < seen.size(); ++i)
                if (!seen[i]) throw TreeError("node '" + t.nodes_[i].id + "' is not connected to the root (cycle)");
        }

        for (const auto& [leaf, cls] : leaf_classes) {
            const auto it = t.index_.find(leaf);
            if (it == t.index_.end()) throw TreeError("leaf_classes names unknown node '" + leaf + "'");
            auto& node = t.nodes_[it->second];
            if (!node.children.empty()) throw TreeError("class mapped to internal node '" + leaf + "'");
            if (node.class_index >= 0) throw TreeError("leaf '" + leaf + "' mapped to more than one class");
            if (cls < 0) throw TreeError("negative class index for leaf '" + leaf + "'");
            node.class_index = cls;
        }
        int num_classes = 0;
        for (const auto& n : t.nodes_) {
            if (!n.children.empty()) continue;
            if (n.class_index < 0) throw TreeError("leaf '" + n.id + "' has no class");
            num_classes = std::max(num_classes, n.class_index + 1);
        }
        t.class_to_leaf_.assign(static_cast<std::size_t>(num_classes), -1);
        for (std::size_t i = 0; i < t.nodes_.size(); ++i) {
            const int c = t.nodes_[i].class_index;
            if (c < 0) continue;
            if (t.class_to_leaf_[c] >= 0) throw TreeError("class " + std::to_string(c) + " mapped to more than one leaf");
            t.class_to_leaf_[c] = static_cast<int>(i);
        }
        for (int c = 0; c < num_classes; ++c)
            if (t.class_to_leaf_[c] < 0) throw TreeError("class " + std::to_string(c) + " has no leaf");
        t.bfs_order_ = std::move(order);
        return t;
    }

    const std::vector<Node>& nodes() const { return nodes_; }
    const Node& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
    int root() const { return root_; }
    int num_classes() const { return static_cast<int>(class_to_leaf_.size()); }
    int leaf_of_class(int c) const { return class_to_leaf_.at(static_cast<std::size_t>(c)); }
    bool is_leaf(int i) const { return nodes_[i].children.empty(); }
    int index_of(const std::string& id) const {
        const auto it = index_.find(id);
        if (it == index_.end()) throw TreeError("unknown node '" + id + "'");
        return it->second;
    }

    // Internal nodes in breadth-first order from the root.
    std::vector<int> internal_nodes() const {
        std::vector<int> out;
        for (int i : bfs_order_)
            if (!is_leaf(i)) out.push_back(i);
        return out;
    }
    std::size_t internal_count() const { return internal_nodes().size(); }

    int depth() const {
        int d = 0;
        for (const auto& n : nodes_) d = std::max(d, n.depth);
        return d;
    }

    // Root-first ancestor chain ending at `i`.
    std::vector<int> path_to(int i) const {
        std::vector<int> path;
        for (int k = i; k >= 0; k = nodes_[k].parent) path.push_back(k);
        std::reverse(path.begin(), path.end());
        return path;
    }

    bool is_descendant(int node, int ancestor) const {
        for (int k = node; k >= 0; k = nodes_[k].parent)
            if (k == ancestor) return true;
        return false;
    }

    // Position within `ancestor`'s children of the child subtree holding `node`.
    int child_slot(int ancestor, int node) const {
        const auto path = path_to(node);
        const auto it = std::find(path.begin(), path.end(), ancestor);
        if (it == path.end() || it + 1 == path.end()) return -1;
        const auto& ch = nodes_[ancestor].children;
        return static_cast<int>(std::find(ch.begin(), ch.end(), *(it + 1)) - ch.begin());
    }

    // Flat tree: one root whose children are leaves for classes 0..C-1.
    static LabelTree flat(int num_classes) {
        std::vector<std::tuple<std::string, std::string, std::string>> nodes{{"root", "root", ""}};
        std::vector<std::pair<std::string, int>> leaves;
        for (int c = 0; c < num_classes; ++c) {
            nodes.emplace_back("c" + std::to_string(c), "class_" + std::to_string(c), "root");
            leaves.emplace_back("c" + std::to_string(c), c);
        }
        return build(nodes, leaves);
    }

    nlohmann::json to_json() const {
        nlohmann::json nodes = nlohmann::json::array();
        nlohmann::json leaves = nlohmann::json::object();
        for (const auto& n : nodes_) {
            nodes.push_back({{"id", n.id}, {"name", n.name},
                             {"parent", n.parent < 0 ? nlohmann::json(nullptr) : nlohmann::json(nodes_[n.parent].id)}});
            if (n.class_index >= 0) leaves[n.id] = n.class_index;
        }
        return {{"nodes", nodes}, {"leaf_classes", leaves}};
    }

private:
    std::vector<Node> nodes_;
    std::unordered_map<std::string, int> index_;
    std::vector<int> class_to_leaf_;
    std::vector<int> bfs_order_;
    int root_ = -1;
};

namespace tree_detail {

inline std::string id_string(const nlohmann::json& v, const char* what) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw TreeError(std::string(what) + " must be a string or integer");
}

}  // namespace tree_detail

inline LabelTree parse_label_tree(const std::string& text) {
    // Duplicate keys inside leaf_classes would otherwise be silently merged.
    std::string top_key;
    std::set<std::string> leaf_keys;
    bool duplicate = false;
    std::string duplicate_key;
    auto cb = [&](int depth, nlohmann::json::parse_event_t event, nlohmann::json& parsed) {
        if (event == nlohmann::json::parse_event_t::key) {
            if (depth == 1) top_key = parsed.get<std::string>();
            else if (depth == 2 && top_key == "leaf_classes" && !leaf_keys.insert(parsed.get<std::string>()).second) {
                duplicate = true;
                duplicate_key = parsed.get<std::string>();
            }
        }
        return true;
    };
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text, cb);
    } catch (const nlohmann::json::exception& e) {
        throw TreeError(std::string("invalid JSON: ") + e.what());
    }
    if (duplicate) throw TreeError("leaf '" + duplicate_key + "' mapped to more than one class");
    if (!j.is_object() || !j.contains("nodes") || !j.contains("leaf_classes"))
        throw TreeError("label tree needs 'nodes' and 'leaf_classes'");

    std::vector<std::tuple<std::string, std::string, std::string>> nodes;
    for (const auto& n : j.at("nodes")) {
        if (!n.is_object() || !n.contains("id")) throw TreeError("node entry without id");
        const auto id = tree_detail::id_string(n.at("id"), "node id");
        const auto name = n.contains("name") && n.at("name").is_string() ? n.at("name").get<std::string>() : id;
        std::string parent;
        if (n.contains("parent") && !n.at("parent").is_null()) {
            parent = tree_detail::id_string(n.at("parent"), "parent");
            if (parent.empty()) throw TreeError("empty parent id on node '" + id + "'");
        }
        nodes.emplace_back(id, name, parent);
    }
    std::vector<std::pair<std::string, int>> leaves;
    for (const auto& [key, value] : j.at("leaf_classes").items()) {
        if (value.is_array()) {
            if (value.size() != 1) throw TreeError("leaf '" + key + "' mapped to " + std::to_string(value.size()) + " classes");
            leaves.emplace_back(key, value.at(0).get<int>());
        } else if (value.is_number_integer()) {
            leaves.emplace_back(key, value.get<int>());
        } else {
            throw TreeError("class index for leaf '" + key + "' must be an integer");
        }
    }
    return LabelTree::build(nodes, leaves);
}

inline LabelTree read_label_tree(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw TreeError("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_label_tree(buf.str());
}

}  // namespace comet
